//! The decay parameter `θ`, the Perron pair at `θ`, the derivative of the
//! Perron curve, and the period `τ` of the additive kernel with its phase
//! offsets.

use std::collections::VecDeque;

use num_complex::Complex64;
use num_integer::Integer;

use crate::error::{Error, Result};
use crate::fundamental::Kernels;
use crate::linalg::{dot, lu_det_complex, mat_vec, perron_pair, vec_mat, ComplexMatrix, RealMatrix};
use crate::model::{gamma_a_support, Angle, DriftProfile, MG1Model, Radius, SupportEdge};

/// Search cap for `θ` when `A*` is entire.
pub const THETA_SEARCH_CAP: f64 = 1e6;
/// Number of points on the geometric bracketing grid.
pub const THETA_GRID_POINTS: i32 = 64;
/// Probes `r_A(1 − 2^{−j})` for `j = 1..=THETA_EDGE_PROBES`.
pub const THETA_EDGE_PROBES: i32 = 40;
/// Default relative bisection tolerance.
pub const THETA_DEFAULT_TOL: f64 = 1e-12;

/// Outcome of the search for `θ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Theta {
    Found(f64),
    NoTheta,
}

impl Theta {
    pub fn value(self) -> Option<f64> {
        match self {
            Theta::Found(t) => Some(t),
            Theta::NoTheta => None,
        }
    }
}

/// `δ(A*(y))` for real `0 < y < r_A`.
pub fn perron_curve(model: &MG1Model, y: f64, perron_tol: f64) -> Result<f64> {
    let a = model.a_star(Complex64::new(y, 0.0))?.re();
    Ok(perron_pair(&a, perron_tol)?.value)
}

/// Root of `δ(A*(y)) = y` in `(1, r_A)`.
///
/// `f(y) = δ(A*(y)) − y` vanishes at 1 with slope `ρ − 1 < 0` and is convex
/// in `log y`, so past 1 there is at most one sign change. A geometric grid
/// brackets it, then bisection refines to relative tolerance `tol`.
pub fn find_theta(model: &MG1Model, tol: f64, perron_tol: f64) -> Result<Theta> {
    let f = |y: f64| perron_curve(model, y, perron_tol).map(|d| d - y);
    let top = match model.r_a() {
        Radius::Finite(r) => THETA_SEARCH_CAP.min(r * (1.0 - 1e-6)),
        Radius::Unbounded => THETA_SEARCH_CAP,
    };
    let step = top.ln() / THETA_GRID_POINTS as f64;
    let mut candidates: Vec<f64> = (1..=THETA_GRID_POINTS).map(|i| (i as f64 * step).exp()).collect();
    if let Radius::Finite(r) = model.r_a() {
        candidates.extend(
            (1..=THETA_EDGE_PROBES)
                .map(|j| r * (1.0 - 2f64.powi(-j)))
                .filter(|&y| y > top),
        );
    }
    let mut lo = 1.0;
    let mut bracket = None;
    for y in candidates {
        if f(y)? >= 0.0 {
            bracket = Some((lo, y));
            break;
        }
        lo = y;
    }
    let Some((mut lo, mut hi)) = bracket else {
        return Ok(Theta::NoTheta);
    };
    while hi - lo > tol * hi {
        let mid = 0.5 * (lo + hi);
        // tolerances below one ulp stop at adjacent doubles
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid)? >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    // Newton polish: the bisection tolerance alone leaves an error that
    // θ^k amplifies k-fold.
    let mut theta = 0.5 * (lo + hi);
    let mut residual = f(theta)?.abs();
    for _ in 0..3 {
        let slope = eigen_at_theta(model, theta, perron_tol)?.delta_prime - 1.0;
        let next = theta - f(theta)? / slope;
        if !(lo..=hi).contains(&next) {
            break;
        }
        let r = f(next)?.abs();
        if r >= residual {
            break;
        }
        theta = next;
        residual = r;
    }
    Ok(Theta::Found(theta))
}

/// Perron data of `Γ_A*(θ) = A*(θ)/θ`: `μe = 1`, `μv = 1`, and
/// `δ′ = μ A*′(θ) v`, the slope of the Perron curve at `θ`.
#[derive(Clone, Debug, PartialEq)]
pub struct EigenAtTheta {
    pub mu: Vec<f64>,
    pub v: Vec<f64>,
    pub delta_prime: f64,
}

pub fn eigen_at_theta(model: &MG1Model, theta: f64, perron_tol: f64) -> Result<EigenAtTheta> {
    let z = Complex64::new(theta, 0.0);
    let gamma = model.gamma_a_star(z)?.re();
    let pair = perron_pair(&gamma, perron_tol)?;
    let derivative = model.a_star_derivative(z)?.re();
    let delta_prime = dot(&pair.left, &mat_vec(&derivative, &pair.right));
    Ok(EigenAtTheta {
        mu: pair.left,
        v: pair.right,
        delta_prime,
    })
}

/// Period of the additive kernel and the phase offsets `p(j) ∈ 0..τ`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Period {
    pub tau: u64,
    pub offsets: Vec<u64>,
}

/// Period from a spanning-tree potential: `φ` is propagated along support
/// edges, and `τ` is the gcd of every edge's discrepancy
/// `|w − (φ(j) − φ(i))|`. Phases unreachable from phase 0 are not allowed.
pub fn madp_period(m: usize, support: &[SupportEdge]) -> Result<Period> {
    let mut adjacency: Vec<Vec<(usize, i64)>> = vec![Vec::new(); m];
    for e in support {
        adjacency[e.from].push((e.to, e.displacement));
        adjacency[e.to].push((e.from, -e.displacement));
    }
    let mut phi: Vec<Option<i64>> = vec![None; m];
    phi[0] = Some(0);
    let mut queue = VecDeque::from([0usize]);
    while let Some(i) = queue.pop_front() {
        let base = phi[i].expect("queued phases carry a potential");
        for &(j, w) in &adjacency[i] {
            if phi[j].is_none() {
                phi[j] = Some(base + w);
                queue.push_back(j);
            }
        }
    }
    let phi: Vec<i64> = phi
        .into_iter()
        .collect::<Option<_>>()
        .ok_or_else(|| Error::ShapeViolation("support graph is not connected".into()))?;
    let d = support.iter().fold(0i64, |acc, e| {
        acc.gcd(&(e.displacement - (phi[e.to] - phi[e.from])).abs())
    });
    if d == 0 {
        return Err(Error::PeriodUndefined);
    }
    Ok(Period {
        tau: d as u64,
        offsets: phi.iter().map(|p| p.rem_euclid(d) as u64).collect(),
    })
}

/// `Δ(ω) = diag(ω^{−p(j)})` at `ω = exp(2πi·angle)`.
pub fn delta_matrix(offsets: &[u64], angle: Angle) -> ComplexMatrix {
    let entries: Vec<Complex64> = offsets
        .iter()
        .map(|&p| Angle::new(-((angle.num() * p) as i64), angle.den()).unit())
        .collect();
    ComplexMatrix::diagonal(&entries)
}

/// `Δ(ω)^{−1}`.
pub fn delta_matrix_inverse(offsets: &[u64], angle: Angle) -> ComplexMatrix {
    delta_matrix(offsets, angle.conjugate())
}

/// `|det(I − Γ_A*(θ·e^{2πi/n}))|` for `n = 1..=m`.
pub fn period_spectral_check(model: &MG1Model, theta: f64) -> Result<Vec<(u64, f64)>> {
    let m = model.m();
    (1..=m as u64)
        .map(|n| {
            let z = Angle::new(1, n).unit() * theta;
            let mat = &ComplexMatrix::identity(m) - &model.gamma_a_star(z)?;
            Ok((n, lu_det_complex(&mat).norm()))
        })
        .collect()
}

/// Largest `n ≤ M` whose determinant in [`period_spectral_check`] is below `tol`.
pub fn spectral_period(check: &[(u64, f64)], tol: f64) -> Option<u64> {
    check.iter().filter(|(_, d)| *d < tol).map(|(n, _)| *n).max()
}

/// `‖μΔ(ω)^{−1}R*(θω) − μΔ(ω)^{−1}‖∞` for each `ω = ω_τ^ν`. Zero for every
/// `ν` exactly when the period of the `R` kernel agrees with `τ`.
pub fn r_period_residuals(kernels: &Kernels, theta: f64, eig: &EigenAtTheta, period: &Period) -> Result<Vec<f64>> {
    let mu: Vec<Complex64> = eig.mu.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    (0..period.tau)
        .map(|nu| {
            let angle = Angle::new(nu as i64, period.tau);
            let row = vec_mat(&mu, &delta_matrix_inverse(&period.offsets, angle));
            let r = kernels.r_star(angle.unit() * theta)?;
            let image = vec_mat(&row, &r);
            Ok(image.iter().zip(&row).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max))
        })
        .collect()
}

/// `δ(R*(θ))`, which equals 1 when `θ` exists.
pub fn r_star_perron_at_theta(kernels: &Kernels, theta: f64, perron_tol: f64) -> Result<f64> {
    let r: RealMatrix = kernels.r_star(Complex64::new(theta, 0.0))?.re();
    Ok(perron_pair(&r, perron_tol)?.value)
}

/// Spectral data driving the asymptotics.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralProfile {
    pub theta: Theta,
    pub r_a: Radius,
    pub r_b: Radius,
    pub rho: f64,
    /// Present exactly when `θ` is.
    pub eigen: Option<EigenAtTheta>,
    pub period: Period,
    /// `(n, |det(I − Γ_A*(θω_n))|)`, empty without `θ`.
    pub spectral_check: Vec<(u64, f64)>,
}

impl SpectralProfile {
    pub fn compute(model: &MG1Model, drift: &DriftProfile, theta_tol: f64, perron_tol: f64) -> Result<Self> {
        let theta = find_theta(model, theta_tol, perron_tol)?;
        let period = madp_period(model.m(), &gamma_a_support(model))?;
        let (eigen, spectral_check) = match theta {
            Theta::Found(t) => (
                Some(eigen_at_theta(model, t, perron_tol)?),
                period_spectral_check(model, t)?,
            ),
            Theta::NoTheta => (None, Vec::new()),
        };
        Ok(SpectralProfile {
            theta,
            r_a: model.r_a(),
            r_b: model.r_b(),
            rho: drift.rho,
            eigen,
            period,
            spectral_check,
        })
    }

    pub fn tau(&self) -> u64 {
        self.period.tau
    }
}
