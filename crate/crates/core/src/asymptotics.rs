//! Regime classification and prefactors of the tail asymptotics.
//!
//! Every regime predicts `x̄(k) ≈ k^{n−1}/(n−1)!·base^{−k}·ξ(k)` with an
//! order `n` and a bounded oscillating factor `ξ(k)`: residue classes
//! `c_{k mod period}` when the dominant poles come from `I − Γ_A*(z)`, or a
//! sum over the declared boundary poles otherwise.

use std::fmt;

use num_complex::Complex64;
use num_integer::Integer;

use crate::error::{Error, Result};
use crate::fundamental::FundamentalSet;
use crate::linalg::{dot, inverse, mat_vec, vec_mat, ComplexMatrix, RealMatrix};
use crate::model::{binom, Angle, MG1Model, Radius};
use crate::spectral::{delta_matrix, delta_matrix_inverse, SpectralProfile, Theta};

/// Relative tolerance for `θ = r_B`.
pub const AT_RB_REL_TOL: f64 = 1e-9;
/// A residue counts as zero below this fraction of the residue at `θ`.
pub const ZERO_REL_TOL: f64 = 1e-9;
/// Relative size of the imaginary part tolerated in a real prefactor.
const IMAG_REL_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    BelowRB,
    AboveRB,
    AtRB,
    NoThetaAboveRB,
    Unsupported,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Regime::BelowRB => "BelowRB",
            Regime::AboveRB => "AboveRB",
            Regime::AtRB => "AtRB",
            Regime::NoThetaAboveRB => "NoThetaAboveRB",
            Regime::Unsupported => "Unsupported",
        };
        f.write_str(s)
    }
}

pub fn classify_regime(model: &MG1Model, spectral: &SpectralProfile, at_rb_tol: f64) -> Regime {
    let has_tail = model.b_tail().is_some();
    match (spectral.theta, spectral.r_b) {
        (Theta::Found(_), Radius::Unbounded) => Regime::BelowRB,
        (Theta::Found(t), Radius::Finite(rb)) => {
            if (t - rb).abs() <= at_rb_tol * t {
                Regime::AtRB
            } else if t < rb {
                Regime::BelowRB
            } else if has_tail {
                Regime::AboveRB
            } else {
                Regime::Unsupported
            }
        }
        (Theta::NoTheta, Radius::Finite(rb)) if has_tail && spectral.r_a.value() > rb => Regime::NoThetaAboveRB,
        (Theta::NoTheta, _) => Regime::Unsupported,
    }
}

fn complex_row(x: &[f64]) -> Vec<Complex64> {
    x.iter().map(|&v| Complex64::new(v, 0.0)).collect()
}

fn eigen(spectral: &SpectralProfile) -> Result<(f64, &crate::spectral::EigenAtTheta)> {
    match (spectral.theta, &spectral.eigen) {
        (Theta::Found(t), Some(e)) => Ok((t, e)),
        _ => Err(Error::Unsupported("no decay parameter θ".into())),
    }
}

/// `ω_τ^ν` as an exact angle.
fn root_angle(nu: u64, tau: u64) -> Angle {
    Angle::new(nu as i64, tau)
}

/// `lim (1 − z/(θω))[I − Γ_A*(z)]^{−1} = Δ(ω)v μΔ(ω)^{−1}/(δ′ − 1)` at
/// `ω = ω_τ^ν`.
pub fn residue_inverse_at(spectral: &SpectralProfile, nu: u64) -> Result<ComplexMatrix> {
    let (_, e) = eigen(spectral)?;
    let angle = root_angle(nu, spectral.tau());
    let offsets = &spectral.period.offsets;
    let col = mat_vec(&delta_matrix(offsets, angle), &complex_row(&e.v));
    let row = vec_mat(&complex_row(&e.mu), &delta_matrix_inverse(offsets, angle));
    let m = col.len();
    let scale = 1.0 / (e.delta_prime - 1.0);
    Ok(ComplexMatrix::from_fn(m, m, |i, j| col[i] * row[j] * scale))
}

/// `c(ω) = [x(0)B*(θω) − x(1)A(0)]Δ(ω)v / ((θω − 1)(δ′ − 1))` at `ω = ω_τ^ν`.
pub fn c_omega(model: &MG1Model, spectral: &SpectralProfile, fund: &FundamentalSet, nu: u64) -> Result<Complex64> {
    let (theta, e) = eigen(spectral)?;
    let angle = root_angle(nu, spectral.tau());
    let z = angle.unit() * theta;
    let mut numerator = vec_mat(&complex_row(fund.x0()), &model.b_star(z)?);
    let down = vec_mat(fund.x_at(1), &model.a()[0]);
    numerator.iter_mut().zip(&down).for_each(|(a, b)| *a -= b);
    let dv = mat_vec(&delta_matrix(&spectral.period.offsets, angle), &complex_row(&e.v));
    Ok(dot(&numerator, &dv) / ((z - 1.0) * (e.delta_prime - 1.0)))
}

/// Real, entrywise positive `Σ_ν ω_τ^{−νl}·r_ν·μΔ(ω_τ^ν)^{−1}` for each
/// residue class `l` of `period`.
fn residue_classes(
    spectral: &SpectralProfile,
    residues: &[(u64, Complex64)],
    period: u64,
    what: &str,
) -> Result<Vec<Vec<f64>>> {
    let (_, e) = eigen(spectral)?;
    let tau = spectral.tau();
    let mu = complex_row(&e.mu);
    let rows: Vec<(u64, Vec<Complex64>)> = residues
        .iter()
        .map(|&(nu, r)| {
            let row = vec_mat(
                &mu,
                &delta_matrix_inverse(&spectral.period.offsets, root_angle(nu, tau)),
            );
            (nu, row.iter().map(|x| x * r).collect())
        })
        .collect();
    let mut classes = Vec::with_capacity(period as usize);
    for l in 0..period {
        let mut acc = vec![Complex64::new(0.0, 0.0); mu.len()];
        for (nu, row) in &rows {
            let w = root_angle(nu * l, tau).conjugate().unit();
            acc.iter_mut().zip(row).for_each(|(a, b)| *a += w * b);
        }
        let scale = acc.iter().map(|x| x.norm()).fold(0.0, f64::max);
        for (j, x) in acc.iter().enumerate() {
            if x.im.abs() > IMAG_REL_TOL * scale {
                return Err(Error::PositivityViolation(format!(
                    "{what}_{l} entry {j} has imaginary part {:e}",
                    x.im
                )));
            }
            if x.re <= 0.0 {
                return Err(Error::PositivityViolation(format!(
                    "{what}_{l} entry {j} is {:e}",
                    x.re
                )));
            }
        }
        classes.push(acc.iter().map(|x| x.re).collect());
    }
    Ok(classes)
}

/// Prefactors when `θ < r_B`.
#[derive(Clone, Debug, PartialEq)]
pub struct BelowPrefactors {
    /// `c(ω_τ^ν)` for `ν = 0..τ`.
    pub c_omega: Vec<Complex64>,
    /// `ν` with a nonzero `c(ω_τ^ν)`, always including 0.
    pub kept: Vec<u64>,
    pub tau_prime: u64,
    /// `τ′` recomputed with a ten times larger zero tolerance.
    pub tau_prime_perturbed: u64,
    /// `c′_l` for `l = 0..τ′`.
    pub classes: Vec<Vec<f64>>,
}

/// `τ / gcd(kept ∪ {τ})`.
fn reduced_period(kept: &[u64], tau: u64) -> u64 {
    tau / kept.iter().fold(tau, |g, &nu| g.gcd(&nu))
}

fn nonzero(values: &[(u64, Complex64)], reference: f64, tol: f64) -> Vec<u64> {
    values
        .iter()
        .filter(|(nu, c)| *nu == 0 || c.norm() > tol * reference)
        .map(|(nu, _)| *nu)
        .collect()
}

pub fn prefactors_below(
    model: &MG1Model,
    spectral: &SpectralProfile,
    fund: &FundamentalSet,
    zero_tol: f64,
) -> Result<BelowPrefactors> {
    let tau = spectral.tau();
    let c: Vec<Complex64> = (0..tau)
        .map(|nu| c_omega(model, spectral, fund, nu))
        .collect::<Result<_>>()?;
    let c0 = c[0];
    if c0.re <= 0.0 || c0.im.abs() > IMAG_REL_TOL * c0.norm() {
        return Err(Error::PositivityViolation(format!("c(1) = {c0}")));
    }
    let indexed: Vec<(u64, Complex64)> = c.iter().copied().enumerate().map(|(i, v)| (i as u64, v)).collect();
    let kept = nonzero(&indexed, c0.norm(), zero_tol);
    let tau_prime = reduced_period(&kept, tau);
    let tau_prime_perturbed = reduced_period(&nonzero(&indexed, c0.norm(), 10.0 * zero_tol), tau);
    let residues: Vec<(u64, Complex64)> = kept.iter().map(|&nu| (nu, c[nu as usize])).collect();
    let classes = residue_classes(spectral, &residues, tau_prime, "c")?;
    Ok(BelowPrefactors {
        c_omega: c,
        kept,
        tau_prime,
        tau_prime_perturbed,
        classes,
    })
}

/// Weight row vector of one declared boundary pole `r_B·ζ`.
#[derive(Clone, Debug, PartialEq)]
pub struct PoleWeight {
    pub angle: Angle,
    pub weight: Vec<Complex64>,
}

/// `x(0)W_n/(r_Bζ_n − 1)·[I − Γ_A*(r_Bζ_n)]^{−1}` for each declared pole.
pub fn prefactors_above(model: &MG1Model, fund: &FundamentalSet) -> Result<Vec<PoleWeight>> {
    let tail = model
        .b_tail()
        .ok_or_else(|| Error::Unsupported("boundary poles need a b_tail".into()))?;
    let m = model.m();
    let x0 = complex_row(fund.x0());
    let mut out = Vec::with_capacity(tail.poles.len());
    for pole in &tail.poles {
        let sigma = tail.pole_location(pole);
        let inv = inverse(&(&ComplexMatrix::identity(m) - &model.gamma_a_star(sigma)?))?;
        let row = vec_mat(&x0, &pole.weight);
        let weight = vec_mat(&row, &inv).iter().map(|w| w / (sigma - 1.0)).collect();
        if pole.angle == Angle::zero() {
            let w: &Vec<Complex64> = &weight;
            if w.iter().any(|x| x.re <= 0.0) {
                return Err(Error::PositivityViolation("weight of the real boundary pole".into()));
            }
        }
        out.push(PoleWeight {
            angle: pole.angle,
            weight,
        });
    }
    Ok(out)
}

/// `B̄(k) = Σ_{l>k} B(l)`, with the pole tail summed in closed form.
pub fn b_bar(model: &MG1Model, k: usize) -> RealMatrix {
    let (m0, m) = (model.m0(), model.m());
    let head_end = model
        .b_tail()
        .map_or(model.b().len(), |t| t.start_index.max(model.b().len()));
    let mut acc = RealMatrix::zeros(m0, m);
    for l in k + 1..=head_end {
        acc = &acc + &model.b_block(l);
    }
    if let Some(t) = model.b_tail() {
        let n = (k + 1).max(t.start_index + 1) as u64;
        let p = t.order as u64 - 1;
        let mut tail = ComplexMatrix::zeros(m0, m);
        for pole in &t.poles {
            let c = t.pole_ratio(pole);
            let one_minus = Complex64::new(1.0, 0.0) - c;
            let mut s = Complex64::new(0.0, 0.0);
            for i in 0..=p {
                s += binom(n + p, p - i) * c.powu(i as u32) / one_minus.powu(i as u32 + 1);
            }
            tail = &tail + &pole.weight.scale(s * t.pole_power(pole, n));
        }
        acc = &acc + &tail.re();
    }
    acc
}

/// `x(0)B̄(k)[I − Γ_A*(r_B)]^{−1}`, the single-pole boundary prediction.
pub fn boundary_tail_prediction(model: &MG1Model, fund: &FundamentalSet, k: usize) -> Result<Vec<f64>> {
    let tail = model
        .b_tail()
        .ok_or_else(|| Error::Unsupported("boundary prediction needs a b_tail".into()))?;
    if tail.poles.len() != 1 {
        return Err(Error::Unsupported("boundary prediction needs a single pole".into()));
    }
    let m = model.m();
    let gamma = model.gamma_a_star(Complex64::new(tail.radius, 0.0))?.re();
    let inv = inverse(&(&RealMatrix::identity(m) - &gamma))?;
    Ok(vec_mat(&vec_mat(fund.x0(), &b_bar(model, k)), &inv))
}

/// Prefactors when `θ = r_B`.
#[derive(Clone, Debug, PartialEq)]
pub struct AtPrefactors {
    /// `(ν, x(0)W Δ(ω)v / ((θω − 1)(δ′ − 1)))` over the poles shared by
    /// `B*` and `[I − Γ_A*]^{−1}` with a nonzero residue.
    pub residues: Vec<(u64, Complex64)>,
    pub intersection: Vec<Angle>,
    /// Period of the leading term; the true period divides it.
    pub tau_hat: u64,
    pub classes: Vec<Vec<f64>>,
}

pub fn prefactors_at(
    model: &MG1Model,
    spectral: &SpectralProfile,
    fund: &FundamentalSet,
    zero_tol: f64,
) -> Result<AtPrefactors> {
    let (theta, e) = eigen(spectral)?;
    let tail = model
        .b_tail()
        .ok_or_else(|| Error::Unsupported("θ = r_B needs a b_tail".into()))?;
    let tau = spectral.tau();
    let x0 = complex_row(fund.x0());
    let v = complex_row(&e.v);
    let mut candidates = Vec::new();
    for pole in &tail.poles {
        if !tau.is_multiple_of(pole.angle.den()) {
            continue;
        }
        let nu = pole.angle.num() * (tau / pole.angle.den());
        let z = pole.angle.unit() * theta;
        let dv = mat_vec(&delta_matrix(&spectral.period.offsets, pole.angle), &v);
        let r = dot(&vec_mat(&x0, &pole.weight), &dv) / ((z - 1.0) * (e.delta_prime - 1.0));
        candidates.push((nu, r));
    }
    let reference = match candidates.iter().find(|(nu, _)| *nu == 0) {
        Some((_, r)) if r.norm() > 0.0 => r.norm(),
        _ => return Err(Error::EmptyIntersection),
    };
    let kept = nonzero(&candidates, reference, zero_tol);
    let residues: Vec<(u64, Complex64)> = candidates.into_iter().filter(|(nu, _)| kept.contains(nu)).collect();
    let tau_hat = reduced_period(&kept, tau);
    let classes = residue_classes(spectral, &residues, tau_hat, "c_hat")?;
    Ok(AtPrefactors {
        intersection: residues.iter().map(|&(nu, _)| root_angle(nu, tau)).collect(),
        residues,
        tau_hat,
        classes,
    })
}

/// One pole `radius·exp(2πi·angle)` of order `order`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpansionPole {
    pub radius: f64,
    pub angle: Angle,
    pub order: usize,
}

/// Dominant poles of a scalar generating function with the limits
/// `lim (1 − z/σ_j)^{order} f(z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PoleExpansion {
    pub poles: Vec<ExpansionPole>,
    pub weights: Vec<Complex64>,
}

/// `ξ_k = Σ_j (σ/σ_j)^k·w_j`, real part.
pub fn pole_expansion_eval(exp: &PoleExpansion, k: u64) -> f64 {
    exp.poles
        .iter()
        .zip(&exp.weights)
        .map(|(p, w)| (p.angle.conjugate().times(k).unit() * w).re)
        .sum()
}

#[derive(Clone, Debug, PartialEq)]
pub enum Prefactors {
    /// Real vectors per residue class.
    Classes(Vec<Vec<f64>>),
    /// Complex weights per boundary pole.
    Poles(Vec<PoleWeight>),
    Absent,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Diagnostics {
    /// `c(ω_τ^ν)` for `ν = 0..τ`, when computed.
    pub c_omega: Vec<Complex64>,
    /// Residue indices `ν` dropped as zero.
    pub dropped: Vec<u64>,
    /// Pole angles shared by both sets when `θ = r_B`.
    pub intersection: Vec<Angle>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AsymptoticReport {
    pub regime: Regime,
    /// `θ` or `r_B`.
    pub base: Option<f64>,
    pub period_used: u64,
    pub order: usize,
    pub prefactors: Prefactors,
    pub diagnostics: Diagnostics,
}

impl AsymptoticReport {
    pub fn build(
        model: &MG1Model,
        spectral: &SpectralProfile,
        fund: &FundamentalSet,
        zero_tol: f64,
        at_rb_tol: f64,
    ) -> Result<Self> {
        let regime = classify_regime(model, spectral, at_rb_tol);
        let tau = spectral.tau();
        let mut diagnostics = Diagnostics::default();
        let report = match regime {
            Regime::BelowRB => {
                let p = prefactors_below(model, spectral, fund, zero_tol)?;
                if p.tau_prime != p.tau_prime_perturbed {
                    diagnostics.warnings.push(format!(
                        "tau' = {} changes to {} under a 10x zero tolerance",
                        p.tau_prime, p.tau_prime_perturbed
                    ));
                }
                diagnostics.dropped = (0..tau).filter(|nu| !p.kept.contains(nu)).collect();
                diagnostics.c_omega = p.c_omega;
                AsymptoticReport {
                    regime,
                    base: spectral.theta.value(),
                    period_used: p.tau_prime,
                    order: 1,
                    prefactors: Prefactors::Classes(p.classes),
                    diagnostics,
                }
            }
            Regime::AboveRB | Regime::NoThetaAboveRB => {
                let tail = model.b_tail().expect("classified with a b_tail");
                AsymptoticReport {
                    regime,
                    base: Some(tail.radius),
                    period_used: tail.angle_period(),
                    order: tail.order,
                    prefactors: Prefactors::Poles(prefactors_above(model, fund)?),
                    diagnostics,
                }
            }
            Regime::AtRB => {
                let tail = model.b_tail().expect("classified with a b_tail");
                let p = prefactors_at(model, spectral, fund, zero_tol)?;
                diagnostics.intersection = p.intersection;
                AsymptoticReport {
                    regime,
                    base: spectral.theta.value(),
                    period_used: p.tau_hat,
                    order: tail.order + 1,
                    prefactors: Prefactors::Classes(p.classes),
                    diagnostics,
                }
            }
            Regime::Unsupported => AsymptoticReport {
                regime,
                base: None,
                period_used: 1,
                order: 0,
                prefactors: Prefactors::Absent,
                diagnostics,
            },
        };
        Ok(report)
    }

    /// `k^{n−1}/(n−1)!`.
    fn polynomial_factor(&self, k: usize) -> f64 {
        (1..self.order).fold(1.0, |acc, i| acc * k as f64 / i as f64)
    }

    /// Predicted `x̄(k)`, or `None` without a supported regime.
    pub fn predict(&self, k: usize) -> Option<Vec<f64>> {
        let base = self.base?;
        let scale = self.polynomial_factor(k) * base.powi(-(k as i32));
        match &self.prefactors {
            Prefactors::Classes(c) => Some(c[k % c.len()].iter().map(|x| x * scale).collect()),
            Prefactors::Poles(p) => {
                let m = p[0].weight.len();
                let mut out = vec![0.0; m];
                for pw in p {
                    let rot = pw.angle.conjugate().times(k as u64).unit();
                    out.iter_mut().zip(&pw.weight).for_each(|(a, w)| *a += (rot * w).re);
                }
                Some(out.iter().map(|x| x * scale).collect())
            }
            Prefactors::Absent => None,
        }
    }

    /// The oscillating factor of each phase as a pole expansion on the
    /// circle `|z| = base`.
    pub fn pole_expansions(&self) -> Vec<PoleExpansion> {
        let Some(base) = self.base else {
            return Vec::new();
        };
        let terms: Vec<(Angle, Vec<Complex64>)> = match (&self.regime, &self.prefactors) {
            (Regime::BelowRB | Regime::AtRB, Prefactors::Classes(classes)) => {
                let p = classes.len() as u64;
                let m = classes[0].len();
                // Discrete Fourier coefficients of the classes recover the
                // residue vector attached to each root of unity of order p.
                (0..p)
                    .map(|nu| {
                        let angle = Angle::new(nu as i64, p);
                        let w: Vec<Complex64> = (0..m)
                            .map(|j| {
                                (0..p)
                                    .map(|l| angle.times(l).unit() * classes[l as usize][j])
                                    .sum::<Complex64>()
                                    / p as f64
                            })
                            .collect();
                        (angle, w)
                    })
                    .collect()
            }
            (_, Prefactors::Poles(p)) => p.iter().map(|pw| (pw.angle, pw.weight.clone())).collect(),
            _ => return Vec::new(),
        };
        let m = terms.first().map_or(0, |t| t.1.len());
        (0..m)
            .map(|j| PoleExpansion {
                poles: terms
                    .iter()
                    .map(|(a, _)| ExpansionPole {
                        radius: base,
                        angle: *a,
                        order: self.order,
                    })
                    .collect(),
                weights: terms.iter().map(|(_, w)| w[j]).collect(),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fundamental::G_DEFAULT_TOL;
    use crate::linalg::PERRON_DEFAULT_TOL;
    use crate::model::{drift, parse_model, DriftProfile};
    use crate::spectral::THETA_DEFAULT_TOL;
    use approx::assert_relative_eq;

    const SCALAR: &str = include_str!("../../../fixtures/scalar.json");
    const TWO_PHASE: &str = include_str!("../../../fixtures/two_phase.json");
    const SKEWED: &str = include_str!("../../../fixtures/two_phase_skewed.json");
    const THREE_PHASE: &str = include_str!("../../../fixtures/three_phase.json");
    const ABOVE_RB: &str = include_str!("../../../fixtures/above_rb.json");
    const AT_RB: &str = include_str!("../../../fixtures/at_rb.json");
    const NO_THETA_BTAIL: &str = include_str!("../../../fixtures/no_theta_btail.json");

    struct Solved {
        model: MG1Model,
        drift: DriftProfile,
        spectral: SpectralProfile,
        fund: FundamentalSet,
    }

    fn solve(text: &str, levels: usize) -> Solved {
        let model = parse_model(text).unwrap();
        let drift = drift(&model).unwrap();
        let spectral = SpectralProfile::compute(&model, &drift, THETA_DEFAULT_TOL, PERRON_DEFAULT_TOL).unwrap();
        let fund = FundamentalSet::compute(&model, &drift, levels, G_DEFAULT_TOL).unwrap();
        Solved {
            model,
            drift,
            spectral,
            fund,
        }
    }

    fn report(s: &Solved) -> AsymptoticReport {
        AsymptoticReport::build(&s.model, &s.spectral, &s.fund, ZERO_REL_TOL, AT_RB_REL_TOL).unwrap()
    }

    /// `Σ_{l>k} x(l)` from the stored prefix; the prefix must be long enough
    /// for the remainder to vanish in double precision.
    fn tail(s: &Solved, k: usize) -> Vec<f64> {
        let m = s.model.m();
        let mut acc = vec![0.0; m];
        for x in s.fund.x.iter().skip(k).rev() {
            acc.iter_mut().zip(x).for_each(|(a, b)| *a += b);
        }
        acc
    }

    #[test]
    fn regimes() {
        let cases = [
            (SCALAR, Regime::BelowRB),
            (TWO_PHASE, Regime::BelowRB),
            (ABOVE_RB, Regime::AboveRB),
            (AT_RB, Regime::AtRB),
            (NO_THETA_BTAIL, Regime::NoThetaAboveRB),
        ];
        for (text, expected) in cases {
            let s = solve(text, 2);
            assert_eq!(classify_regime(&s.model, &s.spectral, AT_RB_REL_TOL), expected);
        }
    }

    #[test]
    fn scalar_residue_and_c() {
        let s = solve(SCALAR, 5);
        let r = residue_inverse_at(&s.spectral, 0).unwrap();
        assert_relative_eq!(r[(0, 0)].re, 5.0, epsilon = 1e-10);
        let c = c_omega(&s.model, &s.spectral, &s.fund, 0).unwrap();
        assert_relative_eq!(c.re, 1.0, epsilon = 1e-10);
        assert!(c.im.abs() < 1e-12);
        let p = prefactors_below(&s.model, &s.spectral, &s.fund, ZERO_REL_TOL).unwrap();
        assert_eq!(p.tau_prime, 1);
        assert_relative_eq!(p.classes[0][0], 1.0, epsilon = 1e-8);
    }

    /// `(1 − z/σ)[I − Γ_A*(z)]^{−1}` approaches the rank-one residue.
    #[test]
    fn residue_matches_limit() {
        for text in [SCALAR, TWO_PHASE, THREE_PHASE, SKEWED] {
            let s = solve(text, 2);
            let theta = s.spectral.theta.value().unwrap();
            let m = s.model.m();
            for nu in 0..s.spectral.tau() {
                let sigma = root_angle(nu, s.spectral.tau()).unit() * theta;
                let z = sigma * (1.0 - 1e-6);
                let inv = inverse(&(&ComplexMatrix::identity(m) - &s.model.gamma_a_star(z).unwrap())).unwrap();
                let limit = inv.scale(1.0 - z / sigma);
                let r = residue_inverse_at(&s.spectral, nu).unwrap();
                assert!(limit.max_abs_diff(&r) < 1e-3 * r.max_abs(), "{text}");
            }
        }
    }

    #[test]
    fn two_phase_residue_flips_sign() {
        let s = solve(TWO_PHASE, 2);
        let r0 = residue_inverse_at(&s.spectral, 0).unwrap();
        let r1 = residue_inverse_at(&s.spectral, 1).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let sign = if i == j { 1.0 } else { -1.0 };
                assert!((r1[(i, j)] - r0[(i, j)] * sign).norm() < 1e-12);
            }
        }
    }

    /// `x̄*(z) = Σ_k z^k x̄(k) = Σ_l x(l)(z^l − 1)/(z − 1)`, accumulated from
    /// the scaled recursion `y(k) = θ^k x(k)` so that levels far beyond the
    /// underflow point of `x(k)` still contribute.
    fn tail_generating_function(s: &Solved, z: Complex64, levels: usize) -> Vec<Complex64> {
        let theta = s.spectral.theta.value().unwrap();
        let k = &s.fund.kernels;
        let r_end = k.r_support_end().unwrap();
        let r0_end = k.r0_support_end().unwrap();
        let r: Vec<RealMatrix> = (0..r_end).map(|i| k.r_at(i).scale(theta.powi(i as i32))).collect();
        let m = s.model.m();
        let w = z / theta;
        let mut window: std::collections::VecDeque<Vec<f64>> = std::collections::VecDeque::new();
        let mut gf = vec![Complex64::new(0.0, 0.0); m];
        let mut wl = Complex64::new(1.0, 0.0);
        for l in 1..=levels {
            let mut y = if l < r0_end {
                vec_mat(s.fund.x0(), &k.r0_at(l))
                    .iter()
                    .map(|v| v * theta.powi(l as i32))
                    .collect()
            } else {
                vec![0.0; m]
            };
            for (back, prev) in window.iter().rev().enumerate() {
                let d = back + 1;
                if d < r_end {
                    let c = vec_mat(prev, &r[d]);
                    y.iter_mut().zip(&c).for_each(|(a, b)| *a += b);
                }
            }
            wl *= w;
            let inv_theta_l = theta.powi(-(l as i32));
            gf.iter_mut().zip(&y).for_each(|(g, v)| *g += v * (wl - inv_theta_l));
            window.push_back(y);
            if window.len() >= r_end {
                window.pop_front();
            }
        }
        gf.iter().map(|g| g / (z - 1.0)).collect()
    }

    /// `c(ω)μΔ(ω)^{−1}` is the limit of `(1 − z/(θω))·x̄*(z)`.
    #[test]
    fn c_omega_matches_generating_function_limit() {
        let eps = 1e-5;
        for text in [TWO_PHASE, SKEWED, THREE_PHASE] {
            let s = solve(text, 2);
            let theta = s.spectral.theta.value().unwrap();
            let e = s.spectral.eigen.as_ref().unwrap();
            let tau = s.spectral.tau();
            let c0 = c_omega(&s.model, &s.spectral, &s.fund, 0).unwrap().norm();
            for nu in 0..tau {
                let angle = root_angle(nu, tau);
                let z = angle.unit() * theta * (1.0 - eps);
                let gf = tail_generating_function(&s, z, (30.0 / eps) as usize);
                let c = c_omega(&s.model, &s.spectral, &s.fund, nu).unwrap();
                let row = vec_mat(
                    &complex_row(&e.mu),
                    &delta_matrix_inverse(&s.spectral.period.offsets, angle),
                );
                for (g, r) in gf.iter().zip(&row) {
                    let limit = g * eps;
                    assert!(
                        (limit - r * c).norm() < 1e-3 * c0,
                        "{text} ν={nu}: {limit} vs {}",
                        r * c
                    );
                }
            }
        }
    }

    #[test]
    fn conjugate_residues() {
        for text in [THREE_PHASE, SKEWED] {
            let s = solve(text, 5);
            let p = prefactors_below(&s.model, &s.spectral, &s.fund, ZERO_REL_TOL).unwrap();
            let tau = p.c_omega.len();
            for nu in 1..tau {
                assert!((p.c_omega[nu] - p.c_omega[tau - nu].conj()).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn refined_periods() {
        let s = solve(SKEWED, 5);
        assert_eq!(
            prefactors_below(&s.model, &s.spectral, &s.fund, ZERO_REL_TOL)
                .unwrap()
                .tau_prime,
            2
        );
        let s = solve(THREE_PHASE, 5);
        assert_eq!(
            prefactors_below(&s.model, &s.spectral, &s.fund, ZERO_REL_TOL)
                .unwrap()
                .tau_prime,
            3
        );
    }

    /// With `C(0) = A(0)` and `B(k) = A(k)`, `x(0) = (1 − ρ)g` and the
    /// prefactor numerator collapses to `(1 − ρ)gΔv`.
    #[test]
    fn reduced_formula_when_boundary_copies_a() {
        for text in [SCALAR, TWO_PHASE] {
            let s = solve(text, 5);
            for (a, b) in s.fund.x0().iter().zip(&s.fund.g_vec) {
                assert_relative_eq!(*a, (1.0 - s.drift.rho) * b, epsilon = 1e-12);
            }
            let e = s.spectral.eigen.as_ref().unwrap();
            let tau = s.spectral.tau();
            let mut reduced = Vec::new();
            for nu in 0..tau {
                let dv = mat_vec(
                    &delta_matrix(&s.spectral.period.offsets, root_angle(nu, tau)),
                    &complex_row(&e.v),
                );
                let c = dot(&complex_row(&s.fund.g_vec), &dv) * (1.0 - s.drift.rho) / (e.delta_prime - 1.0);
                reduced.push((nu, c));
            }
            let expected = residue_classes(&s.spectral, &reduced, tau, "c").unwrap();
            let all: Vec<(u64, Complex64)> = (0..tau)
                .map(|nu| (nu, c_omega(&s.model, &s.spectral, &s.fund, nu).unwrap()))
                .collect();
            let got = residue_classes(&s.spectral, &all, tau, "c").unwrap();
            for (a, b) in got.iter().flatten().zip(expected.iter().flatten()) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn below_rb_prediction_converges() {
        for text in [TWO_PHASE, SKEWED, THREE_PHASE] {
            let s = solve(text, 400);
            let r = report(&s);
            let mut errors = Vec::new();
            for k in (5..400).step_by(5) {
                let exact = tail(&s, k);
                if exact.iter().cloned().fold(f64::INFINITY, f64::min) < 1e-12 {
                    break;
                }
                let predicted = r.predict(k).unwrap();
                let err = exact
                    .iter()
                    .zip(&predicted)
                    .map(|(a, b)| ((a - b) / a).abs())
                    .fold(0.0, f64::max);
                errors.push(err);
            }
            assert!(*errors.last().unwrap() < 1e-4, "{text}: {errors:?}");
        }
    }

    #[test]
    fn above_rb_weight() {
        let s = solve(ABOVE_RB, 5);
        let w = prefactors_above(&s.model, &s.fund).unwrap();
        assert_eq!(w.len(), 1);
        assert_relative_eq!(w[0].weight[0].re, 30.0 * s.fund.x0()[0], max_relative = 1e-10);
        assert_relative_eq!(s.fund.x0()[0], 0.0625, epsilon = 1e-12);
    }

    /// With one simple pole the general weight and the boundary-sum form
    /// agree at every level.
    #[test]
    fn single_pole_forms_agree() {
        let s = solve(ABOVE_RB, 5);
        let r = report(&s);
        for k in 1..30 {
            let a = r.predict(k).unwrap();
            let b = boundary_tail_prediction(&s.model, &s.fund, k).unwrap();
            assert_relative_eq!(a[0], b[0], max_relative = 1e-12);
        }
    }

    #[test]
    fn b_bar_matches_direct_sums() {
        let text = r#"{"M": 1, "M0": 1, "A": [[[0.4]], [[0.4]], [[0.2]]],
            "B0": [[0.6027777777777777]], "B": [[[0.1]]], "C0": [[0.4]],
            "b_tail": {"radius": 2.0, "order": 2, "start_index": 2, "poles": [
              {"angle_num": 0, "angle_den": 1, "weight_re": [[0.25]], "weight_im": [[0.0]]},
              {"angle_num": 1, "angle_den": 2, "weight_re": [[0.05]], "weight_im": [[0.0]]}]}}"#;
        let model = parse_model(text).unwrap();
        for k in 0..8 {
            let direct: f64 = (k + 1..400).map(|l| model.b_block(l)[(0, 0)]).sum();
            assert_relative_eq!(b_bar(&model, k)[(0, 0)], direct, max_relative = 1e-12);
        }
    }

    #[test]
    fn at_rb_prefactor() {
        let s = solve(AT_RB, 5);
        assert_relative_eq!(s.fund.x0()[0], 1.0 / 6.0, epsilon = 1e-12);
        let p = prefactors_at(&s.model, &s.spectral, &s.fund, ZERO_REL_TOL).unwrap();
        assert_eq!(p.tau_hat, 1);
        assert_eq!(p.intersection, vec![Angle::zero()]);
        assert_relative_eq!(p.classes[0][0], s.fund.x0()[0] * 0.5 / 0.2, max_relative = 1e-9);
        assert_eq!(report(&s).order, 2);
    }

    #[test]
    fn pole_expansion_examples() {
        let pole = |angle| ExpansionPole {
            radius: 2.0,
            angle,
            order: 1,
        };
        let single = PoleExpansion {
            poles: vec![pole(Angle::zero())],
            weights: vec![Complex64::new(1.0, 0.0)],
        };
        assert!((0..10).all(|k| pole_expansion_eval(&single, k) == 1.0));
        let pair = PoleExpansion {
            poles: vec![pole(Angle::zero()), pole(Angle::new(1, 2))],
            weights: vec![Complex64::new(1.0, 0.0); 2],
        };
        for k in 0..10 {
            assert_eq!(pole_expansion_eval(&pair, k), if k % 2 == 0 { 2.0 } else { 0.0 });
        }
        let w = Complex64::new(0.3, 0.7);
        let conj = PoleExpansion {
            poles: vec![pole(Angle::new(1, 3)), pole(Angle::new(2, 3))],
            weights: vec![w, w.conj()],
        };
        for k in 0..10 {
            let full: Complex64 = conj
                .poles
                .iter()
                .zip(&conj.weights)
                .map(|(p, w)| p.angle.conjugate().times(k).unit() * w)
                .sum();
            assert!(full.im.abs() < 1e-14);
        }
    }

    #[test]
    fn emitted_expansions_reproduce_classes() {
        for text in [SCALAR, TWO_PHASE, SKEWED, THREE_PHASE] {
            let s = solve(text, 5);
            let r = report(&s);
            let Prefactors::Classes(classes) = &r.prefactors else {
                panic!()
            };
            let exps = r.pole_expansions();
            for (j, e) in exps.iter().enumerate() {
                for k in 0..20u64 {
                    let xi = pole_expansion_eval(e, k);
                    assert_relative_eq!(xi, classes[k as usize % classes.len()][j], max_relative = 1e-10);
                }
            }
        }
    }
}
