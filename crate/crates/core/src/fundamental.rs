//! Fundamental matrices and the exact stationary distribution: `G`,
//! `U(k)`, `U₀(k)`, `R(k)`, `R₀(k)`, the boundary vector `x(0)`,
//! Ramaswami's recursion, `π_*`, and block-structure classification.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::graph::strongly_connected_components;
use crate::linalg::{
    dot, inverse, perron_pair, solve_left, stationary_vector, vec_mat, ComplexMatrix, RealMatrix, PERRON_DEFAULT_TOL,
};
use crate::model::{binom, DriftProfile, MG1Model};

/// Iteration budget for the `G` fixed point.
pub const G_MAX_ITERATIONS: usize = 1_000_000;
/// Default entrywise stopping tolerance for the `G` fixed point.
pub const G_DEFAULT_TOL: f64 = 1e-14;

/// Minimal nonnegative solution of `G = Σ_k A(k)G^k` by the natural
/// iteration from `X₀ = O`; a geometric tail is summed as
/// `C(rX)^{K+1}(I − rX)^{−1}`.
pub fn compute_g(model: &MG1Model, tol: f64) -> Result<RealMatrix> {
    let m = model.m();
    let identity = RealMatrix::identity(m);
    let mut x = RealMatrix::zeros(m, m);
    for _ in 0..G_MAX_ITERATIONS {
        let mut next = RealMatrix::zeros(m, m);
        for a in model.a().iter().rev() {
            next = &(&next * &x) + a;
        }
        if let Some(t) = model.a_tail() {
            let rx = x.scale(t.ratio);
            let mut power = RealMatrix::identity(m);
            for _ in 0..=t.start_index {
                power = &power * &rx;
            }
            let tail = &(&t.coeff * &power) * &inverse(&(&identity - &rx))?;
            next = &next + &tail;
        }
        if !next.all_finite() {
            break;
        }
        let diff = next.max_abs_diff(&x);
        x = next;
        if diff < tol {
            return Ok(x);
        }
    }
    Err(Error::NoConvergence {
        what: "G iteration",
        iterations: G_MAX_ITERATIONS,
    })
}

/// `U₀(k)` beyond the listed boundary head, from the pole form of the
/// boundary tail: with `X = cG`, `n = k+m−1`, `p = m−1`,
/// `Σ_j binom(n+j, p)(cG)^j = Σ_i binom(n, p−i) X^i (I−X)^{−(i+1)}`.
#[derive(Clone, Debug)]
struct PoleContinuation {
    /// Closed form applies for `k ≥ start`.
    start: usize,
    order: usize,
    /// Per pole: `c = conj(ζ)/r_B` and `W X^i (I−X)^{−(i+1)}` post-multiplied
    /// by `(I − U(0))^{−1}` or not, for `i = 0..m`.
    terms: Vec<(Complex64, Vec<ComplexMatrix>, Vec<ComplexMatrix>)>,
}

impl PoleContinuation {
    fn eval(&self, k: usize, use_r: bool) -> RealMatrix {
        let m = self.order as u64;
        let p = m - 1;
        let first = &self.terms[0];
        let shape = if use_r { &first.2[0] } else { &first.1[0] };
        let mut acc = ComplexMatrix::zeros(shape.rows(), shape.cols());
        for (c, q_u, q_r) in &self.terms {
            let ck = c.powu(k as u32);
            let q = if use_r { q_r } else { q_u };
            for (i, qi) in q.iter().enumerate() {
                let coef = binom(k as u64 + m - 1, p - i as u64);
                acc = &acc + &qi.scale(ck * coef);
            }
        }
        acc.re()
    }
}

/// `U(k)`, `U₀(k)`, `R(k)`, `R₀(k)` up to a stored horizon, with exact
/// continuations beyond it when the kernel has analytic tails.
#[derive(Clone, Debug)]
pub struct Kernels {
    /// `U(0..=k_store)`.
    u: Vec<RealMatrix>,
    /// `U₀(1..=k_store)` at index `k − 1`.
    u0: Vec<RealMatrix>,
    /// `R(0..=k_store)` with `R(0) = O`.
    r: Vec<RealMatrix>,
    /// `R₀(1..=k_store)` at index `k − 1`.
    r0: Vec<RealMatrix>,
    /// `(I − U(0))^{−1}`.
    pub inv_i_minus_u0: RealMatrix,
    /// `R(k) = ratio^{k−start}·R(start)` for `k ≥ start`.
    r_geometric: Option<(usize, f64)>,
    u0_poles: Option<PoleContinuation>,
    m: usize,
    m0: usize,
}

impl Kernels {
    pub fn k_store(&self) -> usize {
        self.u.len() - 1
    }

    pub fn u_at(&self, k: usize) -> RealMatrix {
        if k < self.u.len() {
            return self.u[k].clone();
        }
        match self.r_geometric {
            Some((s, ratio)) => self.u[s].scale(ratio.powi((k - s) as i32)),
            None => RealMatrix::zeros(self.m, self.m),
        }
    }

    pub fn r_at(&self, k: usize) -> RealMatrix {
        if k < self.r.len() {
            return self.r[k].clone();
        }
        match self.r_geometric {
            Some((s, ratio)) => self.r[s].scale(ratio.powi((k - s) as i32)),
            None => RealMatrix::zeros(self.m, self.m),
        }
    }

    pub fn u0_at(&self, k: usize) -> RealMatrix {
        assert!(k >= 1, "U0(k) is indexed from 1");
        if k <= self.u0.len() {
            return self.u0[k - 1].clone();
        }
        match &self.u0_poles {
            Some(p) => p.eval(k, false),
            None => RealMatrix::zeros(self.m0, self.m),
        }
    }

    pub fn r0_at(&self, k: usize) -> RealMatrix {
        assert!(k >= 1, "R0(k) is indexed from 1");
        if k <= self.r0.len() {
            return self.r0[k - 1].clone();
        }
        match &self.u0_poles {
            Some(p) => p.eval(k, true),
            None => RealMatrix::zeros(self.m0, self.m),
        }
    }

    /// One past the last nonzero `R(k)`, or `None` for an infinite tail.
    pub fn r_support_end(&self) -> Option<usize> {
        match self.r_geometric {
            Some(_) => None,
            None => Some(self.r.len()),
        }
    }

    /// One past the last nonzero `R₀(k)`, or `None` for an infinite tail.
    pub fn r0_support_end(&self) -> Option<usize> {
        match self.u0_poles {
            Some(_) => None,
            None => Some(self.r0.len() + 1),
        }
    }

    /// `R*(z) = Σ_{k≥1} z^k R(k)` with the geometric tail in closed form.
    pub fn r_star(&self, z: Complex64) -> Result<ComplexMatrix> {
        let mut acc = ComplexMatrix::zeros(self.m, self.m);
        let (end, tail) = match self.r_geometric {
            Some((s, ratio)) => (s.max(1), Some((s.max(1), ratio))),
            None => (self.r.len(), None),
        };
        let mut zk = Complex64::new(1.0, 0.0);
        for k in 1..end {
            zk *= z;
            acc = &acc + &self.r[k].to_complex().scale(zk);
        }
        if let Some((s, ratio)) = tail {
            let w = z * ratio;
            if w.norm() >= 1.0 {
                return Err(Error::OutsideRadius {
                    modulus: z.norm(),
                    radius: 1.0 / ratio,
                });
            }
            let base = self.r_at(s).to_complex();
            acc = &acc + &base.scale(z.powu(s as u32) / (1.0 - w));
        }
        Ok(acc)
    }
}

/// Default horizon for stored kernel sequences: two past the longest
/// explicit support.
pub fn default_k_max(model: &MG1Model) -> usize {
    model.support_len_a().max(model.support_len_b()) + 2
}

/// `U(k) = Σ_{m>k} A(m)G^{m−k−1}`, `U₀(k) = Σ_{m≥k} B(m)G^{m−k}`,
/// `R(k) = U(k)(I−U(0))^{−1}`, `R₀(k) = U₀(k)(I−U(0))^{−1}`.
pub fn compute_urr0(model: &MG1Model, g: &RealMatrix, k_max: usize) -> Result<Kernels> {
    let (m, m0) = (model.m(), model.m0());
    let identity = RealMatrix::identity(m);
    let tail_start = model.a_tail().map(|t| t.start_index);
    let k_store = k_max.max(tail_start.unwrap_or(0)).max(1);

    let mut u = vec![RealMatrix::zeros(m, m); k_store + 1];
    u[k_store] = match model.a_tail() {
        Some(t) => {
            let factor = inverse(&(&identity - &g.scale(t.ratio)))?;
            (&t.coeff * &factor).scale(t.ratio.powi(k_store as i32 + 1))
        }
        None => {
            let mut acc = RealMatrix::zeros(m, m);
            for mm in (k_store + 1..model.a().len()).rev() {
                acc = &(&acc * g) + &model.a_block(mm);
            }
            acc
        }
    };
    for k in (0..k_store).rev() {
        u[k] = &model.a_block(k + 1) + &(&u[k + 1] * g);
    }

    let b_tail_start = model.b_tail().map(|t| t.start_index + 1);
    let mut u0_poles = None;
    if let Some(t) = model.b_tail() {
        let mut terms = Vec::new();
        let gc = g.to_complex();
        let ic = ComplexMatrix::identity(m);
        for pole in &t.poles {
            let c = t.pole_ratio(pole);
            let x = gc.scale(c);
            let inv = inverse(&(&ic - &x))?;
            let mut q = Vec::with_capacity(t.order);
            let mut x_pow = ComplexMatrix::identity(m);
            let mut inv_pow = inv.clone();
            for _ in 0..t.order {
                q.push(&(&pole.weight * &x_pow) * &inv_pow);
                x_pow = &x_pow * &x;
                inv_pow = &inv_pow * &inv;
            }
            terms.push((c, q, Vec::new()));
        }
        u0_poles = Some(PoleContinuation {
            start: t.start_index + 1,
            order: t.order,
            terms,
        });
    }
    let k_store0 = k_store.max(b_tail_start.unwrap_or(0));
    let mut u0 = vec![RealMatrix::zeros(m0, m); k_store0];
    u0[k_store0 - 1] = match &u0_poles {
        Some(p) if k_store0 >= p.start => p.eval(k_store0, false),
        _ => {
            let mut acc = RealMatrix::zeros(m0, m);
            for mm in (k_store0..=model.b().len()).rev() {
                acc = &(&acc * g) + &model.b_block(mm);
            }
            acc
        }
    };
    for k in (1..k_store0).rev() {
        u0[k - 1] = &model.b_block(k) + &(&u0[k] * g);
    }

    let inv = inverse(&(&identity - &u[0]))?;
    let mut r: Vec<RealMatrix> = u.iter().map(|uk| uk * &inv).collect();
    r[0] = RealMatrix::zeros(m, m);
    let r0: Vec<RealMatrix> = u0.iter().map(|uk| uk * &inv).collect();
    if let Some(p) = &mut u0_poles {
        let inv_c = inv.to_complex();
        for (_, q_u, q_r) in &mut p.terms {
            *q_r = q_u.iter().map(|q| q * &inv_c).collect();
        }
    }
    Ok(Kernels {
        u,
        u0,
        r,
        r0,
        inv_i_minus_u0: inv,
        r_geometric: model.a_tail().map(|t| (t.start_index.max(1), t.ratio)),
        u0_poles,
        m,
        m0,
    })
}

/// `K`, its stationary vector `κ` and the boundary vector `x(0)`.
#[derive(Clone, Debug)]
pub struct Boundary {
    pub kmat: RealMatrix,
    pub kappa: Vec<f64>,
    pub x0: Vec<f64>,
    /// `‖I − U(0)‖∞·‖(I − U(0))^{−1}‖∞`.
    pub condition: f64,
}

/// `K = B(0) + U₀(1)(I − U(0))^{−1}C(0)`, `κ` its stationary vector, and
/// `x(0) = κ / [1 + κ{β_B + (B − U₀(1)G)(I − A + eπ)^{−1}β_A}/(1−ρ)]`.
pub fn boundary_solve(model: &MG1Model, drift: &DriftProfile, g: &RealMatrix, kernels: &Kernels) -> Result<Boundary> {
    let m = model.m();
    let one = Complex64::new(1.0, 0.0);
    let inv = &kernels.inv_i_minus_u0;
    let u0_1 = kernels.u0_at(1);
    let kmat = model.b0() + &(&(&u0_1 * inv) * model.c0());
    let kappa = perron_pair(&kmat, PERRON_DEFAULT_TOL)?.left;

    let a = model.a_star(one)?.re();
    let b_total = model.b_star(one)?.re();
    let e_pi = RealMatrix::from_fn(m, m, |_, j| drift.pi[j]);
    let fundamental = inverse(&(&(&RealMatrix::identity(m) - &a) + &e_pi))?;
    let z = &(&b_total - &(&u0_1 * g)) * &fundamental;
    let z_beta: Vec<f64> = (0..model.m0()).map(|i| dot(z.row(i), &drift.beta_a)).collect();
    let bracket: Vec<f64> = drift.beta_b.iter().zip(&z_beta).map(|(a, b)| a + b).collect();
    let scalar = 1.0 + dot(&kappa, &bracket) / (1.0 - drift.rho);
    let x0 = kappa.iter().map(|k| k / scalar).collect();
    let i_minus_u0 = &RealMatrix::identity(m) - &kernels.u_at(0);
    Ok(Boundary {
        kmat,
        kappa,
        x0,
        condition: i_minus_u0.norm_inf() * inv.norm_inf(),
    })
}

/// `x(1..=levels)` from `x(k) = x(0)R₀(k) + Σ_{j=1}^{k−1} x(j)R(k−j)`.
pub fn ramaswami(kernels: &Kernels, x0: &[f64], levels: usize) -> Vec<Vec<f64>> {
    let m = kernels.m;
    let r_end = kernels.r_support_end().unwrap_or(usize::MAX);
    let r_list: Vec<RealMatrix> = (0..levels.min(r_end)).map(|k| kernels.r_at(k)).collect();
    let mut x: Vec<Vec<f64>> = Vec::with_capacity(levels);
    for k in 1..=levels {
        let mut xk = if kernels.r0_support_end().is_none_or(|end| k < end) {
            vec_mat(x0, &kernels.r0_at(k))
        } else {
            vec![0.0; m]
        };
        let lowest = if r_end == usize::MAX {
            1
        } else {
            (k + 1).saturating_sub(r_end).max(1)
        };
        for j in lowest..k {
            let contrib = vec_mat(&x[j - 1], &r_list[k - j]);
            xk.iter_mut().zip(&contrib).for_each(|(a, b)| *a += b);
        }
        x.push(xk);
    }
    x
}

/// Everything the exact solution needs.
#[derive(Clone, Debug)]
pub struct FundamentalSet {
    pub g: RealMatrix,
    pub kernels: Kernels,
    pub boundary: Boundary,
    /// `x(1..=levels)` at index `k − 1`.
    pub x: Vec<Vec<f64>>,
    /// Stationary vector of `G`.
    pub g_vec: Vec<f64>,
}

impl FundamentalSet {
    pub fn compute(model: &MG1Model, drift: &DriftProfile, levels: usize, g_tol: f64) -> Result<Self> {
        let g = compute_g(model, g_tol)?;
        let kernels = compute_urr0(model, &g, default_k_max(model))?;
        let boundary = boundary_solve(model, drift, &g, &kernels)?;
        let x = ramaswami(&kernels, &boundary.x0, levels.max(1));
        let g_vec = stationary_vector(&g)?;
        Ok(FundamentalSet {
            g,
            kernels,
            boundary,
            x,
            g_vec,
        })
    }

    pub fn x0(&self) -> &[f64] {
        &self.boundary.x0
    }

    /// `x(k)` for `k ≥ 1` from the stored prefix.
    pub fn x_at(&self, k: usize) -> &[f64] {
        &self.x[k - 1]
    }
}

/// `π_* = Σ_{k≥1} x(k) = [x(0){B + β_B g} − x(1)A(0)](I − A + (e − β_A)g)^{−1}`.
pub fn pi_star(model: &MG1Model, drift: &DriftProfile, fund: &FundamentalSet) -> Result<Vec<f64>> {
    let m = model.m();
    let one = Complex64::new(1.0, 0.0);
    let b_total = model.b_star(one)?.re();
    let beta_b_g = RealMatrix::from_fn(model.m0(), m, |i, j| drift.beta_b[i] * fund.g_vec[j]);
    let left = vec_mat(fund.x0(), &(&b_total + &beta_b_g));
    let down = vec_mat(fund.x_at(1), &model.a()[0]);
    let rhs: Vec<f64> = left.iter().zip(&down).map(|(a, b)| a - b).collect();
    let a = model.a_star(one)?.re();
    let correction = RealMatrix::from_fn(m, m, |i, j| (1.0 - drift.beta_a[i]) * fund.g_vec[j]);
    let mat = &(&RealMatrix::identity(m) - &a) + &correction;
    solve_left(&rhs, &mat)
}

/// `‖(I − Γ_A*(z)) − (I − R*(z))(I − U(0))(I − G/z)‖∞`.
pub fn rg_factorization_residual(model: &MG1Model, fund: &FundamentalSet, z: Complex64) -> Result<f64> {
    let m = model.m();
    let id = ComplexMatrix::identity(m);
    let lhs = &id - &model.gamma_a_star(z)?;
    let r_star = fund.kernels.r_star(z)?;
    let u0 = fund.kernels.u_at(0).to_complex();
    let g_over_z = fund.g.to_complex().scale(1.0 / z);
    let rhs = &(&(&id - &r_star) * &(&id - &u0)) * &(&id - &g_over_z);
    Ok((&lhs - &rhs).norm_inf())
}

/// Which matrix a structure report describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StructureSubject {
    GMatrix,
    RMatrix,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StructureForm {
    Irreducible,
    OneIrreduciblePlusTriangular,
}

/// Class decomposition of the support graph of `G` or `R*(1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct StructureReport {
    pub subject: StructureSubject,
    /// The irreducible class first, then the remaining singletons.
    pub classes: Vec<Vec<usize>>,
    pub form: StructureForm,
}

/// Classifies a nonnegative square matrix into one irreducible class plus
/// transient singletons: for `G` the irreducible class must be closed, for
/// `R` it must have no incoming edges.
pub fn structure_normal_form(m: &RealMatrix, subject: StructureSubject) -> Result<StructureReport> {
    let n = m.rows();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if m[(i, j)] > 0.0 {
                edges.push((i, j));
            }
        }
    }
    let sccs = strongly_connected_components(n, &edges);
    if sccs.len() == 1 {
        return Ok(StructureReport {
            subject,
            classes: sccs,
            form: StructureForm::Irreducible,
        });
    }
    let nontrivial: Vec<&Vec<usize>> = sccs.iter().filter(|c| c.len() > 1 || m[(c[0], c[0])] > 0.0).collect();
    if nontrivial.len() != 1 {
        return Err(Error::ShapeViolation(format!(
            "{} nontrivial classes, expected exactly one",
            nontrivial.len()
        )));
    }
    let main = nontrivial[0].clone();
    let inside = |i: usize| main.contains(&i);
    let violation = match subject {
        StructureSubject::GMatrix => edges.iter().any(|&(i, j)| inside(i) && !inside(j)),
        StructureSubject::RMatrix => edges.iter().any(|&(i, j)| !inside(i) && inside(j)),
    };
    if violation {
        return Err(Error::ShapeViolation(match subject {
            StructureSubject::GMatrix => "the irreducible class of G is not closed".into(),
            StructureSubject::RMatrix => "the irreducible class of R is entered from outside".into(),
        }));
    }
    let mut rest: Vec<Vec<usize>> = sccs.into_iter().filter(|c| *c != main).collect();
    rest.sort();
    let mut classes = vec![main];
    classes.extend(rest);
    Ok(StructureReport {
        subject,
        classes,
        form: StructureForm::OneIrreduciblePlusTriangular,
    })
}
