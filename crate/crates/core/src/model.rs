//! The M/G/1-type kernel: JSON ingestion, structural validation, analytic
//! tails and generating-function evaluation.

use std::cmp::Ordering;
use std::path::Path;

use num_complex::Complex64;
use num_integer::Integer;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::graph::is_strongly_connected;
use crate::linalg::{
    dot, matrix_power_series, perron_pair, turn, ComplexMatrix, Matrix, RealMatrix, PERRON_DEFAULT_TOL,
};

/// Row sums of stochastic blocks must hit 1 within this slack.
pub const STOCHASTIC_TOL: f64 = 1e-10;
/// Distance to a declared pole below which `B*(z)` refuses to evaluate.
pub const POLE_GUARD: f64 = 1e-12;

/// Geometric continuation `A(k) = coeff·ratio^k` for `k > start_index`.
#[derive(Clone, Debug, PartialEq)]
pub struct GeometricTail {
    pub start_index: usize,
    pub ratio: f64,
    pub coeff: RealMatrix,
}

/// A rational fraction of a full turn, reduced, in `[0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Angle {
    num: u64,
    den: u64,
}

impl Angle {
    /// `num/den` reduced modulo one turn.
    pub fn new(num: i64, den: u64) -> Self {
        assert!(den > 0, "angle denominator must be positive");
        let n = num.rem_euclid(den as i64) as u64;
        let g = n.gcd(&den);
        Angle {
            num: n / g,
            den: den / g,
        }
    }

    pub fn zero() -> Self {
        Angle { num: 0, den: 1 }
    }

    pub fn num(&self) -> u64 {
        self.num
    }

    pub fn den(&self) -> u64 {
        self.den
    }

    /// The angle reflected across the real axis.
    pub fn conjugate(&self) -> Self {
        Angle::new(-(self.num as i64), self.den)
    }

    /// `k` times this angle.
    pub fn times(&self, k: u64) -> Self {
        let n = ((self.num as u128 * k as u128) % self.den as u128) as i64;
        Angle::new(n, self.den)
    }

    /// The unit complex number `exp(2πi·angle)`.
    pub fn unit(&self) -> Complex64 {
        turn(self.num as i64, self.den)
    }

    pub fn as_fraction(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl Ord for Angle {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.num as u128 * other.den as u128).cmp(&(other.num as u128 * self.den as u128))
    }
}

impl PartialOrd for Angle {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl std::fmt::Display for Angle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

/// One pole `r_B·ζ` of `B*(z)` with its leading coefficient `W`.
#[derive(Clone, Debug, PartialEq)]
pub struct TailPole {
    pub angle: Angle,
    pub weight: ComplexMatrix,
}

/// Boundary tail defined through its poles on the circle `|z| = r_B`:
/// `B(k) = Σ_n W_n·binom(k+m−1, m−1)·(conj(ζ_n)/r_B)^k` for `k > start_index`.
#[derive(Clone, Debug, PartialEq)]
pub struct BTailSpec {
    pub radius: f64,
    pub order: usize,
    pub start_index: usize,
    pub poles: Vec<TailPole>,
}

/// `binom(n, k)` as a float.
pub fn binom(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

impl BTailSpec {
    /// `(conj(ζ)/r_B)^k` with the angle reduced exactly.
    pub fn pole_power(&self, pole: &TailPole, k: u64) -> Complex64 {
        pole.angle.conjugate().times(k).unit() * self.radius.powi(-(k as i32))
    }

    /// `conj(ζ)/r_B`.
    pub fn pole_ratio(&self, pole: &TailPole) -> Complex64 {
        pole.angle.conjugate().unit() / self.radius
    }

    /// Pole location `r_B·ζ`.
    pub fn pole_location(&self, pole: &TailPole) -> Complex64 {
        pole.angle.unit() * self.radius
    }

    /// `B(k)` for `k > start_index`, as a complex matrix whose imaginary part
    /// vanishes up to rounding.
    pub fn block_complex(&self, k: usize) -> ComplexMatrix {
        let m = self.order as u64;
        let b = binom(k as u64 + m - 1, m - 1);
        let mut acc = ComplexMatrix::zeros(self.poles[0].weight.rows(), self.poles[0].weight.cols());
        for p in &self.poles {
            acc = &acc + &p.weight.scale(self.pole_power(p, k as u64) * b);
        }
        acc
    }

    pub fn block(&self, k: usize) -> RealMatrix {
        self.block_complex(k).re()
    }

    /// `Σ_{k>start} z^k B(k)` in closed form.
    fn series(&self, z: Complex64) -> Result<ComplexMatrix> {
        let m = self.order as i32;
        let rows = self.poles[0].weight.rows();
        let cols = self.poles[0].weight.cols();
        let mut acc = ComplexMatrix::zeros(rows, cols);
        for p in &self.poles {
            let distance = (z - self.pole_location(p)).norm();
            if distance <= POLE_GUARD * self.radius.max(1.0) {
                return Err(Error::AtPole { distance });
            }
            let w = self.pole_ratio(p) * z;
            let mut head = Complex64::new(0.0, 0.0);
            let mut wk = Complex64::new(1.0, 0.0);
            for k in 0..=self.start_index as u64 {
                head += wk * binom(k + m as u64 - 1, m as u64 - 1);
                wk *= w;
            }
            let f = (Complex64::new(1.0, 0.0) - w).powi(-m) - head;
            acc = &acc + &p.weight.scale(f);
        }
        Ok(acc)
    }

    /// Derivative of [`BTailSpec::series`].
    fn series_derivative(&self, z: Complex64) -> Result<ComplexMatrix> {
        let m = self.order as i32;
        let rows = self.poles[0].weight.rows();
        let cols = self.poles[0].weight.cols();
        let mut acc = ComplexMatrix::zeros(rows, cols);
        for p in &self.poles {
            let distance = (z - self.pole_location(p)).norm();
            if distance <= POLE_GUARD * self.radius.max(1.0) {
                return Err(Error::AtPole { distance });
            }
            let c = self.pole_ratio(p);
            let w = c * z;
            let mut head = Complex64::new(0.0, 0.0);
            let mut wk = Complex64::new(1.0, 0.0);
            for k in 1..=self.start_index as u64 {
                head += wk * c * (k as f64) * binom(k + m as u64 - 1, m as u64 - 1);
                wk *= w;
            }
            let f = c * (m as f64) * (Complex64::new(1.0, 0.0) - w).powi(-m - 1) - head;
            acc = &acc + &p.weight.scale(f);
        }
        Ok(acc)
    }

    /// Least common multiple of the angle denominators.
    pub fn angle_period(&self) -> u64 {
        self.poles.iter().fold(1, |acc, p| acc.lcm(&p.angle.den))
    }
}

/// Convergence radius of a generating function.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Radius {
    Finite(f64),
    Unbounded,
}

impl Radius {
    pub fn value(&self) -> f64 {
        match self {
            Radius::Finite(r) => *r,
            Radius::Unbounded => f64::INFINITY,
        }
    }
}

impl std::fmt::Display for Radius {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Radius::Finite(r) => write!(f, "{r}"),
            Radius::Unbounded => write!(f, "unbounded"),
        }
    }
}

/// Unvalidated model blocks, for building a model in code.
#[derive(Clone, Debug)]
pub struct ModelParts {
    pub m: usize,
    pub m0: usize,
    /// `A(0), A(1), ...`
    pub a: Vec<RealMatrix>,
    pub b0: RealMatrix,
    /// `B(1), B(2), ...`
    pub b: Vec<RealMatrix>,
    pub c0: RealMatrix,
    pub a_tail: Option<GeometricTail>,
    /// Declared radius of `A*(z)` when `a` is the head of a longer kernel
    /// whose remaining coefficients are below double precision.
    pub a_radius: Option<f64>,
    pub b_tail: Option<BTailSpec>,
}

/// A validated M/G/1-type kernel.
#[derive(Clone, Debug)]
pub struct MG1Model {
    parts: ModelParts,
}

/// Stationary vector of `A`, mean drifts and the load `ρ = π·β_A`.
#[derive(Clone, Debug, PartialEq)]
pub struct DriftProfile {
    pub pi: Vec<f64>,
    pub beta_a: Vec<f64>,
    pub beta_b: Vec<f64>,
    pub rho: f64,
}

/// Edge `i → j` of the additive kernel `Γ_A(k) = A(k+1)` with level
/// displacement `k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SupportEdge {
    pub from: usize,
    pub to: usize,
    pub displacement: i64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    #[serde(rename = "M")]
    m: usize,
    #[serde(rename = "M0")]
    m0: usize,
    #[serde(rename = "A")]
    a: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "B0")]
    b0: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "C0")]
    c0: Vec<Vec<f64>>,
    #[serde(default)]
    a_tail: Option<ATailFile>,
    #[serde(default)]
    a_radius: Option<f64>,
    #[serde(default)]
    b_tail: Option<BTailFile>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ATailFile {
    start_index: usize,
    ratio: f64,
    coeff: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BTailFile {
    radius: f64,
    order: usize,
    start_index: usize,
    poles: Vec<PoleFile>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PoleFile {
    angle_num: i64,
    angle_den: u64,
    weight_re: Vec<Vec<f64>>,
    weight_im: Vec<Vec<f64>>,
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<RealMatrix> {
    RealMatrix::from_rows(rows).ok_or_else(|| Error::Parse(format!("{name} is empty or ragged")))
}

/// Reads and validates a model file.
pub fn load_model(path: impl AsRef<Path>) -> Result<MG1Model> {
    let text = std::fs::read_to_string(path)?;
    parse_model(&text)
}

/// Parses and validates a model from JSON text.
pub fn parse_model(text: &str) -> Result<MG1Model> {
    let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let a = file
        .a
        .iter()
        .enumerate()
        .map(|(k, m)| matrix(&format!("A({k})"), m))
        .collect::<Result<Vec<_>>>()?;
    let b = file
        .b
        .iter()
        .enumerate()
        .map(|(k, m)| matrix(&format!("B({})", k + 1), m))
        .collect::<Result<Vec<_>>>()?;
    let a_tail = file
        .a_tail
        .map(|t| -> Result<GeometricTail> {
            Ok(GeometricTail {
                start_index: t.start_index,
                ratio: t.ratio,
                coeff: matrix("a_tail.coeff", &t.coeff)?,
            })
        })
        .transpose()?;
    let b_tail = file
        .b_tail
        .map(|t| -> Result<BTailSpec> {
            let poles = t
                .poles
                .iter()
                .map(|p| -> Result<TailPole> {
                    if p.angle_den == 0 {
                        return Err(Error::Parse("pole angle_den must be positive".into()));
                    }
                    let re = matrix("weight_re", &p.weight_re)?;
                    let im = matrix("weight_im", &p.weight_im)?;
                    if (re.rows(), re.cols()) != (im.rows(), im.cols()) {
                        return Err(Error::Parse("weight_re and weight_im shapes differ".into()));
                    }
                    let weight = Matrix::from_fn(re.rows(), re.cols(), |i, j| Complex64::new(re[(i, j)], im[(i, j)]));
                    Ok(TailPole {
                        angle: Angle::new(p.angle_num, p.angle_den),
                        weight,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(BTailSpec {
                radius: t.radius,
                order: t.order,
                start_index: t.start_index,
                poles,
            })
        })
        .transpose()?;
    MG1Model::new(ModelParts {
        m: file.m,
        m0: file.m0,
        a,
        b0: matrix("B0", &file.b0)?,
        b,
        c0: matrix("C0", &file.c0)?,
        a_tail,
        a_radius: file.a_radius,
        b_tail,
    })
}

fn check_shape(name: &str, m: &RealMatrix, rows: usize, cols: usize) -> Result<()> {
    if (m.rows(), m.cols()) != (rows, cols) {
        return Err(Error::validation(
            format!("{name} has shape {}x{}, expected {rows}x{cols}", m.rows(), m.cols()),
            0.0,
        ));
    }
    if !m.all_finite() {
        return Err(Error::validation(format!("{name} has non-finite entries"), f64::NAN));
    }
    if !m.is_nonnegative() {
        return Err(Error::validation(
            format!("{name} has negative entries"),
            -m.min_entry(),
        ));
    }
    Ok(())
}

fn max_row_deviation(sums: &[f64], target: &[f64]) -> f64 {
    sums.iter().zip(target).map(|(s, t)| (s - t).abs()).fold(0.0, f64::max)
}

impl MG1Model {
    /// Validates the blocks and wraps them as a model.
    pub fn new(mut parts: ModelParts) -> Result<Self> {
        let (m, m0) = (parts.m, parts.m0);
        if m == 0 || m0 == 0 {
            return Err(Error::validation("M and M0 must be positive", 0.0));
        }
        if parts.a.is_empty() {
            return Err(Error::validation("A must list at least A(0)", 0.0));
        }
        for (k, a) in parts.a.iter().enumerate() {
            check_shape(&format!("A({k})"), a, m, m)?;
        }
        check_shape("B0", &parts.b0, m0, m0)?;
        for (k, b) in parts.b.iter().enumerate() {
            check_shape(&format!("B({})", k + 1), b, m0, m)?;
        }
        check_shape("C0", &parts.c0, m, m0)?;

        if let Some(t) = &parts.a_tail {
            check_shape("a_tail.coeff", &t.coeff, m, m)?;
            if !(t.ratio > 0.0 && t.ratio < 1.0) {
                return Err(Error::validation("a_tail.ratio must lie in (0, 1)", t.ratio));
            }
            if t.start_index + 1 < parts.a.len() {
                return Err(Error::validation(
                    "A lists coefficients beyond a_tail.start_index",
                    (parts.a.len() - 1 - t.start_index) as f64,
                ));
            }
            if parts.a_radius.is_some() {
                return Err(Error::validation("a_tail and a_radius are mutually exclusive", 0.0));
            }
        }
        if let Some(r) = parts.a_radius {
            if !(r > 1.0 && r.is_finite()) {
                return Err(Error::validation("a_radius must be finite and exceed 1", r));
            }
        }
        if let Some(t) = &mut parts.b_tail {
            validate_b_tail(t, m0, m, parts.b.len())?;
        }

        let model = MG1Model { parts };

        let a_sums = model.a_star(Complex64::new(1.0, 0.0))?.re().row_sums();
        let dev = max_row_deviation(&a_sums, &vec![1.0; m]);
        if dev > STOCHASTIC_TOL {
            return Err(Error::validation("A not stochastic", dev));
        }
        let b_total = model.b_star(Complex64::new(1.0, 0.0))?.re().row_sums();
        let b0_sums = model.parts.b0.row_sums();
        let sums: Vec<f64> = b0_sums.iter().zip(&b_total).map(|(a, b)| a + b).collect();
        let dev = max_row_deviation(&sums, &vec![1.0; m0]);
        if dev > STOCHASTIC_TOL {
            return Err(Error::validation("B(0)e + Be is not e", dev));
        }
        let dev = max_row_deviation(&model.parts.c0.row_sums(), &model.parts.a[0].row_sums());
        if dev > STOCHASTIC_TOL {
            return Err(Error::validation("C0 e differs from A(0) e", dev));
        }

        let mut edges = Vec::new();
        for k in 0..model.support_len_a() {
            let block = model.a_block(k);
            for i in 0..m {
                for j in 0..m {
                    if block[(i, j)] > 0.0 {
                        edges.push((i, j));
                    }
                }
            }
        }
        if !is_strongly_connected(m, &edges) {
            return Err(Error::validation("A is reducible", 0.0));
        }
        if !model.level_graph_irreducible() {
            return Err(Error::validation("T is reducible", 0.0));
        }
        Ok(model)
    }

    pub fn m(&self) -> usize {
        self.parts.m
    }

    pub fn m0(&self) -> usize {
        self.parts.m0
    }

    /// Listed `A(k)` head.
    pub fn a(&self) -> &[RealMatrix] {
        &self.parts.a
    }

    pub fn b0(&self) -> &RealMatrix {
        &self.parts.b0
    }

    /// Listed `B(k)` head, `B(1)` first.
    pub fn b(&self) -> &[RealMatrix] {
        &self.parts.b
    }

    pub fn c0(&self) -> &RealMatrix {
        &self.parts.c0
    }

    pub fn a_tail(&self) -> Option<&GeometricTail> {
        self.parts.a_tail.as_ref()
    }

    pub fn b_tail(&self) -> Option<&BTailSpec> {
        self.parts.b_tail.as_ref()
    }

    pub fn parts(&self) -> &ModelParts {
        &self.parts
    }

    pub fn r_a(&self) -> Radius {
        match (&self.parts.a_tail, self.parts.a_radius) {
            (Some(t), _) => Radius::Finite(1.0 / t.ratio),
            (None, Some(r)) => Radius::Finite(r),
            (None, None) => Radius::Unbounded,
        }
    }

    pub fn r_b(&self) -> Radius {
        match &self.parts.b_tail {
            Some(t) => Radius::Finite(t.radius),
            None => Radius::Unbounded,
        }
    }

    /// Number of `A` indices that carry information before the tail
    /// repeats: every `A(k)` with `k` below this bound, plus two tail terms.
    pub fn support_len_a(&self) -> usize {
        match &self.parts.a_tail {
            Some(t) => t.start_index + 3,
            None => self.parts.a.len(),
        }
    }

    /// One past the largest `k` with a listed or head-determined `B(k)`.
    pub fn support_len_b(&self) -> usize {
        match &self.parts.b_tail {
            Some(t) => t.start_index + 3,
            None => self.parts.b.len() + 1,
        }
    }

    /// `A(k)`, including the analytic tail.
    pub fn a_block(&self, k: usize) -> RealMatrix {
        if k < self.parts.a.len() {
            return self.parts.a[k].clone();
        }
        match &self.parts.a_tail {
            Some(t) if k > t.start_index => t.coeff.scale(t.ratio.powi(k as i32)),
            _ => RealMatrix::zeros(self.parts.m, self.parts.m),
        }
    }

    /// `B(k)` for `k ≥ 1`, including the analytic tail.
    pub fn b_block(&self, k: usize) -> RealMatrix {
        assert!(k >= 1, "B(k) is indexed from 1");
        if k <= self.parts.b.len() {
            return self.parts.b[k - 1].clone();
        }
        match &self.parts.b_tail {
            Some(t) if k > t.start_index => t.block(k),
            _ => RealMatrix::zeros(self.parts.m0, self.parts.m),
        }
    }

    fn check_a_radius(&self, z: Complex64) -> Result<()> {
        if let Radius::Finite(r) = self.r_a() {
            if z.norm() >= r {
                return Err(Error::OutsideRadius {
                    modulus: z.norm(),
                    radius: r,
                });
            }
        }
        Ok(())
    }

    /// `A*(z) = Σ_k z^k A(k)`.
    pub fn a_star(&self, z: Complex64) -> Result<ComplexMatrix> {
        self.check_a_radius(z)?;
        matrix_power_series(&self.parts.a, z, self.parts.a_tail.as_ref())
    }

    /// `A*′(z) = Σ_k k z^{k−1} A(k)`.
    pub fn a_star_derivative(&self, z: Complex64) -> Result<ComplexMatrix> {
        self.check_a_radius(z)?;
        let m = self.parts.m;
        let mut acc = ComplexMatrix::zeros(m, m);
        for (k, a) in self.parts.a.iter().enumerate().skip(1).rev() {
            acc = acc.scale(z);
            acc = &acc + &a.to_complex().scale(Complex64::new(k as f64, 0.0));
        }
        if let Some(t) = &self.parts.a_tail {
            let w = z * t.ratio;
            let kk = t.start_index as f64;
            let f = w.powu(t.start_index as u32) * t.ratio * ((kk + 1.0) - kk * w)
                / ((Complex64::new(1.0, 0.0) - w) * (Complex64::new(1.0, 0.0) - w));
            acc = &acc + &t.coeff.to_complex().scale(f);
        }
        Ok(acc)
    }

    /// `Γ_A*(z) = A*(z)/z`.
    pub fn gamma_a_star(&self, z: Complex64) -> Result<ComplexMatrix> {
        assert!(z != Complex64::new(0.0, 0.0), "Γ_A* is undefined at 0");
        Ok(self.a_star(z)?.scale(1.0 / z))
    }

    fn b_head_coeffs(&self) -> Vec<RealMatrix> {
        let mut coeffs = vec![RealMatrix::zeros(self.parts.m0, self.parts.m)];
        coeffs.extend(self.parts.b.iter().cloned());
        coeffs
    }

    /// `B*(z) = Σ_{k≥1} z^k B(k)`; with a pole-specified tail this is the
    /// closed form, valid off the declared poles.
    pub fn b_star(&self, z: Complex64) -> Result<ComplexMatrix> {
        let head = matrix_power_series(&self.b_head_coeffs(), z, None)?;
        match &self.parts.b_tail {
            Some(t) => Ok(&head + &t.series(z)?),
            None => Ok(head),
        }
    }

    /// `B*′(z)`.
    pub fn b_star_derivative(&self, z: Complex64) -> Result<ComplexMatrix> {
        let (m0, m) = (self.parts.m0, self.parts.m);
        let mut acc = ComplexMatrix::zeros(m0, m);
        for (idx, b) in self.parts.b.iter().enumerate().rev() {
            acc = acc.scale(z);
            acc = &acc + &b.to_complex().scale(Complex64::new((idx + 1) as f64, 0.0));
        }
        match &self.parts.b_tail {
            Some(t) => Ok(&acc + &t.series_derivative(z)?),
            None => Ok(acc),
        }
    }

    /// Irreducibility of `T` on levels `0..=L` with `L` two past the longest
    /// explicit jump.
    fn level_graph_irreducible(&self) -> bool {
        let (m, m0) = (self.parts.m, self.parts.m0);
        let max_jump = (self.support_len_a().saturating_sub(1)).max(self.support_len_b());
        let top = max_jump + 2;
        let id = |level: usize, phase: usize| {
            if level == 0 {
                phase
            } else {
                m0 + (level - 1) * m + phase
            }
        };
        let n = m0 + top * m;
        let mut edges = Vec::new();
        let mut add = |block: &RealMatrix, from_level: usize, to_level: usize| {
            for i in 0..block.rows() {
                for j in 0..block.cols() {
                    if block[(i, j)] > 0.0 {
                        edges.push((id(from_level, i), id(to_level, j)));
                    }
                }
            }
        };
        add(&self.parts.b0, 0, 0);
        for k in 1..=top {
            add(&self.b_block(k), 0, k);
        }
        add(&self.parts.c0, 1, 0);
        let a_blocks: Vec<RealMatrix> = (0..=top).map(|k| self.a_block(k)).collect();
        for level in 1..=top {
            for (k, block) in a_blocks.iter().enumerate() {
                let to = level + k - 1;
                if to >= 1 && to <= top {
                    add(block, level, to);
                }
            }
        }
        is_strongly_connected(n, &edges)
    }
}

fn validate_b_tail(t: &mut BTailSpec, m0: usize, m: usize, b_len: usize) -> Result<()> {
    if !(t.radius > 1.0 && t.radius.is_finite()) {
        return Err(Error::validation("b_tail.radius must be finite and exceed 1", t.radius));
    }
    if t.order == 0 {
        return Err(Error::validation("b_tail.order must be at least 1", 0.0));
    }
    if b_len > t.start_index {
        return Err(Error::validation(
            "B lists coefficients beyond b_tail.start_index",
            (b_len - t.start_index) as f64,
        ));
    }
    if t.poles.is_empty() {
        return Err(Error::validation("b_tail needs at least one pole", 0.0));
    }
    for p in &t.poles {
        if (p.weight.rows(), p.weight.cols()) != (m0, m) {
            return Err(Error::validation(
                format!(
                    "pole weight has shape {}x{}, expected {m0}x{m}",
                    p.weight.rows(),
                    p.weight.cols()
                ),
                0.0,
            ));
        }
        if !p.weight.all_finite() {
            return Err(Error::validation("pole weight has non-finite entries", f64::NAN));
        }
    }
    t.poles.sort_by_key(|p| p.angle);
    for w in t.poles.windows(2) {
        if w[0].angle == w[1].angle {
            return Err(Error::validation(format!("duplicate pole angle {}", w[0].angle), 0.0));
        }
    }
    let scale = t.poles.iter().map(|p| p.weight.max_abs()).fold(0.0, f64::max);
    for p in &t.poles {
        let conj = p.angle.conjugate();
        let partner = t
            .poles
            .iter()
            .find(|q| q.angle == conj)
            .ok_or_else(|| Error::validation(format!("pole at angle {} lacks its conjugate", p.angle), 0.0))?;
        let dev = p.weight.max_abs_diff(&partner.weight.conj());
        if dev > 1e-12 * scale {
            return Err(Error::validation(
                format!("pole weights at angles {} and {} are not conjugate", p.angle, conj),
                dev,
            ));
        }
    }
    // B(k) = binom·r^{-k}·P(k) with P periodic over the angle period.
    let period = t.angle_period();
    for k in 0..period {
        let mut pk = ComplexMatrix::zeros(m0, m);
        for p in &t.poles {
            pk = &pk + &p.weight.scale(p.angle.conjugate().times(k).unit());
        }
        let neg = -pk.re().min_entry();
        if neg > 1e-12 * scale {
            return Err(Error::validation("b_tail implies negative B(k)", neg));
        }
        if pk.max_imag() > 1e-12 * scale {
            return Err(Error::validation("b_tail implies complex B(k)", pk.max_imag()));
        }
    }
    Ok(())
}

/// Stationary vector of `A`, drift vectors and load.
pub fn drift(model: &MG1Model) -> Result<DriftProfile> {
    let one = Complex64::new(1.0, 0.0);
    let a = model.a_star(one)?.re();
    let pi = perron_pair(&a, PERRON_DEFAULT_TOL)?.left;
    let beta_a = model.a_star_derivative(one)?.re().row_sums();
    let beta_b = model.b_star_derivative(one)?.re().row_sums();
    let rho = dot(&pi, &beta_a);
    Ok(DriftProfile {
        pi,
        beta_a,
        beta_b,
        rho,
    })
}

/// Nonzero entries of `Γ_A(k) = A(k+1)` with their displacements. A
/// geometric tail contributes its support at two consecutive
/// displacements, which already forces any gcd beyond the head to 1.
pub fn gamma_a_support(model: &MG1Model) -> Vec<SupportEdge> {
    let mut out = Vec::new();
    for k in 0..model.support_len_a() {
        let block = model.a_block(k);
        for i in 0..model.m() {
            for j in 0..model.m() {
                if block[(i, j)] > 0.0 {
                    out.push(SupportEdge {
                        from: i,
                        to: j,
                        displacement: k as i64 - 1,
                    });
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    pub(crate) const SCALAR: &str = r#"{
        "M": 1, "M0": 1,
        "A": [[[0.4]], [[0.4]], [[0.2]]],
        "B0": [[0.4]], "B": [[[0.4]], [[0.2]]], "C0": [[0.4]],
        "a_tail": null, "b_tail": null
    }"#;

    const TWO_PHASE: &str = r#"{
        "M": 2, "M0": 2,
        "A": [[[0, 0.8], [0.8, 0]], [[0, 0], [0, 0]], [[0, 0.2], [0.2, 0]]],
        "B0": [[0, 0.8], [0.8, 0]], "B": [[[0, 0], [0, 0]], [[0, 0.2], [0.2, 0]]],
        "C0": [[0, 0.8], [0.8, 0]]
    }"#;

    const ABOVE_RB: &str = r#"{
        "M": 1, "M0": 1,
        "A": [[[0.4]], [[0.4]], [[0.2]]],
        "B0": [[0.0]], "B": [], "C0": [[0.4]],
        "b_tail": {"radius": 1.5, "order": 1, "start_index": 0,
                   "poles": [{"angle_num": 0, "angle_den": 1, "weight_re": [[0.5]], "weight_im": [[0.0]]}]}
    }"#;

    /// Conjugate pair at ±1/3 plus a real pole: B(k) = r^{-k}(0.3 + 0.2cos(2πk/3)) for k ≥ 2.
    const PERIODIC_B: &str = r#"{
        "M": 1, "M0": 1,
        "A": [[[0.4]], [[0.4]], [[0.2]]],
        "B0": [[0.2]], "B": [[[0.1]]], "C0": [[0.4]],
        "b_tail": {"radius": 2.0, "order": 2, "start_index": 1,
                   "poles": [
                     {"angle_num": 0, "angle_den": 1, "weight_re": [[W0]], "weight_im": [[0.0]]},
                     {"angle_num": 1, "angle_den": 3, "weight_re": [[0.05]], "weight_im": [[0.02]]},
                     {"angle_num": 2, "angle_den": 3, "weight_re": [[0.05]], "weight_im": [[-0.02]]}
                   ]}
    }"#;

    fn periodic_b_model() -> MG1Model {
        // Choose W0 so that B(0) + B(1) + Σ_{k≥2} B(k) = 1.
        let r: f64 = 2.0;
        let one = Complex64::new(1.0, 0.0);
        let tail_sum = |w: Complex64, ang: Angle| -> Complex64 {
            let c = ang.conjugate().unit() / r;
            let head = one + c * 2.0;
            w * ((one - c).powi(-2) - head)
        };
        let pair = tail_sum(Complex64::new(0.05, 0.02), Angle::new(1, 3))
            + tail_sum(Complex64::new(0.05, -0.02), Angle::new(2, 3));
        let unit = tail_sum(one, Angle::zero());
        let w0 = (0.7 - pair.re) / unit.re;
        parse_model(&PERIODIC_B.replace("W0", &format!("{w0:.17e}"))).unwrap()
    }

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    #[test]
    fn scalar_fixture_is_valid() {
        let m = parse_model(SCALAR).unwrap();
        assert_eq!(m.r_a(), Radius::Unbounded);
        assert_eq!(m.r_b(), Radius::Unbounded);
    }

    #[test]
    fn substochastic_a_is_rejected() {
        let text = SCALAR.replace(
            r#""A": [[[0.4]], [[0.4]], [[0.2]]]"#,
            r#""A": [[[0.4]], [[0.3]], [[0.2]]]"#,
        );
        match parse_model(&text).unwrap_err() {
            Error::Validation { message, slack } => {
                assert_eq!(message, "A not stochastic");
                assert_relative_eq!(slack, 0.1, epsilon = 1e-12);
            }
            e => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = SCALAR.replace(r#""M": 1,"#, r#""M": 1, "extra": 3,"#);
        assert!(matches!(parse_model(&text).unwrap_err(), Error::Parse(_)));
    }

    #[test]
    fn negative_entry_is_rejected() {
        let text = SCALAR.replace(r#""C0": [[0.4]]"#, r#""C0": [[-0.4]]"#);
        assert!(matches!(parse_model(&text).unwrap_err(), Error::Validation { .. }));
    }

    #[test]
    fn two_phase_fixture_is_valid() {
        parse_model(TWO_PHASE).unwrap();
    }

    #[test]
    fn zero_down_kernel_is_reducible_level_graph() {
        // A(0) = 0 means the chain never leaves level 1 downward.
        let text = r#"{"M": 1, "M0": 1, "A": [[[0.0]], [[1.0]]], "B0": [[0.5]], "B": [[[0.5]]], "C0": [[0.0]]}"#;
        assert!(matches!(parse_model(text).unwrap_err(), Error::Validation { .. }));
    }

    #[test]
    fn scalar_drift() {
        let d = drift(&parse_model(SCALAR).unwrap()).unwrap();
        assert_relative_eq!(d.beta_a[0], 0.8, epsilon = 1e-15);
        assert_relative_eq!(d.rho, 0.8, epsilon = 1e-15);
        assert_relative_eq!(d.beta_b[0], 0.8, epsilon = 1e-15);
    }

    #[test]
    fn kernel_without_downward_jumps_is_rejected() {
        let text = r#"{"M": 1, "M0": 1, "A": [[[0.0]], [[1.0]]], "B0": [[0.0]], "B": [[[1.0]]], "C0": [[0.0]]}"#;
        assert!(matches!(parse_model(text).unwrap_err(), Error::Validation { .. }));
    }

    #[test]
    fn symmetric_walk_has_unit_load() {
        let text = r#"{"M": 1, "M0": 1, "A": [[[0.5]], [[0.0]], [[0.5]]], "B0": [[0.5]], "B": [[[0.0]], [[0.5]]], "C0": [[0.5]]}"#;
        let d = drift(&parse_model(text).unwrap()).unwrap();
        assert_relative_eq!(d.rho, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn two_phase_drift() {
        let d = drift(&parse_model(TWO_PHASE).unwrap()).unwrap();
        assert_relative_eq!(d.pi[0], 0.5, epsilon = 1e-13);
        assert_relative_eq!(d.beta_a[0], 0.4, epsilon = 1e-15);
        assert_relative_eq!(d.beta_a[1], 0.4, epsilon = 1e-15);
        assert_relative_eq!(d.rho, 0.4, epsilon = 1e-13);
    }

    #[test]
    fn scalar_generating_functions() {
        let m = parse_model(SCALAR).unwrap();
        assert_relative_eq!(m.gamma_a_star(c(2.0)).unwrap()[(0, 0)].re, 1.0, epsilon = 1e-15);
        assert_relative_eq!(m.a_star(c(1.0)).unwrap()[(0, 0)].re, 1.0, epsilon = 1e-15);
        assert_relative_eq!(m.b_star(c(2.0)).unwrap()[(0, 0)].re, 1.6, epsilon = 1e-15);
        assert_relative_eq!(m.a_star_derivative(c(2.0)).unwrap()[(0, 0)].re, 1.2, epsilon = 1e-15);
    }

    #[test]
    fn scalar_support() {
        let s = gamma_a_support(&parse_model(SCALAR).unwrap());
        let d: Vec<i64> = s.iter().map(|e| e.displacement).collect();
        assert_eq!(d, vec![-1, 0, 1]);
    }

    #[test]
    fn two_phase_support() {
        let s = gamma_a_support(&parse_model(TWO_PHASE).unwrap());
        let set: std::collections::HashSet<_> = s.iter().map(|e| (e.from, e.to, e.displacement)).collect();
        let expected: std::collections::HashSet<_> =
            [(0, 1, -1), (1, 0, -1), (0, 1, 1), (1, 0, 1)].into_iter().collect();
        assert_eq!(set, expected);
    }

    #[test]
    fn geometric_a_tail_sums_and_derivative() {
        // A(0) = 0.6, A(1) = 0.1, A(k) = 0.6·0.5^k for k ≥ 2.
        let text = r#"{"M": 1, "M0": 1, "A": [[[0.6]], [[0.1]]], "B0": [[0.6]], "B": [], "C0": [[0.6]],
            "a_tail": {"start_index": 1, "ratio": 0.5, "coeff": [[0.6]]},
            "b_tail": null}"#;
        let text = text.replace(r#""B": []"#, r#""B": [[[0.1]], [[0.05]], [[0.25]]]"#);
        let m = parse_model(&text).unwrap();
        assert_eq!(m.r_a(), Radius::Finite(2.0));
        let z = Complex64::new(1.3, 0.4);
        let direct_a: Complex64 = (0..300).map(|k| z.powu(k) * m.a_block(k as usize)[(0, 0)]).sum();
        assert!((m.a_star(z).unwrap()[(0, 0)] - direct_a).norm() < 1e-12);
        let direct_d: Complex64 = (1..300)
            .map(|k| z.powu(k - 1) * (k as f64) * m.a_block(k as usize)[(0, 0)])
            .sum();
        assert!((m.a_star_derivative(z).unwrap()[(0, 0)] - direct_d).norm() < 1e-12);
        assert!(matches!(m.a_star(c(2.0)).unwrap_err(), Error::OutsideRadius { .. }));
        let d = drift(&m).unwrap();
        let beta: f64 = (1..300).map(|k| k as f64 * m.a_block(k)[(0, 0)]).sum();
        assert_relative_eq!(d.beta_a[0], beta, epsilon = 1e-14);
    }

    #[test]
    fn b_tail_closed_form_matches_truncated_sum() {
        for model in [parse_model(ABOVE_RB).unwrap(), periodic_b_model()] {
            let t = model.b_tail().unwrap();
            let k_big = (40.0 / t.radius.log10()) as usize + 50;
            for &angle in &[0.0, 0.3, 1.7, 3.0] {
                let z = Complex64::from_polar(1.0, angle);
                let closed = model.b_star(z).unwrap();
                let mut direct = ComplexMatrix::zeros(1, 1);
                for k in 1..=k_big {
                    direct = &direct + &model.b_block(k).to_complex().scale(z.powu(k as u32));
                }
                assert!(closed.max_abs_diff(&direct) < 1e-8);
            }
        }
    }

    #[test]
    fn b_tail_conjugate_symmetry() {
        let model = periodic_b_model();
        let z = Complex64::new(0.7, 1.1);
        let a = model.b_star(z).unwrap();
        let b = model.b_star(z.conj()).unwrap();
        assert!(a.max_abs_diff(&b.conj()) < 1e-14);
    }

    #[test]
    fn b_tail_blocks_are_real_nonnegative() {
        let model = periodic_b_model();
        for k in 2..20 {
            let b = model.b_tail().unwrap().block_complex(k);
            assert!(b.max_imag() < 1e-15);
            assert!(b.re()[(0, 0)] > 0.0);
        }
    }

    #[test]
    fn b_star_refuses_declared_pole() {
        let m = parse_model(ABOVE_RB).unwrap();
        assert!(matches!(m.b_star(c(1.5)).unwrap_err(), Error::AtPole { .. }));
    }

    #[test]
    fn b_tail_derivative_matches_truncated_sum() {
        let model = periodic_b_model();
        let z = Complex64::new(0.9, 0.2);
        let closed = model.b_star_derivative(z).unwrap()[(0, 0)];
        let direct: Complex64 = (1..400)
            .map(|k| z.powu(k as u32 - 1) * (k as f64) * model.b_block(k)[(0, 0)])
            .sum();
        assert!((closed - direct).norm() < 1e-12);
    }

    #[test]
    fn missing_conjugate_pole_is_rejected() {
        let text = ABOVE_RB.replace(
            r#""poles": [{"angle_num": 0"#,
            r#""poles": [{"angle_num": 1, "angle_den": 4, "weight_re": [[0.01]], "weight_im": [[0.0]]}, {"angle_num": 0"#,
        );
        assert!(matches!(parse_model(&text).unwrap_err(), Error::Validation { .. }));
    }

    #[test]
    fn angle_arithmetic() {
        assert_eq!(Angle::new(2, 4), Angle::new(1, 2));
        assert_eq!(Angle::new(-1, 3), Angle::new(2, 3));
        assert_eq!(Angle::new(1, 3).conjugate(), Angle::new(2, 3));
        assert_eq!(Angle::new(1, 3).times(4), Angle::new(1, 3));
        assert!(Angle::new(1, 3) < Angle::new(1, 2));
        assert_eq!(binom(5, 2), 10.0);
    }
}
