#![allow(dead_code)]

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mg1_asymptotics::linalg::{lu_det_complex, ComplexMatrix, RealMatrix};
use mg1_asymptotics::model::{drift, load_model, MG1Model, ModelParts};

pub const FIXTURES: [&str; 8] = [
    "scalar",
    "two_phase",
    "two_phase_skewed",
    "three_phase",
    "above_rb",
    "at_rb",
    "no_theta",
    "no_theta_btail",
];

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(format!("{name}.json"))
}

pub fn fixture(name: &str) -> MG1Model {
    load_model(fixture_path(name)).unwrap_or_else(|e| panic!("fixture {name}: {e}"))
}

/// Adjugate by cofactor expansion, independent of any factorization of `m`
/// itself.
pub fn adjugate(m: &ComplexMatrix) -> ComplexMatrix {
    let n = m.rows();
    if n == 1 {
        return ComplexMatrix::identity(1);
    }
    ComplexMatrix::from_fn(n, n, |i, j| {
        // adj(m)_{ij} = (−1)^{i+j} det(m without row j and column i)
        let minor = ComplexMatrix::from_fn(n - 1, n - 1, |r, c| {
            let rr = if r < j { r } else { r + 1 };
            let cc = if c < i { c } else { c + 1 };
            m[(rr, cc)]
        });
        let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
        lu_det_complex(&minor) * sign
    })
}

fn random_block(rng: &mut ChaCha8Rng, rows: usize, cols: usize, density: f64) -> RealMatrix {
    RealMatrix::from_fn(rows, cols, |_, _| {
        if rng.gen_bool(density) {
            rng.gen_range(0.05..1.0)
        } else {
            0.0
        }
    })
}

fn normalize_rows(blocks: &mut [RealMatrix]) {
    let rows = blocks[0].rows();
    for i in 0..rows {
        let total: f64 = blocks.iter().map(|b| b.row(i).iter().sum::<f64>()).sum();
        for b in blocks.iter_mut() {
            for j in 0..b.cols() {
                b[(i, j)] /= total;
            }
        }
    }
}

/// One attempt at a random kernel. Half the draws are aperiodic with a
/// positive diagonal in `A(0)`; the rest carry phase offsets modulo
/// `d ∈ {2, 3}` so that every `A(k)` entry respects
/// `k − 1 ≡ p(j) − p(i) (mod d)`. A forced cycle through all phases keeps
/// the kernel irreducible and `A(0)` is scaled up until `ρ < 0.95`.
fn draw(rng: &mut ChaCha8Rng) -> Option<MG1Model> {
    let m = rng.gen_range(1..=5usize);
    let d = if m >= 2 && rng.gen_bool(0.5) {
        rng.gen_range(2..=m.min(3))
    } else {
        1
    };
    let mut perm: Vec<usize> = (0..m).collect();
    perm.shuffle(rng);
    let p: Vec<i64> = perm.iter().map(|&q| (q % d) as i64).collect();
    // at least 3 blocks: d residues for the forced cycle plus an upward jump
    let len = rng.gen_range(3..=6usize);
    let allowed = |k: usize, i: usize, j: usize| (k as i64 - 1 - (p[j] - p[i])).rem_euclid(d as i64) == 0;

    let mut a: Vec<RealMatrix> = (0..len)
        .map(|k| {
            let mut blk = random_block(rng, m, m, 0.4);
            for i in 0..m {
                for j in 0..m {
                    if !allowed(k, i, j) {
                        blk[(i, j)] = 0.0;
                    }
                }
            }
            blk
        })
        .collect();
    if d == 1 {
        for i in 0..m {
            a[0][(i, i)] += rng.gen_range(0.1..1.0);
        }
    } else {
        // every phase steps down into the preceding residue class
        for i in 0..m {
            let targets: Vec<usize> = (0..m).filter(|&j| allowed(0, i, j)).collect();
            let j = *targets.choose(rng).expect("all residues occur");
            a[0][(i, j)] += rng.gen_range(0.1..1.0);
        }
    }
    for i in 0..m {
        let j = (i + 1) % m;
        let k = (0..len)
            .find(|&k| allowed(k, i, j))
            .expect("len ≥ d covers every residue");
        a[k][(i, j)] += rng.gen_range(0.1..1.0);
        // and at least one upward jump per phase
        let up: Vec<usize> = (2..len).filter(|&k| allowed(k, i, j)).collect();
        if let Some(&k) = up.choose(rng) {
            a[k][(i, j)] += rng.gen_range(0.05..0.5);
        }
    }
    normalize_rows(&mut a);

    let m0 = rng.gen_range(1..=3usize);
    let blen = rng.gen_range(1..=5usize);
    let mut boundary: Vec<RealMatrix> = vec![random_block(rng, m0, m0, 0.7)];
    boundary.extend((0..blen).map(|_| random_block(rng, m0, m, 0.6)));
    for i in 0..m0 {
        let j = rng.gen_range(0..m);
        boundary[1][(i, j)] += 0.2;
    }
    normalize_rows(&mut boundary);
    let mut spread = random_block(rng, m, m0, 1.0);
    normalize_rows(std::slice::from_mut(&mut spread));

    for _ in 0..30 {
        let exit = a[0].row_sums();
        let c0 = RealMatrix::from_fn(m, m0, |i, j| exit[i] * spread[(i, j)]);
        let parts = ModelParts {
            m,
            m0,
            a: a.clone(),
            b0: boundary[0].clone(),
            b: boundary[1..].to_vec(),
            c0,
            a_tail: None,
            a_radius: None,
            b_tail: None,
        };
        let model = MG1Model::new(parts).ok()?;
        let rho = drift(&model).ok()?.rho;
        if rho < 0.95 {
            return Some(model);
        }
        a[0] = a[0].scale(2.0);
        normalize_rows(&mut a);
    }
    None
}

/// A valid stable random model, deterministic in `seed`.
pub fn random_model(seed: u64) -> MG1Model {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        if let Some(model) = draw(&mut rng) {
            return model;
        }
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}
