//! Ground truth for the asymptotics: exact tail vectors from a long
//! Ramaswami prefix, empirical decay estimates, and comparison tables.

use crate::asymptotics::AsymptoticReport;
use crate::error::{Error, Result};
use crate::fundamental::{ramaswami, FundamentalSet};
use crate::linalg::{solve, RealMatrix};

/// Levels whose smallest tail entry falls below this are not compared.
pub const NOISE_FLOOR: f64 = 1e-12;
/// Required bound on the mass beyond the computed prefix.
pub const REMAINDER_CERTIFICATE: f64 = 1e-14;
/// The prefix is extended until `‖x(L)‖₁` drops below this.
const PREFIX_TARGET: f64 = 1e-30;
const MAX_PREFIX: usize = 1 << 20;

/// `x̄(0..=k_levels)` with the certified bound on the neglected mass.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactTails {
    pub tails: Vec<Vec<f64>>,
    pub remainder: f64,
}

fn norm1(x: &[f64]) -> f64 {
    x.iter().map(|v| v.abs()).sum()
}

/// `x̄(k) = Σ_{l>k} x(l)`, summed backward from a prefix long enough that
/// `‖x(L)‖₁ < 1e−30`, plus the geometric remainder `x(L)q/(1−q)` where `q`
/// is the decay ratio observed over the last `M` levels.
pub fn exact_tails(fund: &FundamentalSet, k_levels: usize) -> Result<ExactTails> {
    let m = fund.g.rows();
    let mut length = fund.x.len().max(k_levels + 1).max(2 * m + 2);
    let mut owned;
    let mut x: &Vec<Vec<f64>> = &fund.x;
    loop {
        if x.len() < length {
            owned = ramaswami(&fund.kernels, fund.x0(), length);
            x = &owned;
        }
        if norm1(&x[x.len() - 1]) < PREFIX_TARGET || length >= MAX_PREFIX {
            break;
        }
        length *= 2;
    }
    let last = norm1(&x[x.len() - 1]);
    let stride_back = norm1(&x[x.len() - 1 - m]);
    let q = if stride_back > 0.0 {
        (last / stride_back).powf(1.0 / m as f64)
    } else {
        0.0
    };
    let remainder = if q < 1.0 { last * q / (1.0 - q) } else { f64::INFINITY };
    // written so that NaN is rejected too
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(remainder < REMAINDER_CERTIFICATE) {
        return Err(Error::RemainderTooLarge { bound: remainder });
    }
    // x[i] holds x(i + 1), so x̄(k) is the suffix sum starting at index k.
    let mut acc: Vec<f64> = x[x.len() - 1].iter().map(|v| v * q / (1.0 - q)).collect();
    let mut tails = vec![Vec::new(); k_levels + 1];
    for i in (0..x.len()).rev() {
        acc.iter_mut().zip(&x[i]).for_each(|(a, b)| *a += b);
        if i <= k_levels {
            tails[i] = acc.clone();
        }
    }
    Ok(ExactTails { tails, remainder })
}

/// Empirical decay of a tail sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct DecayEstimate {
    pub base: f64,
    pub period: u64,
    /// `base^k·x̄(k)` at the largest usable `k` of each residue class.
    pub prefactors: Vec<Vec<f64>>,
}

/// Least squares fit of `y` on the given columns.
fn least_squares(columns: &[Vec<f64>], y: &[f64]) -> Result<Vec<f64>> {
    let p = columns.len();
    let scales: Vec<f64> = columns
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let normal = RealMatrix::from_fn(p, p, |i, j| {
        columns[i].iter().zip(&columns[j]).map(|(a, b)| a * b).sum::<f64>() / (scales[i] * scales[j])
    });
    let rhs = RealMatrix::from_fn(p, 1, |i, _| {
        columns[i].iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / scales[i]
    });
    let beta = solve(&normal, &rhs)?;
    Ok((0..p).map(|i| beta[(i, 0)] / scales[i]).collect())
}

fn usable_levels(tails: &[Vec<f64>]) -> Vec<usize> {
    (1..tails.len())
        .take_while(|&k| tails[k].iter().cloned().fold(f64::INFINITY, f64::min) >= NOISE_FLOOR)
        .collect()
}

/// Decay base, period and per-class prefactors from `x̄(k)`, `k ≥ 1`.
///
/// The period is the smallest stride `s ≤ max_period` whose ratios
/// `‖x̄(k+s)‖/‖x̄(k)‖` are constant to 1e−3 over the final window. The base
/// comes from regressing `log‖x̄(k)‖₁` on `{1, log k, 1/k, k}` over one
/// residue class of that window, which absorbs polynomial prefactors.
pub fn estimate_decay(tails: &[Vec<f64>], period_hint: u64, max_period: u64) -> Result<DecayEstimate> {
    let usable = usable_levels(tails);
    let required = 4 * period_hint.max(1) as usize;
    if usable.len() < required {
        return Err(Error::InsufficientLevels {
            available: usable.len(),
            required,
        });
    }
    let norms: Vec<f64> = tails.iter().map(|t| norm1(t)).collect();
    let last = *usable.last().expect("nonempty");
    let window_start = usable[usable.len() / 2].max(1);
    let stride_is_period = |s: usize| {
        let ratios: Vec<f64> = (window_start..=last.saturating_sub(s))
            .map(|k| norms[k + s] / norms[k])
            .collect();
        if ratios.len() < 2 {
            return false;
        }
        let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ratios.iter().cloned().fold(0.0, f64::max);
        hi - lo <= 1e-3 * hi
    };
    let period = (1..=max_period.max(1) as usize)
        .find(|&s| stride_is_period(s))
        .unwrap_or(period_hint.max(1) as usize);
    let class: Vec<usize> = (window_start..=last)
        .filter(|k| (last - k).is_multiple_of(period))
        .collect();
    let y: Vec<f64> = class.iter().map(|&k| norms[k].ln()).collect();
    let kf: Vec<f64> = class.iter().map(|&k| k as f64).collect();
    let slope = if class.len() >= 8 {
        let columns = vec![
            vec![1.0; kf.len()],
            kf.iter().map(|k| k.ln()).collect(),
            kf.iter().map(|k| 1.0 / k).collect(),
            kf.clone(),
        ];
        least_squares(&columns, &y)?[3]
    } else {
        least_squares(&[vec![1.0; kf.len()], kf.clone()], &y)?[1]
    };
    let base = (-slope).exp();
    let prefactors = (0..period)
        .map(|l| {
            let k = (0..=last).rev().find(|k| k % period == l).expect("class nonempty");
            tails[k].iter().map(|x| x * base.powi(k as i32)).collect()
        })
        .collect();
    Ok(DecayEstimate {
        base,
        period: period as u64,
        prefactors,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub k: usize,
    pub class: u64,
    pub exact: Vec<f64>,
    pub predicted: Vec<f64>,
    pub rel_err: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonSummary {
    pub max_usable_level: usize,
    pub terminal_rel_err: f64,
    pub empirical: Option<DecayEstimate>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
    pub summary: ComparisonSummary,
}

/// Joins the regime prediction with exact tails at every usable level.
pub fn compare(fund: &FundamentalSet, report: &AsymptoticReport, k_levels: usize) -> Result<ComparisonTable> {
    if report.predict(1).is_none() {
        return Err(Error::Unsupported(format!("no prediction in regime {}", report.regime)));
    }
    let exact = exact_tails(fund, k_levels)?;
    let usable = usable_levels(&exact.tails);
    let rows: Vec<ComparisonRow> = usable
        .iter()
        .map(|&k| {
            let predicted = report.predict(k).expect("checked above");
            let e = exact.tails[k].clone();
            let rel_err = e.iter().zip(&predicted).map(|(a, b)| ((b - a) / a).abs()).collect();
            ComparisonRow {
                k,
                class: k as u64 % report.period_used,
                exact: e,
                predicted,
                rel_err,
            }
        })
        .collect();
    let terminal_rel_err = rows
        .last()
        .map_or(f64::NAN, |r| r.rel_err.iter().cloned().fold(0.0, f64::max));
    let m = fund.g.rows() as u64;
    let empirical = estimate_decay(&exact.tails, report.period_used, m.max(report.period_used)).ok();
    Ok(ComparisonTable {
        summary: ComparisonSummary {
            max_usable_level: usable.last().copied().unwrap_or(0),
            terminal_rel_err,
            empirical,
        },
        rows,
    })
}
