//! End-to-end pipeline: drift, exact solution, spectral profile and the
//! asymptotic report, with the numerical tolerances that drive them.

use num_complex::Complex64;

use crate::asymptotics::{AsymptoticReport, AT_RB_REL_TOL, ZERO_REL_TOL};
use crate::error::{Error, Result};
use crate::fundamental::{structure_normal_form, FundamentalSet, StructureReport, StructureSubject, G_DEFAULT_TOL};
use crate::linalg::PERRON_DEFAULT_TOL;
use crate::model::{drift, DriftProfile, MG1Model};
use crate::spectral::{r_period_residuals, SpectralProfile, THETA_DEFAULT_TOL};

/// Named numerical tolerances, overridable from the command line.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerances {
    pub perron: f64,
    pub g: f64,
    pub theta: f64,
    pub zero: f64,
    pub at_rb: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            perron: PERRON_DEFAULT_TOL,
            g: G_DEFAULT_TOL,
            theta: THETA_DEFAULT_TOL,
            zero: ZERO_REL_TOL,
            at_rb: AT_RB_REL_TOL,
        }
    }
}

impl Tolerances {
    pub const NAMES: [&'static str; 5] = ["perron", "g", "theta", "zero", "at_rb"];

    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        if !(value.is_finite() && value > 0.0) {
            return Err(Error::Usage(format!("tolerance {name} must be positive, got {value}")));
        }
        let slot = match name {
            "perron" => &mut self.perron,
            "g" => &mut self.g,
            "theta" => &mut self.theta,
            "zero" => &mut self.zero,
            "at_rb" => &mut self.at_rb,
            _ => {
                return Err(Error::Usage(format!(
                    "unknown tolerance '{name}', expected one of {}",
                    Self::NAMES.join(", ")
                )))
            }
        };
        *slot = value;
        Ok(())
    }
}

/// Rejects models with `ρ ≥ 1`, which have no stationary distribution.
pub fn ensure_stable(d: &DriftProfile) -> Result<()> {
    if d.rho >= 1.0 {
        return Err(Error::Validation {
            message: format!("unstable: rho = {} is not below 1", d.rho),
            slack: d.rho - 1.0,
        });
    }
    Ok(())
}

/// Exact solution of a stable model.
pub fn solve_model(model: &MG1Model, tol: &Tolerances, levels: usize) -> Result<(DriftProfile, FundamentalSet)> {
    let d = drift(model)?;
    ensure_stable(&d)?;
    let fund = FundamentalSet::compute(model, &d, levels, tol.g)?;
    Ok((d, fund))
}

/// Everything `analyze` reports.
#[derive(Clone, Debug)]
pub struct Analysis {
    pub drift: DriftProfile,
    pub fund: FundamentalSet,
    pub spectral: SpectralProfile,
    pub report: AsymptoticReport,
    /// `‖μΔ^{−1}R*(θω) − μΔ^{−1}‖∞` per `ν`, empty without `θ`.
    pub r_period_residuals: Vec<f64>,
}

pub fn analyze(model: &MG1Model, tol: &Tolerances, levels: usize) -> Result<Analysis> {
    let (d, fund) = solve_model(model, tol, levels)?;
    let spectral = SpectralProfile::compute(model, &d, tol.theta, tol.perron)?;
    let report = AsymptoticReport::build(model, &spectral, &fund, tol.zero, tol.at_rb)?;
    let r_period_residuals = match (spectral.theta.value(), &spectral.eigen) {
        (Some(t), Some(e)) => r_period_residuals(&fund.kernels, t, e, &spectral.period)?,
        _ => Vec::new(),
    };
    Ok(Analysis {
        drift: d,
        fund,
        spectral,
        report,
        r_period_residuals,
    })
}

/// Normal forms of `G` and `R*(1)`.
pub fn structure(model: &MG1Model, tol: &Tolerances) -> Result<(StructureReport, StructureReport)> {
    let (_, fund) = solve_model(model, tol, 1)?;
    let g = structure_normal_form(&fund.g, StructureSubject::GMatrix)?;
    let r1 = fund.kernels.r_star(Complex64::new(1.0, 0.0))?.re();
    let r = structure_normal_form(&r1, StructureSubject::RMatrix)?;
    Ok((g, r))
}
