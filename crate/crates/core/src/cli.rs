//! Command-line front end.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use num_complex::Complex64;

use crate::analysis::{analyze, ensure_stable, solve_model, structure, Tolerances};
use crate::asymptotics::{Prefactors, Regime};
use crate::error::{Error, Result};
use crate::fundamental::{StructureForm, StructureReport};
use crate::model::{drift, load_model, MG1Model};
use crate::oracle::{compare, exact_tails};
use crate::spectral::{spectral_period, Theta};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Human,
    Csv,
}

#[derive(Debug, Parser)]
#[command(
    name = "mg1",
    version,
    about = "Exact solutions and tail asymptotics of M/G/1-type Markov chains"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Number of levels to solve for and compare.
    #[arg(long, global = true, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    pub levels: u64,

    #[arg(long, global = true, value_enum, default_value_t = Format::Human)]
    pub format: Format,

    /// Write the report here instead of standard output.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,

    /// Override a numerical tolerance (perron, g, theta, zero, at_rb).
    #[arg(long = "tol", global = true, value_name = "NAME=VALUE")]
    pub tol: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a model file against the structural assumptions.
    Validate { model: PathBuf },
    /// Stationary probabilities x(k) and tails x̄(k).
    Solve { model: PathBuf },
    /// Decay parameter, period, regime and prefactors.
    Analyze { model: PathBuf },
    /// Predicted against exact tails, level by level.
    Compare { model: PathBuf },
    /// Block structure of G and R*(1).
    Structure { model: PathBuf },
}

/// One reported quantity.
enum Value {
    Num(f64),
    Sci(f64),
    Vector(Vec<f64>),
    Text(String),
}

struct Records(Vec<(String, Value)>);

impl Records {
    fn new() -> Self {
        Records(Vec::new())
    }

    fn push(&mut self, key: impl Into<String>, value: Value) {
        self.0.push((key.into(), value));
    }

    fn text(&mut self, key: impl Into<String>, value: impl ToString) {
        self.push(key, Value::Text(value.to_string()));
    }

    fn render(&self, format: Format) -> String {
        let mut out = String::new();
        if format == Format::Csv {
            out.push_str("key,value\n");
        }
        for (key, value) in &self.0 {
            let v = match (value, format) {
                (Value::Num(x), Format::Human) => format!("{x:.10}"),
                (Value::Sci(x), Format::Human) => format!("{x:.3e}"),
                (Value::Num(x) | Value::Sci(x), Format::Csv) => format!("{x:.16e}"),
                (Value::Vector(v), Format::Human) => join(v.iter().map(|x| format!("{x:.10}"))),
                (Value::Vector(v), Format::Csv) => join(v.iter().map(|x| format!("{x:.16e}"))),
                (Value::Text(t), _) => t.clone(),
            };
            match format {
                Format::Human => writeln!(out, "{key} = {v}"),
                Format::Csv => writeln!(out, "{key},{v}"),
            }
            .expect("writing to a string");
        }
        out
    }
}

fn join(items: impl Iterator<Item = String>) -> String {
    items.collect::<Vec<_>>().join(" ")
}

fn complex_text(z: Complex64) -> String {
    format!("{:.10}{:+.10}i", z.re, z.im)
}

fn parse_tolerances(specs: &[String]) -> Result<Tolerances> {
    let mut tol = Tolerances::default();
    for spec in specs {
        let (name, value) = spec
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("--tol expects NAME=VALUE, got '{spec}'")))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::Usage(format!("--tol {name}: '{value}' is not a number")))?;
        tol.set(name.trim(), value)?;
    }
    Ok(tol)
}

fn validate_report(model: &MG1Model) -> Result<Records> {
    let d = drift(model)?;
    ensure_stable(&d)?;
    let mut r = Records::new();
    r.text("status", "valid");
    r.text("M", model.m());
    r.text("M0", model.m0());
    r.push("rho", Value::Num(d.rho));
    r.text("r_A", model.r_a());
    r.text("r_B", model.r_b());
    r.push("pi", Value::Vector(d.pi));
    Ok(r)
}

fn solve_report(model: &MG1Model, tol: &Tolerances, levels: usize, format: Format) -> Result<String> {
    let (_, fund) = solve_model(model, tol, levels)?;
    let tails = exact_tails(&fund, levels)?;
    let m = model.m();
    let mut out = String::new();
    match format {
        Format::Csv => {
            let x_cols = join((1..=m).map(|j| format!("x_{j}")));
            let t_cols = join((1..=m).map(|j| format!("xbar_{j}")));
            writeln!(out, "k,{},{}", x_cols.replace(' ', ","), t_cols.replace(' ', ",")).expect("string");
            for k in 1..=levels {
                let cells: Vec<String> = fund
                    .x_at(k)
                    .iter()
                    .chain(&tails.tails[k])
                    .map(|v| format!("{v:.16e}"))
                    .collect();
                writeln!(out, "{k},{}", cells.join(",")).expect("string");
            }
        }
        Format::Human => {
            writeln!(out, "x0 = {}", join(fund.x0().iter().map(|v| format!("{v:.10e}")))).expect("string");
            writeln!(out, "condition(I - U(0)) = {:.3e}", fund.boundary.condition).expect("string");
            for k in 1..=levels {
                writeln!(
                    out,
                    "k = {k}: x = {} | xbar = {}",
                    join(fund.x_at(k).iter().map(|v| format!("{v:.10e}"))),
                    join(tails.tails[k].iter().map(|v| format!("{v:.10e}")))
                )
                .expect("string");
            }
        }
    }
    Ok(out)
}

fn analyze_report(model: &MG1Model, tol: &Tolerances, levels: usize) -> Result<Records> {
    let a = analyze(model, tol, levels)?;
    let s = &a.spectral;
    let rep = &a.report;
    let mut r = Records::new();
    match s.theta {
        Theta::Found(t) => r.push("theta", Value::Num(t)),
        Theta::NoTheta => r.text("theta", "none (Assumption 3 fails)"),
    }
    r.push("rho", Value::Num(a.drift.rho));
    r.text("r_A", s.r_a);
    r.text("r_B", s.r_b);
    r.text("tau", s.tau());
    r.text("offsets", join(s.period.offsets.iter().map(|p| p.to_string())));
    for (n, det) in &s.spectral_check {
        r.push(format!("spectral_check_n{n}"), Value::Sci(*det));
    }
    if let Some(p) = spectral_period(&s.spectral_check, 1e-8) {
        r.text("spectral_period", p);
    }
    if let Some(e) = &s.eigen {
        r.push("mu", Value::Vector(e.mu.clone()));
        r.push("v", Value::Vector(e.v.clone()));
        r.push("delta_prime", Value::Num(e.delta_prime));
    }
    for (nu, res) in a.r_period_residuals.iter().enumerate() {
        r.push(format!("r_period_residual_{nu}"), Value::Sci(*res));
    }
    r.text("regime", rep.regime);
    match rep.regime {
        Regime::BelowRB => r.text("tau'", rep.period_used),
        Regime::AtRB => {
            r.text("tau_hat (upper bound)", rep.period_used);
            r.text("m_B", rep.order - 1);
        }
        Regime::AboveRB | Regime::NoThetaAboveRB => {
            r.text("pole_period", rep.period_used);
            r.text("m_B", rep.order);
        }
        Regime::Unsupported => {}
    }
    if rep.regime != Regime::Unsupported {
        r.text("order", rep.order);
    }
    if let Some(b) = rep.base {
        r.push("decay_base", Value::Num(b));
    }
    match &rep.prefactors {
        Prefactors::Classes(classes) => {
            let name = if rep.regime == Regime::AtRB { "c_hat" } else { "c" };
            for (l, c) in classes.iter().enumerate() {
                r.push(format!("{name}_{l}"), Value::Vector(c.clone()));
            }
        }
        Prefactors::Poles(poles) => {
            for p in poles {
                r.text(
                    format!("pole_weight[{}]", p.angle),
                    join(p.weight.iter().map(|w| complex_text(*w))),
                );
            }
        }
        Prefactors::Absent => {}
    }
    for (nu, c) in rep.diagnostics.c_omega.iter().enumerate() {
        r.text(format!("c_omega_{nu}"), complex_text(*c));
    }
    if !rep.diagnostics.dropped.is_empty() {
        r.text("dropped", join(rep.diagnostics.dropped.iter().map(|d| d.to_string())));
    }
    if !rep.diagnostics.intersection.is_empty() {
        r.text(
            "intersection",
            join(rep.diagnostics.intersection.iter().map(|a| a.to_string())),
        );
    }
    for w in &rep.diagnostics.warnings {
        r.text("warning", w);
    }
    r.push("x0", Value::Vector(a.fund.x0().to_vec()));
    r.push("condition(I - U(0))", Value::Sci(a.fund.boundary.condition));
    Ok(r)
}

fn compare_report(model: &MG1Model, tol: &Tolerances, levels: usize, format: Format) -> Result<String> {
    let a = analyze(model, tol, levels)?;
    let table = compare(&a.fund, &a.report, levels)?;
    let mut out = String::new();
    match format {
        Format::Csv => {
            out.push_str("k,class,phase,exact,predicted,rel_err\n");
            for row in &table.rows {
                for j in 0..row.exact.len() {
                    writeln!(
                        out,
                        "{},{},{},{:.16e},{:.16e},{:.16e}",
                        row.k,
                        row.class,
                        j + 1,
                        row.exact[j],
                        row.predicted[j],
                        row.rel_err[j]
                    )
                    .expect("string");
                }
            }
        }
        Format::Human => {
            writeln!(out, "regime = {}", a.report.regime).expect("string");
            for row in &table.rows {
                for j in 0..row.exact.len() {
                    writeln!(
                        out,
                        "k = {} class = {} phase = {}: exact = {:.10e} predicted = {:.10e} rel_err = {:.3e}",
                        row.k,
                        row.class,
                        j + 1,
                        row.exact[j],
                        row.predicted[j],
                        row.rel_err[j]
                    )
                    .expect("string");
                }
            }
            let s = &table.summary;
            writeln!(out, "max_usable_level = {}", s.max_usable_level).expect("string");
            writeln!(out, "terminal_rel_err = {:.3e}", s.terminal_rel_err).expect("string");
            if let Some(e) = &s.empirical {
                writeln!(out, "empirical_base = {:.10}", e.base).expect("string");
                writeln!(out, "empirical_period = {}", e.period).expect("string");
            }
        }
    }
    Ok(out)
}

fn structure_text(s: &StructureReport) -> (String, String) {
    let form = match s.form {
        StructureForm::Irreducible => "irreducible",
        StructureForm::OneIrreduciblePlusTriangular => "one-irreducible-plus-triangular",
    };
    let classes = join(
        s.classes
            .iter()
            .map(|c| format!("{{{}}}", join(c.iter().map(|i| (i + 1).to_string())))),
    );
    (form.to_string(), classes)
}

fn structure_report(model: &MG1Model, tol: &Tolerances) -> Result<Records> {
    let (g, rr) = structure(model, tol)?;
    let mut r = Records::new();
    for (name, s) in [("G", &g), ("R", &rr)] {
        let (form, classes) = structure_text(s);
        r.text(format!("{name}.form"), form);
        r.text(format!("{name}.classes"), classes);
    }
    Ok(r)
}

fn execute(cli: &Cli) -> Result<String> {
    let tol = parse_tolerances(&cli.tol)?;
    let levels = cli.levels as usize;
    let load = |p: &Path| load_model(p);
    Ok(match &cli.command {
        Command::Validate { model } => validate_report(&load(model)?)?.render(cli.format),
        Command::Solve { model } => solve_report(&load(model)?, &tol, levels, cli.format)?,
        Command::Analyze { model } => analyze_report(&load(model)?, &tol, levels)?.render(cli.format),
        Command::Compare { model } => compare_report(&load(model)?, &tol, levels, cli.format)?,
        Command::Structure { model } => structure_report(&load(model)?, &tol)?.render(cli.format),
    })
}

/// Runs the command line and returns the process exit status: 0 on
/// success, 1 for invalid input or usage, 2 for numerical failure.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = stdout.write_all(text.as_bytes());
                    0
                }
                _ => {
                    let _ = stderr.write_all(text.as_bytes());
                    1
                }
            };
        }
    };
    let result = execute(&cli).and_then(|text| match &cli.output {
        Some(path) => std::fs::write(path, text).map_err(Error::from),
        None => stdout.write_all(text.as_bytes()).map_err(Error::from),
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
