//! Command dispatch for `ldp-expand`.
//!
//! Every command reads a [`RunConfig`], computes on the model it points at
//! and writes CSV tables (optionally SVG plots) into the output directory.
//! Exit status: 0 on success, 2 when the condition suite fails, 1 on errors.

pub mod config;
pub mod table;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ldp_core::discretize::model_density;
use ldp_core::expansion::{extract_coefficients, leading_coefficient, tail_curve};
use ldp_core::rate::rate_table;
use ldp_core::simulate::{estimate_tail_is, estimate_tail_mc, with_threads};
use ldp_core::spectral::cgf_derivatives;
use ldp_core::verify::run_condition_suite;
use ldp_core::{ConditionReport, EvaluationFrame, Model, SimulationSettings, TiltedFamily};

pub use config::{emit_config, parse_config, LoadedConfig, RunConfig};
use table::{polyline_svg, Cell, Table};

pub const THREADS_VAR: &str = "LDP_EXPAND_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{}:{line}:{column}: key `{key}`: {message}", file.display())]
    Schema {
        file: PathBuf,
        line: usize,
        column: usize,
        key: String,
        message: String,
    },
    #[error("invalid value for `{key}`: {message}")]
    Invalid { key: String, message: String },
    #[error("model {} is invalid:\n{report}", path.display())]
    InvalidModel { path: PathBuf, report: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] ldp_core::Error),
    #[error("{0}")]
    Usage(String),
}

#[derive(Debug, Parser)]
#[command(name = "ldp-expand", version, about = "Large-deviation rates and tail expansions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write SVG plots.
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the model and its discretization.
    Validate(Common),
    /// Rate function, Legendre tilt and curvature on the slope grid.
    Rate(Common),
    /// Cumulant generating function and its derivatives on the tilt grid.
    Spectral(Common),
    /// Exact tails and fitted expansion coefficients.
    Expand {
        #[command(flatten)]
        common: Common,
        /// Single slope; overrides the config's slope grid.
        #[arg(long)]
        a: Option<f64>,
        /// Proceed even when the condition suite fails.
        #[arg(long)]
        force: bool,
    },
    /// Importance-sampled and naive Monte Carlo tail estimates.
    Simulate(Common),
    /// Run the spectral condition suite.
    VerifyConditions(Common),
    /// Conditions, prefactors, fits and simulation in one summary.
    Report(Common),
    /// Print the resolved configuration as JSON.
    EmitConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

impl Command {
    fn common(&self) -> Option<&Common> {
        match self {
            Command::Validate(c)
            | Command::Rate(c)
            | Command::Spectral(c)
            | Command::Simulate(c)
            | Command::VerifyConditions(c)
            | Command::Report(c) => Some(c),
            Command::Expand { common, .. } => Some(common),
            Command::EmitConfig { .. } => None,
        }
    }
}

/// Result of a command that ran to completion.
#[derive(Debug, Default)]
pub struct Outcome {
    pub written: Vec<PathBuf>,
    pub conditions_failed: bool,
    /// Lines for standard output.
    pub summary: Vec<String>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.conditions_failed {
            2
        } else {
            0
        }
    }
}

/// Thread cap from `LDP_EXPAND_THREADS`, if set.
pub fn thread_cap() -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_VAR) {
        Err(_) => Ok(None),
        Ok(text) => text
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| CliError::Usage(format!("{THREADS_VAR} must be a positive integer, got {text:?}"))),
    }
}

pub fn execute(cli: &Cli) -> Result<Outcome, CliError> {
    if let Command::EmitConfig { config } = &cli.command {
        let loaded = parse_config(config)?;
        return Ok(Outcome {
            summary: vec![emit_config(&loaded.config)],
            ..Outcome::default()
        });
    }
    let common = cli.command.common().expect("command carries common flags");
    let mut loaded = parse_config(&common.config)?;
    if let Some(out) = &common.out {
        loaded.config.output_dir = std::env::current_dir()
            .map_err(|source| CliError::Io {
                path: ".".into(),
                source,
            })?
            .join(out);
    }
    loaded.config.svg |= common.svg;
    match thread_cap()? {
        Some(n) => with_threads(n, || run(&cli.command, &loaded))?,
        None => run(&cli.command, &loaded),
    }
}

pub fn run(command: &Command, loaded: &LoadedConfig) -> Result<Outcome, CliError> {
    let out = loaded.output_dir();
    fs::create_dir_all(&out).map_err(|source| CliError::Io {
        path: out.clone(),
        source,
    })?;
    let ctx = Context {
        loaded,
        model: loaded.model(),
        family: TiltedFamily::new(&loaded.model(), loaded.grid_n())?,
        out,
        outcome: Outcome::default(),
    };
    match command {
        Command::Validate(_) => ctx.validate(),
        Command::Rate(_) => ctx.rate(),
        Command::Spectral(_) => ctx.spectral(),
        Command::Expand { a, force, .. } => ctx.expand(*a, *force),
        Command::Simulate(_) => ctx.simulate(),
        Command::VerifyConditions(_) => ctx.verify(),
        Command::Report(_) => ctx.report(),
        Command::EmitConfig { .. } => unreachable!("handled before dispatch"),
    }
}

struct Context<'a> {
    loaded: &'a LoadedConfig,
    model: Model,
    family: TiltedFamily,
    out: PathBuf,
    outcome: Outcome,
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn error_text(e: &ldp_core::Error) -> String {
    e.to_string().replace('\n', " ")
}

impl Context<'_> {
    fn frame(&self) -> &EvaluationFrame {
        self.loaded.frame()
    }

    fn write_table(&mut self, name: &str, table: &Table) -> Result<(), CliError> {
        let path = self.out.join(name);
        write_file(&path, &table.render(&self.loaded.hash))?;
        self.outcome.written.push(path);
        Ok(())
    }

    fn write_plot(&mut self, name: &str, svg: String) -> Result<(), CliError> {
        if self.loaded.config.svg {
            let path = self.out.join(name);
            write_file(&path, &svg)?;
            self.outcome.written.push(path);
        }
        Ok(())
    }

    fn validate(mut self) -> Result<Outcome, CliError> {
        let mut t = Table::new(&["check", "value", "passed"]);
        let base = self.family.base_generator();
        let defect = base.conservation_defect();
        t.push(vec!["conservation_defect".into(), defect.into(), (defect < 1e-10).into()]);
        let density = model_density(&self.family)?;
        let mass = density.integral();
        t.push(vec!["density_mass_error".into(), (mass - 1.0).abs().into(), ((mass - 1.0).abs() < 1e-12).into()]);
        let min = density.values.iter().cloned().fold(f64::INFINITY, f64::min);
        t.push(vec!["density_minimum".into(), min.into(), (min >= 0.0).into()]);
        let mean = density.expectation(&self.family.drift);
        t.push(vec!["observable_mean".into(), mean.into(), true.into()]);
        self.outcome.summary.push(format!(
            "model valid: {} states, conservation defect {defect:.3e}, observable mean {mean:.6e}",
            self.family.len()
        ));
        self.write_table("validation.csv", &t)?;
        Ok(self.outcome)
    }

    fn rate(mut self) -> Result<Outcome, CliError> {
        let cfg = &self.loaded.config;
        let table = rate_table(&self.family, &cfg.a_grid, &cfg.rate);
        let mut t = Table::new(&["a", "theta_a", "rate", "rate_second", "mu", "duality_residual", "status"]);
        let mut rows: Vec<(f64, Vec<Cell>)> = table
            .rows
            .iter()
            .map(|p| {
                (
                    p.a,
                    vec![
                        p.a.into(),
                        p.theta_a.into(),
                        p.rate.into(),
                        p.rate_second.into(),
                        p.mu.into(),
                        p.duality_residual().into(),
                        "ok".into(),
                    ],
                )
            })
            .collect();
        for (a, e) in &table.failures {
            let nan = Cell::Num(f64::NAN);
            rows.push((
                *a,
                vec![(*a).into(), nan.clone(), nan.clone(), nan.clone(), nan.clone(), nan, error_text(e).into()],
            ));
        }
        rows.sort_by(|x, y| x.0.total_cmp(&y.0));
        for (_, row) in rows {
            t.push(row);
        }
        if table.rows.is_empty() {
            return Err(CliError::Core(table.failures.into_iter().next().expect("nonempty grid").1));
        }
        let curve: Vec<(f64, f64)> = table.rows.iter().map(|p| (p.a, p.rate)).collect();
        self.write_table("rate.csv", &t)?;
        self.write_plot("rate.svg", polyline_svg("rate function", "a", "I(a)", &[("I".into(), curve)]))?;
        self.outcome.summary.push(format!(
            "{} slopes solved, {} out of range",
            table.rows.len(),
            table.failures.len()
        ));
        Ok(self.outcome)
    }

    fn spectral(mut self) -> Result<Outcome, CliError> {
        let mut t = Table::new(&["theta", "mu", "mu_first", "mu_second", "spectral_first", "spectral_second"]);
        let mut curve = Vec::new();
        for &theta in &self.loaded.config.theta_grid {
            let d = cgf_derivatives(&self.family, theta)?;
            curve.push((theta, d.mu));
            t.push(vec![
                theta.into(),
                d.mu.into(),
                d.first.into(),
                d.second.into(),
                d.spectral_first.into(),
                d.spectral_second.into(),
            ]);
        }
        self.write_table("spectral.csv", &t)?;
        self.write_plot("spectral.svg", polyline_svg("cumulant generating function", "theta", "mu", &[("mu".into(), curve)]))?;
        self.outcome.summary.push(format!("{} tilts", self.loaded.config.theta_grid.len()));
        Ok(self.outcome)
    }

    fn conditions(&mut self, thetas: &[f64]) -> Result<ConditionReport, CliError> {
        let cfg = &self.loaded.config.conditions;
        let report = run_condition_suite(&self.family, self.frame(), thetas, &cfg.s_grid, &cfg.t_grid);
        let mut t = Table::new(&["condition", "theta", "passed", "evidence", "threshold", "detail"]);
        for v in &report.verdicts {
            t.push(vec![
                v.condition.label().into(),
                v.theta.into(),
                v.passed.into(),
                v.evidence.into(),
                v.threshold.into(),
                v.detail.clone().into(),
            ]);
        }
        self.write_table("conditions.csv", &t)?;
        let failed: Vec<String> = report
            .failures()
            .map(|v| format!("{} at theta={}", v.condition.label(), v.theta))
            .collect();
        if failed.is_empty() {
            self.outcome.summary.push(format!("conditions: {} verdicts passed", report.verdicts.len()));
        } else {
            self.outcome.summary.push(format!("conditions failed: {}", failed.join(", ")));
            self.outcome.conditions_failed = true;
        }
        Ok(report)
    }

    fn verify(mut self) -> Result<Outcome, CliError> {
        let thetas = self.loaded.config.theta_grid.clone();
        self.conditions(&thetas)?;
        Ok(self.outcome)
    }

    /// Legendre tilts of the slopes, for the condition suite.
    /// Legendre tilts of the slopes that have one. A slope without a tilt
    /// counts as a failed condition and is dropped; the suite then runs at
    /// the remaining tilts, or at `theta_grid` when none remain.
    fn tilts(&mut self, slopes: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let table = rate_table(&self.family, slopes, &self.loaded.config.rate);
        for (a, e) in &table.failures {
            self.outcome.summary.push(format!("no Legendre tilt at a={a}: {e}"));
            self.outcome.conditions_failed = true;
        }
        let usable: Vec<f64> = table.rows.iter().map(|p| p.a).collect();
        let mut thetas: Vec<f64> = table.rows.iter().map(|p| p.theta_a).collect();
        if thetas.is_empty() {
            thetas = self.loaded.config.theta_grid.clone();
        }
        thetas.sort_by(f64::total_cmp);
        (thetas, usable)
    }

    fn expand(mut self, a: Option<f64>, force: bool) -> Result<Outcome, CliError> {
        let slopes = a.map(|a| vec![a]).unwrap_or_else(|| self.loaded.config.a_grid.clone());
        let (thetas, slopes) = self.tilts(&slopes);
        self.conditions(&thetas)?;
        if self.outcome.conditions_failed && !force {
            self.outcome
                .summary
                .push("refusing to expand: condition suite failed (use --force to override)".into());
            return Ok(self.outcome);
        }
        let cfg = &self.loaded.config;
        let settings = self.loaded.expansion();
        let mut tails = Table::new(&["a", "t", "probability", "log_probability", "normalized"]);
        let mut fits = Table::new(&[
            "a",
            "order",
            "k",
            "coefficient",
            "d0_analytic",
            "d0_gap",
            "residual",
            "condition",
            "stability",
        ]);
        let mut series = Vec::new();
        for &a in &slopes {
            let (curve, fit) = extract_coefficients(&self.family, self.frame(), a, &cfg.expand.times, cfg.expand.order, &settings)?;
            for p in &curve.points {
                tails.push(vec![a.into(), p.t.into(), p.probability.into(), p.log_probability.into(), p.normalized.into()]);
            }
            for (k, c) in fit.coefficients.iter().enumerate() {
                fits.push(vec![
                    a.into(),
                    fit.order.into(),
                    k.into(),
                    (*c).into(),
                    fit.d0_reference.unwrap_or(f64::NAN).into(),
                    fit.d0_gap.unwrap_or(f64::NAN).into(),
                    fit.residual.into(),
                    fit.condition.into(),
                    fit.stability.unwrap_or(f64::NAN).into(),
                ]);
            }
            self.outcome.summary.push(format!(
                "a={a}: D0 fit {:.6e}, analytic {:.6e}, condition {:.3e}",
                fit.d0(),
                fit.d0_reference.unwrap_or(f64::NAN),
                fit.condition
            ));
            series.push((
                format!("a={a}"),
                curve.points.iter().map(|p| (p.t, p.t.sqrt() * p.normalized)).collect(),
            ));
        }
        self.write_table("expand_tail.csv", &tails)?;
        self.write_table("expand_fit.csv", &fits)?;
        self.write_plot("expand_tail.svg", polyline_svg("normalized tail", "t", "sqrt(t) e^(I t) P", &series))?;
        Ok(self.outcome)
    }

    fn sim_settings(&self) -> SimulationSettings {
        let s = &self.loaded.config.simulate;
        SimulationSettings {
            dt: s.dt,
            n_paths: s.n_paths,
            seed: self.loaded.config.seed,
            convention: s.convention,
        }
    }

    fn simulate(mut self) -> Result<Outcome, CliError> {
        let s = self.loaded.config.simulate.clone();
        let settings = self.sim_settings();
        let exact = tail_curve(&self.family, self.frame(), s.a, &[s.t], &self.loaded.expansion())?.points[0].probability;
        let mut t = Table::new(&["method", "a", "t", "theta", "p_hat", "stderr", "ess", "hits", "n_paths", "exact"]);
        let mut estimates = vec![("importance", estimate_tail_is(&self.family, self.frame(), s.a, s.t, &settings, &self.loaded.config.rate)?)];
        if s.naive {
            estimates.push(("naive", estimate_tail_mc(&self.family, self.frame(), s.a, s.t, &settings)?));
        }
        for (method, e) in estimates {
            t.push(vec![
                method.into(),
                s.a.into(),
                s.t.into(),
                e.theta.into(),
                e.p_hat.into(),
                e.stderr.into(),
                e.ess.into(),
                e.hits.into(),
                e.n_paths.into(),
                exact.into(),
            ]);
            self.outcome.summary.push(format!(
                "{method}: {:.6e} ± {:.2e} (exact {exact:.6e}, {} hits)",
                e.p_hat, e.stderr, e.hits
            ));
        }
        self.write_table("simulate.csv", &t)?;
        Ok(self.outcome)
    }

    fn report(mut self) -> Result<Outcome, CliError> {
        let cfg = self.loaded.config.clone();
        let (thetas, slopes) = self.tilts(&cfg.a_grid);
        self.conditions(&thetas)?;
        let settings = self.loaded.expansion();
        let sim = self.sim_settings();
        let mut t = Table::new(&["a", "quantity", "value", "stderr"]);
        let lattice = matches!(&self.model, Model::DiscreteChain(c) if c.increment_var.iter().all(|v| *v == 0.0));
        for &a in &cfg.a_grid {
            let nan = || Cell::Num(f64::NAN);
            if !slopes.contains(&a) {
                t.push(vec![a.into(), "no_tilt".into(), nan(), nan()]);
                continue;
            }
            if lattice {
                let curve = tail_curve(&self.family, self.frame(), a, &cfg.expand.times, &settings)?;
                for p in &curve.points {
                    t.push(vec![a.into(), format!("tail_t{}", p.t).into(), p.probability.into(), nan()]);
                }
                continue;
            }
            let lead = leading_coefficient(&self.family, self.frame(), a, &cfg.rate)?;
            t.push(vec![a.into(), "d0_analytic".into(), lead.d0.into(), nan()]);
            match extract_coefficients(&self.family, self.frame(), a, &cfg.expand.times, cfg.expand.order, &settings) {
                Ok((_, fit)) => {
                    for (k, c) in fit.coefficients.iter().enumerate() {
                        t.push(vec![a.into(), format!("d{k}_fit").into(), (*c).into(), nan()]);
                    }
                }
                Err(e) => t.push(vec![a.into(), format!("fit_error: {}", error_text(&e)).into(), nan(), nan()]),
            }
            if self.family.grid.is_some() {
                let st = cfg.simulate.t;
                let exact = tail_curve(&self.family, self.frame(), a, &[st], &settings)?.points[0].probability;
                t.push(vec![a.into(), format!("exact_tail_t{st}").into(), exact.into(), nan()]);
                match estimate_tail_is(&self.family, self.frame(), a, st, &sim, &cfg.rate) {
                    Ok(e) => t.push(vec![a.into(), format!("is_tail_t{st}").into(), e.p_hat.into(), e.stderr.into()]),
                    Err(e) => t.push(vec![a.into(), format!("is_error: {}", error_text(&e)).into(), nan(), nan()]),
                }
            }
        }
        self.write_table("report.csv", &t)?;
        self.outcome.summary.push(format!("report for {} slopes", cfg.a_grid.len()));
        Ok(self.outcome)
    }
}

/// Parse arguments and run; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(outcome) => {
            for line in &outcome.summary {
                if line.ends_with('\n') {
                    print!("{line}");
                } else {
                    println!("{line}");
                }
            }
            outcome.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
