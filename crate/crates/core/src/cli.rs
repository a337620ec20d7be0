//! Command-line front end: run configurations, experiment dispatch and the
//! `results.csv` / `manifest.json` outputs.
//!
//! A configuration file (TOML, or JSON when the extension is `.json`) names
//! an experiment and any parameters that differ from that experiment's
//! defaults. The written manifest is the fully resolved configuration plus
//! the tool version and wall time, and parses back into the same
//! [`RunConfig`].

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::Parser;
use serde::{Deserialize, Serialize};

use crate::disorder::{DisorderStream, DEFAULT_NODES, DEFAULT_SAMPLES};
use crate::error::Error;
use crate::models::{Family, ModelSpec};
use crate::verify::{self, Lemma1Settings, ScanRow};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const EXIT_OK: i32 = 0;
pub const EXIT_BOUND_FAILURE: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

pub const CSV_HEADER: [&str; 16] = [
    "experiment",
    "model",
    "N",
    "n",
    "beta",
    "lambda",
    "mu",
    "alpha",
    "observable",
    "mean",
    "variance",
    "stderr",
    "count",
    "bound",
    "ratio",
    "pass",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Experiment {
    VarianceScan,
    Guerra,
    Lemma1,
    PsiVariance,
    Dichotomy,
    LimitProbe,
    Assumptions,
    Harris,
}

impl Experiment {
    pub const ALL: [Experiment; 8] = [
        Experiment::VarianceScan,
        Experiment::Guerra,
        Experiment::Lemma1,
        Experiment::PsiVariance,
        Experiment::Dichotomy,
        Experiment::LimitProbe,
        Experiment::Assumptions,
        Experiment::Harris,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::VarianceScan => "variance-scan",
            Experiment::Guerra => "guerra",
            Experiment::Lemma1 => "lemma1",
            Experiment::PsiVariance => "psi-variance",
            Experiment::Dichotomy => "dichotomy",
            Experiment::LimitProbe => "limit-probe",
            Experiment::Assumptions => "assumptions",
            Experiment::Harris => "harris",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Experiment::VarianceScan => {
                "variance of h over Gibbs state and disorder, with thermal/disorder split"
            }
            Experiment::Guerra => "REM pressure p_{N,n} against the analytic replica formula",
            Experiment::Lemma1 => {
                "|E_g d^k<h>/dlambda^k| against sqrt(k!) C_h |mu|^-k N^(k(1-alpha))"
            }
            Experiment::PsiVariance => "Var(psi_N) against its analytic 1/N bound (REM, EA)",
            Experiment::Dichotomy => "two-replica REM overlap E<h> and E<h>(1-E<h>)",
            Experiment::LimitProbe => "<h>, <h^2> and variance over the (N, lambda) grid",
            Experiment::Assumptions => "p_N trend, N Var(psi_N) and ||[h,[H,h]]|| over N",
            Experiment::Harris => "Harris sandwich on random Hermitian pairs and model states",
        }
    }

    /// Fully resolved defaults of this experiment.
    pub fn defaults(self) -> RunConfig {
        let base = RunConfig {
            experiment: self,
            model: Family::Rem,
            sizes: vec![6, 8, 10],
            replicas: 2,
            spin: 0.5,
            couplings: vec![1.0],
            k: [0.3, 0.3, 0.4],
            base_set: 2,
            betas: vec![1.0],
            lambdas: vec![0.0],
            mu: 0.0,
            alpha: 0.5,
            samples: DEFAULT_SAMPLES,
            seed: 42,
            quad_nodes: DEFAULT_NODES,
            order: 1,
            step: None,
            instances: 1,
            max_dim: 64,
            out: PathBuf::from("results"),
        };
        match self {
            Experiment::VarianceScan => RunConfig {
                model: Family::Heisenberg,
                sizes: vec![4, 6, 8, 10],
                lambdas: vec![0.3],
                ..base
            },
            Experiment::Guerra => RunConfig {
                sizes: vec![6, 8, 10, 12],
                ..base
            },
            Experiment::Lemma1 => RunConfig {
                sizes: vec![4, 6],
                lambdas: vec![0.2],
                mu: 1.0,
                instances: 4,
                ..base
            },
            Experiment::PsiVariance => RunConfig {
                sizes: vec![8],
                ..base
            },
            Experiment::Dichotomy => RunConfig {
                betas: vec![2.0],
                lambdas: vec![-0.5, 0.0, 0.5],
                ..base
            },
            Experiment::LimitProbe => RunConfig {
                model: Family::Heisenberg,
                sizes: vec![4, 6, 8],
                lambdas: vec![0.3, 0.1, 0.03, 0.0],
                ..base
            },
            Experiment::Assumptions => RunConfig {
                model: Family::Heisenberg,
                sizes: vec![4, 6, 8, 10],
                lambdas: vec![0.3],
                ..base
            },
            Experiment::Harris => RunConfig {
                sizes: vec![4],
                lambdas: vec![0.3],
                instances: 100,
                ..base
            },
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == norm)
            .ok_or_else(|| format!("unknown experiment '{s}' (see --list)"))
    }
}

impl Serialize for Experiment {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Experiment {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Names, descriptions and default parameters of every experiment.
pub fn list_experiments() -> String {
    let mut out = String::new();
    for e in Experiment::ALL {
        let d = e.defaults();
        out.push_str(&format!("{:<14} {}\n", e.name(), e.description()));
        out.push_str(&format!(
            "{:<14} model={} N={:?} n={} beta={:?} lambda={:?} mu={} alpha={} M={} instances={}\n",
            "",
            d.model.tag().to_ascii_lowercase(),
            d.sizes,
            d.replicas,
            d.betas,
            d.lambdas,
            d.mu,
            d.alpha,
            d.samples,
            d.instances
        ));
    }
    out
}

/// A resolved run configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub model: Family,
    /// N for the REM, chain length L otherwise.
    pub sizes: Vec<usize>,
    pub replicas: usize,
    pub spin: f64,
    /// Heisenberg couplings `J_r`, `r = 1, 2, ...`.
    pub couplings: Vec<f64>,
    /// EA anisotropies `(K^x, K^y, K^z)`.
    pub k: [f64; 3],
    pub base_set: usize,
    pub betas: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub mu: f64,
    pub alpha: f64,
    pub samples: usize,
    pub seed: u64,
    pub quad_nodes: usize,
    /// Derivative order for `lemma1`.
    pub order: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    /// Frozen instances (`lemma1`, `harris` model states) or random pairs
    /// (`harris`).
    pub instances: usize,
    /// Largest random-matrix dimension for `harris`.
    pub max_dim: usize,
    pub out: PathBuf,
}

/// Configuration as written by the user: everything but the experiment is
/// optional.
#[derive(Debug, Clone, Default, Deserialize)]
pub struct ConfigFile {
    pub experiment: Option<Experiment>,
    pub model: Option<Family>,
    pub sizes: Option<Vec<usize>>,
    pub replicas: Option<usize>,
    pub spin: Option<f64>,
    pub couplings: Option<Vec<f64>>,
    pub k: Option<[f64; 3]>,
    pub base_set: Option<usize>,
    pub betas: Option<Vec<f64>>,
    pub lambdas: Option<Vec<f64>>,
    pub mu: Option<f64>,
    pub alpha: Option<f64>,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    pub quad_nodes: Option<usize>,
    pub order: Option<usize>,
    pub step: Option<f64>,
    pub instances: Option<usize>,
    pub max_dim: Option<usize>,
    pub out: Option<PathBuf>,
}

impl ConfigFile {
    pub fn parse(text: &str, json: bool) -> Result<Self, RunError> {
        if json {
            serde_json::from_str(text).map_err(|e| RunError::Config(format!("bad JSON: {e}")))
        } else {
            toml::from_str(text).map_err(|e| RunError::Config(format!("bad TOML: {e}")))
        }
    }

    pub fn read(path: &Path) -> Result<Self, RunError> {
        let text = fs::read_to_string(path)
            .map_err(|e| RunError::Config(format!("cannot read {}: {e}", path.display())))?;
        let json = path
            .extension()
            .is_some_and(|x| x.eq_ignore_ascii_case("json"));
        Self::parse(&text, json)
    }

    /// Fills unset fields from the experiment defaults. REM variance scans
    /// default to lambda = 0.5.
    pub fn resolve(self) -> Result<RunConfig, RunError> {
        let experiment = self
            .experiment
            .ok_or_else(|| RunError::Config("no experiment given".into()))?;
        let d = experiment.defaults();
        let model = self.model.unwrap_or(d.model);
        let default_lambdas = if experiment == Experiment::VarianceScan && model == Family::Rem {
            vec![0.5]
        } else {
            d.lambdas
        };
        let config = RunConfig {
            experiment,
            model,
            sizes: self.sizes.unwrap_or(d.sizes),
            replicas: self.replicas.unwrap_or(d.replicas),
            spin: self.spin.unwrap_or(d.spin),
            couplings: self.couplings.unwrap_or(d.couplings),
            k: self.k.unwrap_or(d.k),
            base_set: self.base_set.unwrap_or(d.base_set),
            betas: self.betas.unwrap_or(d.betas),
            lambdas: self.lambdas.unwrap_or(default_lambdas),
            mu: self.mu.unwrap_or(d.mu),
            alpha: self.alpha.unwrap_or(d.alpha),
            samples: self.samples.unwrap_or(d.samples),
            seed: self.seed.unwrap_or(d.seed),
            quad_nodes: self.quad_nodes.unwrap_or(d.quad_nodes),
            order: self.order.unwrap_or(d.order),
            step: self.step.or(d.step),
            instances: self.instances.unwrap_or(d.instances),
            max_dim: self.max_dim.unwrap_or(d.max_dim),
            out: self.out.unwrap_or(d.out),
        };
        config.validate()?;
        Ok(config)
    }
}

impl RunConfig {
    pub fn from_str_format(text: &str, json: bool) -> Result<Self, RunError> {
        ConfigFile::parse(text, json)?.resolve()
    }

    pub fn model_spec(&self) -> ModelSpec {
        match self.model {
            Family::Rem => ModelSpec::Rem {
                replicas: self.replicas,
            },
            Family::Heisenberg => ModelSpec::Heisenberg {
                spin: self.spin,
                couplings: self.couplings.clone(),
            },
            Family::Ea => ModelSpec::Ea {
                replicas: self.replicas,
                spin: self.spin,
                k: self.k,
                base_set: self.base_set,
            },
        }
    }

    /// Checks every parameter and builds one instance per size, so that cap
    /// violations surface before any sampling starts.
    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |m: String| Err(RunError::Config(m));
        if self.betas.is_empty() {
            return bad("beta list is empty".into());
        }
        if self.lambdas.is_empty() {
            return bad("lambda list is empty".into());
        }
        if self.sizes.is_empty() && self.experiment != Experiment::Harris {
            return bad("size list is empty".into());
        }
        if let Some(b) = self.betas.iter().find(|b| !(b.is_finite() && **b > 0.0)) {
            return bad(format!("beta must be positive and finite, got {b}"));
        }
        if let Some(l) = self.lambdas.iter().find(|l| !l.is_finite()) {
            return bad(format!("lambda must be finite, got {l}"));
        }
        if !self.mu.is_finite() || !self.alpha.is_finite() {
            return bad("mu and alpha must be finite".into());
        }
        if !(8..=128).contains(&self.quad_nodes) {
            return bad(format!(
                "quad_nodes must lie in 8..=128, got {}",
                self.quad_nodes
            ));
        }
        if let Some(s) = self.step {
            if !(s.is_finite() && s > 0.0) {
                return bad(format!("step must be positive, got {s}"));
            }
        }
        let spec = self.model_spec();
        match self.experiment {
            Experiment::Guerra | Experiment::Dichotomy if self.model != Family::Rem => {
                return bad(format!("{} runs on the REM only", self.experiment));
            }
            Experiment::Guerra if self.replicas < 2 => {
                return bad("guerra needs at least 2 replicas".into());
            }
            Experiment::Dichotomy if self.replicas != 2 => {
                return bad("dichotomy needs exactly 2 replicas".into());
            }
            Experiment::PsiVariance if self.model == Family::Heisenberg => {
                return bad("psi-variance needs a disordered model (rem or ea)".into());
            }
            Experiment::Lemma1 => {
                if !(1..=2).contains(&self.order) {
                    return bad(format!("order must be 1 or 2, got {}", self.order));
                }
                if self.mu == 0.0 {
                    return bad("lemma1 needs mu != 0".into());
                }
                if !(self.alpha > 0.0 && self.alpha < 1.0) {
                    return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
                }
                if self.instances == 0 {
                    return bad("lemma1 needs at least one instance".into());
                }
            }
            Experiment::Harris => {
                if self.max_dim < 2 {
                    return bad(format!("max_dim must be at least 2, got {}", self.max_dim));
                }
                if self.instances == 0 {
                    return bad("harris needs at least one instance".into());
                }
            }
            _ => {}
        }
        let needs_samples = !matches!(self.experiment, Experiment::Lemma1 | Experiment::Harris);
        if needs_samples && spec.is_disordered() && self.samples < 2 {
            return bad(format!(
                "disordered models need at least 2 samples, got {}",
                self.samples
            ));
        }
        let probe = DisorderStream::new(self.seed, 0);
        for &size in &self.sizes {
            spec.build(size, &probe).map_err(|e| match e {
                e if e.is_numerical() => RunError::Numerical(format!("building N={size}: {e}")),
                e => RunError::Config(format!("N={size}: {e}")),
            })?;
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Numerical(String),
    #[error("output error: {0}")]
    Output(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Numerical(_) => EXIT_NUMERICAL,
            RunError::Config(_) | RunError::Output(_) => EXIT_INVALID,
        }
    }

    fn at(point: &str, e: Error) -> Self {
        if e.is_numerical() {
            RunError::Numerical(format!("numerical failure at {point}: {e}"))
        } else {
            RunError::Config(format!("at {point}: {e}"))
        }
    }
}

fn point(size: usize, beta: f64, lambda: f64) -> String {
    format!("N={size}, beta={beta}, lambda={lambda}")
}

/// Runs the configured experiment and returns its rows in deterministic
/// order (sizes, then betas, then lambdas, as listed).
pub fn execute(config: &RunConfig) -> Result<Vec<ScanRow>, RunError> {
    let spec = config.model_spec();
    let mut rows = Vec::new();
    let seed = config.seed;
    let m = config.samples;
    match config.experiment {
        Experiment::VarianceScan => {
            for &beta in &config.betas {
                for &lambda in &config.lambdas {
                    for &size in &config.sizes {
                        let r = verify::variance_scan(&spec, &[size], beta, lambda, m, seed)
                            .map_err(|e| RunError::at(&point(size, beta, lambda), e))?;
                        rows.extend(r);
                    }
                }
            }
        }
        Experiment::Guerra => {
            for &beta in &config.betas {
                for &lambda in &config.lambdas {
                    let reports = verify::guerra_compare(
                        config.replicas,
                        &[beta],
                        &[lambda],
                        &config.sizes,
                        m,
                        seed,
                    )
                    .map_err(|e| RunError::at(&format!("beta={beta}, lambda={lambda}"), e))?;
                    rows.extend(reports.iter().flat_map(|r| r.rows()));
                }
            }
        }
        Experiment::Lemma1 => {
            for &size in &config.sizes {
                let instances = if spec.is_disordered() {
                    config.instances
                } else {
                    1
                };
                for index in 0..instances as u64 {
                    let model = spec
                        .build(size, &DisorderStream::new(seed, index))
                        .map_err(|e| RunError::at(&format!("N={size}"), e))?;
                    for &beta in &config.betas {
                        for &lambda in &config.lambdas {
                            let s = Lemma1Settings {
                                order: config.order,
                                mu: config.mu,
                                alpha: config.alpha,
                                beta,
                                lambda,
                                nodes: config.quad_nodes,
                                step: config.step,
                            };
                            let row = verify::lemma1_bound_check(&model, &s)
                                .map_err(|e| RunError::at(&point(size, beta, lambda), e))?;
                            rows.push(row);
                        }
                    }
                }
            }
        }
        Experiment::PsiVariance => {
            for &size in &config.sizes {
                for &beta in &config.betas {
                    for &lambda in &config.lambdas {
                        let row = verify::psi_variance_check(&spec, size, beta, lambda, m, seed)
                            .map_err(|e| RunError::at(&point(size, beta, lambda), e))?;
                        rows.push(row);
                    }
                }
            }
        }
        Experiment::Dichotomy => {
            for &beta in &config.betas {
                let r = verify::overlap_dichotomy(&config.sizes, beta, &config.lambdas, m, seed)
                    .map_err(|e| RunError::at(&format!("beta={beta}"), e))?;
                rows.extend(r);
            }
        }
        Experiment::LimitProbe => {
            for &beta in &config.betas {
                let r =
                    verify::limit_order_probe(&spec, &config.sizes, &config.lambdas, beta, m, seed)
                        .map_err(|e| RunError::at(&format!("beta={beta}"), e))?;
                rows.extend(r);
            }
        }
        Experiment::Assumptions => {
            for &beta in &config.betas {
                for &lambda in &config.lambdas {
                    let rep = verify::assumption_suite(&spec, &config.sizes, beta, lambda, m, seed)
                        .map_err(|e| RunError::at(&format!("beta={beta}, lambda={lambda}"), e))?;
                    rows.extend(rep.rows);
                }
            }
        }
        Experiment::Harris => {
            for &beta in &config.betas {
                let r = verify::harris_random(config.instances, config.max_dim, beta, seed)
                    .map_err(|e| RunError::at(&format!("random pairs, beta={beta}"), e))?;
                rows.extend(r);
                for &size in &config.sizes {
                    let model = spec
                        .build(size, &DisorderStream::new(seed, 0))
                        .map_err(|e| RunError::at(&format!("N={size}"), e))?;
                    for &lambda in &config.lambdas {
                        let r = verify::harris_model(&model, beta, lambda)
                            .map_err(|e| RunError::at(&point(size, beta, lambda), e))?;
                        rows.extend(r);
                    }
                }
            }
        }
    }
    Ok(rows)
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes the rows with the fixed header; numbers carry 17 significant digits.
pub fn write_results<W: std::io::Write>(
    writer: W,
    experiment: Experiment,
    rows: &[ScanRow],
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
        w.write_record([
            experiment.name().to_string(),
            r.model.clone(),
            r.sites.to_string(),
            r.replicas.to_string(),
            num(r.beta),
            num(r.lambda),
            num(r.mu),
            num(r.alpha),
            r.observable.clone(),
            num(r.estimate.mean),
            num(r.estimate.variance),
            num(r.estimate.stderr),
            r.estimate.count.to_string(),
            opt(r.bound),
            opt(r.ratio()),
            r.pass.map(|p| p.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    #[serde(flatten)]
    config: &'a RunConfig,
    tool_version: &'static str,
    wall_time_seconds: f64,
}

/// Outcome of a completed run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub rows: Vec<ScanRow>,
    pub checked: usize,
    pub failed: usize,
    pub results_path: PathBuf,
    pub manifest_path: PathBuf,
}

impl RunSummary {
    pub fn exit_code(&self) -> i32 {
        if self.failed == 0 {
            EXIT_OK
        } else {
            EXIT_BOUND_FAILURE
        }
    }
}

/// Executes `config` and writes `results.csv` and `manifest.json` into
/// `config.out`.
pub fn run(config: &RunConfig) -> Result<RunSummary, RunError> {
    config.validate()?;
    let start = Instant::now();
    let rows = execute(config)?;
    let wall = start.elapsed().as_secs_f64();

    let out_err = |e: &dyn fmt::Display| RunError::Output(format!("{}: {e}", config.out.display()));
    fs::create_dir_all(&config.out).map_err(|e| out_err(&e))?;
    let results_path = config.out.join("results.csv");
    let file = fs::File::create(&results_path).map_err(|e| out_err(&e))?;
    write_results(file, config.experiment, &rows).map_err(|e| out_err(&e))?;

    let manifest_path = config.out.join("manifest.json");
    let manifest = Manifest {
        config,
        tool_version: TOOL_VERSION,
        wall_time_seconds: wall,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| out_err(&e))?;
    fs::write(&manifest_path, json + "\n").map_err(|e| out_err(&e))?;

    let checked = rows.iter().filter(|r| r.pass.is_some()).count();
    let failed = rows.iter().filter(|r| r.pass == Some(false)).count();
    Ok(RunSummary {
        rows,
        checked,
        failed,
        results_path,
        manifest_path,
    })
}

#[derive(Debug, Parser)]
#[command(name = "selfavg", version, about = "Finite-size self-averaging checks")]
pub struct Cli {
    /// TOML or JSON run configuration (a manifest.json works too).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub experiment: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub quiet: bool,
    /// Print the experiments with their defaults and exit.
    #[arg(long)]
    pub list: bool,
}

impl Cli {
    pub fn config(&self) -> Result<RunConfig, RunError> {
        let mut file = match &self.config {
            Some(path) => ConfigFile::read(path)?,
            None => ConfigFile::default(),
        };
        if let Some(name) = &self.experiment {
            file.experiment = Some(name.parse().map_err(RunError::Config)?);
        }
        if self.seed.is_some() {
            file.seed = self.seed;
        }
        if self.out.is_some() {
            file.out.clone_from(&self.out);
        }
        if self.samples.is_some() {
            file.samples = self.samples;
        }
        file.resolve()
    }
}

/// Parses `args` (program name first), runs, and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() {
                EXIT_INVALID
            } else {
                EXIT_OK
            };
            let _ = e.print();
            return code;
        }
    };
    if cli.list {
        print!("{}", list_experiments());
        return EXIT_OK;
    }
    let outcome = cli.config().and_then(|c| run(&c));
    match outcome {
        Ok(summary) => {
            if !cli.quiet {
                println!(
                    "{} rows, {} bound checks, {} failed -> {}",
                    summary.rows.len(),
                    summary.checked,
                    summary.failed,
                    summary.results_path.display()
                );
                for r in summary.rows.iter().filter(|r| r.pass == Some(false)) {
                    println!(
                        "FAIL {} {} N={} beta={} lambda={}: {:.6e} > {:.6e}",
                        r.model,
                        r.observable,
                        r.sites,
                        r.beta,
                        r.lambda,
                        r.estimate.mean,
                        r.bound.unwrap_or(f64::NAN)
                    );
                }
            }
            summary.exit_code()
        }
        Err(e) => {
            eprintln!("selfavg: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_unique_and_round_trip() {
        let mut names: Vec<_> = Experiment::ALL.iter().map(|e| e.name()).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), 8);
        for e in Experiment::ALL {
            assert_eq!(e.name().parse::<Experiment>().unwrap(), e);
            let toml = format!("experiment = \"{}\"", e.name().replace('-', "_"));
            let c = RunConfig::from_str_format(&toml, false).unwrap();
            assert_eq!(c.experiment, e);
        }
        let listing = list_experiments();
        for n in names {
            assert!(listing.contains(n));
        }
    }

    #[test]
    fn empty_beta_list_rejected() {
        let err =
            RunConfig::from_str_format("experiment = \"guerra\"\nbetas = []", false).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_INVALID);
    }

    #[test]
    fn oversized_models_rejected_before_running() {
        let err = RunConfig::from_str_format(
            "experiment = \"variance-scan\"\nmodel = \"heisenberg\"\nsizes = [14]",
            false,
        )
        .unwrap_err();
        assert_eq!(err.exit_code(), EXIT_INVALID);
        assert!(
            RunConfig::from_str_format("experiment = \"guerra\"\nsizes = [15]", false).is_err()
        );
    }

    #[test]
    fn rem_variance_scan_defaults_to_half_lambda() {
        let c =
            RunConfig::from_str_format(r#"{"experiment": "variance_scan", "model": "rem"}"#, true)
                .unwrap();
        assert_eq!(c.lambdas, vec![0.5]);
    }

    #[test]
    fn failed_check_sets_exit_one() {
        let key = verify::RowKey::new(Family::Rem, 4, 2, 1.0, 0.0);
        let bad = key.checked("x", crate::disorder::EstimatorResult::exact(2.0), 1.0, 0.0);
        let summary = RunSummary {
            rows: vec![bad],
            checked: 1,
            failed: 1,
            results_path: PathBuf::new(),
            manifest_path: PathBuf::new(),
        };
        assert_eq!(summary.exit_code(), EXIT_BOUND_FAILURE);
    }

    #[test]
    fn numbers_keep_seventeen_digits() {
        let v = 0.1_f64 + 0.2;
        assert_eq!(num(v).parse::<f64>().unwrap(), v);
    }

    #[test]
    fn manifest_reparses_to_same_config() {
        let c = Experiment::Lemma1.defaults();
        let manifest = Manifest {
            config: &c,
            tool_version: TOOL_VERSION,
            wall_time_seconds: 1.5,
        };
        let json = serde_json::to_string(&manifest).unwrap();
        assert_eq!(RunConfig::from_str_format(&json, true).unwrap(), c);
    }
}
