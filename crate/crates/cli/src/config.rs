//! Experiment configuration.
//!
//! A config is a TOML document (JSON is accepted when the file ends in
//! `.json`). Tables:
//!
//! ```toml
//! study = "energy-law"            # optional; must match the subcommand
//!
//! [problem]
//! sigma = 1.0                     # required, constant damping σ0 > 0
//! lambda1 = 1.0                   # required
//! lambda2 = [1.0, 1.0, 1.0]       # required
//! trunc_b = 4.0                   # clip level parameter b
//! domain = { lo = [0, 0, 0], hi = [1, 1, 1] }
//! q1 = { kind = "power_law", per_axis = 5, r = 3.0 }
//! q2 = { kind = "explicit", modes = [[1, 1, 1]], eigenvalues = [1.0] }
//! # or { kind = "none" }
//!
//! [discretization]
//! kind = "fd"                     # required: "fd" or "dg"
//! cells = [8, 8, 8]               # required
//! quadrature = { kind = "keast" } # dg only; or { kind = "conical", order = 4 }
//!
//! [stepper]
//! dt = 0.01                       # required
//! solver = "fixed_point"          # or "krylov"
//! tol = 1e-10
//! max_iter = 200
//! restart = 30
//!
//! [monte_carlo]
//! trajectories = 10
//! seed_base = 0                   # trajectory k uses seed_base + k
//! execution = "parallel"          # or "sequential"
//!
//! [initial]
//! kind = "sine"                   # or "zero"
//! amplitude = 1.0
//!
//! [output]
//! dir = "out"
//! ```
//!
//! Study tables, each required by its subcommand:
//!
//! * `[simulate]`: `steps`, `observables = [{ kind = "norm" }, { kind = "probe", point = [..], component = 0 }]`
//! * `[energy_law]`, `[msymp_check]`: `steps`, optional `threshold`
//! * `[convergence_dt]`: `levels`, optional `t_final`, `reference`
//! * `[convergence_h]`: `nx`, optional `nx_reference`, `ny`, `nz`, `dt`, `t_final`, `comparisons`,
//!   `quadrature`, `amplitude`; dG meshes refined along `x` from `E_z = a sin(πx') sin(πy')`
//! * `[ergodicity]`: optional `times`, `amplitude`, `probe`, `probe_component`
//! * `[operator_check]`: optional `samples`, `steps`

use std::path::{Path, PathBuf};

use ergomax_core::dg::QuadratureKind;
use ergomax_core::ensemble::Execution;
use ergomax_core::model::{Domain, NoiseSpec, ProblemSpec, Sigma};
use ergomax_core::stepper::{SolverKind, StepperConfig};
use ergomax_core::studies::{ErgodicitySettings, MonteCarlo, SpatialLadder, TemporalLadder};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Study {
    Simulate,
    ConvergenceDt,
    ConvergenceH,
    Ergodicity,
    EnergyLaw,
    MsympCheck,
    OperatorCheck,
}

impl Study {
    pub fn name(self) -> &'static str {
        match self {
            Study::Simulate => "simulate",
            Study::ConvergenceDt => "convergence-dt",
            Study::ConvergenceH => "convergence-h",
            Study::Ergodicity => "ergodicity",
            Study::EnergyLaw => "energy-law",
            Study::MsympCheck => "msymp-check",
            Study::OperatorCheck => "operator-check",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub study: Option<Study>,
    pub problem: ProblemTable,
    pub discretization: Option<DiscretizationTable>,
    pub stepper: Option<StepperTable>,
    #[serde(default)]
    pub monte_carlo: MonteCarlo,
    #[serde(default)]
    pub initial: InitialTable,
    #[serde(default)]
    pub output: OutputTable,
    pub simulate: Option<SimulateTable>,
    pub energy_law: Option<CheckTable>,
    pub msymp_check: Option<CheckTable>,
    pub convergence_dt: Option<ConvergenceDtTable>,
    pub convergence_h: Option<ConvergenceHTable>,
    pub ergodicity: Option<ErgodicitySettings>,
    pub operator_check: Option<OperatorCheckTable>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainTable {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseTable {
    PowerLaw { per_axis: u32, r: f64 },
    Explicit { modes: Vec<[u32; 3]>, eigenvalues: Vec<f64> },
    None,
}

impl Default for NoiseTable {
    fn default() -> Self {
        NoiseTable::PowerLaw { per_axis: 5, r: 3.0 }
    }
}

impl NoiseTable {
    fn build(&self) -> ergomax_core::Result<NoiseSpec> {
        match self {
            NoiseTable::PowerLaw { per_axis, r } => NoiseSpec::power_law(*per_axis, *r),
            NoiseTable::Explicit { modes, eigenvalues } => NoiseSpec::new(modes.clone(), eigenvalues.clone()),
            NoiseTable::None => Ok(NoiseSpec::empty()),
        }
    }
}

fn default_trunc_b() -> f64 {
    4.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemTable {
    pub sigma: f64,
    pub lambda1: f64,
    pub lambda2: [f64; 3],
    #[serde(default = "default_trunc_b")]
    pub trunc_b: f64,
    pub domain: Option<DomainTable>,
    #[serde(default)]
    pub q1: NoiseTable,
    #[serde(default)]
    pub q2: NoiseTable,
}

impl ProblemTable {
    pub fn build(&self) -> ergomax_core::Result<ProblemSpec> {
        let domain = self
            .domain
            .as_ref()
            .map_or_else(Domain::unit, |d| Domain::new(d.lo, d.hi));
        let spec = ProblemSpec {
            domain,
            sigma: Sigma::Constant(self.sigma),
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            q1: self.q1.build()?,
            q2: self.q2.build()?,
            trunc_b: self.trunc_b,
        };
        ergomax_core::model::validate(&spec).into_result()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscKind {
    Fd,
    Dg,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscretizationTable {
    pub kind: DiscKind,
    pub cells: [usize; 3],
    #[serde(default)]
    pub quadrature: QuadratureKind,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepperTable {
    pub dt: f64,
    pub solver: Option<SolverKind>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub restart: Option<usize>,
}

impl StepperTable {
    pub fn build(&self) -> StepperConfig {
        let d = StepperConfig::with_dt(self.dt);
        StepperConfig {
            dt: self.dt,
            solver: self.solver.unwrap_or(d.solver),
            tol: self.tol.unwrap_or(d.tol),
            max_iter: self.max_iter.unwrap_or(d.max_iter),
            restart: self.restart.unwrap_or(d.restart),
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialTable {
    Zero,
    Sine { amplitude: f64 },
}

impl Default for InitialTable {
    fn default() -> Self {
        InitialTable::Sine { amplitude: 1.0 }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputTable {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObservableTable {
    Norm,
    Probe { point: [f64; 3], component: usize },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateTable {
    pub steps: u64,
    #[serde(default)]
    pub observables: Vec<ObservableTable>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckTable {
    pub steps: u64,
    /// Largest accepted normalized residual; defaults to `100 · stepper.tol`.
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceDtTable {
    pub levels: Vec<u32>,
    pub t_final: Option<f64>,
    pub reference: Option<u32>,
}

impl ConvergenceDtTable {
    pub fn build(&self, tol: f64) -> TemporalLadder {
        let d = TemporalLadder::default();
        TemporalLadder {
            t_final: self.t_final.unwrap_or(d.t_final),
            levels: self.levels.clone(),
            reference: self.reference.unwrap_or(d.reference),
            tol,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceHTable {
    pub nx: Vec<usize>,
    pub nx_reference: Option<usize>,
    pub ny: Option<usize>,
    pub nz: Option<usize>,
    pub dt: Option<f64>,
    pub t_final: Option<f64>,
    pub comparisons: Option<usize>,
    pub quadrature: Option<QuadratureKind>,
    /// Amplitude `a` of the initial field `E_z = a sin(πx') sin(πy')`.
    pub amplitude: Option<f64>,
}

impl ConvergenceHTable {
    pub fn build(&self, tol: f64) -> SpatialLadder {
        let d = SpatialLadder::default();
        SpatialLadder {
            nx: self.nx.clone(),
            nx_reference: self.nx_reference.unwrap_or(d.nx_reference),
            ny: self.ny.unwrap_or(d.ny),
            nz: self.nz.unwrap_or(d.nz),
            dt: self.dt.unwrap_or(d.dt),
            t_final: self.t_final.unwrap_or(d.t_final),
            comparisons: self.comparisons.unwrap_or(d.comparisons),
            quadrature: self.quadrature.unwrap_or(d.quadrature),
            tol,
        }
    }
}

fn default_samples() -> usize {
    1000
}

fn default_norm_steps() -> usize {
    5
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorCheckTable {
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Power of the step map whose norm is estimated.
    #[serde(default = "default_norm_steps")]
    pub steps: usize,
}

/// Failure to turn a file into a validated config; exit status 2.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config parse error at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("missing required field `{0}`")]
    Missing(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl ConfigError {
    pub fn kind(&self) -> &'static str {
        match self {
            ConfigError::Read { .. } => "config_read",
            ConfigError::Parse { .. } => "config_parse",
            ConfigError::Missing(_) => "missing_field",
            ConfigError::Invalid(_) => "validation",
        }
    }
}

impl From<ergomax_core::Error> for ConfigError {
    fn from(e: ergomax_core::Error) -> Self {
        ConfigError::Invalid(e.to_string())
    }
}

/// The raw bytes together with the parsed config.
pub struct LoadedConfig {
    pub raw: Vec<u8>,
    pub config: ExperimentConfig,
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

/// Turns serde's `missing field `x`` message into the dotted path of the field.
fn classify(path: String, message: String) -> ConfigError {
    let missing = message
        .find("missing field `")
        .map(|i| &message[i + "missing field `".len()..])
        .and_then(|rest| rest.split('`').next());
    match missing {
        Some(field) => {
            let full = if path.is_empty() || path == "." {
                field.to_string()
            } else {
                format!("{path}.{field}")
            };
            ConfigError::Missing(full)
        }
        None => ConfigError::Parse { path, message },
    }
}

pub fn parse(text: &str, json: bool) -> Result<ExperimentConfig, ConfigError> {
    if json {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            classify(path, e.into_inner().to_string())
        })
    } else {
        let de = toml::Deserializer::parse(text).map_err(|e| ConfigError::Parse {
            path: ".".into(),
            message: e.to_string(),
        })?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            classify(path, e.into_inner().to_string())
        })
    }
}

pub fn load(path: &Path) -> Result<LoadedConfig, ConfigError> {
    let raw = std::fs::read(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let text = String::from_utf8_lossy(&raw);
    let config = parse(&text, is_json(path))?;
    Ok(LoadedConfig { raw, config })
}

impl ExperimentConfig {
    pub fn stepper(&self) -> Result<StepperConfig, ConfigError> {
        let t = self.stepper.as_ref().ok_or_else(|| ConfigError::Missing("stepper.dt".into()))?;
        let cfg = t.build();
        cfg.validate(self.problem.sigma)?;
        Ok(cfg)
    }

    pub fn discretization(&self) -> Result<&DiscretizationTable, ConfigError> {
        self.discretization
            .as_ref()
            .ok_or_else(|| ConfigError::Missing("discretization.kind".into()))
    }

    pub fn monte_carlo(&self, seed: Option<u64>) -> MonteCarlo {
        MonteCarlo {
            seed_base: seed.unwrap_or(self.monte_carlo.seed_base),
            ..self.monte_carlo
        }
    }

    /// Checks the study tag and that the study's table exists.
    pub fn check_study(&self, study: Study) -> Result<(), ConfigError> {
        if let Some(s) = self.study {
            if s != study {
                return Err(ConfigError::Invalid(format!(
                    "config declares study `{}` but `{}` was requested",
                    s.name(),
                    study.name()
                )));
            }
        }
        let (present, field) = match study {
            Study::Simulate => (self.simulate.is_some(), "simulate.steps"),
            Study::EnergyLaw => (self.energy_law.is_some(), "energy_law.steps"),
            Study::MsympCheck => (self.msymp_check.is_some(), "msymp_check.steps"),
            Study::ConvergenceDt => (self.convergence_dt.is_some(), "convergence_dt.levels"),
            Study::ConvergenceH => (self.convergence_h.is_some(), "convergence_h.nx"),
            Study::Ergodicity | Study::OperatorCheck => (true, ""),
        };
        if !present {
            return Err(ConfigError::Missing(field.into()));
        }
        if self.monte_carlo.trajectories == 0 {
            return Err(ConfigError::Invalid("monte_carlo.trajectories must be positive".into()));
        }
        Ok(())
    }
}

pub fn execution_label(e: Execution) -> &'static str {
    match e {
        Execution::Sequential => "sequential",
        Execution::Parallel => "parallel",
    }
}
