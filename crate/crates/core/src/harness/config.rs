//! Experiment configuration.
//!
//! A TOML file with optional sections; every key has a per-experiment
//! default, and command-line flags override the file.
//!
//! ```toml
//! experiment = "converge"        # converge | efficiency | stability | run
//! case = "convergence"           # convergence | efficiency | stability
//!
//! [mesh]
//! divisions = [20, 40, 60]       # cells per side
//! dt = [0.00625, 0.003125, 0.0020833333333333333]
//!
//! [params]                       # overrides of the case defaults
//! M = 16.0
//! N = 20.0
//! b = 1.0
//! T = 1.0
//! J = 2
//! epsilons = [1e-3, -1e-3]
//!
//! [solver]
//! mode = "serial"                # serial | parallel
//! threads = 4
//! scheme = "ensemble"            # ensemble | serial (run only)
//! cfl_threshold = 1.0
//! cfl_constant = 1.0
//!
//! [output]
//! dir = "results"
//! stride = 1
//! seed = 42
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::manufactured::{case_by_name, ManufacturedCase};
use crate::stepper::{CflSettings, Scheme};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "ENSEMBLE_MHD_OUT";
pub const DEFAULT_OUT_DIR: &str = "results";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Converge,
    Efficiency,
    Stability,
    Run,
}

impl Experiment {
    pub const ALL: [Experiment; 4] = [
        Experiment::Converge,
        Experiment::Efficiency,
        Experiment::Stability,
        Experiment::Run,
    ];

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == name)
            .ok_or_else(|| Error::config("experiment", format!("unknown experiment `{name}`")))
    }

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Converge => "converge",
            Experiment::Efficiency => "efficiency",
            Experiment::Stability => "stability",
            Experiment::Run => "run",
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    experiment: Option<Experiment>,
    case: Option<String>,
    #[serde(default)]
    mesh: MeshSection,
    #[serde(default)]
    params: ParamOverrides,
    #[serde(default)]
    solver: SolverSection,
    #[serde(default)]
    output: OutputSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct MeshSection {
    divisions: Option<Vec<usize>>,
    dt: Option<Vec<f64>>,
}

/// Overrides of a case's model parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamOverrides {
    #[serde(rename = "M")]
    pub hartmann: Option<f64>,
    #[serde(rename = "N")]
    pub interaction: Option<f64>,
    pub b: Option<f64>,
    #[serde(rename = "T")]
    pub final_time: Option<f64>,
    #[serde(rename = "J")]
    pub members: Option<usize>,
    pub epsilons: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SolverSection {
    mode: Option<ExecMode>,
    threads: Option<usize>,
    scheme: Option<Scheme>,
    cfl_threshold: Option<f64>,
    cfl_constant: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputSection {
    dir: Option<PathBuf>,
    stride: Option<usize>,
    seed: Option<u64>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct CliOverrides {
    pub out_dir: Option<PathBuf>,
    pub serial: bool,
    pub threads: Option<usize>,
    pub cfl_threshold: Option<f64>,
}

/// Fully resolved settings for one experiment.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub case: String,
    /// Cells per side of each ladder row.
    pub divisions: Vec<usize>,
    /// Time step of each ladder row.
    pub dt: Vec<f64>,
    pub overrides: ParamOverrides,
    pub mode: ExecMode,
    pub threads: Option<usize>,
    pub scheme: Scheme,
    pub cfl: CflSettings,
    pub out_dir: PathBuf,
    pub stride: usize,
    pub seed: u64,
}

impl ExperimentConfig {
    /// Defaults reproducing the standard setup of each experiment.
    pub fn defaults(experiment: Experiment) -> Self {
        let (case, divisions, dt): (&str, Vec<usize>, Vec<f64>) = match experiment {
            Experiment::Converge => ("convergence", vec![20, 40, 60], vec![1.0 / 160.0, 1.0 / 320.0, 1.0 / 480.0]),
            Experiment::Efficiency => ("efficiency", vec![40], vec![1.0 / 320.0]),
            Experiment::Stability => ("stability", vec![10, 10, 10], vec![0.1, 0.01, 0.001]),
            Experiment::Run => ("convergence", vec![20], vec![1.0 / 160.0]),
        };
        ExperimentConfig {
            experiment,
            case: case.into(),
            divisions,
            dt,
            overrides: ParamOverrides::default(),
            mode: ExecMode::Serial,
            threads: None,
            scheme: Scheme::Ensemble,
            cfl: CflSettings::default(),
            out_dir: default_out_dir(),
            stride: 1,
            seed: 42,
        }
    }

    /// Parses TOML text on top of the defaults for `experiment`. The file's
    /// own `experiment` key, if present, must agree.
    pub fn from_toml(experiment: Experiment, text: &str) -> Result<Self> {
        let file: FileConfig = toml::from_str(text).map_err(|e| {
            let field = e
                .span()
                .map(|s| text[s].lines().next().unwrap_or("").trim().to_string())
                .filter(|s| !s.is_empty())
                .unwrap_or_else(|| "<file>".into());
            Error::config(field, e.message().to_string())
        })?;
        if let Some(e) = file.experiment {
            if e != experiment {
                return Err(Error::config(
                    "experiment",
                    format!("file is for '{}', command is '{}'", e.name(), experiment.name()),
                ));
            }
        }
        let mut cfg = Self::defaults(experiment);
        if let Some(c) = file.case {
            cfg.case = c;
        }
        if let Some(d) = file.mesh.divisions {
            cfg.divisions = d;
        }
        if let Some(d) = file.mesh.dt {
            cfg.dt = d;
        }
        cfg.overrides = file.params;
        if let Some(m) = file.solver.mode {
            cfg.mode = m;
        }
        cfg.threads = file.solver.threads.or(cfg.threads);
        if let Some(s) = file.solver.scheme {
            cfg.scheme = s;
        }
        if let Some(x) = file.solver.cfl_threshold {
            cfg.cfl.threshold = x;
        }
        if let Some(x) = file.solver.cfl_constant {
            cfg.cfl.constant = x;
        }
        if let Some(d) = file.output.dir {
            cfg.out_dir = d;
        }
        if let Some(s) = file.output.stride {
            cfg.stride = s;
        }
        if let Some(s) = file.output.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }

    pub fn load(experiment: Experiment, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("--config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(experiment, &text)
    }

    pub fn apply_cli(&mut self, cli: &CliOverrides) {
        if let Some(d) = &cli.out_dir {
            self.out_dir = d.clone();
        }
        if let Some(t) = cli.threads {
            self.threads = Some(t);
            if t > 1 {
                self.mode = ExecMode::Parallel;
            }
        }
        if cli.serial {
            self.mode = ExecMode::Serial;
        }
        if let Some(x) = cli.cfl_threshold {
            self.cfl.threshold = x;
        }
    }

    /// Checks every field; errors name the offending key.
    pub fn validate(&self) -> Result<()> {
        if self.divisions.is_empty() {
            return Err(Error::config("mesh.divisions", "ladder is empty"));
        }
        if self.divisions.len() != self.dt.len() {
            return Err(Error::config(
                "mesh.dt",
                format!("{} time steps for {} mesh rows", self.dt.len(), self.divisions.len()),
            ));
        }
        if self.divisions.contains(&0) {
            return Err(Error::config("mesh.divisions", "division counts must be positive"));
        }
        if let Some(d) = self.dt.iter().find(|d| !(d.is_finite() && **d > 0.0)) {
            return Err(Error::config("mesh.dt", format!("time steps must be positive, got {d}")));
        }
        if self.stride == 0 {
            return Err(Error::config("output.stride", "stride must be at least 1"));
        }
        if self.threads == Some(0) {
            return Err(Error::config("solver.threads", "thread count must be at least 1"));
        }
        if !(self.cfl.threshold > 0.0) {
            return Err(Error::config("solver.cfl_threshold", "must be positive"));
        }
        if !(self.cfl.constant > 0.0) {
            return Err(Error::config("solver.cfl_constant", "must be positive"));
        }
        if self.experiment == Experiment::Converge && self.divisions.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("mesh.divisions", "convergence ladder must refine strictly"));
        }
        let case = self.resolve_case()?;
        if matches!(self.experiment, Experiment::Converge | Experiment::Efficiency) && !case.has_exact() {
            return Err(Error::config("case", format!("case '{}' has no exact solution", case.name)));
        }
        for &dt in &self.dt {
            case.params(dt, self.final_time()).validate()?;
        }
        Ok(())
    }

    pub fn final_time(&self) -> f64 {
        self.overrides.final_time.unwrap_or(1.0)
    }

    /// The named case with parameter overrides applied.
    pub fn resolve_case(&self) -> Result<ManufacturedCase> {
        let mut case = case_by_name(&self.case)?;
        let o = &self.overrides;
        if let Some(m) = o.hartmann {
            case.hartmann = m;
        }
        if let Some(n) = o.interaction {
            case.interaction = n;
        }
        if let Some(b) = o.b {
            case.b = b;
        }
        if let Some(e) = &o.epsilons {
            if e.is_empty() {
                return Err(Error::config("params.epsilons", "list is empty"));
            }
            case.epsilons = e.clone();
        }
        if let Some(j) = o.members {
            if j == 0 {
                return Err(Error::config("params.J", "ensemble needs at least one member"));
            }
            if o.epsilons.is_some() && j != case.epsilons.len() {
                return Err(Error::config(
                    "params.J",
                    format!("J = {j} but {} perturbations given", case.epsilons.len()),
                ));
            }
            if j > case.epsilons.len() {
                return Err(Error::config(
                    "params.J",
                    format!("case '{}' defines only {} perturbations", case.name, case.epsilons.len()),
                ));
            }
            case.epsilons.truncate(j);
        }
        Ok(case)
    }
}

fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}
