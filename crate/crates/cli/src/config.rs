//! Experiment configuration, defaults and pure validation.

use std::fmt;
use std::path::PathBuf;

use grushin_core::control::{catalog, CatalogOverrides, ControlProblem, AUDIT_PX};
use grushin_core::ergodic::{CorrectorOptions, DEFAULT_DELTAS};
use grushin_core::perturb::{cfl_bound, default_fast_grid, SlowGrid};
use grushin_core::simulate::SimConfig;
use grushin_core::{DynamicsSpec, Grid2D};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Simulate,
    Measure,
    Ergodic,
    Cell,
    Effective,
    Perturb,
    All,
}

impl Command {
    /// Stages executed for this command, in dependency order.
    pub fn stages(self) -> Vec<Command> {
        use Command::*;
        match self {
            All => vec![Simulate, Measure, Ergodic, Cell, Effective, Perturb],
            other => vec![other],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Measure => "measure",
            Command::Ergodic => "ergodic",
            Command::Cell => "cell",
            Command::Effective => "effective",
            Command::Perturb => "perturb",
            Command::All => "all",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridsConfig {
    /// Fast grid for simulation histograms, the density and cell problems.
    /// Default: half-width `6 / sqrt(alpha)`, 241 x 241.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fast: Option<Grid2D>,
    /// Fast grid of the epsilon-problem. Default: `4 / sqrt(alpha)`, 61 x 61.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturb_fast: Option<Grid2D>,
    /// Default: `[-4, 4]`, 81 nodes, 200 steps over the problem horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slow: Option<SlowGrid>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub catalog_id: String,
    #[serde(default)]
    pub overrides: CatalogOverrides,
    /// `(x, p, X)` points at which the cell problem is frozen.
    #[serde(default = "default_cell_points")]
    pub cell_points: Vec<[f64; 3]>,
}

fn default_cell_points() -> Vec<[f64; 3]> {
    AUDIT_PX.iter().map(|&(p, xx)| [0.0, p, xx]).collect()
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            catalog_id: "bench-A".into(),
            overrides: CatalogOverrides::default(),
            cell_points: default_cell_points(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorrectorSettings {
    pub holder_gamma: f64,
    pub holder_m: f64,
    pub holder_pairs: usize,
    pub seed: u64,
}

impl Default for CorrectorSettings {
    fn default() -> Self {
        let d = CorrectorOptions::default();
        Self {
            holder_gamma: d.holder_gamma,
            holder_m: d.holder_m,
            holder_pairs: d.holder_pairs,
            seed: d.seed,
        }
    }
}

/// Thresholds of the stage-level checks. A run exits with status 0 only
/// if every check of every executed stage passes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChecksConfig {
    /// KS distance of the simulated `y1` marginal to `N(0, 1/alpha)`.
    pub ks_max: f64,
    /// Relative tolerance on `E[y1^2]` and `E[y2^2]`.
    pub moment_rel_tol: f64,
    /// Absolute tolerance on `E[y1 y2]`.
    pub cross_abs_tol: f64,
    /// Relative tolerance of each ergodic route against the exact constant.
    pub ergodic_rel_tol: f64,
    /// Cell stage: `|lambda - Hbar| < lambda_rel_tol |Hbar|`, or
    /// `< lambda_abs_tol` when `|Hbar| < lambda_abs_tol / lambda_rel_tol`.
    pub lambda_rel_tol: f64,
    pub lambda_abs_tol: f64,
    /// Perturb stage: final window error over the window oscillation of `V`.
    pub perturb_final_fraction: f64,
}

impl Default for ChecksConfig {
    fn default() -> Self {
        Self {
            ks_max: 0.01,
            moment_rel_tol: 0.03,
            cross_abs_tol: 0.01,
            ergodic_rel_tol: 0.02,
            lambda_rel_tol: 0.02,
            lambda_abs_tol: 0.01,
            perturb_final_fraction: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Command,
    pub dynamics: DynamicsSpec,
    /// Default: 32 paths of `4e6` recorded steps at `dt = 1e-3 / alpha`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimConfig>,
    #[serde(default)]
    pub grids: GridsConfig,
    #[serde(default)]
    pub problem: ProblemConfig,
    #[serde(default = "default_deltas")]
    pub delta_schedule: Vec<f64>,
    #[serde(default = "default_epsilons")]
    pub epsilons: Vec<f64>,
    #[serde(default)]
    pub corrector: CorrectorSettings,
    #[serde(default)]
    pub checks: ChecksConfig,
    pub output_dir: PathBuf,
}

fn default_deltas() -> Vec<f64> {
    DEFAULT_DELTAS.to_vec()
}

fn default_epsilons() -> Vec<f64> {
    vec![0.5, 0.2, 0.1, 0.05]
}

impl ExperimentConfig {
    /// Every field spelled out at its default value for `alpha = 2`.
    pub fn reference() -> Self {
        let mut cfg = Self {
            command: Command::All,
            dynamics: DynamicsSpec { alpha: 2.0, rho: 0.0 },
            sim: None,
            grids: GridsConfig::default(),
            problem: ProblemConfig::default(),
            delta_schedule: default_deltas(),
            epsilons: default_epsilons(),
            corrector: CorrectorSettings::default(),
            checks: ChecksConfig::default(),
            output_dir: PathBuf::from("out"),
        };
        cfg.sim = Some(cfg.sim_config());
        cfg.grids.fast = Some(cfg.fast_grid());
        cfg.grids.perturb_fast = Some(cfg.perturb_fast_grid());
        if let Ok(prob) = cfg.problem() {
            cfg.grids.slow = Some(cfg.slow_grid(&prob));
        }
        cfg
    }

    /// Parses JSON, reporting the field path of the first error.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| CliError::Config {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }

    pub fn sim_config(&self) -> SimConfig {
        self.sim
            .unwrap_or_else(|| SimConfig::defaults_for(&self.dynamics, 32, 4_000_000))
    }

    pub fn fast_grid(&self) -> Grid2D {
        self.grids.fast.unwrap_or_else(|| Grid2D::default_for(&self.dynamics))
    }

    pub fn perturb_fast_grid(&self) -> Grid2D {
        self.grids.perturb_fast.unwrap_or_else(|| default_fast_grid(&self.dynamics))
    }

    pub fn problem(&self) -> grushin_core::Result<ControlProblem> {
        catalog(&self.problem.catalog_id, &self.problem.overrides)
    }

    pub fn slow_grid(&self, prob: &ControlProblem) -> SlowGrid {
        self.grids.slow.unwrap_or_else(|| SlowGrid::default_for(prob))
    }

    pub fn corrector_options(&self) -> CorrectorOptions {
        CorrectorOptions {
            deltas: self.delta_schedule.clone(),
            holder_gamma: self.corrector.holder_gamma,
            holder_m: self.corrector.holder_m,
            holder_pairs: self.corrector.holder_pairs,
            seed: self.corrector.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub path: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{tag}: {}: {}", self.path, self.message)
    }
}

struct Diagnostics(Vec<Diagnostic>);

impl Diagnostics {
    fn error(&mut self, path: &str, message: impl Into<String>) {
        self.0.push(Diagnostic {
            severity: Severity::Error,
            path: path.into(),
            message: message.into(),
        });
    }

    fn warn(&mut self, path: &str, message: impl Into<String>) {
        self.0.push(Diagnostic {
            severity: Severity::Warning,
            path: path.into(),
            message: message.into(),
        });
    }

    fn check(&mut self, path: &str, r: grushin_core::Result<()>) {
        if let Err(e) = r {
            self.error(path, e.to_string());
        }
    }
}

/// Pure validation. Without errors the run does not fail on config
/// grounds; warnings flag runs whose diagnostics lose their meaning.
pub fn validate(cfg: &ExperimentConfig, stage: Option<Command>) -> Vec<Diagnostic> {
    let mut d = Diagnostics(vec![]);
    let stages = stage.unwrap_or(cfg.command).stages();
    let uses = |c: Command| stages.contains(&c);
    let alpha = cfg.dynamics.alpha;
    if !(alpha > 0.0 && alpha.is_finite()) {
        d.error("dynamics.alpha", format!("alpha must be > 0, got {alpha}"));
    } else if let Err(e) = cfg.dynamics.validate() {
        d.error("dynamics.rho", e.to_string());
    }
    let dynamics_ok = cfg.dynamics.validate().is_ok();

    if dynamics_ok {
        if uses(Command::Simulate) {
            d.check("sim", cfg.sim_config().validate(&cfg.dynamics));
        }
        d.check("grids.fast", cfg.fast_grid().validate());
        d.check("grids.perturb_fast", cfg.perturb_fast_grid().validate());
    }

    let copts = cfg.corrector_options();
    if uses(Command::Cell) || uses(Command::Ergodic) {
        d.check("delta_schedule", copts.validate());
    }
    if uses(Command::Cell) {
        if alpha <= 1.0 {
            d.warn(
                "dynamics.alpha",
                format!("the Lipschitz bound on the corrector requires alpha > 1, got {alpha}; it will not be checked"),
            );
        }
        if cfg.problem.cell_points.is_empty() {
            d.error("problem.cell_points", "needs at least one (x, p, X) point");
        }
        if cfg.problem.cell_points.iter().flatten().any(|v| !v.is_finite()) {
            d.error("problem.cell_points", "entries must be finite");
        }
    }

    let prob = match cfg.problem() {
        Ok(p) => Some(p),
        Err(e) => {
            d.error("problem", e.to_string());
            None
        }
    };
    if let Some(prob) = prob.as_ref().filter(|_| uses(Command::Effective) || uses(Command::Perturb)) {
        let slow = cfg.slow_grid(prob);
        match slow.validate() {
            Err(e) => d.error("grids.slow", e.to_string()),
            Ok(()) => {
                if (slow.horizon - prob.horizon).abs() > 1e-12 * prob.horizon {
                    d.error(
                        "grids.slow.horizon",
                        format!("must equal the problem horizon {}", prob.horizon),
                    );
                }
                let bound = cfl_bound(prob, &slow);
                if slow.dt() > bound {
                    d.error(
                        "grids.slow.n_steps",
                        format!("time step {:e} exceeds the stability bound {bound:e}", slow.dt()),
                    );
                }
                if uses(Command::Perturb) && !slow.n_steps.is_multiple_of(100) {
                    d.error("grids.slow.n_steps", "must be a multiple of 100 for the perturb window");
                }
            }
        }
    }
    if uses(Command::Perturb) {
        let e = &cfg.epsilons;
        if e.is_empty() || e.iter().any(|&x| !(x > 0.0 && x.is_finite())) || e.windows(2).any(|w| w[1] >= w[0]) {
            d.error("epsilons", "must be nonempty, positive and strictly decreasing");
        }
    }

    let c = &cfg.checks;
    for (name, v) in [
        ("checks.ks_max", c.ks_max),
        ("checks.moment_rel_tol", c.moment_rel_tol),
        ("checks.cross_abs_tol", c.cross_abs_tol),
        ("checks.ergodic_rel_tol", c.ergodic_rel_tol),
        ("checks.lambda_rel_tol", c.lambda_rel_tol),
        ("checks.lambda_abs_tol", c.lambda_abs_tol),
        ("checks.perturb_final_fraction", c.perturb_final_fraction),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            d.error(name, format!("must be > 0, got {v}"));
        }
    }
    if cfg.output_dir.as_os_str().is_empty() {
        d.error("output_dir", "must not be empty");
    }
    d.0
}
