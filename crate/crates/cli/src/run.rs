//! Stage execution, artifact writing and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use grushin_core::control::{effective_hamiltonian, freeze_f, ControlProblem, FrozenArgs};
use grushin_core::ergodic::{ergodic_three_ways, extract_lambda_w_batch, ThreeWayOptions};
use grushin_core::grid_pde::{density_moments, discretize, stationary_density};
use grushin_core::perturb::{convergence_study, solve_effective};
use grushin_core::simulate::{ks_distance_y1_marginal, simulate};
use grushin_core::{DynamicsSpec, Field};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::{validate, Command, ExperimentConfig, Severity};
use crate::CliError;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Replaces `output_dir` from the config.
    pub output: Option<PathBuf>,
    pub overwrite: bool,
    /// Replaces `command` from the config.
    pub stage: Option<Command>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Artifact {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub stage: String,
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub software: String,
    pub version: String,
    pub command: Command,
    pub config: ExperimentConfig,
    pub artifacts: Vec<Artifact>,
    pub stages: Vec<StageTiming>,
    pub checks: Vec<CheckOutcome>,
    pub all_passed: bool,
}

impl RunManifest {
    pub fn file_name(command: Command) -> String {
        format!("manifest-{command}.json")
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn planned_files(stage: Command, cfg: &ExperimentConfig) -> Vec<String> {
    match stage {
        Command::Simulate => vec!["sim_moments.json".into(), "histogram.csv".into()],
        Command::Measure => vec!["density.csv".into(), "density_moments.json".into()],
        Command::Ergodic => vec!["ergodic.json".into()],
        Command::Cell => {
            let mut v = vec!["cell.json".to_string()];
            v.extend((0..cfg.problem.cell_points.len()).map(corrector_file));
            v
        }
        Command::Effective => vec!["effective.csv".into(), "effective.json".into()],
        Command::Perturb => vec!["perturb.json".into()],
        Command::All => vec![],
    }
}

fn corrector_file(k: usize) -> String {
    format!("corrector_{k}.csv")
}

struct Writer {
    dir: PathBuf,
    artifacts: Vec<Artifact>,
}

impl Writer {
    fn write(&mut self, name: &str, bytes: Vec<u8>) -> Result<(), CliError> {
        fs::write(self.dir.join(name), &bytes)?;
        self.artifacts.push(Artifact {
            path: name.to_string(),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name, bytes)
    }

    fn csv(&mut self, name: &str, fill: impl FnOnce(&mut Vec<u8>) -> grushin_core::Result<()>, stage: &'static str) -> Result<(), CliError> {
        let mut bytes = Vec::new();
        fill(&mut bytes).map_err(|source| CliError::Stage { stage, source })?;
        self.write(name, bytes)
    }
}

struct Checks<'a> {
    stage: &'a str,
    out: &'a mut Vec<CheckOutcome>,
}

impl Checks<'_> {
    /// Passes when `value <= threshold`.
    fn at_most(&mut self, name: impl Into<String>, value: f64, threshold: f64) {
        self.push(name.into(), value, threshold, value <= threshold);
    }

    fn at_least(&mut self, name: impl Into<String>, value: f64, threshold: f64) {
        self.push(name.into(), value, threshold, value >= threshold);
    }

    fn push(&mut self, name: String, value: f64, threshold: f64, pass: bool) {
        self.out.push(CheckOutcome {
            stage: self.stage.to_string(),
            name,
            value,
            threshold,
            pass: pass && value.is_finite(),
        });
    }
}

/// Data shared between stages of one run.
struct Context<'a> {
    cfg: &'a ExperimentConfig,
    spec: DynamicsSpec,
    density: Option<Field>,
}

impl Context<'_> {
    fn density(&mut self, stage: &'static str) -> Result<&Field, CliError> {
        if self.density.is_none() {
            let grid = self.cfg.fast_grid();
            let m = discretize(&self.spec, &grid)
                .and_then(|g| stationary_density(&g))
                .map_err(|source| CliError::Stage { stage, source })?;
            self.density = Some(m);
        }
        Ok(self.density.as_ref().expect("set above"))
    }

    fn problem(&self, stage: &'static str) -> Result<ControlProblem, CliError> {
        self.cfg.problem().map_err(|source| CliError::Stage { stage, source })
    }
}

fn rel(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        a.abs()
    } else {
        (a - b).abs() / b.abs()
    }
}

/// `(E[y1^2], E[y2^2])` of the stationary law.
fn exact_second_moments(spec: &DynamicsSpec) -> (f64, f64) {
    let a = 1.0 / spec.alpha;
    (a, (a + spec.rho * spec.rho) / spec.alpha)
}

fn stage_err(stage: &'static str) -> impl Fn(grushin_core::Error) -> CliError {
    move |source| CliError::Stage { stage, source }
}

fn run_stage(stage: Command, ctx: &mut Context, w: &mut Writer, checks: &mut Vec<CheckOutcome>) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    let spec = ctx.spec;
    let name = stage.name();
    let mut c = Checks { stage: name, out: checks };
    let (ey1, ey2) = exact_second_moments(&spec);
    match stage {
        Command::Simulate => {
            let sim = cfg.sim_config();
            let grid = cfg.fast_grid();
            let out = simulate(&spec, &sim, Some(&grid)).map_err(stage_err("simulate"))?;
            let hist = out.histogram.expect("grid was supplied");
            let ks = ks_distance_y1_marginal(&hist, &spec).map_err(stage_err("simulate"))?;
            let mo = out.moments;
            w.json(
                "sim_moments.json",
                &json!({
                    "alpha": spec.alpha,
                    "rho": spec.rho,
                    "config": sim,
                    "moments": mo,
                    "exact": {"e_y1_sq": ey1, "e_y2_sq": ey2, "e_y1_y2": 0.0},
                    "ks_y1_marginal": ks,
                    "outside_fraction": hist.outside_fraction(),
                }),
            )?;
            w.csv("histogram.csv", |b| hist.write_csv(b), "simulate")?;
            c.at_most("ks_y1_marginal", ks, cfg.checks.ks_max);
            c.at_most("rel_err_e_y1_sq", rel(mo.second.xx, ey1), cfg.checks.moment_rel_tol);
            c.at_most("rel_err_e_y2_sq", rel(mo.second.yy, ey2), cfg.checks.moment_rel_tol);
            c.at_most("abs_e_y1_y2", mo.second.xy.abs(), cfg.checks.cross_abs_tol);
        }
        Command::Measure => {
            let m = ctx.density("measure")?.clone();
            let mo = density_moments(&m);
            w.csv("density.csv", |b| m.write_csv(b, "density"), "measure")?;
            w.json(
                "density_moments.json",
                &json!({
                    "alpha": spec.alpha,
                    "rho": spec.rho,
                    "grid": m.grid,
                    "mass": m.integral(),
                    "mean": [mo[0], mo[1]],
                    "e_y1_sq": mo[2],
                    "e_y2_sq": mo[3],
                    "e_y1_y2": mo[4],
                    "exact": {"e_y1_sq": ey1, "e_y2_sq": ey2, "e_y1_y2": 0.0},
                }),
            )?;
            c.at_most("rel_err_e_y1_sq", rel(mo[2], ey1), cfg.checks.moment_rel_tol);
            c.at_most("rel_err_e_y2_sq", rel(mo[3], ey2), cfg.checks.moment_rel_tol);
            c.at_most("abs_e_y1_y2", mo[4].abs(), cfg.checks.cross_abs_tol);
        }
        Command::Ergodic => {
            let grid = cfg.fast_grid();
            let f = Field::from_fn(grid, |y| y.y1 * y.y1 + y.y2 * y.y2);
            let opts = ThreeWayOptions::for_alpha(spec.alpha);
            let (a, b, d) = ergodic_three_ways(&spec, &grid, &f, &cfg.delta_schedule, opts).map_err(stage_err("ergodic"))?;
            let exact = ey1 + ey2;
            w.json(
                "ergodic.json",
                &json!({
                    "datum": "y1^2 + y2^2",
                    "exact": exact,
                    "by_discount": a,
                    "by_parabolic": b,
                    "by_forced": d,
                    "parabolic_horizon": opts.parabolic_horizon,
                    "forced_horizon": opts.forced_horizon,
                    "steps": opts.steps,
                }),
            )?;
            for (route, v) in [("by_discount", a), ("by_parabolic", b), ("by_forced", d)] {
                c.at_most(format!("rel_err_{route}"), rel(v, exact), cfg.checks.ergodic_rel_tol);
            }
        }
        Command::Cell => {
            let prob = ctx.problem("cell")?;
            let grid = cfg.fast_grid();
            let m = ctx.density("cell")?.clone();
            let mut data = Vec::new();
            let mut hbar = Vec::new();
            for &[x, p, xx] in &cfg.problem.cell_points {
                let frozen = FrozenArgs::new(x, p, xx);
                let datum = freeze_f(&prob, &frozen).map_err(stage_err("cell"))?;
                data.push(datum.on_grid(&grid));
                hbar.push(effective_hamiltonian(&prob, &frozen, &m).map_err(stage_err("cell"))?);
            }
            let results = extract_lambda_w_batch(&spec, &grid, &data, &cfg.corrector_options()).map_err(stage_err("cell"))?;
            let mut entries = Vec::new();
            for (k, (r, h)) in results.iter().zip(&hbar).enumerate() {
                let [x, p, xx] = cfg.problem.cell_points[k];
                entries.push(json!({
                    "x": x, "p": p, "xx": xx,
                    "lambda": r.lambda,
                    "effective_hamiltonian": h,
                    "corrector_file": corrector_file(k),
                    "result": r,
                }));
                w.csv(&corrector_file(k), |b| r.w.write_csv(b, "w"), "cell")?;
                let tol = cfg.checks.lambda_rel_tol;
                let abs = cfg.checks.lambda_abs_tol;
                let err = (r.lambda - h).abs();
                if h.abs() * tol < abs {
                    c.at_most(format!("point_{k}_abs_err_lambda"), err, abs);
                } else {
                    c.at_most(format!("point_{k}_rel_err_lambda"), err / h.abs(), tol);
                }
                let growth = r.delta_trace.iter().map(|t| t.growth_ratio).fold(0.0, f64::max);
                c.at_most(format!("point_{k}_growth_ratio"), growth, 1.0 + 1e-12);
                match r.lipschitz {
                    Some(l) if l.bound > 1e-12 => c.at_most(format!("point_{k}_lipschitz_ratio"), l.emp_lip / l.bound, 1.05),
                    Some(l) => c.at_most(format!("point_{k}_sup_gradient"), l.emp_lip, 1e-9),
                    None => {}
                }
            }
            w.json(
                "cell.json",
                &json!({
                    "catalog_id": prob.catalog_id,
                    "alpha": spec.alpha,
                    "rho": spec.rho,
                    "grid": grid,
                    "delta_schedule": cfg.delta_schedule,
                    "points": entries,
                }),
            )?;
        }
        Command::Effective => {
            let prob = ctx.problem("effective")?;
            let path = w.dir.join("density.csv");
            if !path.exists() {
                return Err(CliError::MissingInput {
                    stage: "effective",
                    path,
                    hint: "run the measure stage into this output directory first",
                });
            }
            let m = Field::read_csv(fs::File::open(&path)?).map_err(stage_err("effective"))?;
            let slow = cfg.slow_grid(&prob);
            let v = solve_effective(&prob, &m, &slow).map_err(stage_err("effective"))?;
            w.csv("effective.csv", |b| v.write_csv(b), "effective")?;
            let last = v.values.last().expect("at least the terminal slice");
            let centre = (slow.count - 1) / 2;
            w.json(
                "effective.json",
                &json!({
                    "catalog_id": prob.catalog_id,
                    "slow": slow,
                    "density_grid": m.grid,
                    "density_sha256": sha256_hex(&fs::read(&path)?),
                    "value_t0_x0": last[centre],
                    "sup_abs_value": v.values.iter().flatten().fold(0.0f64, |a, b| a.max(b.abs())),
                }),
            )?;
            let finite = v.values.iter().flatten().all(|x| x.is_finite());
            c.at_least("finite_values", finite as u8 as f64, 1.0);
        }
        Command::Perturb => {
            let prob = ctx.problem("perturb")?;
            let slow = cfg.slow_grid(&prob);
            let fast = cfg.perturb_fast_grid();
            let r = convergence_study(&prob, &spec, &slow, &fast, &cfg.epsilons).map_err(stage_err("perturb"))?;
            let mut value = serde_json::to_value(&r)?;
            if let Some(obj) = value.as_object_mut() {
                // timings go to the manifest so reruns stay byte-identical
                obj.remove("runtimes_s");
                obj.remove("effective_runtime_s");
                let ratios: Vec<f64> = r.terminal_errors.iter().map(|e| e / r.terminal_mismatch).collect();
                obj.insert("terminal_ratios".into(), json!(ratios));
            }
            w.json("perturb.json", &value)?;
            let decreasing = r.errors.windows(2).all(|p| p[1] < p[0]);
            c.at_least("errors_strictly_decreasing", decreasing as u8 as f64, 1.0);
            let last = r.errors.last().copied().unwrap_or(f64::NAN);
            c.at_most("final_error_over_oscillation", last / r.oscillation, cfg.checks.perturb_final_fraction);
        }
        Command::All => unreachable!("expanded into stages"),
    }
    Ok(())
}

/// Validates, runs the requested stages in order and writes the manifest.
pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunManifest, CliError> {
    let command = opts.stage.unwrap_or(cfg.command);
    let diags = validate(cfg, Some(command));
    if diags.iter().any(|d| d.severity == Severity::Error) {
        return Err(CliError::Invalid(diags));
    }
    let mut cfg = cfg.clone();
    cfg.command = command;
    if let Some(dir) = &opts.output {
        cfg.output_dir = dir.clone();
    }
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir)?;
    let stages = command.stages();
    let manifest_name = RunManifest::file_name(command);
    if !opts.overwrite {
        let mut planned: Vec<String> = stages.iter().flat_map(|&s| planned_files(s, &cfg)).collect();
        planned.push(manifest_name.clone());
        for f in planned {
            let p = dir.join(&f);
            if p.exists() {
                return Err(CliError::Collision(p));
            }
        }
    }

    let mut ctx = Context {
        cfg: &cfg,
        spec: cfg.dynamics,
        density: None,
    };
    let mut writer = Writer {
        dir: dir.clone(),
        artifacts: vec![],
    };
    let mut checks = Vec::new();
    let mut timings = Vec::new();
    for stage in stages {
        let started = Instant::now();
        run_stage(stage, &mut ctx, &mut writer, &mut checks)?;
        timings.push(StageTiming {
            stage: stage.name().into(),
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    let manifest = RunManifest {
        software: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command,
        config: cfg.clone(),
        artifacts: writer.artifacts,
        stages: timings,
        all_passed: checks.iter().all(|c| c.pass),
        checks,
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    fs::write(dir.join(&manifest_name), bytes)?;
    Ok(manifest)
}

/// Recomputes every artifact hash listed in a manifest.
pub fn verify_manifest(dir: &Path, manifest: &RunManifest) -> Result<(), String> {
    for a in &manifest.artifacts {
        let bytes = fs::read(dir.join(&a.path)).map_err(|e| format!("{}: {e}", a.path))?;
        if sha256_hex(&bytes) != a.sha256 {
            return Err(format!("{}: hash mismatch", a.path));
        }
    }
    Ok(())
}
