use std::fs;
use std::path::Path;
use std::process::Command as Process;

use grushin_cli::run::verify_manifest;
use grushin_cli::{run, CliError, Command, ExperimentConfig, RunOptions};
use grushin_core::Grid2D;
use serde_json::Value;

fn small_config(command: Command, dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::reference();
    cfg.command = command;
    cfg.output_dir = dir.to_path_buf();
    cfg.grids.fast = Some(Grid2D::square(6.0 / 2f64.sqrt(), 61).unwrap());
    cfg.grids.perturb_fast = Some(Grid2D::square(4.0 / 2f64.sqrt(), 21).unwrap());
    let mut slow = cfg.grids.slow.unwrap();
    slow.count = 21;
    slow.n_steps = 100;
    cfg.grids.slow = Some(slow);
    let mut sim = cfg.sim.unwrap();
    sim.n_paths = 4;
    sim.n_steps = sim.burn_in + 200_000;
    cfg.sim = Some(sim);
    cfg.corrector.holder_pairs = 500;
    cfg.epsilons = vec![0.5, 0.1];
    cfg
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn measure_emits_density_and_moments() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(Command::Measure, dir.path());
    let manifest = run(&cfg, &RunOptions::default()).unwrap();
    assert!(manifest.all_passed, "{:?}", manifest.checks);
    let moments = read_json(&dir.path().join("density_moments.json"));
    assert!((moments["e_y1_sq"].as_f64().unwrap() - 0.5).abs() < 0.01);
    let density = fs::read_to_string(dir.path().join("density.csv")).unwrap();
    assert!(density.starts_with("y1_center,y2_center,density\n"));
    assert_eq!(density.lines().count(), 1 + 61 * 61);
    verify_manifest(dir.path(), &manifest).unwrap();
    let on_disk = read_json(&dir.path().join("manifest-measure.json"));
    assert_eq!(on_disk["artifacts"].as_array().unwrap().len(), 2);
    assert_eq!(on_disk["version"], env!("CARGO_PKG_VERSION"));
}

#[test]
fn trivial_cell_problem_has_constant_datum() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(Command::Cell, dir.path());
    cfg.problem.catalog_id = "bench-trivial".into();
    let manifest = run(&cfg, &RunOptions::default()).unwrap();
    assert!(manifest.all_passed, "{:?}", manifest.checks);
    let cell = read_json(&dir.path().join("cell.json"));
    for pt in cell["points"].as_array().unwrap() {
        let (x, p, xx) = (pt["x"].as_f64().unwrap(), pt["p"].as_f64().unwrap(), pt["xx"].as_f64().unwrap());
        // -H = max_u (0.04 X + u p + sin x + 1/2) over u in [-1, 1]
        let c = 0.04 * xx + p.abs() + x.sin() + 0.5;
        assert!((pt["lambda"].as_f64().unwrap() + c).abs() < 1e-9);
        let w = fs::read_to_string(dir.path().join(pt["corrector_file"].as_str().unwrap())).unwrap();
        for line in w.lines().skip(1) {
            let v: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
            assert!(v.abs() < 1e-9);
        }
    }
}

#[test]
fn reruns_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut hashes = vec![];
    for dir in [&a, &b] {
        let mut cfg = small_config(Command::Simulate, dir.path());
        cfg.checks.ks_max = 1.0;
        cfg.checks.moment_rel_tol = 1.0;
        let m = run(&cfg, &RunOptions::default()).unwrap();
        let m2 = run(
            &cfg,
            &RunOptions {
                stage: Some(Command::Measure),
                ..RunOptions::default()
            },
        )
        .unwrap();
        hashes.push(
            m.artifacts
                .iter()
                .chain(&m2.artifacts)
                .map(|x| (x.path.clone(), x.sha256.clone()))
                .collect::<Vec<_>>(),
        );
    }
    assert_eq!(hashes[0], hashes[1]);
    assert_eq!(hashes[0].len(), 4);
}

#[test]
fn collisions_need_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(Command::Measure, dir.path());
    run(&cfg, &RunOptions::default()).unwrap();
    assert!(matches!(run(&cfg, &RunOptions::default()), Err(CliError::Collision(_))));
    let opts = RunOptions {
        overwrite: true,
        ..RunOptions::default()
    };
    run(&cfg, &opts).unwrap();
}

#[test]
fn effective_consumes_the_persisted_density() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(Command::Effective, dir.path());
    assert!(matches!(run(&cfg, &RunOptions::default()), Err(CliError::MissingInput { .. })));
    run(
        &cfg,
        &RunOptions {
            stage: Some(Command::Measure),
            ..RunOptions::default()
        },
    )
    .unwrap();
    let m = run(&cfg, &RunOptions::default()).unwrap();
    assert!(m.all_passed);
    let names: Vec<&str> = m.artifacts.iter().map(|a| a.path.as_str()).collect();
    assert_eq!(names, ["effective.csv", "effective.json"]);
    let eff = read_json(&dir.path().join("effective.json"));
    let density_hash = grushin_cli::run::sha256_hex(&fs::read(dir.path().join("density.csv")).unwrap());
    assert_eq!(eff["density_sha256"], density_hash.as_str());
    let csv = fs::read_to_string(dir.path().join("effective.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 101 * 21);
}

#[test]
fn perturb_stage_reports_window_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(Command::Perturb, dir.path());
    let m = run(&cfg, &RunOptions::default()).unwrap();
    assert!(m.all_passed, "{:?}", m.checks);
    let r = read_json(&dir.path().join("perturb.json"));
    assert_eq!(r["errors"].as_array().unwrap().len(), 2);
    assert!(r.get("runtimes_s").is_none());
}

#[test]
fn invalid_config_is_rejected_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(Command::Measure, dir.path());
    cfg.dynamics.alpha = -1.0;
    match run(&cfg, &RunOptions::default()) {
        Err(CliError::Invalid(d)) => assert!(d.iter().any(|d| d.path == "dynamics.alpha")),
        other => panic!("{other:?}"),
    }
    assert!(fs::read_dir(dir.path()).unwrap().next().is_none());
}

fn binary() -> Process {
    Process::new(env!("CARGO_BIN_EXE_grushin"))
}

#[test]
fn binary_reports_unknown_keys_with_their_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    fs::write(&path, r#"{"command":"measure","dynamics":{"alpha":2},"output_dir":"o","sim":{"dtt":1}}"#).unwrap();
    let out = binary().arg("--config").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("sim.dtt"), "{err}");
}

#[test]
fn binary_reference_config_validates() {
    let out = binary().arg("--print-reference-config").output().unwrap();
    assert!(out.status.success());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ref.json");
    fs::write(&path, &out.stdout).unwrap();
    let out = binary().arg("--config").arg(&path).arg("--validate-only").output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stderr.is_empty());
}

#[test]
fn binary_runs_a_stage_into_the_given_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(Command::All, Path::new("unused"));
    let path = dir.path().join("c.json");
    fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let out_dir = dir.path().join("out");
    let out = binary()
        .arg("--config")
        .arg(&path)
        .arg("--output")
        .arg(&out_dir)
        .args(["--stage", "measure", "--threads", "1"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("manifest-measure.json").exists());
    assert!(!Path::new("unused").exists());
}

#[test]
fn failing_checks_set_the_exit_status() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(Command::Measure, dir.path());
    cfg.checks.moment_rel_tol = 1e-12;
    let path = dir.path().join("c.json");
    fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let out = binary().arg("--config").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let manifest: Value = read_json(&dir.path().join("manifest-measure.json"));
    assert_eq!(manifest["all_passed"], false);
}
