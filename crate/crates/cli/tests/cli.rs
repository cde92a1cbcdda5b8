use std::fs;
use std::path::Path;
use std::process::Command;

use temsp_cli::config::{InitialSpec, RunConfig};
use temsp_cli::output::{self, Manifest};
use temsp_cli::{plot, run_ensemble};

fn small_config(dir: &Path) -> RunConfig {
    let mut c = RunConfig::default();
    c.ensemble.samples = 24;
    c.ensemble.seed = 5;
    c.grid.horizon = 1.0;
    c.grid.observe_every = 0.25;
    c.distance.times = vec![0.5, 1.0];
    c.distance.subsample = 8;
    c.output.dir = dir.to_path_buf();
    c
}

fn run_to(c: &RunConfig) -> temsp_cli::RunOutput {
    let run = run_ensemble(c, &mut |_| {}).unwrap();
    output::write_run(&run, &[]).unwrap();
    run
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    fs::read(dir.join(name)).unwrap()
}

#[test]
fn golden_headers() {
    let tmp = tempfile::tempdir().unwrap();
    run_to(&small_config(tmp.path()));
    let first = |name: &str| String::from_utf8(read(tmp.path(), name)).unwrap().lines().next().unwrap().to_string();
    assert_eq!(first("means.csv"), "t,psi,initial,dt,mean,stderr");
    assert_eq!(first("ecdf.csv"), "psi,initial,dt,value,cdf");
    assert_eq!(first("distances.csv"), "t,method,value,n,epsilon");
    let m = Manifest::load(&tmp.path().join("manifest.toml")).unwrap();
    assert_eq!(m.manifest.schema_version, 1);
    assert_eq!(m.files.len(), 3);
    for (name, sum) in &m.files {
        assert_eq!(&output::sha256_hex(&read(tmp.path(), name)), sum);
    }
}

#[test]
fn row_counts_follow_config() {
    let tmp = tempfile::tempdir().unwrap();
    let run = run_to(&small_config(tmp.path()));
    // 5 times x 2 functionals x 3 initials
    assert_eq!(run.means.len(), 30);
    let ecdf = String::from_utf8(read(tmp.path(), "ecdf.csv")).unwrap();
    assert_eq!(ecdf.lines().count(), 1 + 24 * 2 * 3);
    let dist = String::from_utf8(read(tmp.path(), "distances.csv")).unwrap();
    assert_eq!(dist.lines().count(), 3);
    assert!(dist.contains("0.5,exact-assignment,"));
    assert!(dist.contains("0.5,bl-lower-bound,"));
}

#[test]
fn frozen_single_sample_single_observation() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = RunConfig::default();
    c.model.name = "frozen".into();
    c.ensemble.samples = 1;
    c.grid.horizon = 0.0;
    c.grid.observe_times = Some(vec![0.0]);
    c.initial = vec![InitialSpec::new("zero", "constant:0,0")];
    c.distance.enabled = false;
    c.output.dir = tmp.path().to_path_buf();
    c.output.override_admissibility = true;
    let run = run_to(&c);
    let text = String::from_utf8(read(tmp.path(), "means.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows, vec!["0,cos-norm,zero,0.001,1,0", "0,clip-norm:2,zero,0.001,0,0"]);
    assert_eq!(run.mean(0.0, "cos-norm", "zero", 1e-3).unwrap().estimate.mean, 1.0);
}

#[test]
fn frozen_model_needs_override() {
    let mut c = RunConfig::default();
    c.model.name = "frozen".into();
    c.ensemble.samples = 1;
    c.initial = vec![InitialSpec::new("zero", "constant:0,0")];
    c.distance.enabled = false;
    let err = run_ensemble(&c, &mut |_| {}).unwrap_err();
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn constant_initial_is_truncated_onto_the_sphere() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = small_config(tmp.path());
    c.initial = vec![InitialSpec::new("xi3", "constant:-3,4")];
    let run = run_ensemble(&c, &mut |_| {}).unwrap();
    let r = 1e-3f64.powf(-1.0 / 400.0);
    let m = run.mean(0.0, "cos-norm", "xi3", 1e-3).unwrap().estimate;
    assert!((m.mean - r.cos()).abs() < 1e-12, "{} vs {}", m.mean, r.cos());
    assert_eq!(m.stderr, 0.0);
}

#[test]
fn reruns_and_worker_counts_are_byte_identical() {
    let mut outputs = Vec::new();
    for workers in [1usize, 4, 8, 1] {
        let tmp = tempfile::tempdir().unwrap();
        let mut c = small_config(tmp.path());
        c.ensemble.workers = workers;
        run_to(&c);
        outputs.push(["means.csv", "ecdf.csv", "distances.csv"].map(|n| read(tmp.path(), n)));
    }
    for o in &outputs[1..] {
        assert!(o == &outputs[0]);
    }
}

#[test]
fn manifest_reproduces_run() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_to(&small_config(a.path()));
    let mut c = RunConfig::load(&a.path().join("manifest.toml")).unwrap();
    c.output.dir = b.path().to_path_buf();
    run_to(&c);
    let ma = Manifest::load(&a.path().join("manifest.toml")).unwrap();
    let mb = Manifest::load(&b.path().join("manifest.toml")).unwrap();
    assert_eq!(ma.files, mb.files);
    for name in ["means.csv", "ecdf.csv", "distances.csv"] {
        assert_eq!(read(a.path(), name), read(b.path(), name));
    }
}

#[test]
fn failed_run_leaves_no_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = small_config(&tmp.path().join("out"));
    c.grid.dt = vec![0.01];
    assert!(run_ensemble(&c, &mut |_| {}).is_err());
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn plots_have_one_polyline_per_initial() {
    let tmp = tempfile::tempdir().unwrap();
    run_to(&small_config(tmp.path()));
    let files = plot::emit_plots(tmp.path(), &tmp.path().join("plots")).unwrap();
    // (cos-norm, clip-norm:2) x (means, ecdf)
    assert_eq!(files.len(), 4);
    for f in &files {
        let svg = fs::read_to_string(f).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 3, "{}", f.display());
    }
    let again = plot::emit_plots(tmp.path(), &tmp.path().join("plots2")).unwrap();
    for (a, b) in files.iter().zip(&again) {
        assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
    }
}

fn temsp(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_temsp")).args(args).output().unwrap()
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let out = out.to_str().unwrap();
    let r = temsp(&["run", "--dt", "0.003", "--samples", "0", "--out-dir", out]);
    assert_eq!(r.status.code(), Some(2));
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.contains("grid.dt") && err.contains("ensemble.samples"), "{err}");
    let r = temsp(&["run", "--dt", "0.01", "--samples", "2", "--out-dir", out]);
    assert_eq!(r.status.code(), Some(3));
    assert_eq!(temsp(&["check", "--dt", "0.01", "--points", "100"]).status.code(), Some(3));
    assert_eq!(temsp(&["check", "--points", "100"]).status.code(), Some(0));
    let r = temsp(&["run", "--horizon", "1.0005", "--out-dir", out]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn cli_flags_override_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    let out = tmp.path().join("o");
    fs::write(
        &cfg,
        format!(
            "[ensemble]\nsamples = 50\nseed = 3\n\n[grid]\nhorizon = 0.5\nobserve_every = 0.5\n\n[distance]\ntimes = [0.25, 0.5]\nsubsample = 4\n\n[output]\ndir = {:?}\n",
            out
        ),
    )
    .unwrap();
    let r = temsp(&["run", "--config", cfg.to_str().unwrap(), "--samples", "6", "--initial", "xi3=constant:-3,4"]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let m = Manifest::load(&out.join("manifest.toml")).unwrap();
    assert_eq!(m.config.ensemble.samples, 6);
    assert_eq!(m.config.ensemble.seed, 3);
    assert_eq!(m.config.initial, vec![InitialSpec::new("xi3", "constant:-3,4")]);
}

#[test]
fn simulate_prints_trajectory_csv() {
    let r = temsp(&["simulate", "--steps", "5", "--dt", "0.001"]);
    assert!(r.status.success());
    let text = String::from_utf8(r.stdout).unwrap();
    assert_eq!(text.lines().next(), Some("k,t,x_1,x_2"));
    assert_eq!(text.lines().count(), 1 + 1001 + 5);
}
