use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sparc-sim"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("sparc-sim-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("config.toml");
    std::fs::write(&p, body).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

const SWEEP: &str = r#"
experiment = "ser_vs_m"
trials = 6
master_seed = 9

[code]
sections = 32
rate_bits = 1.0
snr = 15.0

[se]
mc_samples = 4000

[sweep]
values = [4, 8]
"#;

#[test]
fn sweep_is_identical_across_thread_counts() {
    let dir = scratch("threads");
    let cfg = write_config(&dir, SWEEP);
    let mut curves = Vec::new();
    for threads in ["1", "3"] {
        let out = dir.join(format!("out{threads}"));
        let o = run(&[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--threads",
            threads,
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let curve = std::fs::read_to_string(out.join("curve.csv")).unwrap();
        let trials = std::fs::read_to_string(out.join("trials.csv")).unwrap();
        // drop the wall-time column
        let trials: Vec<String> = trials
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect();
        assert_eq!(trials.len(), 1 + 2 * 6);
        assert!(out.join("metadata.json").exists());
        curves.push((curve, trials));
    }
    assert_eq!(curves[0], curves[1]);
    assert_eq!(curves[0].0.lines().count(), 3);
}

#[test]
fn seed_flag_is_echoed_in_metadata() {
    let dir = scratch("seed");
    let cfg = write_config(&dir, SWEEP);
    let out = dir.join("out");
    let o = run(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "77",
    ]);
    assert!(o.status.success());
    let meta = std::fs::read_to_string(out.join("metadata.json")).unwrap();
    assert!(meta.contains("\"master_seed\": 77"));
}

#[test]
fn se_subcommand_writes_trajectories() {
    let dir = scratch("se");
    let cfg = write_config(&dir, SWEEP);
    let out = dir.join("out");
    let o = run(&[
        "se",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let traj = std::fs::read_to_string(out.join("se_4.csv")).unwrap();
    assert!(traj.starts_with("t,gamma1,gamma2,eps1,eps2,x_t,tau2"));
    assert!(!out.join("trials.csv").exists());
}

#[test]
fn thresholds_for_unit_spectrum_hit_capacity() {
    let dir = scratch("thr");
    let cfg = write_config(&dir, SWEEP);
    let out = dir.join("out");
    let o = run(&[
        "thresholds",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let json = std::fs::read_to_string(out.join("thresholds.json")).unwrap();
    assert!(json.contains("\"criterion_ok\": true"));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("R_IT"));
}

#[test]
fn config_errors_exit_with_2() {
    let dir = scratch("bad");
    let cfg = write_config(&dir, &format!("{SWEEP}\nunknown_key = 1\n"));
    let o = run(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.join("o").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let good = write_config(&dir, SWEEP);
    let o = run(&[
        "run",
        "--config",
        good.to_str().unwrap(),
        "--override",
        "code.sections=0",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&[
        "run",
        "--config",
        dir.join("missing.toml").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn infeasible_size_exits_with_3() {
    let dir = scratch("big");
    let cfg = write_config(&dir, SWEEP);
    let o = run(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.join("o").to_str().unwrap(),
        "--override",
        "ensemble=gaussian",
        "--override",
        "code.sections=100000",
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("MiB"));
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(root).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            sparc_vamp::sim::ExperimentConfig::from_file(&path, &[]).unwrap();
            seen += 1;
        }
    }
    assert!(seen >= 3);
}
