use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ddpred::hankel::{self, HankelBlocks};
use ddpred::io;
use ddpred::lti::Trajectory;
use ddpred::numerics::{self, Vector};

fn ddpred<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    Command::new(env!("CARGO_BIN_EXE_ddpred"))
        .args(args)
        .env_remove("DDPRED_SEED")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

/// Offline data (L = 100, zero state) and an online window of length 5 from
/// a random initial state of the same system.
fn pipeline(dir: &Path, order: usize, inputs: usize, outputs: usize, seed: u64) -> (PathBuf, PathBuf) {
    let data = dir.join("data.csv");
    let online = dir.join("online.csv");
    ok(&ddpred([
        "simulate", "--order", &order.to_string(), "--inputs", &inputs.to_string(),
        "--outputs", &outputs.to_string(), "--seed", &seed.to_string(), "--out", &p(dir, "data.csv"),
    ]));
    ok(&ddpred([
        "simulate", "--system", &p(dir, "data.csv.system.csv"), "--length", "5", "--x0", "random",
        "--seed", &(seed + 1).to_string(), "--out", &p(dir, "online.csv"),
    ]));
    (data, online)
}

fn truth(online: &Path, t_p: usize) -> Vector {
    let traj = io::read_trajectory(online).unwrap();
    let t_f = traj.len() - t_p;
    Vector::from_iterator(traj.p() * t_f, traj.outputs.columns(t_p, t_f).iter().copied())
}

fn kv(text: &str, key: &str) -> String {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("missing {key} in {text}"))
        .to_string()
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.csv", "b.csv"] {
        ok(&ddpred(["simulate", "--order", "1", "--inputs", "1", "--outputs", "1", "--length", "100", "--seed", "7", "--out", &p(dir.path(), name)]));
    }
    let a = std::fs::read(dir.path().join("a.csv")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.csv")).unwrap());
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 101);
    assert!(dir.path().join("a.csv.system.csv").exists());
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, env: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_ddpred"));
        cmd.args(["simulate", "--order", "2", "--inputs", "1", "--outputs", "1", "--out", &p(dir.path(), name)]);
        match env {
            Some(v) => cmd.env("DDPRED_SEED", v),
            None => cmd.env_remove("DDPRED_SEED"),
        };
        ok(&cmd.output().unwrap());
        std::fs::read(dir.path().join(name)).unwrap()
    };
    let env5 = run("e5.csv", Some("5"));
    ok(&ddpred(["simulate", "--order", "2", "--inputs", "1", "--outputs", "1", "--seed", "5", "--out", &p(dir.path(), "s5.csv")]));
    assert_eq!(env5, std::fs::read(dir.path().join("s5.csv")).unwrap());
    assert_ne!(env5, run("default.csv", None));
}

#[test]
fn noise_free_pipeline_reproduces_continuation() {
    for (seed, (n, m, pp)) in [(1, (2, 1, 1)), (2, (2, 2, 2)), (3, (1, 1, 1)), (4, (2, 1, 2))] {
        let dir = tempfile::tempdir().unwrap();
        let (data, online) = pipeline(dir.path(), n, m, pp, seed);
        let args = |method: &str, out: &str| {
            vec![
                "predict".to_string(), "--data".into(), data.display().to_string(),
                "--online".into(), online.display().to_string(), "--T".into(), "5".into(),
                "--Tp".into(), "2".into(), "--Tf".into(), "3".into(), "--order".into(), n.to_string(),
                "--method".into(), method.into(), "--out".into(), p(dir.path(), out),
            ]
        };
        ok(&ddpred(args("raw", "raw.csv")));
        ok(&ddpred(args("tsvd", "tsvd.csv")));
        let raw = io::parse_prediction(&io::read_text(&dir.path().join("raw.csv")).unwrap(), "raw").unwrap();
        let tsvd = io::parse_prediction(&io::read_text(&dir.path().join("tsvd.csv")).unwrap(), "tsvd").unwrap();
        let truth = truth(&online, 2);
        assert!((&raw - &truth).norm() <= 1e-7 * (1.0 + truth.norm()), "seed {seed}");
        assert!((&raw - &tsvd).norm() <= 1e-8 * (1.0 + raw.norm()), "seed {seed}");
    }
}

#[test]
fn predict_emits_g_and_prints_to_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let (data, online) = pipeline(dir.path(), 2, 1, 1, 10);
    let stdout = ok(&ddpred([
        "predict", "--data", &data.display().to_string(), "--online", &online.display().to_string(),
        "--Tp", "2", "--Tf", "3", "--emit-g", &p(dir.path(), "g.csv"),
    ]));
    assert!(stdout.starts_with("step,y1\n"));
    let g = io::read_text(&dir.path().join("g.csv")).unwrap();
    assert_eq!(g.lines().next(), Some("g"));
    assert_eq!(g.lines().count(), 1 + 100 - 5 + 1);
}

#[test]
fn argument_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let (data, online) = pipeline(dir.path(), 1, 1, 1, 20);
    let (d, o) = (data.display().to_string(), online.display().to_string());
    let tsvd = ddpred(["predict", "--data", &d, "--online", &o, "--Tp", "1", "--Tf", "1", "--method", "tsvd"]);
    assert_eq!(tsvd.status.code(), Some(1));
    let mismatch = ddpred(["predict", "--data", &d, "--online", &o, "--T", "3", "--Tp", "1", "--Tf", "1"]);
    assert_eq!(mismatch.status.code(), Some(1));
    assert_eq!(ddpred(["predict", "--bogus"]).status.code(), Some(1));
    assert_eq!(ddpred(["bound", "--data", &d, "--online", &o, "--Tp", "1", "--Tf", "1", "--order", "1", "--noise-level", "0", "--theorem", "3"]).status.code(), Some(1));

    ok(&ddpred(["simulate", "--order", "1", "--inputs", "1", "--outputs", "1", "--length", "1", "--out", &p(dir.path(), "short.csv")]));
    let short = ddpred(["predict", "--data", &p(dir.path(), "short.csv"), "--online", &o, "--T", "2", "--Tp", "1", "--Tf", "1"]);
    assert_eq!(short.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&short.stderr).contains("window length"));
}

#[test]
fn malformed_csv_is_a_data_error_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let (_, online) = pipeline(dir.path(), 1, 1, 1, 30);
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "t,u1,y1\n0,0.5,1\n1,oops,2\n").unwrap();
    let out = ddpred(["predict", "--data", &bad.display().to_string(), "--online", &online.display().to_string(), "--Tp", "1", "--Tf", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.csv:3:"));

    let other = tempfile::tempdir().unwrap();
    let (data2, _) = pipeline(other.path(), 2, 2, 1, 31);
    let out = ddpred(["predict", "--data", &data2.display().to_string(), "--online", &online.display().to_string(), "--Tp", "1", "--Tf", "1"]);
    assert_eq!(out.status.code(), Some(2), "dimension mismatch between data and window");
}

/// Writes noisy offline data and online window, returning the clean `σ_r(H₁)`.
fn noisy_pipeline(dir: &Path, noise: f64) -> (PathBuf, PathBuf, f64) {
    let (data, online) = pipeline(dir, 2, 1, 1, 40);
    let clean = io::read_trajectory(&data).unwrap();
    let blocks = HankelBlocks::from_trajectory(&clean, 2, 3).unwrap();
    let sigma_r = numerics::sigma(&blocks.h1(), 5 + 2).unwrap();
    let y = hankel::corrupt_output(&clean.outputs, noise, 99).unwrap();
    let noisy = dir.join("noisy.csv");
    io::write_trajectory(&noisy, &Trajectory::new(clean.inputs.clone(), y).unwrap()).unwrap();
    (noisy, online, sigma_r)
}

fn bound_args(data: &Path, online: &Path, noise: f64, theorem: u8) -> Vec<String> {
    vec![
        "bound".into(), "--data".into(), data.display().to_string(), "--online".into(), online.display().to_string(),
        "--Tp".into(), "2".into(), "--Tf".into(), "3".into(), "--order".into(), "2".into(),
        "--noise-level".into(), noise.to_string(), "--theorem".into(), theorem.to_string(),
    ]
}

#[test]
fn bound_with_zero_noise_on_clean_data() {
    let dir = tempfile::tempdir().unwrap();
    let (data, online) = pipeline(dir.path(), 2, 1, 1, 50);
    let text = ok(&ddpred(bound_args(&data, &online, 0.0, 1)));
    assert_eq!(kv(&text, "applicable"), "true");
    assert_eq!(kv(&text, "total"), "0");
}

#[test]
fn inapplicable_bound_still_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let (data, online, _) = noisy_pipeline(dir.path(), 1e-2);
    for theorem in [1, 2] {
        let text = ok(&ddpred(bound_args(&data, &online, 10.0, theorem)));
        assert_eq!(kv(&text, "applicable"), "false");
        assert_eq!(kv(&text, "total"), "");
    }
}

#[test]
fn bound_writes_report_and_csv_row() {
    let dir = tempfile::tempdir().unwrap();
    let (data, online, sigma_r) = noisy_pipeline(dir.path(), 1e-4);
    let out = dir.path().join("report.txt");
    let mut args = bound_args(&data, &online, 1e-4, 2);
    args.extend(["--terms".into(), "--linearized".into(), "--out".into(), out.display().to_string()]);
    ok(&ddpred(&args));
    let text = io::read_text(&out).unwrap();
    assert_eq!(kv(&text, "predictor"), "tsvd");
    let total: f64 = kv(&text, "total").parse().unwrap();
    let terms: f64 = ["perturbation", "online_noise", "offset"].iter().map(|k| kv(&text, k).parse::<f64>().unwrap()).sum();
    assert!((total - terms).abs() <= 1e-12 * total);
    assert!(kv(&text, "linearized_total").parse::<f64>().unwrap() > 0.0);
    let csv = io::read_text(&dir.path().join("report.txt.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0].split(',').count(), lines[1].split(',').count());

    for theorem in [1, 2] {
        let measured: f64 = kv(&ok(&ddpred(bound_args(&data, &online, 1e-4, theorem))), "total").parse().unwrap();
        let mut a = bound_args(&data, &online, 1e-4, theorem);
        a.extend(["--oracle-sigma-r".into(), sigma_r.to_string()]);
        let oracle: f64 = kv(&ok(&ddpred(&a)), "total").parse().unwrap();
        assert!(oracle <= measured, "theorem {theorem}: {oracle} > {measured}");
        let mut e = bound_args(&data, &online, 1e-4, theorem);
        e.push("--eiv".into());
        let eiv: f64 = kv(&ok(&ddpred(&e)), "total").parse().unwrap();
        assert!(eiv >= measured);
    }
}

fn small_config(dir: &Path) -> PathBuf {
    let cfg = dir.join("config.json");
    std::fs::write(
        &cfg,
        r#"{"num_systems": 6, "noise_levels": [1e-7, 1e-5, 1e-3], "realizations_per_level": 3, "master_seed": 5}"#,
    )
    .unwrap();
    cfg
}

#[test]
fn montecarlo_outputs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let cfg_s = cfg.display().to_string();
    ok(&ddpred(["montecarlo", "--config", &cfg_s, "--out-dir", &p(dir.path(), "a"), "--jobs", "1"]));
    ok(&ddpred(["montecarlo", "--config", &cfg_s, "--out-dir", &p(dir.path(), "b"), "--jobs", "3"]));
    let records = |d: &str| std::fs::read(dir.path().join(d).join("records.csv")).unwrap();
    assert_eq!(records("a"), records("b"));

    let text = String::from_utf8(records("a")).unwrap();
    assert!(text.starts_with(io::RECORD_HEADER));
    let parsed = io::parse_records(&text, "records").unwrap();
    assert_eq!(parsed.len(), 6 * 3 * 3);
    assert_eq!(io::format_records(&parsed), text);

    ok(&ddpred(["montecarlo", "--from-manifest", &p(dir.path(), "a/manifest.json"), "--out-dir", &p(dir.path(), "c")]));
    assert_eq!(records("a"), records("c"));

    let manifest: serde_json::Value =
        serde_json::from_str(&io::read_text(&dir.path().join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["retry_cap"], 100);
    assert_eq!(manifest["master_seed"], 5);
    assert_eq!(manifest["records_sha256"], io::sha256_hex(&records("a")));

    ok(&ddpred(["summarize", "--records", &p(dir.path(), "a/records.csv"), "--out", &p(dir.path(), "s.csv")]));
    assert_eq!(
        std::fs::read(dir.path().join("s.csv")).unwrap(),
        std::fs::read(dir.path().join("a/summary.csv")).unwrap()
    );
}

#[test]
fn montecarlo_scale_and_config_validation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    ok(&ddpred(["montecarlo", "--config", &cfg.display().to_string(), "--scale", "0.5", "--out-dir", &p(dir.path(), "s")]));
    let manifest: serde_json::Value =
        serde_json::from_str(&io::read_text(&dir.path().join("s/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["num_systems"], 3);
    assert_eq!(manifest["config"]["realizations_per_level"], 2);

    let typo = dir.path().join("typo.json");
    std::fs::write(&typo, r#"{"num_sytems": 6}"#).unwrap();
    let out = ddpred(["montecarlo", "--config", &typo.display().to_string(), "--out-dir", &p(dir.path(), "t")]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("num_sytems"));

    let invalid = dir.path().join("invalid.json");
    std::fs::write(&invalid, r#"{"noise_levels": []}"#).unwrap();
    let out = ddpred(["montecarlo", "--config", &invalid.display().to_string(), "--out-dir", &p(dir.path(), "u")]);
    assert_eq!(out.status.code(), Some(1));
}
