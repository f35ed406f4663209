//! Command-line front end.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::{self, BoundOptions, BoundReport, LinearizedRaw, LinearizedTsvd};
use crate::hankel::{HankelBlocks, OnlineWindow};
use crate::io::{self, fmt_f64};
use crate::lti::{self, StateSpace, Trajectory};
use crate::montecarlo::{self, ExperimentConfig, RunReport};
use crate::numerics::{Matrix, Vector};
use crate::predictor::{self, Method};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "ddpred", version, about = "Hankel-matrix output prediction with worst-case error bounds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a random (or given) stable system and write a trajectory CSV.
    Simulate(SimulateArgs),
    /// Predict future outputs from offline data and an online window.
    Predict(PredictArgs),
    /// Evaluate a worst-case error bound.
    Bound(BoundArgs),
    /// Run a Monte Carlo experiment.
    Montecarlo(MonteCarloArgs),
    /// Summarize an existing records CSV.
    Summarize(SummarizeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitialState {
    Zero,
    Random,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// State dimension (ignored with --system).
    #[arg(long)]
    pub order: Option<usize>,
    #[arg(long)]
    pub inputs: Option<usize>,
    #[arg(long)]
    pub outputs: Option<usize>,
    #[arg(long, default_value_t = 100)]
    pub length: usize,
    #[arg(long, env = "DDPRED_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Simulate this system instead of drawing one.
    #[arg(long)]
    pub system: Option<PathBuf>,
    /// Initial state: zero, or uniform on [-1, 1].
    #[arg(long, value_enum, default_value_t = InitialState::Zero)]
    pub x0: InitialState,
    /// Trajectory CSV; the system is written next to it as `<out>.system.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct WindowArgs {
    /// Offline trajectory CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Online window CSV: first Tp rows complete, next Tf rows need inputs only.
    #[arg(long)]
    pub online: PathBuf,
    /// Window length, must equal Tp + Tf when given.
    #[arg(long = "T")]
    pub t: Option<usize>,
    #[arg(long = "Tp")]
    pub t_p: usize,
    #[arg(long = "Tf")]
    pub t_f: usize,
    /// State dimension, used to form r = mT + n.
    #[arg(long)]
    pub order: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub window: WindowArgs,
    #[arg(long, value_enum, default_value_t = MethodArg::Raw)]
    pub method: MethodArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write g* to this file.
    #[arg(long)]
    pub emit_g: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Raw,
    Tsvd,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Raw => Method::Raw,
            MethodArg::Tsvd => Method::Tsvd,
        }
    }
}

#[derive(Debug, Args)]
pub struct BoundArgs {
    #[command(flatten)]
    pub window: WindowArgs,
    /// Entrywise noise bound N.
    #[arg(long)]
    pub noise_level: f64,
    /// 1: raw-data bound, 2: TSVD bound.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub theorem: u8,
    /// Inputs are noisy as well.
    #[arg(long)]
    pub eiv: bool,
    /// Use this clean sigma_r(H1) instead of its measured lower bound.
    #[arg(long)]
    pub oracle_sigma_r: Option<f64>,
    /// Also report the first-order (linear in N) form.
    #[arg(long)]
    pub linearized: bool,
    /// Include the individual terms.
    #[arg(long)]
    pub terms: bool,
    /// Key=value report; a CSV row goes to `<out>.csv`. Stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MonteCarloArgs {
    /// Flat JSON configuration; omitted keys take the full-scale defaults.
    #[arg(long, conflicts_with = "from_manifest")]
    pub config: Option<PathBuf>,
    /// Rerun the configuration recorded in a manifest.
    #[arg(long)]
    pub from_manifest: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Multiply num_systems and realizations_per_level.
    #[arg(long)]
    pub scale: Option<f64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Overrides master_seed from the configuration.
    #[arg(long, env = "DDPRED_SEED")]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Written next to every batch output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    /// Fully resolved configuration (scale already applied).
    pub config: ExperimentConfig,
    pub master_seed: u64,
    pub scale: Option<f64>,
    pub config_sha256: String,
    pub input_digests: Vec<(String, String)>,
    pub records_sha256: String,
    pub timestamp_unix: u64,
    pub normalized_error: String,
    pub mean_bound: String,
    pub report: RunReport,
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".system.csv");
    PathBuf::from(s)
}

fn with_suffix(out: &Path, suffix: &str) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    if args.length == 0 {
        return Err(usage("--length must be at least 1"));
    }
    let system_seed = montecarlo::stream_seed(args.seed, &[0]);
    let sys = match &args.system {
        Some(path) => io::read_system(path)?,
        None => {
            let need = |v: Option<usize>, name: &str| {
                v.filter(|&x| x > 0)
                    .ok_or_else(|| usage(format!("--{name} is required (and positive) without --system")))
            };
            let n = need(args.order, "order")?;
            let m = need(args.inputs, "inputs")?;
            let p = need(args.outputs, "outputs")?;
            lti::random_stable_system(n, m, p, system_seed)?
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(montecarlo::stream_seed(args.seed, &[1]));
    let u = Matrix::from_fn(sys.inputs(), args.length, |_, _| rng.random_range(-1.0..=1.0));
    let x0 = match args.x0 {
        InitialState::Zero => Vector::zeros(sys.order()),
        InitialState::Random => Vector::from_fn(sys.order(), |_, _| rng.random_range(-1.0..=1.0)),
    };
    let y = lti::simulate(&sys, &x0, &u)?;
    io::write_trajectory(&args.out, &Trajectory::new(u, y)?)?;
    io::write_system(&sidecar_path(&args.out), &sys)?;
    Ok(())
}

struct LoadedWindow {
    blocks: HankelBlocks,
    online: OnlineWindow,
    rank: Option<usize>,
}

fn load_window(w: &WindowArgs, need_order: bool) -> Result<LoadedWindow> {
    if w.t_p == 0 || w.t_f == 0 {
        return Err(usage("--Tp and --Tf must be positive"));
    }
    if let Some(t) = w.t {
        if t != w.t_p + w.t_f {
            return Err(usage(format!("--T {t} differs from --Tp + --Tf = {}", w.t_p + w.t_f)));
        }
    }
    if need_order && w.order.is_none() {
        return Err(usage("--order is required to form the rank r = mT + n"));
    }
    let traj = io::read_trajectory(&w.data)?;
    let window = w.t_p + w.t_f;
    if traj.len() < window {
        return Err(usage(format!(
            "data has {} samples, fewer than the window length T = {window}",
            traj.len()
        )));
    }
    let blocks = HankelBlocks::from_trajectory(&traj, w.t_p, w.t_f)?;
    let online = io::read_online_window(&w.online, w.t_p, w.t_f)?;
    online.check_against(&blocks)?;
    Ok(LoadedWindow {
        rank: w.order.map(|n| blocks.m() * window + n),
        blocks,
        online,
    })
}

pub fn cmd_predict(args: &PredictArgs) -> Result<String> {
    let method: Method = args.method.into();
    let lw = load_window(&args.window, method == Method::Tsvd)?;
    let result = match method {
        Method::Raw => predictor::predict_raw(&lw.blocks, &lw.online)?,
        Method::Tsvd => predictor::predict_tsvd(&lw.blocks, lw.rank.expect("checked"), &lw.online)?,
    };
    if let Some(path) = &args.emit_g {
        io::write_text(path, &io::format_vector("g", &result.g_star))?;
    }
    if result.excitation_deficit {
        eprintln!("warning: input rows of H1 are rank deficient");
    }
    let text = io::format_prediction(&result.y_pred, lw.blocks.p());
    match &args.out {
        Some(path) => {
            io::write_text(path, &text)?;
            Ok(String::new())
        }
        None => Ok(text),
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// `(key, value)` pairs shared by the text and CSV renderings.
fn bound_fields(report: &BoundReport, args: &BoundArgs) -> Result<Vec<(&'static str, String)>> {
    let mut f = vec![
        ("theorem", args.theorem.to_string()),
        ("predictor", report.variant.predictor.to_string()),
        ("noise", if args.eiv { "eiv" } else { "oe" }.to_string()),
        ("sigma_r", if args.oracle_sigma_r.is_some() { "oracle" } else { "measured" }.to_string()),
        ("noise_level", fmt_f64(report.noise_bound)),
        ("applicable", report.applicable().to_string()),
        ("delta_sn", fmt_f64(report.delta_sn)),
        ("sigma_sq", opt(report.sigma_sq)),
        ("total", opt(report.total())),
    ];
    if args.terms {
        f.push(("perturbation", opt(report.terms.map(|t| t.perturbation))));
        f.push(("online_noise", opt(report.terms.map(|t| t.online_noise))));
        f.push(("offset", opt(report.terms.map(|t| t.offset))));
    }
    if args.linearized {
        let lin = if report.applicable() {
            Some(match report.variant.predictor {
                Method::Raw => bounds::linearized_bound_raw(&LinearizedRaw::from_report(report)?, report.noise_bound),
                Method::Tsvd => {
                    bounds::linearized_bound_tsvd(&LinearizedTsvd::from_report(report)?, report.noise_bound)
                }
            })
        } else {
            None
        };
        f.push(("linearized_total", opt(lin)));
    }
    Ok(f)
}

pub fn cmd_bound(args: &BoundArgs) -> Result<String> {
    if !(args.noise_level >= 0.0 && args.noise_level.is_finite()) {
        return Err(usage("--noise-level must be finite and nonnegative"));
    }
    let lw = load_window(&args.window, true)?;
    let mut options = BoundOptions::default();
    if args.eiv {
        options = options.eiv();
    }
    if let Some(s) = args.oracle_sigma_r {
        if !(s > 0.0 && s.is_finite()) {
            return Err(usage("--oracle-sigma-r must be positive"));
        }
        options = options.oracle(s);
    }
    let r = lw.rank.expect("checked");
    let report = match args.theorem {
        1 => bounds::bound_raw(&lw.blocks, &lw.online, r, args.noise_level, options)?,
        _ => bounds::bound_tsvd(&lw.blocks, r, &lw.online, args.noise_level, options)?,
    };
    let fields = bound_fields(&report, args)?;
    let mut text = String::new();
    for (k, v) in &fields {
        let _ = writeln!(text, "{k}={v}");
    }
    let keys: Vec<&str> = fields.iter().map(|f| f.0).collect();
    let vals: Vec<&str> = fields.iter().map(|f| f.1.as_str()).collect();
    let csv = format!("{}\n{}\n", keys.join(","), vals.join(","));
    match &args.out {
        Some(path) => {
            io::write_text(path, &text)?;
            io::write_text(&with_suffix(path, ".csv"), &csv)?;
            Ok(String::new())
        }
        None => Ok(format!("{text}\n{csv}")),
    }
}

fn parse_config(text: &str, source: &str) -> Result<ExperimentConfig> {
    serde_json::from_str(text).map_err(|e| usage(format!("{source}: {e}")))
}

pub fn cmd_montecarlo(args: &MonteCarloArgs) -> Result<String> {
    let mut input_digests = Vec::new();
    let (mut cfg, scale) = match (&args.config, &args.from_manifest) {
        (Some(path), _) => {
            let text = io::read_text(path)?;
            input_digests.push((path.display().to_string(), io::sha256_hex(text.as_bytes())));
            (parse_config(&text, &path.display().to_string())?, args.scale)
        }
        (None, Some(path)) => {
            let text = io::read_text(path)?;
            input_digests.push((path.display().to_string(), io::sha256_hex(text.as_bytes())));
            let manifest: RunManifest =
                serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            if args.scale.is_some() {
                return Err(usage("--scale cannot be combined with --from-manifest"));
            }
            (manifest.config, None)
        }
        (None, None) => (ExperimentConfig::default(), args.scale),
    };
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    if let Some(s) = scale {
        cfg = cfg.scaled(s)?;
    }
    cfg.validate()?;
    if args.jobs == Some(0) {
        return Err(usage("--jobs must be at least 1"));
    }

    let out = montecarlo::run_experiment_with_jobs(&cfg, args.jobs)?;
    std::fs::create_dir_all(&args.out_dir).map_err(|source| io::IoError::Io {
        path: args.out_dir.clone(),
        source,
    })?;
    let records_text = io::format_records(&out.records);
    io::write_text(&args.out_dir.join("records.csv"), &records_text)?;
    if !out.records.is_empty() {
        let stats = montecarlo::summarize(&out.records)?;
        io::write_summary(&args.out_dir.join("summary.csv"), &stats)?;
    }
    let config_json = serde_json::to_string(&cfg).expect("config serializes");
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        master_seed: cfg.master_seed,
        config_sha256: io::sha256_hex(config_json.as_bytes()),
        config: cfg.clone(),
        scale,
        input_digests,
        records_sha256: io::sha256_hex(records_text.as_bytes()),
        timestamp_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        normalized_error: "prediction error divided by the 2-norm of the clean prediction".into(),
        mean_bound: "arithmetic mean over applicable scenarios at each level".into(),
        report: out.report.clone(),
    };
    let manifest_json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    io::write_text(&args.out_dir.join("manifest.json"), &manifest_json)?;

    let r = &out.report;
    let msg = format!(
        "{} records ({} expected), {} system resamples, {} noise resamples, {} lag conflicts",
        out.records.len(),
        cfg.expected_records(),
        r.system_resamples,
        r.noise_resamples,
        r.lag_conflicts
    );
    if !r.is_complete() {
        return Err(Error::Incomplete(format!(
            "{msg}; retry cap exhausted for systems {:?}, their cells are missing",
            r.skipped_systems
        )));
    }
    Ok(msg)
}

pub fn cmd_summarize(args: &SummarizeArgs) -> Result<()> {
    let records = io::read_records(&args.records)?;
    if records.is_empty() {
        return Err(usage(format!("{} contains no records", args.records.display())));
    }
    let stats = montecarlo::summarize(&records)?;
    io::write_summary(&args.out, &stats)?;
    Ok(())
}

/// Runs one parsed command, returning text destined for stdout.
pub fn execute(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a).map(|_| String::new()),
        Command::Predict(a) => cmd_predict(a),
        Command::Bound(a) => cmd_bound(a),
        Command::Montecarlo(a) => cmd_montecarlo(a),
        Command::Summarize(a) => cmd_summarize(a).map(|_| String::new()),
    }
}

/// Parses `args` and runs; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(text) => {
            if !text.is_empty() {
                print!("{text}");
                if !text.ends_with('\n') {
                    println!();
                }
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Reads a system sidecar, for callers that want the oracle.
pub fn read_sidecar(trajectory: &Path) -> Result<StateSpace> {
    Ok(io::read_system(&sidecar_path(trajectory))?)
}
