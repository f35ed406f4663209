//! Monte Carlo harness: random systems, noise scenarios, both predictors and
//! both bounds per cell, plus the aggregate statistics.
//!
//! Every random draw comes from a ChaCha stream keyed by the cell index, so a
//! record set depends only on the configuration and never on scheduling.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::{self, BoundError, BoundOptions, BoundReport};
use crate::hankel::{self, HankelBlocks, HankelError, OnlineWindow};
use crate::lti::{self, LtiError, StateSpace, Trajectory};
use crate::numerics::{Matrix, NumericsError, Tolerance, Vector};
use crate::predictor::{self, PredictError, PredictionResult};

#[derive(Debug, Error)]
pub enum MonteCarloError {
    #[error("invalid experiment configuration: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("thread pool: {0}")]
    ThreadPool(String),
    #[error(transparent)]
    Lti(#[from] LtiError),
    #[error(transparent)]
    Hankel(#[from] HankelError),
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error(transparent)]
    Bound(#[from] BoundError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = std::result::Result<T, MonteCarloError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TpPolicy {
    /// `T_p` uniform on `tp_min..=tp_max`.
    Random,
    /// `T_p = n/p`; systems with `p ∤ n` are redrawn.
    ForceNOverP,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaSnTarget {
    /// `δ_SN(H̃₁)`.
    Raw,
    /// `δ_SN(Ĥ₁)`.
    Tsvd,
    Both,
}

/// Flat experiment configuration; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub num_systems: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub tf_min: usize,
    pub tf_max: usize,
    pub data_length: usize,
    pub noise_levels: Vec<f64>,
    pub realizations_per_level: usize,
    pub tp_policy: TpPolicy,
    pub tp_min: usize,
    pub tp_max: usize,
    /// Cells must satisfy `δ_SN > threshold` on the target matrix.
    pub delta_sn_threshold: Option<f64>,
    pub delta_sn_target: DeltaSnTarget,
    pub master_seed: u64,
    pub retry_cap: usize,
}

/// `count` logarithmically spaced points from `lo` to `hi` inclusive.
pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.log10(), hi.log10());
            (0..count)
                .map(|i| 10f64.powf(a + (b - a) * i as f64 / (count - 1) as f64))
                .collect()
        }
    }
}

impl Default for ExperimentConfig {
    /// The full-scale study: 1000 systems, 50 levels in [1e-8, 1e-3], 100
    /// realizations per level, L = 100.
    fn default() -> Self {
        ExperimentConfig {
            num_systems: 1000,
            n_min: 1,
            n_max: 2,
            tf_min: 1,
            tf_max: 3,
            data_length: 100,
            noise_levels: log_spaced(1e-8, 1e-3, 50),
            realizations_per_level: 100,
            tp_policy: TpPolicy::Random,
            tp_min: 1,
            tp_max: 3,
            delta_sn_threshold: None,
            delta_sn_target: DeltaSnTarget::Both,
            master_seed: 0,
            retry_cap: 100,
        }
    }
}

impl ExperimentConfig {
    /// 50 systems, 10 levels, 10 realizations.
    pub fn desk() -> Self {
        ExperimentConfig {
            num_systems: 50,
            noise_levels: log_spaced(1e-8, 1e-3, 10),
            realizations_per_level: 10,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(MonteCarloError::Config(msg));
        if self.num_systems == 0 {
            return fail("num_systems must be at least 1".into());
        }
        if self.n_min == 0 || self.n_min > self.n_max {
            return fail(format!("order range {}..={} is empty", self.n_min, self.n_max));
        }
        if self.tf_min == 0 || self.tf_min > self.tf_max {
            return fail(format!("T_f range {}..={} is empty", self.tf_min, self.tf_max));
        }
        if self.tp_policy == TpPolicy::Random && (self.tp_min == 0 || self.tp_min > self.tp_max) {
            return fail(format!("T_p range {}..={} is empty", self.tp_min, self.tp_max));
        }
        if self.noise_levels.is_empty() {
            return fail("noise_levels is empty".into());
        }
        if self.noise_levels.iter().any(|n| !(n.is_finite() && *n > 0.0)) {
            return fail("noise levels must be finite and strictly positive".into());
        }
        if self.noise_levels.windows(2).any(|w| w[0] >= w[1]) {
            return fail("noise levels must be strictly increasing".into());
        }
        if self.realizations_per_level == 0 {
            return fail("realizations_per_level must be at least 1".into());
        }
        if self.retry_cap == 0 {
            return fail("retry_cap must be at least 1".into());
        }
        if let Some(t) = self.delta_sn_threshold {
            if !t.is_finite() {
                return fail("delta_sn_threshold must be finite".into());
            }
        }
        let max_tp = match self.tp_policy {
            TpPolicy::Random => self.tp_max,
            TpPolicy::ForceNOverP => self.n_max,
        };
        if self.data_length < max_tp + self.tf_max {
            return fail(format!(
                "data_length {} shorter than the largest window {}",
                self.data_length,
                max_tp + self.tf_max
            ));
        }
        Ok(())
    }

    /// Multiplies system and realization counts, keeping at least one of each.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(MonteCarloError::Config(format!("scale must be positive, got {factor}")));
        }
        let scale = |v: usize| ((v as f64 * factor).round() as usize).max(1);
        Ok(ExperimentConfig {
            num_systems: scale(self.num_systems),
            realizations_per_level: scale(self.realizations_per_level),
            ..self.clone()
        })
    }

    pub fn expected_records(&self) -> usize {
        self.num_systems * self.noise_levels.len() * self.realizations_per_level
    }
}

const STREAM_SYSTEM: u64 = 0x5359_5354;
const STREAM_CELL: u64 = 0x4345_4c4c;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from the master seed and a cell index.
pub fn stream_seed(master: u64, index: &[u64]) -> u64 {
    index
        .iter()
        .fold(splitmix64(master), |acc, &i| splitmix64(acc ^ splitmix64(i)))
}

fn stream(master: u64, index: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(master, index))
}

fn uniform_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..=1.0))
}

/// Why a system draw was discarded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rejection {
    /// `p ∤ n` under `ForceNOverP`.
    Divisibility,
    /// `T_p < ℓ`; under `ForceNOverP` this is the `n/p < ℓ` conflict.
    LagConflict,
    /// Clean Hankel matrix fails `rank(H) = mT + n`.
    Persistency,
    /// Generator exhausted its own observability retries.
    Generation,
    /// Some cell never met the `δ_SN` threshold within `retry_cap` noise draws.
    Threshold,
}

/// Noise-free data and online window for one accepted system.
#[derive(Debug, Clone)]
pub struct SystemContext {
    pub system_id: usize,
    pub system: StateSpace,
    pub lag: usize,
    pub t_p: usize,
    pub t_f: usize,
    pub inputs: Matrix,
    pub outputs: Matrix,
    pub clean: HankelBlocks,
    pub online: OnlineWindow,
    /// Online samples `y_ini` and the true continuation, from `x_ini`.
    pub online_truth: Vector,
    /// `Y_f H₁† h` on clean data.
    pub y_pred: Vector,
}

impl SystemContext {
    pub fn n(&self) -> usize {
        self.system.order()
    }
    pub fn m(&self) -> usize {
        self.system.inputs()
    }
    pub fn p(&self) -> usize {
        self.system.outputs()
    }
    pub fn rank(&self) -> usize {
        self.m() * (self.t_p + self.t_f) + self.n()
    }

    /// Corrupts offline outputs and `y_ini` with independent draws from `rng`,
    /// then runs both predictors and both measured OE bounds.
    pub fn evaluate_cell<R: Rng>(&self, rng: &mut R, noise_bound: f64) -> Result<CellOutcome> {
        let y_noisy = hankel::corrupt_output_with(rng, &self.outputs, noise_bound)?;
        let y_ini = hankel::corrupt_vector_with(rng, &self.online.y_ini, noise_bound)?;
        let traj = Trajectory::new(self.inputs.clone(), y_noisy)?;
        let noisy = HankelBlocks::from_trajectory(&traj, self.t_p, self.t_f)?;
        let online_noisy = self.online.with_y_ini(y_ini);
        let r = self.rank();
        let raw = predictor::predict_raw(&noisy, &online_noisy)?;
        let tsvd = predictor::predict_tsvd(&noisy, r, &online_noisy)?;
        let bound1 = bounds::bound_raw(&noisy, &online_noisy, r, noise_bound, BoundOptions::default())?;
        let bound2 = bounds::bound_tsvd(&noisy, r, &online_noisy, noise_bound, BoundOptions::default())?;
        Ok(CellOutcome {
            noise_bound,
            noisy,
            online_noisy,
            raw,
            tsvd,
            bound1,
            bound2,
        })
    }

    pub fn record(&self, cell: &CellOutcome, realization: usize) -> ScenarioRecord {
        let err_raw = (&cell.raw.y_pred - &self.y_pred).norm();
        let err_tsvd = (&cell.tsvd.y_pred - &self.y_pred).norm();
        let norm_ypred = self.y_pred.norm();
        let bound1 = cell.bound1.total();
        let bound2 = cell.bound2.total();
        let gap = |b: Option<f64>, e: f64| b.and_then(|b| relative_gap(b, e, norm_ypred).ok());
        ScenarioRecord {
            system_id: self.system_id,
            n: self.n(),
            m: self.m(),
            p: self.p(),
            t_p: self.t_p,
            t_f: self.t_f,
            noise: cell.noise_bound,
            realization,
            err_raw,
            err_tsvd,
            norm_ypred,
            bound1,
            bound2,
            delta_sn_raw: cell.bound1.delta_sn,
            delta_sn_tsvd: cell.bound2.delta_sn,
            relgap1: gap(bound1, err_raw),
            relgap2: gap(bound2, err_tsvd),
            tsvd_improved: err_tsvd < err_raw,
        }
    }
}

/// Everything computed for one noise scenario.
#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub noise_bound: f64,
    pub noisy: HankelBlocks,
    pub online_noisy: OnlineWindow,
    pub raw: PredictionResult,
    pub tsvd: PredictionResult,
    pub bound1: BoundReport,
    pub bound2: BoundReport,
}

impl CellOutcome {
    pub fn meets_threshold(&self, threshold: Option<f64>, target: DeltaSnTarget) -> bool {
        let Some(t) = threshold else { return true };
        match target {
            DeltaSnTarget::Raw => self.bound1.delta_sn > t,
            DeltaSnTarget::Tsvd => self.bound2.delta_sn > t,
            DeltaSnTarget::Both => self.bound1.delta_sn > t && self.bound2.delta_sn > t,
        }
    }
}

/// One Monte Carlo cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioRecord {
    pub system_id: usize,
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub t_p: usize,
    pub t_f: usize,
    pub noise: f64,
    pub realization: usize,
    pub err_raw: f64,
    pub err_tsvd: f64,
    pub norm_ypred: f64,
    pub bound1: Option<f64>,
    pub bound2: Option<f64>,
    pub delta_sn_raw: f64,
    pub delta_sn_tsvd: f64,
    pub relgap1: Option<f64>,
    pub relgap2: Option<f64>,
    pub tsvd_improved: bool,
}

impl ScenarioRecord {
    pub fn applicable1(&self) -> bool {
        self.bound1.is_some()
    }
    pub fn applicable2(&self) -> bool {
        self.bound2.is_some()
    }
}

/// `(rhs − lhs)/‖y_pred‖₂ · 100`.
pub fn relative_gap(rhs: f64, lhs: f64, y_pred_norm: f64) -> Result<f64> {
    if y_pred_norm.is_nan() || y_pred_norm <= 0.0 {
        return Err(MonteCarloError::Domain(format!(
            "relative gap needs a positive prediction norm, got {y_pred_norm}"
        )));
    }
    Ok((rhs - lhs) / y_pred_norm * 100.0)
}

/// Outcome of one system draw.
#[derive(Debug, Clone)]
pub enum SystemDraw {
    Accepted(Box<SystemContext>),
    Rejected(Rejection),
}

/// Draws system `system_id`, attempt `attempt`, and its clean data.
pub fn draw_system(cfg: &ExperimentConfig, system_id: usize, attempt: usize) -> Result<SystemDraw> {
    let mut rng = stream(cfg.master_seed, &[STREAM_SYSTEM, system_id as u64, attempt as u64]);
    let n = rng.random_range(cfg.n_min..=cfg.n_max);
    let m = rng.random_range(1..=n);
    let p = rng.random_range(1..=n);
    let t_f = rng.random_range(cfg.tf_min..=cfg.tf_max);
    let t_p = match cfg.tp_policy {
        TpPolicy::Random => rng.random_range(cfg.tp_min..=cfg.tp_max),
        TpPolicy::ForceNOverP => {
            if n % p != 0 {
                return Ok(SystemDraw::Rejected(Rejection::Divisibility));
            }
            n / p
        }
    };
    let system = match lti::random_stable_system_with(&mut rng, n, m, p) {
        Ok(s) => s,
        Err(LtiError::GenerationFailed(_)) => return Ok(SystemDraw::Rejected(Rejection::Generation)),
        Err(e) => return Err(e.into()),
    };
    let lag = lti::lag(&system)?;
    if t_p < lag {
        return Ok(SystemDraw::Rejected(Rejection::LagConflict));
    }

    let inputs = uniform_matrix(&mut rng, m, cfg.data_length);
    let outputs = lti::simulate(&system, &Vector::zeros(n), &inputs)?;
    let clean = HankelBlocks::from_trajectory(&Trajectory::new(inputs.clone(), outputs.clone())?, t_p, t_f)?;
    if !hankel::check_persistency(&clean.stacked(), m, t_p + t_f, n, Tolerance::Default) {
        return Ok(SystemDraw::Rejected(Rejection::Persistency));
    }

    let x_ini = Vector::from_fn(n, |_, _| rng.random_range(-1.0..=1.0));
    let u_online = uniform_matrix(&mut rng, m, t_p + t_f);
    let y_online = lti::simulate(&system, &x_ini, &u_online)?;
    let online_traj = Trajectory::new(u_online, y_online.clone())?;
    let online = OnlineWindow::from_trajectory(&online_traj, t_p, t_f)?;
    let online_truth = Vector::from_iterator(p * t_f, y_online.columns(t_p, t_f).iter().copied());
    let y_pred = predictor::predict_raw(&clean, &online)?.y_pred;

    Ok(SystemDraw::Accepted(Box::new(SystemContext {
        system_id,
        system,
        lag,
        t_p,
        t_f,
        inputs,
        outputs,
        clean,
        online,
        online_truth,
        y_pred,
    })))
}

/// Counters for resampling activity.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub system_resamples: usize,
    pub noise_resamples: usize,
    pub divisibility_rejections: usize,
    pub lag_conflicts: usize,
    pub persistency_rejections: usize,
    pub generation_rejections: usize,
    pub threshold_rejections: usize,
    /// Systems for which every attempt was rejected; all their cells are missing.
    pub skipped_systems: Vec<usize>,
}

impl RunReport {
    fn count(&mut self, why: Rejection) {
        self.system_resamples += 1;
        match why {
            Rejection::Divisibility => self.divisibility_rejections += 1,
            Rejection::LagConflict => self.lag_conflicts += 1,
            Rejection::Persistency => self.persistency_rejections += 1,
            Rejection::Generation => self.generation_rejections += 1,
            Rejection::Threshold => self.threshold_rejections += 1,
        }
    }

    fn merge(&mut self, other: &RunReport) {
        self.system_resamples += other.system_resamples;
        self.noise_resamples += other.noise_resamples;
        self.divisibility_rejections += other.divisibility_rejections;
        self.lag_conflicts += other.lag_conflicts;
        self.persistency_rejections += other.persistency_rejections;
        self.generation_rejections += other.generation_rejections;
        self.threshold_rejections += other.threshold_rejections;
        self.skipped_systems.extend(&other.skipped_systems);
    }

    pub fn is_complete(&self) -> bool {
        self.skipped_systems.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub records: Vec<ScenarioRecord>,
    pub report: RunReport,
}

/// Runs every cell of one system, resampling noise and then the system as
/// needed to satisfy the configured `δ_SN` threshold.
pub fn run_system(cfg: &ExperimentConfig, system_id: usize) -> Result<(Vec<ScenarioRecord>, RunReport)> {
    let mut report = RunReport::default();
    'attempts: for attempt in 0..cfg.retry_cap {
        let ctx = match draw_system(cfg, system_id, attempt)? {
            SystemDraw::Accepted(ctx) => *ctx,
            SystemDraw::Rejected(why) => {
                report.count(why);
                continue;
            }
        };
        let reps = cfg.realizations_per_level;
        let mut records = Vec::with_capacity(cfg.noise_levels.len() * reps);
        // largest noise first: threshold failures surface early
        for (level, &noise) in cfg.noise_levels.iter().enumerate().rev() {
            for realization in 0..reps {
                let mut accepted = None;
                for noise_attempt in 0..cfg.retry_cap {
                    let mut rng = stream(
                        cfg.master_seed,
                        &[
                            STREAM_CELL,
                            system_id as u64,
                            attempt as u64,
                            level as u64,
                            realization as u64,
                            noise_attempt as u64,
                        ],
                    );
                    let cell = ctx.evaluate_cell(&mut rng, noise)?;
                    if cell.meets_threshold(cfg.delta_sn_threshold, cfg.delta_sn_target) {
                        accepted = Some(cell);
                        break;
                    }
                    report.noise_resamples += 1;
                }
                match accepted {
                    Some(cell) => records.push(ctx.record(&cell, realization)),
                    None => {
                        report.count(Rejection::Threshold);
                        continue 'attempts;
                    }
                }
            }
        }
        records.sort_by(|a, b| {
            a.noise
                .total_cmp(&b.noise)
                .then(a.realization.cmp(&b.realization))
        });
        return Ok((records, report));
    }
    report.skipped_systems.push(system_id);
    Ok((Vec::new(), report))
}

/// Runs the full experiment on the global rayon pool.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let per_system: Vec<_> = (0..cfg.num_systems)
        .into_par_iter()
        .map(|s| run_system(cfg, s))
        .collect::<Result<_>>()?;
    let mut records = Vec::with_capacity(cfg.expected_records());
    let mut report = RunReport::default();
    // collect() preserves index order, so this fold is schedule independent
    for (recs, rep) in per_system {
        records.extend(recs);
        report.merge(&rep);
    }
    Ok(ExperimentOutput { records, report })
}

/// Runs on a dedicated pool with `jobs` threads (`None` = rayon default).
pub fn run_experiment_with_jobs(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<ExperimentOutput> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        builder = builder.num_threads(j.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| MonteCarloError::ThreadPool(e.to_string()))?;
    pool.install(|| run_experiment(cfg))
}

/// Five-number summary with 1.5·IQR whiskers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: usize,
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl BoxStats {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q1 = quantile_sorted(&v, 0.25);
        let q3 = quantile_sorted(&v, 0.75);
        let iqr = q3 - q1;
        let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        let inside: Vec<f64> = v.iter().copied().filter(|x| (lo_fence..=hi_fence).contains(x)).collect();
        Some(BoxStats {
            count: v.len(),
            min: v[0],
            q1,
            median: quantile_sorted(&v, 0.5),
            q3,
            max: v[v.len() - 1],
            mean: v.iter().sum::<f64>() / v.len() as f64,
            whisker_low: inside.first().copied().unwrap_or(q1),
            whisker_high: inside.last().copied().unwrap_or(q3),
            outliers: v.len() - inside.len(),
        })
    }
}

/// Statistics for one noise level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub noise: f64,
    pub scenarios: usize,
    pub applicable1: usize,
    pub applicable2: usize,
    /// Arithmetic mean over applicable scenarios.
    pub mean_bound1: Option<f64>,
    pub mean_bound2: Option<f64>,
    pub max_relgap1: Option<f64>,
    pub max_relgap2: Option<f64>,
    /// Relative gaps over all applicable scenarios.
    pub relgap1: Option<BoxStats>,
    pub relgap2: Option<BoxStats>,
    /// Per-system worst-case relative gap, summarized across systems.
    pub worst_case_relgap1: Option<BoxStats>,
    pub worst_case_relgap2: Option<BoxStats>,
    /// Errors divided by `‖y_pred‖₂`.
    pub normalized_err_raw: Option<BoxStats>,
    pub normalized_err_tsvd: Option<BoxStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateStats {
    pub levels: Vec<LevelStats>,
    pub scenarios: usize,
    pub applicable1: usize,
    pub applicable2: usize,
    pub tsvd_improved_fraction: f64,
    /// Log-log slope of mean bound against `N`.
    pub slope_bound1: Option<f64>,
    pub slope_bound2: Option<f64>,
}

/// OLS slope of `log10(value)` on `log10(N)`.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(MonteCarloError::Domain("slope fit needs at least two points".into()));
    }
    if points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(MonteCarloError::Domain("slope fit needs positive coordinates".into()));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.log10(), y.log10())).collect();
    let k = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / k;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(MonteCarloError::Domain("slope fit needs distinct noise levels".into()));
    }
    Ok(sxy / sxx)
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

fn max_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    values.fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
}

fn worst_case_per_system(records: &[&ScenarioRecord], gap: impl Fn(&ScenarioRecord) -> Option<f64>) -> Vec<f64> {
    let mut worst: BTreeMap<usize, f64> = BTreeMap::new();
    for r in records {
        if let Some(g) = gap(r) {
            worst
                .entry(r.system_id)
                .and_modify(|w| *w = w.max(g))
                .or_insert(g);
        }
    }
    worst.into_values().collect()
}

/// Aggregates records per noise level and globally.
pub fn summarize(records: &[ScenarioRecord]) -> Result<AggregateStats> {
    if records.is_empty() {
        return Err(MonteCarloError::Domain("cannot summarize an empty record set".into()));
    }
    let mut by_level: BTreeMap<u64, Vec<&ScenarioRecord>> = BTreeMap::new();
    for r in records {
        // positive floats order like their bit patterns
        by_level.entry(r.noise.to_bits()).or_default().push(r);
    }
    let levels: Vec<LevelStats> = by_level
        .values()
        .map(|recs| {
            let gaps1: Vec<f64> = recs.iter().filter_map(|r| r.relgap1).collect();
            let gaps2: Vec<f64> = recs.iter().filter_map(|r| r.relgap2).collect();
            let norm_err = |f: fn(&ScenarioRecord) -> f64| -> Vec<f64> {
                recs.iter()
                    .filter(|r| r.norm_ypred > 0.0)
                    .map(|r| f(r) / r.norm_ypred)
                    .collect()
            };
            LevelStats {
                noise: recs[0].noise,
                scenarios: recs.len(),
                applicable1: recs.iter().filter(|r| r.applicable1()).count(),
                applicable2: recs.iter().filter(|r| r.applicable2()).count(),
                mean_bound1: mean(recs.iter().filter_map(|r| r.bound1)),
                mean_bound2: mean(recs.iter().filter_map(|r| r.bound2)),
                max_relgap1: max_of(gaps1.iter().copied()),
                max_relgap2: max_of(gaps2.iter().copied()),
                relgap1: BoxStats::from_values(&gaps1),
                relgap2: BoxStats::from_values(&gaps2),
                worst_case_relgap1: BoxStats::from_values(&worst_case_per_system(recs, |r| r.relgap1)),
                worst_case_relgap2: BoxStats::from_values(&worst_case_per_system(recs, |r| r.relgap2)),
                normalized_err_raw: BoxStats::from_values(&norm_err(|r| r.err_raw)),
                normalized_err_tsvd: BoxStats::from_values(&norm_err(|r| r.err_tsvd)),
            }
        })
        .collect();
    let slope = |f: fn(&LevelStats) -> Option<f64>| {
        let pts: Vec<(f64, f64)> = levels.iter().filter_map(|l| f(l).map(|v| (l.noise, v))).collect();
        fit_loglog_slope(&pts).ok()
    };
    Ok(AggregateStats {
        scenarios: records.len(),
        applicable1: records.iter().filter(|r| r.applicable1()).count(),
        applicable2: records.iter().filter(|r| r.applicable2()).count(),
        tsvd_improved_fraction: records.iter().filter(|r| r.tsvd_improved).count() as f64 / records.len() as f64,
        slope_bound1: slope(|l| l.mean_bound1),
        slope_bound2: slope(|l| l.mean_bound2),
        levels,
    })
}
