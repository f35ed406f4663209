//! Computable worst-case bounds on the prediction error under entrywise
//! bounded output noise.
//!
//! Every bound is evaluated from measured (noisy) data, the noise level `N`
//! and the rank `r = mT + n`. The raw-data bound covers
//! `‖Ỹ_f H̃₁† h̃ − Y_f H₁† h‖₂`; the truncated bound covers the same error for
//! the predictor built on the rank-`r` TSVD of `H̃`. Both are reported as
//! three additive summands so the dominant factor is visible.
//!
//! Applicability requires `δ_SN = σ_r − √(pT_pM)·N > 0` on the relevant
//! matrix. When it fails the report is returned with `terms = None` rather
//! than an error, so batches can count and filter such cases.

use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hankel::{HankelBlocks, HankelError, OnlineWindow};
use crate::numerics::{self, Matrix, NumericsError, SvdFactors, Tolerance};
use crate::predictor::{self, Method, PredictError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundError {
    #[error("rank {rank} exceeds the smaller dimension {max} of the data matrix")]
    RankOutOfRange { rank: usize, max: usize },
    #[error("bound is not applicable: delta_SN = {0} <= 0")]
    Inapplicable(f64),
    #[error("domain error: {0}")]
    Domain(String),
    #[error(transparent)]
    Hankel(#[from] HankelError),
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = std::result::Result<T, BoundError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum NoiseSetting {
    /// Only outputs are noisy.
    #[default]
    OutputError,
    /// Inputs and outputs carry noise with the same entrywise bound.
    ErrorsInVariables,
}

/// Where `σ_r(H₁)` comes from in the amplification factor.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub enum SigmaRSource {
    /// Lower-bounded through `δ_SN` of the measured matrix.
    #[default]
    Measured,
    /// Known clean `σ_r(H₁)`.
    Oracle(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BoundOptions {
    pub noise: NoiseSetting,
    pub sigma_r: SigmaRSource,
}

impl BoundOptions {
    pub fn eiv(self) -> Self {
        BoundOptions {
            noise: NoiseSetting::ErrorsInVariables,
            ..self
        }
    }

    pub fn oracle(self, sigma_r: f64) -> Self {
        BoundOptions {
            sigma_r: SigmaRSource::Oracle(sigma_r),
            ..self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundVariant {
    pub predictor: Method,
    pub options: BoundOptions,
}

/// Norm bounds on the noise terms: online `δ`, offline past `Δ₁`, offline
/// future `Δ₂`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationRadii {
    pub online: f64,
    pub past: f64,
    pub future: f64,
}

impl PerturbationRadii {
    /// Radii per unit noise level for the given setting.
    pub fn unit(p: usize, m: usize, t_p: usize, t_f: usize, cols: usize, noise: NoiseSetting) -> Self {
        let past_rows = match noise {
            NoiseSetting::OutputError => p * t_p,
            NoiseSetting::ErrorsInVariables => p * t_p + m * (t_p + t_f),
        } as f64;
        PerturbationRadii {
            online: past_rows.sqrt(),
            past: (past_rows * cols as f64).sqrt(),
            future: ((p * t_f * cols) as f64).sqrt(),
        }
    }

    pub fn for_blocks(blocks: &HankelBlocks, noise: NoiseSetting) -> Self {
        Self::unit(blocks.p(), blocks.m(), blocks.t_p(), blocks.t_f(), blocks.cols(), noise)
    }

    pub fn scaled(&self, noise_bound: f64) -> Self {
        PerturbationRadii {
            online: self.online * noise_bound,
            past: self.past * noise_bound,
            future: self.future * noise_bound,
        }
    }
}

/// `(√(pT_p)·N, √(pT_pM)·N, √(pT_fM)·N)`: bounds on `‖δ‖₂`, `‖Δ₁‖_F`, `‖Δ₂‖_F`.
pub fn lemma1_bounds(p: usize, t_p: usize, t_f: usize, cols: usize, noise_bound: f64) -> (f64, f64, f64) {
    let r = PerturbationRadii::unit(p, 1, t_p, t_f, cols, NoiseSetting::OutputError).scaled(noise_bound);
    (r.online, r.past, r.future)
}

fn check_rank(f: &SvdFactors, r: usize) -> Result<()> {
    let (rows, cols) = f.shape();
    let max = rows.min(cols);
    if r == 0 || r > max {
        return Err(BoundError::RankOutOfRange { rank: r, max });
    }
    Ok(())
}

/// `δ_SN(A) = σ_r(A) − √(pT_pM)·N`; may be negative.
pub fn delta_sn(a: &Matrix, r: usize, p: usize, t_p: usize, cols: usize, noise_bound: f64) -> Result<f64> {
    let f = numerics::svd(a)?;
    check_rank(&f, r)?;
    let (_, past, _) = lemma1_bounds(p, t_p, 1, cols, noise_bound);
    Ok(f.sigma(r)? - past)
}

/// `σ_sq(A) = max{δ_SN(A)⁻², σ_min(A)⁻²}`, `σ_min` over singular values above
/// the tolerance.
pub fn sigma_sq(
    a: &Matrix,
    r: usize,
    p: usize,
    t_p: usize,
    cols: usize,
    noise_bound: f64,
    tol: Tolerance,
) -> Result<f64> {
    let f = numerics::svd(a)?;
    check_rank(&f, r)?;
    let (_, past, _) = lemma1_bounds(p, t_p, 1, cols, noise_bound);
    let dsn = f.sigma(r)? - past;
    if dsn.is_nan() || dsn <= 0.0 {
        return Err(BoundError::Inapplicable(dsn));
    }
    let smin = f.sigma_min_nonzero(tol)?;
    Ok((1.0 / dsn).powi(2).max((1.0 / smin).powi(2)))
}

/// The three additive summands of a bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundTerms {
    /// Pseudoinverse perturbation from the offline past-output noise.
    pub perturbation: f64,
    /// Propagation of the online `y_ini` noise.
    pub online_noise: f64,
    /// Offline future-output (`Y_f`) perturbation.
    pub offset: f64,
}

impl BoundTerms {
    pub fn total(&self) -> f64 {
        self.perturbation + self.online_noise + self.offset
    }
}

/// Norms of measured quantities entering a bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasuredNorms {
    /// `‖Ỹ_f‖_F`.
    pub y_f: f64,
    /// `‖h̃‖₂`.
    pub h: f64,
    /// `‖H̃₁†‖_F` (raw) or `‖Ĥ₁†‖_F` (TSVD).
    pub pinv: f64,
    /// `‖H̃₁†h̃‖₂` (raw) or `‖Ŷ_f Ĥ₁†‖_F` (TSVD).
    pub coefficient: f64,
    /// `‖Ĥ₁ − H̃₁‖_F`; zero for the raw bound.
    pub truncation_h1: f64,
    /// `‖Ŷ_f − Ỹ_f‖_F`; zero for the raw bound.
    pub truncation_y_f: f64,
    /// `σ_r` of the matrix whose pseudoinverse is used.
    pub sigma_r: f64,
    /// Smallest singular value above tolerance of the same matrix.
    pub sigma_min: f64,
    /// `σ_r(H̃₁)`.
    pub sigma_r_h1_measured: f64,
    /// `σ_r(Ỹ_f)`, zero past its smaller dimension.
    pub sigma_r_y_f_measured: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub variant: BoundVariant,
    pub noise_bound: f64,
    pub delta_sn: f64,
    /// Amplification factor: `σ_sq(H̃₁)` for raw data, `δ_SN(Ĥ₁)⁻²` for TSVD
    /// (or their oracle replacements).
    pub sigma_sq: Option<f64>,
    pub terms: Option<BoundTerms>,
    pub norms: MeasuredNorms,
    pub radii: PerturbationRadii,
}

impl BoundReport {
    pub fn applicable(&self) -> bool {
        self.terms.is_some()
    }

    pub fn total(&self) -> Option<f64> {
        self.terms.map(|t| t.total())
    }
}

fn validate_noise(noise_bound: f64) -> Result<()> {
    if !(noise_bound >= 0.0 && noise_bound.is_finite()) {
        return Err(BoundError::Domain(format!(
            "noise bound must be finite and nonnegative, got {noise_bound}"
        )));
    }
    Ok(())
}

fn amplification(options: BoundOptions, dsn: f64, sigma_min: f64) -> Result<Option<f64>> {
    match options.sigma_r {
        SigmaRSource::Measured if dsn > 0.0 => Ok(Some((1.0 / dsn).powi(2).max((1.0 / sigma_min).powi(2)))),
        SigmaRSource::Measured => Ok(None),
        SigmaRSource::Oracle(s) if s > 0.0 && s.is_finite() => {
            Ok(Some((1.0 / s).powi(2).max((1.0 / sigma_min).powi(2))))
        }
        SigmaRSource::Oracle(s) => Err(BoundError::Domain(format!(
            "oracle sigma_r must be positive, got {s}"
        ))),
    }
}

/// Raw-data terms from precomputed norms.
pub fn raw_terms(norms: &MeasuredNorms, radii: &PerturbationRadii, sigma_sq: f64) -> BoundTerms {
    let y_f = norms.y_f + radii.future;
    let h = norms.h + radii.online;
    BoundTerms {
        perturbation: SQRT_2 * sigma_sq * radii.past * y_f * h,
        online_noise: norms.pinv * radii.online * y_f,
        offset: radii.future * norms.coefficient,
    }
}

/// TSVD terms from precomputed norms; `factor` plays the role of `δ_SN(Ĥ₁)⁻²`.
pub fn tsvd_terms(norms: &MeasuredNorms, radii: &PerturbationRadii, factor: f64) -> BoundTerms {
    let y_f = norms.y_f + radii.future;
    let h = norms.h + radii.online;
    BoundTerms {
        perturbation: SQRT_2 * y_f * factor * (norms.truncation_h1 + radii.past) * h,
        offset: norms.pinv * h * (norms.truncation_y_f + radii.future),
        online_noise: norms.coefficient * radii.online,
    }
}

fn check_online(blocks: &HankelBlocks, online: &OnlineWindow) -> Result<()> {
    online.check_against(blocks)?;
    Ok(())
}

/// Bound on `‖ỹ_pred − y_pred‖₂` for the predictor on raw noisy data.
pub fn bound_raw(
    blocks: &HankelBlocks,
    online: &OnlineWindow,
    r: usize,
    noise_bound: f64,
    options: BoundOptions,
) -> Result<BoundReport> {
    validate_noise(noise_bound)?;
    check_online(blocks, online)?;
    let h1 = blocks.h1();
    let f = numerics::svd(&h1)?;
    check_rank(&f, r)?;
    let radii = PerturbationRadii::for_blocks(blocks, options.noise).scaled(noise_bound);

    let sigma_r = f.sigma(r)?;
    let sigma_min = f.sigma_min_nonzero(Tolerance::Default)?;
    let dsn = sigma_r - radii.past;
    let h = online.stacked();
    let pinv = f.pseudo_inverse(Tolerance::Default);
    let norms = MeasuredNorms {
        y_f: blocks.y_f.norm(),
        h: h.norm(),
        pinv: pinv.norm(),
        coefficient: (&pinv * &h).norm(),
        truncation_h1: 0.0,
        truncation_y_f: 0.0,
        sigma_r,
        sigma_min,
        sigma_r_h1_measured: sigma_r,
        sigma_r_y_f_measured: numerics::svd(&blocks.y_f)?.sigma_or_zero(r),
    };
    let sigma_sq = amplification(options, dsn, sigma_min)?;
    Ok(BoundReport {
        variant: BoundVariant {
            predictor: Method::Raw,
            options,
        },
        noise_bound,
        delta_sn: dsn,
        sigma_sq,
        terms: sigma_sq.map(|s| raw_terms(&norms, &radii, s)),
        norms,
        radii,
    })
}

/// Bound on `‖ŷ_pred − y_pred‖₂` for the predictor on the rank-`r` TSVD.
pub fn bound_tsvd(
    blocks: &HankelBlocks,
    r: usize,
    online: &OnlineWindow,
    noise_bound: f64,
    options: BoundOptions,
) -> Result<BoundReport> {
    validate_noise(noise_bound)?;
    check_online(blocks, online)?;
    let truncated = predictor::tsvd_blocks(blocks, r)?;
    let h1_noisy = blocks.h1();
    let h1_hat = truncated.h1();
    let f_hat = numerics::svd(&h1_hat)?;
    check_rank(&f_hat, r)?;
    let radii = PerturbationRadii::for_blocks(blocks, options.noise).scaled(noise_bound);

    let sigma_r = f_hat.sigma(r)?;
    let sigma_min = f_hat.sigma_min_nonzero(Tolerance::Default)?;
    let dsn = sigma_r - radii.past;
    let pinv = f_hat.pseudo_inverse(Tolerance::Default);
    let f_noisy = numerics::svd(&h1_noisy)?;
    let norms = MeasuredNorms {
        y_f: blocks.y_f.norm(),
        h: online.stacked().norm(),
        pinv: pinv.norm(),
        coefficient: (&truncated.y_f * &pinv).norm(),
        truncation_h1: (&h1_hat - &h1_noisy).norm(),
        truncation_y_f: (&truncated.y_f - &blocks.y_f).norm(),
        sigma_r,
        sigma_min,
        sigma_r_h1_measured: f_noisy.sigma_or_zero(r),
        sigma_r_y_f_measured: numerics::svd(&blocks.y_f)?.sigma_or_zero(r),
    };
    let factor = match options.sigma_r {
        SigmaRSource::Measured => (dsn > 0.0).then(|| (1.0 / dsn).powi(2)),
        SigmaRSource::Oracle(_) => amplification(options, dsn, sigma_min)?,
    };
    Ok(BoundReport {
        variant: BoundVariant {
            predictor: Method::Tsvd,
            options,
        },
        noise_bound,
        delta_sn: dsn,
        sigma_sq: factor,
        terms: factor.map(|s| tsvd_terms(&norms, &radii, s)),
        norms,
        radii,
    })
}

/// Dispatches on the predictor.
pub fn bound(
    blocks: &HankelBlocks,
    online: &OnlineWindow,
    r: usize,
    noise_bound: f64,
    variant: BoundVariant,
) -> Result<BoundReport> {
    match variant.predictor {
        Method::Raw => bound_raw(blocks, online, r, noise_bound, variant.options),
        Method::Tsvd => bound_tsvd(blocks, r, online, noise_bound, variant.options),
    }
}

/// First-order (in `N`) form of the raw-data bound with all measured norms
/// and `σ_sq` frozen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearizedRaw {
    pub y_f: f64,
    pub h: f64,
    pub pinv: f64,
    pub coefficient: f64,
    pub sigma_sq: f64,
    pub unit: PerturbationRadii,
}

impl LinearizedRaw {
    pub fn from_report(report: &BoundReport) -> Result<Self> {
        let sigma_sq = report
            .sigma_sq
            .ok_or(BoundError::Inapplicable(report.delta_sn))?;
        Ok(LinearizedRaw {
            y_f: report.norms.y_f,
            h: report.norms.h,
            pinv: report.norms.pinv,
            coefficient: report.norms.coefficient,
            sigma_sq,
            unit: unit_radii(report),
        })
    }

    pub fn slope(&self) -> f64 {
        SQRT_2 * self.sigma_sq * self.unit.past * self.y_f * self.h
            + self.y_f * self.pinv * self.unit.online
            + self.unit.future * self.coefficient
    }
}

/// Linear-in-`N` form of the TSVD bound, with the truncation residuals
/// replaced by the rank-`r` perturbation estimate
/// `‖Δ‖(2(1+√2)·min{2‖Δ‖/σ_r, 1} + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearizedTsvd {
    pub y_f: f64,
    pub h: f64,
    pub pinv: f64,
    pub coefficient: f64,
    /// `δ_SN(Ĥ₁)⁻²`.
    pub factor: f64,
    pub unit: PerturbationRadii,
    /// Plug-in for `σ_r(H₁)`.
    pub sigma_r_h1: f64,
    /// Plug-in for `σ_r(Y_f)`.
    pub sigma_r_y_f: f64,
    /// Plug-in for `‖Δ₁‖_F`.
    pub past_noise_norm: f64,
    /// Plug-in for `‖Δ₂‖_F`.
    pub future_noise_norm: f64,
}

fn saturation(noise_norm: f64, sigma_r: f64) -> f64 {
    if sigma_r > 0.0 {
        (2.0 * noise_norm / sigma_r).min(1.0)
    } else {
        1.0
    }
}

impl LinearizedTsvd {
    /// Plug-ins default to the measured `σ_r(H̃₁)`, `σ_r(Ỹ_f)` and the
    /// worst-case noise norms at the report's noise level.
    pub fn from_report(report: &BoundReport) -> Result<Self> {
        let factor = report
            .sigma_sq
            .ok_or(BoundError::Inapplicable(report.delta_sn))?;
        Ok(LinearizedTsvd {
            y_f: report.norms.y_f,
            h: report.norms.h,
            pinv: report.norms.pinv,
            coefficient: report.norms.coefficient,
            factor,
            unit: unit_radii(report),
            sigma_r_h1: report.norms.sigma_r_h1_measured,
            sigma_r_y_f: report.norms.sigma_r_y_f_measured,
            past_noise_norm: report.radii.past,
            future_noise_norm: report.radii.future,
        })
    }

    pub fn with_oracle_sigmas(self, sigma_r_h1: f64, sigma_r_y_f: f64) -> Self {
        LinearizedTsvd {
            sigma_r_h1,
            sigma_r_y_f,
            ..self
        }
    }

    pub fn slope(&self) -> f64 {
        let k = 2.0 * (1.0 + SQRT_2);
        let past = k * saturation(self.past_noise_norm, self.sigma_r_h1) + 2.0;
        let future = k * saturation(self.future_noise_norm, self.sigma_r_y_f) + 2.0;
        SQRT_2 * self.y_f * self.factor * self.unit.past * past * self.h
            + self.pinv * self.h * self.unit.future * future
            + self.coefficient * self.unit.online
    }
}

fn unit_radii(report: &BoundReport) -> PerturbationRadii {
    let n = report.noise_bound;
    if n > 0.0 {
        report.radii.scaled(1.0 / n)
    } else {
        // radii vanish at N = 0; cannot recover the shape factors
        PerturbationRadii {
            online: 0.0,
            past: 0.0,
            future: 0.0,
        }
    }
}

pub fn linearized_bound_raw(lin: &LinearizedRaw, noise_bound: f64) -> f64 {
    lin.slope() * noise_bound
}

pub fn linearized_bound_tsvd(lin: &LinearizedTsvd, noise_bound: f64) -> f64 {
    lin.slope() * noise_bound
}

/// Two upper bounds on `‖Ĥ₁ − H₁‖_F`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationResidualBounds {
    /// `‖Ĥ₁ − H̃₁‖_F + ‖Δ₁‖_F` bound.
    pub stewart_path: f64,
    /// `2‖Δ₁‖ + 2(1+√2)‖Δ₁‖·min{2‖Δ₁‖/δ_SN(H̃₁), 1}`; needs `δ_SN(H̃₁) > 0`.
    pub vu_path: Option<f64>,
}

pub fn truncation_residual_bounds(
    blocks: &HankelBlocks,
    r: usize,
    past_noise_bound: f64,
    delta_sn_noisy: f64,
) -> Result<TruncationResidualBounds> {
    let truncated = predictor::tsvd_blocks(blocks, r)?;
    let residual = (truncated.h1() - blocks.h1()).norm();
    let d = past_noise_bound;
    let vu_path = (delta_sn_noisy > 0.0)
        .then(|| 2.0 * d + 2.0 * (1.0 + SQRT_2) * d * (2.0 * d / delta_sn_noisy).min(1.0));
    Ok(TruncationResidualBounds {
        stewart_path: residual + d,
        vu_path,
    })
}

/// `1/(N√(pT_pM))`: lower bound on `‖H̃₁†‖_F` when `rank(H̃₁) > rank(H₁)`.
pub fn divergence_floor(p: usize, t_p: usize, cols: usize, noise_bound: f64) -> Result<f64> {
    if !(noise_bound > 0.0 && noise_bound.is_finite()) {
        return Err(BoundError::Domain(format!(
            "divergence floor needs N > 0, got {noise_bound}"
        )));
    }
    Ok(1.0 / (noise_bound * ((p * t_p * cols) as f64).sqrt()))
}
