//! Data-driven multi-step output prediction from Hankel matrices, with
//! computable worst-case error bounds under bounded output noise.
//!
//! Two predictors are provided: the minimum-norm least-squares predictor on
//! raw noisy data and the same predictor after a rank-`r` truncated SVD of the
//! stacked Hankel matrix. [`bounds`] evaluates the matching error bounds from
//! measured data and the noise bound alone, and [`montecarlo`] runs the
//! randomized study that compares both against the true prediction error.
//!
//! ```
//! use ddpred::{hankel::{HankelBlocks, OnlineWindow}, lti, predictor};
//! use ddpred::numerics::{Matrix, Vector};
//!
//! let sys = lti::random_stable_system(2, 1, 1, 7).unwrap();
//! let u = Matrix::from_fn(1, 60, |_, k| ((k * 37 % 11) as f64 - 5.0) / 5.0);
//! let y = lti::simulate(&sys, &Vector::zeros(2), &u).unwrap();
//! let traj = lti::Trajectory::new(u, y).unwrap();
//! let blocks = HankelBlocks::from_trajectory(&traj, 2, 3).unwrap();
//! let online = OnlineWindow::from_trajectory(&traj, 2, 3).unwrap();
//! let pred = predictor::predict_raw(&blocks, &online).unwrap();
//! assert_eq!(pred.y_pred.len(), 3);
//! ```

pub mod bounds;
pub mod cli;
pub mod hankel;
pub mod io;
pub mod lti;
pub mod montecarlo;
pub mod numerics;
pub mod predictor;

use thiserror::Error;

/// Crate-level error, mapped to process exit codes by the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Io(#[from] io::IoError),
    #[error(transparent)]
    Numerics(#[from] numerics::NumericsError),
    #[error(transparent)]
    Lti(#[from] lti::LtiError),
    #[error(transparent)]
    Hankel(#[from] hankel::HankelError),
    #[error(transparent)]
    Predict(#[from] predictor::PredictError),
    #[error(transparent)]
    Bound(#[from] bounds::BoundError),
    #[error(transparent)]
    MonteCarlo(#[from] montecarlo::MonteCarloError),
    #[error("{0}")]
    Incomplete(String),
}

fn numerics_code(e: &numerics::NumericsError) -> i32 {
    use numerics::NumericsError::*;
    match e {
        NonConvergence { .. } | NonFinite => 3,
        _ => 2,
    }
}

fn lti_code(e: &lti::LtiError) -> i32 {
    match e {
        lti::LtiError::GenerationFailed(_) => 3,
        lti::LtiError::Numerics(n) => numerics_code(n),
        _ => 2,
    }
}

fn predict_code(e: &predictor::PredictError) -> i32 {
    match e {
        predictor::PredictError::Numerics(n) => numerics_code(n),
        _ => 2,
    }
}

fn bound_code(e: &bounds::BoundError) -> i32 {
    match e {
        bounds::BoundError::Numerics(n) => numerics_code(n),
        bounds::BoundError::Predict(p) => predict_code(p),
        bounds::BoundError::Inapplicable(_) => 3,
        _ => 2,
    }
}

impl Error {
    /// 1 for usage errors, 2 for data or I/O errors, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        use montecarlo::MonteCarloError as Mc;
        match self {
            Error::Usage(_) => 1,
            Error::Io(_) | Error::Hankel(_) => 2,
            Error::Numerics(e) => numerics_code(e),
            Error::Lti(e) => lti_code(e),
            Error::Predict(e) => predict_code(e),
            Error::Bound(e) => bound_code(e),
            Error::MonteCarlo(e) => match e {
                Mc::Config(_) => 1,
                Mc::Domain(_) | Mc::Hankel(_) => 2,
                Mc::ThreadPool(_) => 3,
                Mc::Lti(e) => lti_code(e),
                Mc::Predict(e) => predict_code(e),
                Mc::Bound(e) => bound_code(e),
                Mc::Numerics(e) => numerics_code(e),
            },
            Error::Incomplete(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
