//! Minimum-norm output predictors on raw or rank-truncated Hankel data.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hankel::{HankelBlocks, HankelError, OnlineWindow};
use crate::numerics::{self, Matrix, NumericsError, Tolerance, Vector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PredictError {
    #[error("truncation rank {rank} outside 1..={max}")]
    RankOutOfRange { rank: usize, max: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Hankel(#[from] HankelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = std::result::Result<T, PredictError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Raw,
    Tsvd,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Raw => "raw",
            Method::Tsvd => "tsvd",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionResult {
    pub y_pred: Vector,
    pub g_star: Vector,
    pub method: Method,
    /// Set when `rank(H₁) < mT`, i.e. the input rows alone are rank deficient.
    pub excitation_deficit: bool,
}

/// `g* = H₁† h`, the minimum-norm least-squares coefficient vector.
pub fn min_norm_g(h1: &Matrix, h: &Vector) -> Result<Vector> {
    if h1.nrows() != h.len() {
        return Err(PredictError::Dimension(format!(
            "H1 has {} rows but h has length {}",
            h1.nrows(),
            h.len()
        )));
    }
    Ok(numerics::pinv(h1, Tolerance::Default)? * h)
}

fn predict_from_blocks(blocks: &HankelBlocks, online: &OnlineWindow, method: Method) -> Result<PredictionResult> {
    online.check_against(blocks)?;
    let h1 = blocks.h1();
    let f = numerics::svd(&h1)?;
    let g_star = f.pseudo_inverse(Tolerance::Default) * online.stacked();
    let y_pred = &blocks.y_f * &g_star;
    let input_rows = blocks.m() * blocks.window();
    Ok(PredictionResult {
        y_pred,
        g_star,
        method,
        excitation_deficit: f.rank(Tolerance::Default) < input_rows,
    })
}

/// `y = Y_f · col(U_p, U_f, Y_p)† · h`; whether the blocks are clean or noisy
/// is decided by the data passed in.
pub fn predict_raw(blocks: &HankelBlocks, online: &OnlineWindow) -> Result<PredictionResult> {
    predict_from_blocks(blocks, online, Method::Raw)
}

/// Rank-`r` truncation of the full stacked matrix, re-partitioned.
pub fn tsvd_blocks(blocks: &HankelBlocks, r: usize) -> Result<HankelBlocks> {
    let h = blocks.stacked();
    let max = h.nrows().min(h.ncols());
    if r == 0 || r > max {
        return Err(PredictError::RankOutOfRange { rank: r, max });
    }
    let truncated = numerics::tsvd(&h, r)?;
    Ok(HankelBlocks::from_stacked(
        &truncated,
        blocks.m(),
        blocks.p(),
        blocks.t_p(),
        blocks.t_f(),
    )?)
}

/// Predictor on the rank-`r` TSVD of `H`.
pub fn predict_tsvd(blocks: &HankelBlocks, r: usize, online: &OnlineWindow) -> Result<PredictionResult> {
    online.check_against(blocks)?;
    let truncated = tsvd_blocks(blocks, r)?;
    predict_from_blocks(&truncated, online, Method::Tsvd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hankel::{self, HankelBlocks};
    use crate::lti::{self, StateSpace, Trajectory};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar(v: f64) -> Matrix {
        Matrix::from_element(1, 1, v)
    }

    #[test]
    fn min_norm_examples() {
        let h = Vector::from_vec(vec![1.0, -2.0, 3.0]);
        let g = min_norm_g(&Matrix::identity(3, 3), &h).unwrap();
        assert!((g - &h).amax() < 1e-14);

        let g = min_norm_g(&Matrix::from_row_slice(1, 2, &[1.0, 1.0]), &Vector::from_element(1, 2.0)).unwrap();
        assert!((g - Vector::from_vec(vec![1.0, 1.0])).amax() < 1e-14);

        let g = min_norm_g(&Matrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, 0.0, 1.0, 1.0]), &Vector::zeros(2)).unwrap();
        assert_eq!(g, Vector::zeros(3));

        assert!(min_norm_g(&Matrix::identity(2, 2), &Vector::zeros(3)).is_err());
    }

    fn unit_delay_blocks() -> HankelBlocks {
        let sys = StateSpace::new(scalar(0.0), scalar(1.0), scalar(1.0), scalar(0.0)).unwrap();
        let u = Matrix::from_row_slice(1, 5, &[1.0, -1.0, 2.0, 0.0, 1.0]);
        let y = lti::simulate(&sys, &Vector::zeros(1), &u).unwrap();
        HankelBlocks::from_trajectory(&Trajectory::new(u, y).unwrap(), 1, 1).unwrap()
    }

    #[test]
    fn unit_delay_prediction() {
        // x_ini = 5, u_ini = 3 gives y_ini = 5 and x(1) = 3, so y(1) = 3
        let blocks = unit_delay_blocks();
        let online = OnlineWindow::new(
            Vector::from_element(1, 3.0),
            Vector::from_element(1, 7.0),
            Vector::from_element(1, 5.0),
        );
        let res = predict_raw(&blocks, &online).unwrap();
        assert!((res.y_pred[0] - 3.0).abs() < 1e-12);
        assert_eq!(res.method, Method::Raw);
        assert!(!res.excitation_deficit);
        assert!((&blocks.y_f * &res.g_star - &res.y_pred).amax() < 1e-14);
    }

    #[test]
    fn zero_window_predicts_zero() {
        let blocks = unit_delay_blocks();
        let online = OnlineWindow::zeros(&blocks);
        assert_eq!(predict_raw(&blocks, &online).unwrap().y_pred, Vector::zeros(1));
        assert_eq!(predict_tsvd(&blocks, 3, &online).unwrap().y_pred, Vector::zeros(1));
    }

    #[test]
    fn tsvd_rank_errors() {
        let blocks = unit_delay_blocks();
        let online = OnlineWindow::zeros(&blocks);
        assert!(matches!(
            predict_tsvd(&blocks, 0, &online),
            Err(PredictError::RankOutOfRange { .. })
        ));
        assert!(matches!(
            predict_tsvd(&blocks, 5, &online),
            Err(PredictError::RankOutOfRange { rank: 5, max: 4 })
        ));
    }

    #[test]
    fn excitation_deficit_flagged() {
        let traj = Trajectory::new(Matrix::zeros(1, 10), Matrix::from_fn(1, 10, |_, j| j as f64)).unwrap();
        let blocks = HankelBlocks::from_trajectory(&traj, 1, 1).unwrap();
        let res = predict_raw(&blocks, &OnlineWindow::zeros(&blocks)).unwrap();
        assert!(res.excitation_deficit);
    }

    struct Case {
        blocks: HankelBlocks,
        online: OnlineWindow,
        truth: Vector,
        rank: usize,
    }

    fn random_case(rng: &mut ChaCha8Rng) -> Case {
        let n = rng.random_range(1..=2);
        let m = rng.random_range(1..=n);
        let p = rng.random_range(1..=n);
        let sys = lti::random_stable_system_with(rng, n, m, p).unwrap();
        let t_p = lti::lag(&sys).unwrap() + rng.random_range(0..=1);
        let t_f = rng.random_range(1..=3);
        let u = Matrix::from_fn(m, 100, |_, _| rng.random_range(-1.0..1.0));
        let y = lti::simulate(&sys, &Vector::zeros(n), &u).unwrap();
        let blocks = HankelBlocks::from_trajectory(&Trajectory::new(u, y).unwrap(), t_p, t_f).unwrap();

        let x_ini = Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let u_on = Matrix::from_fn(m, t_p + t_f, |_, _| rng.random_range(-1.0..1.0));
        let y_on = lti::simulate(&sys, &x_ini, &u_on).unwrap();
        let on_traj = Trajectory::new(u_on, y_on.clone()).unwrap();
        let online = OnlineWindow::from_trajectory(&on_traj, t_p, t_f).unwrap();
        let truth = Vector::from_iterator(p * t_f, y_on.columns(t_p, t_f).iter().copied());
        Case {
            blocks,
            online,
            truth,
            rank: m * (t_p + t_f) + n,
        }
    }

    #[test]
    fn noise_free_prediction_matches_simulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let c = random_case(&mut rng);
            let res = predict_raw(&c.blocks, &c.online).unwrap();
            let err = (&res.y_pred - &c.truth).norm();
            assert!(err <= 1e-8 * (1.0 + c.truth.norm()), "err = {err}");
        }
    }

    #[test]
    fn tsvd_at_true_rank_matches_raw() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..30 {
            let c = random_case(&mut rng);
            let raw = predict_raw(&c.blocks, &c.online).unwrap();
            let tsvd = predict_tsvd(&c.blocks, c.rank, &c.online).unwrap();
            assert!((&raw.y_pred - &tsvd.y_pred).norm() <= 1e-8 * (1.0 + raw.y_pred.norm()));
        }
    }

    #[test]
    fn prediction_is_linear_in_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let c = random_case(&mut rng);
        let a = c.online.stacked();
        let b = Vector::from_fn(a.len(), |_, _| rng.random_range(-1.0..1.0));
        let split = |v: &Vector| {
            let (mu, mf) = (c.online.u_ini.len(), c.online.u_pred.len());
            OnlineWindow::new(
                v.rows(0, mu).into_owned(),
                v.rows(mu, mf).into_owned(),
                v.rows(mu + mf, v.len() - mu - mf).into_owned(),
            )
        };
        let pa = predict_raw(&c.blocks, &split(&a)).unwrap().y_pred;
        let pb = predict_raw(&c.blocks, &split(&b)).unwrap().y_pred;
        let pab = predict_raw(&c.blocks, &split(&(&a + &b))).unwrap().y_pred;
        assert!((pab - pa - pb).amax() < 1e-10);
    }

    #[test]
    fn noisy_tsvd_matches_independent_assembly() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let sys = lti::random_stable_system_with(&mut rng, 1, 1, 1).unwrap();
        let u = Matrix::from_fn(1, 60, |_, _| rng.random_range(-1.0..1.0));
        let y = lti::simulate(&sys, &Vector::zeros(1), &u).unwrap();
        let y_noisy = hankel::corrupt_output(&y, 1e-2, 3).unwrap();
        let blocks = HankelBlocks::from_trajectory(&Trajectory::new(u, y_noisy).unwrap(), 1, 2).unwrap();
        let online = OnlineWindow::new(
            Vector::from_element(1, 0.3),
            Vector::from_vec(vec![-0.2, 0.7]),
            Vector::from_element(1, 0.1),
        );
        let r = 4;
        let res = predict_tsvd(&blocks, r, &online).unwrap();

        // rebuild Ĥ from nalgebra's own SVD and slice rows by hand
        let h = blocks.stacked();
        let dec = nalgebra::SVD::new(h.clone(), true, true);
        let mut idx: Vec<usize> = (0..dec.singular_values.len()).collect();
        idx.sort_by(|&a, &b| dec.singular_values[b].total_cmp(&dec.singular_values[a]));
        let (u_full, vt_full) = (dec.u.unwrap(), dec.v_t.unwrap());
        let mut h_hat = Matrix::zeros(h.nrows(), h.ncols());
        for &k in idx.iter().take(r) {
            h_hat += dec.singular_values[k] * u_full.column(k) * vt_full.row(k);
        }
        // rows: U_p (1), U_f (2), Y_p (1), Y_f (2)
        let h1_hat = numerics::vstack(&[&h_hat.rows(0, 3).into_owned(), &h_hat.rows(3, 1).into_owned()]);
        let yf_hat = h_hat.rows(4, 2).into_owned();
        let expected = yf_hat * h1_hat.pseudo_inverse(1e-12).unwrap() * online.stacked();
        assert!((res.y_pred - expected).norm() < 1e-9);
    }
}
