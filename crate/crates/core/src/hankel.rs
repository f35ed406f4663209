//! Block-Hankel data matrices, their past/future partition, the online window
//! and bounded output-noise injection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::lti::Trajectory;
use crate::numerics::{self, Matrix, Tolerance, Vector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HankelError {
    #[error("data length {len} shorter than window length {window}")]
    TooShort { len: usize, window: usize },
    #[error("invalid horizons: {0}")]
    Horizon(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("noise bound must be finite and nonnegative, got {0}")]
    NoiseBound(f64),
}

pub type Result<T> = std::result::Result<T, HankelError>;

/// Shape metadata for a Hankel experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HankelConfig {
    pub m: usize,
    pub p: usize,
    pub n: usize,
    pub t_p: usize,
    pub t_f: usize,
    pub data_length: usize,
}

impl HankelConfig {
    pub fn new(m: usize, p: usize, n: usize, t_p: usize, t_f: usize, data_length: usize) -> Result<Self> {
        if t_p == 0 || t_f == 0 {
            return Err(HankelError::Horizon(format!(
                "T_p={t_p}, T_f={t_f}; both must be at least 1"
            )));
        }
        if m == 0 || p == 0 {
            return Err(HankelError::Dimension("m and p must be positive".into()));
        }
        if data_length < t_p + t_f {
            return Err(HankelError::TooShort {
                len: data_length,
                window: t_p + t_f,
            });
        }
        Ok(HankelConfig {
            m,
            p,
            n,
            t_p,
            t_f,
            data_length,
        })
    }

    pub fn window(&self) -> usize {
        self.t_p + self.t_f
    }

    /// Column count `M = L − T + 1`.
    pub fn cols(&self) -> usize {
        self.data_length - self.window() + 1
    }

    /// Rank of the noise-free Hankel matrix, `mT + n`.
    pub fn rank(&self) -> usize {
        self.m * self.window() + self.n
    }
}

fn block_hankel(signal: &Matrix, window: usize) -> Matrix {
    let ch = signal.nrows();
    let cols = signal.ncols() + 1 - window;
    Matrix::from_fn(ch * window, cols, |i, j| signal[(i % ch, j + i / ch)])
}

/// Order-`window` Hankel matrices `(H_u, H_y)` of a trajectory.
pub fn build_hankel(traj: &Trajectory, window: usize) -> Result<(Matrix, Matrix)> {
    if window == 0 {
        return Err(HankelError::Horizon("window length must be at least 1".into()));
    }
    if traj.len() < window {
        return Err(HankelError::TooShort {
            len: traj.len(),
            window,
        });
    }
    Ok((
        block_hankel(&traj.inputs, window),
        block_hankel(&traj.outputs, window),
    ))
}

/// Past/future partition of the Hankel matrix.
///
/// The stacked order is `col(U_p, U_f, Y_p, Y_f)`, which coincides with
/// `col(H_u, H_y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HankelBlocks {
    pub u_p: Matrix,
    pub u_f: Matrix,
    pub y_p: Matrix,
    pub y_f: Matrix,
    m: usize,
    p: usize,
    t_p: usize,
    t_f: usize,
}

/// Splits `(H_u, H_y)` into past and future row blocks.
pub fn partition(h_u: &Matrix, h_y: &Matrix, t_p: usize, t_f: usize) -> Result<HankelBlocks> {
    if t_p == 0 || t_f == 0 {
        return Err(HankelError::Horizon(format!(
            "T_p={t_p}, T_f={t_f}; both must be at least 1"
        )));
    }
    let window = t_p + t_f;
    if !h_u.nrows().is_multiple_of(window) || !h_y.nrows().is_multiple_of(window) || h_u.nrows() == 0 || h_y.nrows() == 0 {
        return Err(HankelError::Horizon(format!(
            "row counts {} / {} not divisible by T={window}",
            h_u.nrows(),
            h_y.nrows()
        )));
    }
    if h_u.ncols() != h_y.ncols() {
        return Err(HankelError::Dimension(format!(
            "H_u has {} columns, H_y has {}",
            h_u.ncols(),
            h_y.ncols()
        )));
    }
    let m = h_u.nrows() / window;
    let p = h_y.nrows() / window;
    Ok(HankelBlocks {
        u_p: h_u.rows(0, m * t_p).into_owned(),
        u_f: h_u.rows(m * t_p, m * t_f).into_owned(),
        y_p: h_y.rows(0, p * t_p).into_owned(),
        y_f: h_y.rows(p * t_p, p * t_f).into_owned(),
        m,
        p,
        t_p,
        t_f,
    })
}

impl HankelBlocks {
    pub fn from_trajectory(traj: &Trajectory, t_p: usize, t_f: usize) -> Result<Self> {
        if t_p == 0 || t_f == 0 {
            return Err(HankelError::Horizon(format!(
                "T_p={t_p}, T_f={t_f}; both must be at least 1"
            )));
        }
        let (h_u, h_y) = build_hankel(traj, t_p + t_f)?;
        partition(&h_u, &h_y, t_p, t_f)
    }

    /// Re-partitions a stacked `col(U_p, U_f, Y_p, Y_f)` matrix.
    pub fn from_stacked(h: &Matrix, m: usize, p: usize, t_p: usize, t_f: usize) -> Result<Self> {
        let window = t_p + t_f;
        if h.nrows() != (m + p) * window {
            return Err(HankelError::Dimension(format!(
                "stacked matrix has {} rows, expected {}",
                h.nrows(),
                (m + p) * window
            )));
        }
        partition(
            &h.rows(0, m * window).into_owned(),
            &h.rows(m * window, p * window).into_owned(),
            t_p,
            t_f,
        )
    }

    pub fn m(&self) -> usize {
        self.m
    }
    pub fn p(&self) -> usize {
        self.p
    }
    pub fn t_p(&self) -> usize {
        self.t_p
    }
    pub fn t_f(&self) -> usize {
        self.t_f
    }
    pub fn window(&self) -> usize {
        self.t_p + self.t_f
    }
    pub fn cols(&self) -> usize {
        self.u_p.ncols()
    }

    /// `H₁ = col(U_p, U_f, Y_p)`.
    pub fn h1(&self) -> Matrix {
        numerics::vstack(&[&self.u_p, &self.u_f, &self.y_p])
    }

    /// `H = col(U_p, U_f, Y_p, Y_f)`.
    pub fn stacked(&self) -> Matrix {
        numerics::vstack(&[&self.u_p, &self.u_f, &self.y_p, &self.y_f])
    }

    /// `(H_u, H_y)` in the original Hankel layout.
    pub fn hankel_pair(&self) -> (Matrix, Matrix) {
        (
            numerics::vstack(&[&self.u_p, &self.u_f]),
            numerics::vstack(&[&self.y_p, &self.y_f]),
        )
    }
}

/// Online data `h = col(u_ini, u_pred, y_ini)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OnlineWindow {
    pub u_ini: Vector,
    pub u_pred: Vector,
    pub y_ini: Vector,
}

impl OnlineWindow {
    pub fn new(u_ini: Vector, u_pred: Vector, y_ini: Vector) -> Self {
        OnlineWindow { u_ini, u_pred, y_ini }
    }

    /// Past inputs/outputs from the first `t_p` samples, future inputs from the
    /// next `t_f`.
    pub fn from_trajectory(traj: &Trajectory, t_p: usize, t_f: usize) -> Result<Self> {
        if traj.len() < t_p + t_f {
            return Err(HankelError::TooShort {
                len: traj.len(),
                window: t_p + t_f,
            });
        }
        let flat = |mat: &Matrix, start: usize, len: usize| {
            Vector::from_iterator(
                mat.nrows() * len,
                mat.columns(start, len).iter().copied(),
            )
        };
        Ok(OnlineWindow {
            u_ini: flat(&traj.inputs, 0, t_p),
            u_pred: flat(&traj.inputs, t_p, t_f),
            y_ini: flat(&traj.outputs, 0, t_p),
        })
    }

    pub fn zeros(blocks: &HankelBlocks) -> Self {
        OnlineWindow {
            u_ini: Vector::zeros(blocks.m * blocks.t_p),
            u_pred: Vector::zeros(blocks.m * blocks.t_f),
            y_ini: Vector::zeros(blocks.p * blocks.t_p),
        }
    }

    pub fn stacked(&self) -> Vector {
        numerics::vcat(&[&self.u_ini, &self.u_pred, &self.y_ini])
    }

    pub fn with_y_ini(&self, y_ini: Vector) -> Self {
        OnlineWindow {
            y_ini,
            ..self.clone()
        }
    }

    /// Checks lengths against a partitioned Hankel matrix.
    pub fn check_against(&self, blocks: &HankelBlocks) -> Result<()> {
        let expect = [
            ("u_ini", self.u_ini.len(), blocks.m * blocks.t_p),
            ("u_pred", self.u_pred.len(), blocks.m * blocks.t_f),
            ("y_ini", self.y_ini.len(), blocks.p * blocks.t_p),
        ];
        for (name, got, want) in expect {
            if got != want {
                return Err(HankelError::Dimension(format!(
                    "{name} has length {got}, expected {want}"
                )));
            }
        }
        Ok(())
    }
}

/// Generalized persistency of excitation: `rank(H) = mT + n`.
pub fn check_persistency(h: &Matrix, m: usize, window: usize, n: usize, tol: Tolerance) -> bool {
    matches!(numerics::numerical_rank(h, tol), Ok(r) if r == m * window + n)
}

/// Draws one entry uniformly from the open interval `(−bound, bound)`.
pub fn uniform_open<R: Rng>(rng: &mut R, bound: f64) -> f64 {
    loop {
        let v = bound * (2.0 * rng.random::<f64>() - 1.0);
        if v.abs() < bound {
            return v;
        }
    }
}

/// Adds i.i.d. uniform `(−N, N)` noise to every entry.
pub fn corrupt_output_with<R: Rng>(rng: &mut R, y: &Matrix, noise_bound: f64) -> Result<Matrix> {
    if !(noise_bound >= 0.0 && noise_bound.is_finite()) {
        return Err(HankelError::NoiseBound(noise_bound));
    }
    if noise_bound == 0.0 {
        return Ok(y.clone());
    }
    Ok(y.map(|v| v + uniform_open(rng, noise_bound)))
}

pub fn corrupt_output(y: &Matrix, noise_bound: f64, seed: u64) -> Result<Matrix> {
    corrupt_output_with(&mut ChaCha8Rng::seed_from_u64(seed), y, noise_bound)
}

/// Vector form of [`corrupt_output_with`], used for the online `y_ini`.
pub fn corrupt_vector_with<R: Rng>(rng: &mut R, v: &Vector, noise_bound: f64) -> Result<Vector> {
    if !(noise_bound >= 0.0 && noise_bound.is_finite()) {
        return Err(HankelError::NoiseBound(noise_bound));
    }
    if noise_bound == 0.0 {
        return Ok(v.clone());
    }
    Ok(v.map(|x| x + uniform_open(rng, noise_bound)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::{self, StateSpace};
    use proptest::prelude::*;

    fn scalar_traj(u: &[f64], y: &[f64]) -> Trajectory {
        Trajectory::new(
            Matrix::from_row_slice(1, u.len(), u),
            Matrix::from_row_slice(1, y.len(), y),
        )
        .unwrap()
    }

    #[test]
    fn scalar_hankel() {
        let traj = scalar_traj(&[1.0, 2.0, 3.0, 4.0], &[0.0; 4]);
        let (hu, _) = build_hankel(&traj, 2).unwrap();
        assert_eq!(hu, Matrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 3.0, 4.0]));
    }

    #[test]
    fn full_length_window_is_single_column() {
        let traj = scalar_traj(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]);
        let (hu, hy) = build_hankel(&traj, 3).unwrap();
        assert_eq!(hu.shape(), (3, 1));
        assert_eq!(hu.as_slice(), &[1.0, 2.0, 3.0]);
        assert_eq!(hy.as_slice(), &[4.0, 5.0, 6.0]);
    }

    #[test]
    fn multi_input_stacking_order() {
        let traj = Trajectory::new(
            Matrix::from_row_slice(2, 2, &[1.0, 3.0, 2.0, 4.0]),
            Matrix::zeros(1, 2),
        )
        .unwrap();
        let (hu, _) = build_hankel(&traj, 2).unwrap();
        assert_eq!(hu.shape(), (4, 1));
        assert_eq!(hu.as_slice(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn too_short() {
        let traj = scalar_traj(&[1.0], &[1.0]);
        assert_eq!(
            build_hankel(&traj, 2).unwrap_err(),
            HankelError::TooShort { len: 1, window: 2 }
        );
    }

    #[test]
    fn partition_rows() {
        let traj = scalar_traj(&[1.0, 2.0, 3.0, 4.0], &[5.0, 6.0, 7.0, 8.0]);
        let (hu, hy) = build_hankel(&traj, 2).unwrap();
        let b = partition(&hu, &hy, 1, 1).unwrap();
        assert_eq!(b.u_p.as_slice(), &[1.0, 2.0, 3.0]);
        assert_eq!(b.u_f.as_slice(), &[2.0, 3.0, 4.0]);
        assert_eq!(b.y_p.as_slice(), &[5.0, 6.0, 7.0]);
        assert_eq!(b.y_f.as_slice(), &[6.0, 7.0, 8.0]);
        assert_eq!(b.stacked(), numerics::vstack(&[&hu, &hy]));
        assert_eq!(b.hankel_pair(), (hu.clone(), hy.clone()));
        assert!(partition(&hu, &hy, 2, 0).is_err());
    }

    #[test]
    fn stacked_round_trip() {
        let traj = Trajectory::new(
            Matrix::from_fn(2, 12, |i, j| (i * 31 + j) as f64),
            Matrix::from_fn(1, 12, |_, j| (j * j) as f64),
        )
        .unwrap();
        let b = HankelBlocks::from_trajectory(&traj, 2, 3).unwrap();
        let back = HankelBlocks::from_stacked(&b.stacked(), 2, 1, 2, 3).unwrap();
        assert_eq!(b, back);
        assert!(HankelBlocks::from_stacked(&b.h1(), 2, 1, 2, 3).is_err());
    }

    #[test]
    fn config_shape() {
        let c = HankelConfig::new(2, 1, 2, 2, 3, 100).unwrap();
        assert_eq!(c.window(), 5);
        assert_eq!(c.cols(), 96);
        assert_eq!(c.rank(), 12);
        assert!(HankelConfig::new(1, 1, 1, 0, 1, 10).is_err());
        assert!(HankelConfig::new(1, 1, 1, 3, 3, 5).is_err());
    }

    #[test]
    fn online_window_from_trajectory() {
        let traj = scalar_traj(&[1.0, 2.0, 3.0, 9.0], &[4.0, 5.0, 6.0, 9.0]);
        let w = OnlineWindow::from_trajectory(&traj, 2, 1).unwrap();
        assert_eq!(w.u_ini.as_slice(), &[1.0, 2.0]);
        assert_eq!(w.u_pred.as_slice(), &[3.0]);
        assert_eq!(w.y_ini.as_slice(), &[4.0, 5.0]);
        assert_eq!(w.stacked().as_slice(), &[1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn persistency_examples() {
        let sys = StateSpace::new(
            Matrix::from_element(1, 1, 0.5),
            Matrix::from_element(1, 1, 1.0),
            Matrix::from_element(1, 1, 1.0),
            Matrix::from_element(1, 1, 0.0),
        )
        .unwrap();
        let zero = Trajectory::new(Matrix::zeros(1, 30), Matrix::zeros(1, 30)).unwrap();
        let (hu, hy) = build_hankel(&zero, 2).unwrap();
        assert!(!check_persistency(&numerics::vstack(&[&hu, &hy]), 1, 2, 1, Tolerance::Default));

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = Matrix::from_fn(1, 100, |_, _| rng.random_range(-1.0..1.0));
        let y = lti::simulate(&sys, &Vector::zeros(1), &u).unwrap();
        let clean = Trajectory::new(u.clone(), y.clone()).unwrap();
        let (hu, hy) = build_hankel(&clean, 2).unwrap();
        let h = numerics::vstack(&[&hu, &hy]);
        // T=2, m=n=1: rank mT+n = 3
        assert_eq!(numerics::numerical_rank(&h, Tolerance::Default).unwrap(), 3);
        assert!(check_persistency(&h, 1, 2, 1, Tolerance::Default));

        let noisy = Trajectory::new(u, corrupt_output(&y, 1e-3, 9).unwrap()).unwrap();
        let (hu, hy) = build_hankel(&noisy, 2).unwrap();
        let h = numerics::vstack(&[&hu, &hy]);
        assert_eq!(numerics::numerical_rank(&h, Tolerance::Default).unwrap(), 4);
        assert!(!check_persistency(&h, 1, 2, 1, Tolerance::Default));
    }

    #[test]
    fn zero_noise_is_identity() {
        let y = Matrix::from_fn(2, 5, |i, j| (i + j) as f64);
        assert_eq!(corrupt_output(&y, 0.0, 3).unwrap(), y);
        assert!(matches!(
            corrupt_output(&y, -1.0, 3),
            Err(HankelError::NoiseBound(_))
        ));
    }

    proptest! {
        #[test]
        fn noise_is_bounded_and_seeded(seed in any::<u64>(), bound in 1e-9f64..10.0) {
            let y = Matrix::from_fn(2, 40, |i, j| (i as f64) - 0.1 * j as f64);
            let a = corrupt_output(&y, bound, seed).unwrap();
            let b = corrupt_output(&y, bound, seed).unwrap();
            prop_assert_eq!(&a, &b);
            let delta = &a - &y;
            // the addition itself may round by one ulp of |y|
            let slack = 4.0 * f64::EPSILON * y.amax();
            prop_assert!(delta.iter().all(|d| d.abs() < bound + slack));
        }
    }
}
