//! Discrete-time LTI ground truth: simulation, random stable systems and the
//! observability / Toeplitz constructions used to check Hankel identities.

use nalgebra::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::numerics::{self, Matrix, NumericsError, Tolerance, Vector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LtiError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("system is not stable (spectral radius {0})")]
    Unstable(f64),
    #[error("(A, C) is not observable")]
    Unobservable,
    #[error("random system generation failed after {0} attempts")]
    GenerationFailed(usize),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = std::result::Result<T, LtiError>;

/// Maximum number of redraws in [`random_stable_system`].
pub const GENERATION_RETRIES: usize = 100;

/// `x(t+1) = A x(t) + B u(t)`, `y(t) = C x(t) + D u(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    a: Matrix,
    b: Matrix,
    c: Matrix,
    d: Matrix,
}

impl StateSpace {
    /// Checks shapes, finiteness and stability (`ρ(A) < 1`).
    pub fn new(a: Matrix, b: Matrix, c: Matrix, d: Matrix) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(LtiError::Dimension(format!(
                "A must be square and nonempty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let m = b.ncols();
        let p = c.nrows();
        if m == 0 || p == 0 {
            return Err(LtiError::Dimension("need at least one input and output".into()));
        }
        if b.nrows() != n || c.ncols() != n || d.shape() != (p, m) {
            return Err(LtiError::Dimension(format!(
                "B {:?}, C {:?}, D {:?} incompatible with n={n}",
                b.shape(),
                c.shape(),
                d.shape()
            )));
        }
        if [&a, &b, &c, &d].iter().any(|x| x.iter().any(|v| !v.is_finite())) {
            return Err(NumericsError::NonFinite.into());
        }
        let sys = StateSpace { a, b, c, d };
        let rho = sys.spectral_radius();
        if rho.is_nan() || rho >= 1.0 {
            return Err(LtiError::Unstable(rho));
        }
        Ok(sys)
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }
    pub fn b(&self) -> &Matrix {
        &self.b
    }
    pub fn c(&self) -> &Matrix {
        &self.c
    }
    pub fn d(&self) -> &Matrix {
        &self.d
    }
    pub fn order(&self) -> usize {
        self.a.nrows()
    }
    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }
    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn spectral_radius(&self) -> f64 {
        self.a
            .complex_eigenvalues()
            .iter()
            .map(|z: &Complex<f64>| z.norm())
            .fold(0.0, f64::max)
    }

    pub fn is_observable(&self) -> bool {
        let n = self.order();
        matches!(
            numerics::numerical_rank(&extended_observability(self, n), Tolerance::Default),
            Ok(r) if r == n
        )
    }
}

/// Input/output record: column `t` of `inputs` is `u(t)`, of `outputs` is `y(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub inputs: Matrix,
    pub outputs: Matrix,
}

impl Trajectory {
    pub fn new(inputs: Matrix, outputs: Matrix) -> Result<Self> {
        if inputs.ncols() != outputs.ncols() {
            return Err(LtiError::Dimension(format!(
                "input length {} != output length {}",
                inputs.ncols(),
                outputs.ncols()
            )));
        }
        if inputs.nrows() == 0 || outputs.nrows() == 0 {
            return Err(LtiError::Dimension("empty input or output channel set".into()));
        }
        if inputs.iter().chain(outputs.iter()).any(|v| !v.is_finite()) {
            return Err(NumericsError::NonFinite.into());
        }
        Ok(Trajectory { inputs, outputs })
    }

    pub fn len(&self) -> usize {
        self.inputs.ncols()
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn m(&self) -> usize {
        self.inputs.nrows()
    }
    pub fn p(&self) -> usize {
        self.outputs.nrows()
    }
}

/// Simulates from `x0` under input sequence `u` (m×L); returns outputs (p×L).
pub fn simulate(sys: &StateSpace, x0: &Vector, u: &Matrix) -> Result<Matrix> {
    Ok(simulate_with_states(sys, x0, u)?.0)
}

/// Like [`simulate`] but also returns the state sequence `x(0..=L)` as n×(L+1).
pub fn simulate_with_states(sys: &StateSpace, x0: &Vector, u: &Matrix) -> Result<(Matrix, Matrix)> {
    let n = sys.order();
    if x0.len() != n {
        return Err(LtiError::Dimension(format!(
            "x0 has length {}, expected {n}",
            x0.len()
        )));
    }
    if u.nrows() != sys.inputs() {
        return Err(LtiError::Dimension(format!(
            "input has {} channels, expected {}",
            u.nrows(),
            sys.inputs()
        )));
    }
    let len = u.ncols();
    let mut y = Matrix::zeros(sys.outputs(), len);
    let mut xs = Matrix::zeros(n, len + 1);
    let mut x = x0.clone();
    xs.set_column(0, &x);
    for t in 0..len {
        let ut = u.column(t);
        y.set_column(t, &(&sys.c * &x + &sys.d * ut));
        x = &sys.a * &x + &sys.b * ut;
        xs.set_column(t + 1, &x);
    }
    Ok((y, xs))
}

/// `O_t = col(C, CA, …, CA^{t−1})`.
pub fn extended_observability(sys: &StateSpace, t: usize) -> Matrix {
    let (n, p) = (sys.order(), sys.outputs());
    let mut out = Matrix::zeros(p * t, n);
    let mut row = sys.c.clone();
    for k in 0..t {
        out.view_mut((k * p, 0), (p, n)).copy_from(&row);
        row = &row * &sys.a;
    }
    out
}

/// Block lower-triangular Toeplitz matrix of Markov parameters, `D` on the diagonal.
pub fn convolution_matrix(sys: &StateSpace, t: usize) -> Matrix {
    let (m, p) = (sys.inputs(), sys.outputs());
    let mut markov = Vec::with_capacity(t);
    markov.push(sys.d.clone());
    let mut ak_b = sys.b.clone();
    for _ in 1..t {
        markov.push(&sys.c * &ak_b);
        ak_b = &sys.a * ak_b;
    }
    let mut out = Matrix::zeros(p * t, m * t);
    for i in 0..t {
        for j in 0..=i {
            out.view_mut((i * p, j * m), (p, m)).copy_from(&markov[i - j]);
        }
    }
    out
}

/// `[A^{t−1}B … AB B]`.
pub fn reach_block(sys: &StateSpace, t: usize) -> Matrix {
    let (n, m) = (sys.order(), sys.inputs());
    let mut out = Matrix::zeros(n, m * t);
    let mut blk = sys.b.clone();
    for k in (0..t).rev() {
        out.view_mut((0, k * m), (n, m)).copy_from(&blk);
        blk = &sys.a * blk;
    }
    out
}

/// Observability index: smallest depth at which `O_t` has rank `n`.
pub fn lag(sys: &StateSpace) -> Result<usize> {
    let n = sys.order();
    for t in 1..=n {
        if numerics::numerical_rank(&extended_observability(sys, t), Tolerance::Default)? == n {
            return Ok(t);
        }
    }
    Err(LtiError::Unobservable)
}

fn uniform_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..=1.0))
}

/// Haar-distributed orthogonal matrix via sign-corrected QR of a Gaussian draw.
fn random_orthogonal<R: Rng>(rng: &mut R, n: usize) -> Matrix {
    let g = Matrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Real block-diagonal matrix with eigenvalue magnitudes in [0.1, 0.9].
fn random_stable_spectrum<R: Rng>(rng: &mut R, n: usize) -> Matrix {
    let mut a = Matrix::zeros(n, n);
    let mut i = 0;
    while i < n {
        let radius = rng.random_range(0.1..=0.9);
        let pair = n - i >= 2 && rng.random_bool(0.5);
        if pair {
            let theta = rng.random_range(0.0..std::f64::consts::PI);
            let (s, c) = theta.sin_cos();
            a[(i, i)] = radius * c;
            a[(i, i + 1)] = radius * s;
            a[(i + 1, i)] = -radius * s;
            a[(i + 1, i + 1)] = radius * c;
            i += 2;
        } else {
            a[(i, i)] = if rng.random_bool(0.5) { radius } else { -radius };
            i += 1;
        }
    }
    a
}

/// Draws one candidate system from `rng` without the observability check.
pub fn sample_stable_system<R: Rng>(rng: &mut R, n: usize, m: usize, p: usize) -> Result<StateSpace> {
    if n == 0 || m == 0 || p == 0 {
        return Err(LtiError::Dimension("n, m, p must be positive".into()));
    }
    let block = random_stable_spectrum(rng, n);
    let q = random_orthogonal(rng, n);
    let a = &q * block * q.transpose();
    let b = uniform_matrix(rng, n, m);
    let c = uniform_matrix(rng, p, n);
    let d = uniform_matrix(rng, p, m);
    StateSpace::new(a, b, c, d)
}

/// Random stable, observable system; deterministic in `seed`.
pub fn random_stable_system(n: usize, m: usize, p: usize, seed: u64) -> Result<StateSpace> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_stable_system_with(&mut rng, n, m, p)
}

pub fn random_stable_system_with<R: Rng>(
    rng: &mut R,
    n: usize,
    m: usize,
    p: usize,
) -> Result<StateSpace> {
    for _ in 0..GENERATION_RETRIES {
        let sys = sample_stable_system(rng, n, m, p)?;
        if sys.is_observable() {
            return Ok(sys);
        }
    }
    Err(LtiError::GenerationFailed(GENERATION_RETRIES))
}
