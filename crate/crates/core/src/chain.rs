//! Dense CTMC/DTMC kernel: uniformization, steady state, spectral gap,
//! mixing time, repeated squaring and the fundamental matrix.
//!
//! Everything here is a pure function of its inputs. Matrices are dense;
//! the chains this crate deals with have a few dozen states at most.

use nalgebra::{DMatrix, DVector, RowDVector};
use thiserror::Error;

use crate::scalar::{lit, to_f64, Scalar};

/// Default convergence tolerance for [`steady_state`].
pub const DEFAULT_TOL: f64 = 1e-10;
/// Default iteration cap for the power method and [`mixing_time`].
pub const DEFAULT_MAX_ITERS: usize = 1_000_000;
/// Default uniformization slack.
pub const DEFAULT_SLACK: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChainError {
    #[error("matrix is not square ({rows}x{cols})")]
    NonSquare { rows: usize, cols: usize },
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error("power iteration did not converge within {0} iterations")]
    NotConverged(usize),
    #[error("singular system: no unique steady state")]
    SingularSystem,
    #[error("degenerate chain: {0}")]
    DegenerateChain(String),
    #[error("eigenvalue routine did not converge")]
    EigenFailure,
    #[error("mixing criterion not met within {0} steps")]
    CapExceeded(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// A CTMC generator: zero row sums, nonnegative off-diagonal rates.
#[derive(Debug, Clone, PartialEq)]
pub struct RateMatrix<T: Scalar> {
    q: DMatrix<T>,
}

impl<T: Scalar> RateMatrix<T> {
    pub fn new(q: DMatrix<T>) -> Result<Self, ChainError> {
        if q.nrows() != q.ncols() {
            return Err(ChainError::NonSquare {
                rows: q.nrows(),
                cols: q.ncols(),
            });
        }
        if q.nrows() == 0 {
            return Err(ChainError::InvariantViolation("empty state space".into()));
        }
        let n = q.nrows();
        for i in 0..n {
            let mut sum = T::zero();
            let mut scale = T::one();
            for j in 0..n {
                let v = q[(i, j)];
                if !v.is_finite() {
                    return Err(ChainError::InvariantViolation(format!(
                        "non-finite entry at ({i}, {j})"
                    )));
                }
                if i != j && v < T::zero() {
                    return Err(ChainError::InvariantViolation(format!(
                        "negative off-diagonal rate at ({i}, {j})"
                    )));
                }
                sum += v;
                scale = scale.max(v.abs());
            }
            if q[(i, i)] > T::zero() {
                return Err(ChainError::InvariantViolation(format!(
                    "positive diagonal at row {i}"
                )));
            }
            if sum.abs() > T::row_sum_tol() * scale {
                return Err(ChainError::InvariantViolation(format!(
                    "row {i} sums to {} instead of 0",
                    to_f64(sum)
                )));
            }
        }
        Ok(Self { q })
    }

    /// Builds a generator from its off-diagonal rates; the diagonal is
    /// overwritten with the negative row sums.
    pub fn from_off_diagonal(mut q: DMatrix<T>) -> Result<Self, ChainError> {
        if q.nrows() != q.ncols() {
            return Err(ChainError::NonSquare {
                rows: q.nrows(),
                cols: q.ncols(),
            });
        }
        for i in 0..q.nrows() {
            q[(i, i)] = T::zero();
            let s = q.row(i).sum();
            q[(i, i)] = -s;
        }
        Self::new(q)
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.q
    }

    pub fn into_matrix(self) -> DMatrix<T> {
        self.q
    }

    /// Largest total exit rate `max_k(-Q_kk)` and the lowest row attaining it.
    pub fn max_exit_rate(&self) -> (T, usize) {
        let mut best = T::zero();
        let mut row = 0;
        for k in 0..self.dim() {
            let r = -self.q[(k, k)];
            if r > best {
                best = r;
                row = k;
            }
        }
        (best, row)
    }
}

/// Uniformized DTMC `P = I + Q/γ`.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformizedChain<T: Scalar> {
    p: DMatrix<T>,
    gamma: T,
    slack: T,
    attaining_row: Option<usize>,
}

impl<T: Scalar> UniformizedChain<T> {
    /// Wraps an explicit row-stochastic matrix (no generator behind it).
    /// `gamma` is reported as 1 and no row is γ-attaining.
    pub fn from_transition_matrix(p: DMatrix<T>) -> Result<Self, ChainError> {
        if p.nrows() != p.ncols() {
            return Err(ChainError::NonSquare {
                rows: p.nrows(),
                cols: p.ncols(),
            });
        }
        check_stochastic(&p)?;
        Ok(Self {
            p,
            gamma: T::one(),
            slack: T::zero(),
            attaining_row: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.p.nrows()
    }

    pub fn transition(&self) -> &DMatrix<T> {
        &self.p
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }

    pub fn slack(&self) -> T {
        self.slack
    }

    /// Row whose exit rate sets γ, if γ depends on the generator at all.
    pub fn attaining_row(&self) -> Option<usize> {
        self.attaining_row
    }

    /// `∂γ/∂q_ij` for an off-diagonal rate in row `i`.
    pub fn gamma_sensitivity(&self, row: usize) -> T {
        match self.attaining_row {
            Some(r) if r == row => T::one() + self.slack,
            _ => T::zero(),
        }
    }
}

fn check_stochastic<T: Scalar>(p: &DMatrix<T>) -> Result<(), ChainError> {
    let tol = T::row_sum_tol();
    for i in 0..p.nrows() {
        let mut sum = T::zero();
        for j in 0..p.ncols() {
            let v = p[(i, j)];
            if !(v >= -tol && v <= T::one() + tol) {
                return Err(ChainError::InvariantViolation(format!(
                    "transition probability {} at ({i}, {j}) outside [0, 1]",
                    to_f64(v)
                )));
            }
            sum += v;
        }
        if (sum - T::one()).abs() > tol {
            return Err(ChainError::InvariantViolation(format!(
                "row {i} sums to {}",
                to_f64(sum)
            )));
        }
    }
    Ok(())
}

/// Uniformizes `q` with `γ = max_k(-Q_kk)·(1 + slack)`, or `γ = slack` when
/// every state is absorbing.
pub fn uniformize<T: Scalar>(
    q: &RateMatrix<T>,
    slack: T,
) -> Result<UniformizedChain<T>, ChainError> {
    if !(slack > T::zero()) {
        return Err(ChainError::InvalidArgument("slack must be > 0".into()));
    }
    let (max_rate, row) = q.max_exit_rate();
    let (gamma, attaining_row) = if max_rate > T::zero() {
        (max_rate * (T::one() + slack), Some(row))
    } else {
        (slack, None)
    };
    let n = q.dim();
    let p = DMatrix::<T>::identity(n, n) + q.matrix() / gamma;
    check_stochastic(&p)?;
    Ok(UniformizedChain {
        p,
        gamma,
        slack,
        attaining_row,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SteadyStateMethod {
    /// `vᵀ ← vᵀP` from the uniform vector.
    Power,
    /// Direct solve of `πᵀ(P − I) = 0`, `Σπ = 1` by GTH elimination.
    LinearSolve,
}

/// Stationary distribution together with its residual `‖πᵀP − πᵀ‖∞` and
/// the initial distribution used for finite-horizon approximations.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState<T: Scalar> {
    pi: DVector<T>,
    residual: T,
    initial: DVector<T>,
}

impl<T: Scalar> SteadyState<T> {
    pub fn pi(&self) -> &DVector<T> {
        &self.pi
    }

    pub fn as_slice(&self) -> &[T] {
        self.pi.as_slice()
    }

    pub fn residual(&self) -> T {
        self.residual
    }

    /// `p^(events)(0)`, uniform.
    pub fn initial(&self) -> &DVector<T> {
        &self.initial
    }

    /// Π: every row equal to πᵀ.
    pub fn stationary_matrix(&self) -> DMatrix<T> {
        let n = self.pi.len();
        DMatrix::from_fn(n, n, |_, j| self.pi[j])
    }

    pub fn row(&self) -> RowDVector<T> {
        self.pi.transpose()
    }
}

fn uniform<T: Scalar>(n: usize) -> DVector<T> {
    DVector::from_element(n, T::one() / lit::<T>(n as f64))
}

fn residual_of<T: Scalar>(p: &DMatrix<T>, pi: &DVector<T>) -> T {
    let next = p.tr_mul(pi);
    (next - pi).amax()
}

pub fn steady_state<T: Scalar>(
    chain: &UniformizedChain<T>,
    tol: T,
    max_iters: usize,
    method: SteadyStateMethod,
) -> Result<SteadyState<T>, ChainError> {
    if !(tol > T::zero()) {
        return Err(ChainError::InvalidArgument("tol must be > 0".into()));
    }
    let n = chain.dim();
    let p = chain.transition();
    let pi = match method {
        SteadyStateMethod::LinearSolve => {
            let pi = gth_solve(p)?;
            let residual = residual_of(p, &pi);
            if residual > tol {
                return Err(ChainError::NotConverged(0));
            }
            return Ok(SteadyState {
                pi,
                residual,
                initial: uniform(n),
            });
        }
        SteadyStateMethod::Power => power_iterate(p, tol, max_iters)?,
    };
    let residual = residual_of(p, &pi);
    Ok(SteadyState {
        pi,
        residual,
        initial: uniform(n),
    })
}

/// Shorthand for the GTH solve at the default tolerance.
pub fn stationary<T: Scalar>(chain: &UniformizedChain<T>) -> Result<SteadyState<T>, ChainError> {
    steady_state(
        chain,
        lit(DEFAULT_TOL),
        DEFAULT_MAX_ITERS,
        SteadyStateMethod::LinearSolve,
    )
}

fn power_iterate<T: Scalar>(
    p: &DMatrix<T>,
    tol: T,
    max_iters: usize,
) -> Result<DVector<T>, ChainError> {
    let mut v = uniform::<T>(p.nrows());
    let mut prev_res: Option<T> = None;
    let cap = lit::<T>(1.0 - 1e-12);
    for _ in 0..max_iters {
        let next = p.tr_mul(&v);
        let res = (&next - &v).amax();
        if !res.is_finite() {
            return Err(ChainError::DegenerateChain(
                "power iteration diverged".into(),
            ));
        }
        // Geometric tail bound: distance to π ≲ res / (1 - rate).
        let rate = match prev_res {
            Some(r) if r > T::zero() => (res / r).min(cap),
            _ => T::zero(),
        };
        if res <= tol && res / (T::one() - rate) <= tol {
            return Ok(v);
        }
        prev_res = Some(res);
        let s = next.sum();
        v = next / s;
    }
    Err(ChainError::NotConverged(max_iters))
}

/// Grassmann–Taksar–Heyman elimination: solves `πᵀ(P − I) = 0` without
/// subtractions, so tiny stationary probabilities keep full relative accuracy.
fn gth_solve<T: Scalar>(p: &DMatrix<T>) -> Result<DVector<T>, ChainError> {
    let n = p.nrows();
    let mut a = p.clone();
    for k in (1..n).rev() {
        let mut s = T::zero();
        for j in 0..k {
            s += a[(k, j)];
        }
        if !(s > T::zero()) || !s.is_finite() {
            return Err(ChainError::SingularSystem);
        }
        for i in 0..k {
            a[(i, k)] /= s;
        }
        for j in 0..k {
            let akj = a[(k, j)];
            if akj == T::zero() {
                continue;
            }
            for i in 0..k {
                let aik = a[(i, k)];
                a[(i, j)] += aik * akj;
            }
        }
    }
    let mut pi = DVector::<T>::zeros(n);
    pi[0] = T::one();
    for k in 1..n {
        let mut acc = T::zero();
        for i in 0..k {
            acc += pi[i] * a[(i, k)];
        }
        pi[k] = acc;
    }
    let total = pi.sum();
    if !(total > T::zero()) || !total.is_finite() {
        return Err(ChainError::SingularSystem);
    }
    Ok(pi / total)
}

/// `1 − max |λ|` over the non-Perron eigenvalues of P.
pub fn spectral_gap<T: Scalar>(chain: &UniformizedChain<T>) -> Result<T, ChainError> {
    let n = chain.dim();
    if n == 1 {
        return Ok(T::one());
    }
    let m = chain.transition().map(|v| to_f64(v));
    let schur =
        nalgebra::linalg::Schur::try_new(m, 1e-14, 100_000).ok_or(ChainError::EigenFailure)?;
    let eig = schur.complex_eigenvalues();
    let perron = eig
        .iter()
        .enumerate()
        .min_by(|a, b| {
            let da = (a.1 - nalgebra::Complex::new(1.0, 0.0)).norm();
            let db = (b.1 - nalgebra::Complex::new(1.0, 0.0)).norm();
            da.total_cmp(&db)
        })
        .map(|(i, _)| i)
        .ok_or(ChainError::EigenFailure)?;
    let second = eig
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != perron)
        .map(|(_, z)| z.norm())
        .fold(0.0_f64, f64::max);
    let gap = 1.0 - second;
    if !gap.is_finite() {
        return Err(ChainError::EigenFailure);
    }
    if gap <= 1e-10 {
        return Err(ChainError::DegenerateChain(
            "second eigenvalue has modulus 1 (reducible or periodic)".into(),
        ));
    }
    Ok(lit(gap))
}

/// Distance of `P^t` from having identical rows: the max over rows of the
/// squared Euclidean distance to the column-wise mean row.
pub fn mixing_distance<T: Scalar>(pt: &DMatrix<T>) -> T {
    let n = pt.nrows();
    let scale = T::one() / lit::<T>(n as f64);
    let means: Vec<T> = (0..pt.ncols())
        .map(|j| pt.column(j).sum() * scale)
        .collect();
    let mut worst = T::zero();
    for i in 0..n {
        let mut acc = T::zero();
        for (j, m) in means.iter().enumerate() {
            let d = pt[(i, j)] - *m;
            acc += d * d;
        }
        worst = worst.max(acc);
    }
    worst
}

/// Smallest `t ≥ 1` with [`mixing_distance`]`(P^t) ≤ epsilon`.
pub fn mixing_time<T: Scalar>(
    chain: &UniformizedChain<T>,
    epsilon: T,
    cap: usize,
) -> Result<usize, ChainError> {
    if !(epsilon > T::zero()) {
        return Err(ChainError::InvalidArgument("epsilon must be > 0".into()));
    }
    let p = chain.transition();
    let mut pt = p.clone();
    for t in 1..=cap {
        if mixing_distance(&pt) <= epsilon {
            return Ok(t);
        }
        pt = &pt * p;
    }
    Err(ChainError::CapExceeded(cap))
}

/// `P^(2^squarings)` by repeated squaring.
pub fn power_by_squaring<T: Scalar>(
    chain: &UniformizedChain<T>,
    squarings: usize,
) -> Result<DMatrix<T>, ChainError> {
    if squarings == 0 {
        return Err(ChainError::InvalidArgument(
            "need at least one squaring".into(),
        ));
    }
    let mut a = chain.transition().clone();
    for _ in 0..squarings {
        a = &a * &a;
    }
    Ok(a)
}

/// `Z = (I − P + Π)⁻¹`.
pub fn fundamental_matrix<T: Scalar>(
    chain: &UniformizedChain<T>,
    pi: &SteadyState<T>,
) -> Result<DMatrix<T>, ChainError> {
    let n = chain.dim();
    if pi.pi().len() != n {
        return Err(ChainError::InvalidArgument(format!(
            "steady state has {} entries for a {n}-state chain",
            pi.pi().len()
        )));
    }
    let a = DMatrix::<T>::identity(n, n) - chain.transition() + pi.stationary_matrix();
    a.lu().try_inverse().ok_or(ChainError::SingularSystem)
}
