//! Parametric rate-matrix families `Q(x, θ)` and the non-parametric
//! relaxation `Q' = Q + Q̃`.
//!
//! Every family is linear in θ, so the jacobians do not depend on the point
//! at which they are taken. `x` is the arrival rate and always sits on the
//! superdiagonal.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{ChainError, RateMatrix};
use crate::scalar::{lit, to_f64, Scalar};

/// Default projection floor ε.
pub const DEFAULT_EPS_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("expected {expected} parameters, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-positive rate: {0}")]
    NonPositiveRate(String),
    #[error("parameter index {index} out of range for {len} parameters")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("relaxation entry ({0}, {1}) overlaps the parametric support")]
    SupportOverlap(usize, usize),
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error(transparent)]
    Chain(#[from] ChainError),
}

fn default_bands() -> usize {
    3
}

/// Model family descriptor. States are the queue lengths `0..=capacity`;
/// the upper-triangular family adds one overload state after them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ParametricModel {
    /// Single server, service rate θ.
    Mm1k { capacity: usize },
    /// `servers` servers, state `i` drains at `min(i, servers)·θ`.
    Mmmk { capacity: usize, servers: usize },
    /// Batch departures: `Q[i, i−d] = θ_d` for `d = 1..=bands`.
    MmMultipleK {
        capacity: usize,
        #[serde(default = "default_bands")]
        bands: usize,
    },
    /// Every downward jump `i → j` (j < i) has its own rate θ_ij, stored
    /// row-major over the strict lower triangle.
    UpperTriangular { capacity: usize },
}

impl ParametricModel {
    pub fn validate(&self) -> Result<(), ModelError> {
        match *self {
            Self::Mm1k { capacity } | Self::UpperTriangular { capacity } if capacity == 0 => {
                Err(ModelError::Invalid("capacity must be >= 1".into()))
            }
            Self::Mmmk { capacity, servers } if servers == 0 || servers > capacity => Err(
                ModelError::Invalid(format!("servers must be in 1..={capacity}, got {servers}")),
            ),
            Self::MmMultipleK { capacity, bands } if bands == 0 || bands > capacity => Err(
                ModelError::Invalid(format!("bands must be in 1..={capacity}, got {bands}")),
            ),
            _ => Ok(()),
        }
    }

    pub fn capacity(&self) -> usize {
        match *self {
            Self::Mm1k { capacity }
            | Self::Mmmk { capacity, .. }
            | Self::MmMultipleK { capacity, .. }
            | Self::UpperTriangular { capacity } => capacity,
        }
    }

    pub fn state_count(&self) -> usize {
        match self {
            Self::UpperTriangular { .. } => self.capacity() + 2,
            _ => self.capacity() + 1,
        }
    }

    pub fn param_len(&self) -> usize {
        match *self {
            Self::Mm1k { .. } | Self::Mmmk { .. } => 1,
            Self::MmMultipleK { bands, .. } => bands,
            Self::UpperTriangular { .. } => {
                let s = self.state_count();
                s * (s - 1) / 2
            }
        }
    }

    /// Failure states used for extrapolation: the full queue, or the
    /// overload state for the upper-triangular family.
    pub fn failure_states(&self) -> Vec<usize> {
        vec![self.state_count() - 1]
    }

    /// Human-readable parameter names, in parameter order.
    pub fn param_names(&self) -> Vec<String> {
        match *self {
            Self::Mm1k { .. } | Self::Mmmk { .. } => vec!["theta".into()],
            Self::MmMultipleK { bands, .. } => (1..=bands).map(|d| format!("theta_{d}")).collect(),
            Self::UpperTriangular { .. } => (1..self.state_count())
                .flat_map(|i| (0..i).map(move |j| format!("theta_{i}_{j}")))
                .collect(),
        }
    }

    /// θ₀ used when the optimizer config does not set one.
    pub fn default_init(&self) -> Vec<f64> {
        vec![1.0; self.param_len()]
    }

    /// Off-diagonal positions that may be nonzero in `Q(x, θ)`.
    pub fn structural_support(&self) -> Vec<(usize, usize)> {
        let n = self.state_count();
        let mut out: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
        for k in 0..self.param_len() {
            for (i, j, _) in self.jacobian_pattern(k) {
                if i != j && !out.contains(&(i, j)) {
                    out.push((i, j));
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Index of θ_ij in the upper-triangular parameter vector.
    pub fn lower_index(i: usize, j: usize) -> usize {
        debug_assert!(j < i);
        i * (i - 1) / 2 + j
    }

    /// Nonzero entries of ∂Q/∂θ_k as `(row, col, value)` in f64.
    fn jacobian_pattern(&self, k: usize) -> Vec<(usize, usize, f64)> {
        let n = self.state_count();
        let mut out = Vec::new();
        match *self {
            Self::Mm1k { .. } | Self::Mmmk { .. } => {
                let m = match *self {
                    Self::Mmmk { servers, .. } => servers,
                    _ => 1,
                };
                for i in 1..n {
                    let c = i.min(m) as f64;
                    out.push((i, i - 1, c));
                    out.push((i, i, -c));
                }
            }
            Self::MmMultipleK { .. } => {
                let d = k + 1;
                for i in d..n {
                    out.push((i, i - d, 1.0));
                    out.push((i, i, -1.0));
                }
            }
            Self::UpperTriangular { .. } => {
                // Invert the row-major lower-triangle index.
                let mut i = 1;
                while Self::lower_index(i + 1, 0) <= k {
                    i += 1;
                }
                let j = k - Self::lower_index(i, 0);
                out.push((i, j, 1.0));
                out.push((i, i, -1.0));
            }
        }
        out
    }

    fn check_theta<T: Scalar>(&self, theta: &[T]) -> Result<(), ModelError> {
        self.validate()?;
        if theta.len() != self.param_len() {
            return Err(ModelError::LengthMismatch {
                expected: self.param_len(),
                got: theta.len(),
            });
        }
        for (k, &v) in theta.iter().enumerate() {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(ModelError::NonPositiveRate(format!(
                    "theta[{k}] = {}",
                    to_f64(v)
                )));
            }
        }
        Ok(())
    }

    pub fn build_rate_matrix<T: Scalar>(
        &self,
        x: T,
        theta: &[T],
    ) -> Result<RateMatrix<T>, ModelError> {
        self.check_theta(theta)?;
        if !(x > T::zero()) || !x.is_finite() {
            return Err(ModelError::NonPositiveRate(format!("x = {}", to_f64(x))));
        }
        let n = self.state_count();
        let mut q = DMatrix::<T>::zeros(n, n);
        for i in 0..n - 1 {
            q[(i, i + 1)] = x;
        }
        for (k, &th) in theta.iter().enumerate() {
            for (i, j, c) in self.jacobian_pattern(k) {
                if i != j {
                    q[(i, j)] += lit::<T>(c) * th;
                }
            }
        }
        Ok(RateMatrix::from_off_diagonal(q)?)
    }

    /// ∂Q/∂θ_k, including the diagonal compensation. `x` and `theta` are
    /// only validated: every family is linear in θ.
    pub fn rate_jacobian<T: Scalar>(
        &self,
        x: T,
        theta: &[T],
        k: usize,
    ) -> Result<SparseJacobian<T>, ModelError> {
        self.check_theta(theta)?;
        if !(x > T::zero()) {
            return Err(ModelError::NonPositiveRate(format!("x = {}", to_f64(x))));
        }
        self.jacobian(k)
    }

    /// Point-free variant of [`rate_jacobian`](Self::rate_jacobian).
    pub fn jacobian<T: Scalar>(&self, k: usize) -> Result<SparseJacobian<T>, ModelError> {
        if k >= self.param_len() {
            return Err(ModelError::IndexOutOfRange {
                index: k,
                len: self.param_len(),
            });
        }
        Ok(SparseJacobian {
            dim: self.state_count(),
            entries: self
                .jacobian_pattern(k)
                .into_iter()
                .map(|(i, j, v)| (i, j, lit(v)))
                .collect(),
        })
    }

    /// All parameter jacobians in order.
    pub fn jacobians<T: Scalar>(&self) -> Vec<SparseJacobian<T>> {
        (0..self.param_len())
            .map(|k| self.jacobian(k).expect("index in range"))
            .collect()
    }
}

/// Sparse `∂Q/∂θ_k`: a list of `(row, col, value)` triples, diagonal included.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseJacobian<T: Scalar> {
    pub dim: usize,
    pub entries: Vec<(usize, usize, T)>,
}

impl<T: Scalar> SparseJacobian<T> {
    /// Jacobian of the relaxation entry `(i, j)`.
    pub fn one_hot(dim: usize, i: usize, j: usize) -> Self {
        Self {
            dim,
            entries: vec![(i, j, T::one()), (i, i, -T::one())],
        }
    }

    pub fn to_dense(&self) -> DMatrix<T> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for &(i, j, v) in &self.entries {
            m[(i, j)] += v;
        }
        m
    }

    /// `Σ_ij J_ij·M_ij`.
    pub fn contract(&self, m: &DMatrix<T>) -> T {
        self.entries
            .iter()
            .fold(T::zero(), |acc, &(i, j, v)| acc + v * m[(i, j)])
    }

    /// `-J_rr`: how much the exit rate of row `r` moves with this parameter.
    pub fn exit_rate_derivative(&self, r: usize) -> T {
        self.entries
            .iter()
            .filter(|&&(i, j, _)| i == r && j == r)
            .fold(T::zero(), |acc, &(_, _, v)| acc - v)
    }
}

/// θ with the positivity floor used by the projected optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector<T: Scalar> {
    values: Vec<T>,
}

impl<T: Scalar> ParamVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self, ModelError> {
        for (k, &v) in values.iter().enumerate() {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(ModelError::NonPositiveRate(format!(
                    "theta[{k}] = {}",
                    to_f64(v)
                )));
            }
        }
        Ok(Self { values })
    }

    /// `max(θ_k − step_k, floor)` for every entry.
    pub fn project_step(&mut self, step: &[T], floor: T) {
        for (v, s) in self.values.iter_mut().zip(step) {
            *v = (*v - *s).max(floor);
        }
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<T> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Learnable off-support rates `Q̃` with penalty weight α.
#[derive(Debug, Clone, PartialEq)]
pub struct Relaxation<T: Scalar> {
    pub q_tilde: DMatrix<T>,
    pub alpha: T,
}

impl<T: Scalar> Relaxation<T> {
    pub fn zeros(model: &ParametricModel, alpha: T) -> Self {
        let n = model.state_count();
        Self {
            q_tilde: DMatrix::zeros(n, n),
            alpha,
        }
    }

    /// Off-diagonal positions outside the model's structural support.
    pub fn free_positions(model: &ParametricModel) -> Vec<(usize, usize)> {
        let n = model.state_count();
        let support = model.structural_support();
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i != j && support.binary_search(&(i, j)).is_err() {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// `α‖Q̃‖²` over the off-diagonal entries.
    pub fn penalty(&self) -> T {
        let n = self.q_tilde.nrows();
        let mut s = T::zero();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += self.q_tilde[(i, j)] * self.q_tilde[(i, j)];
                }
            }
        }
        self.alpha * s
    }

    pub fn frobenius_norm(&self) -> T {
        if self.alpha > T::zero() {
            (self.penalty() / self.alpha).sqrt()
        } else {
            let mut s = T::zero();
            for i in 0..self.q_tilde.nrows() {
                for j in 0..self.q_tilde.ncols() {
                    if i != j {
                        s += self.q_tilde[(i, j)] * self.q_tilde[(i, j)];
                    }
                }
            }
            s.sqrt()
        }
    }
}

/// `Q' = Q + Q̃` with the diagonal rebalanced, and the penalty `α‖Q̃‖²`.
pub fn apply_relaxation<T: Scalar>(
    q: &RateMatrix<T>,
    relax: &Relaxation<T>,
) -> Result<(RateMatrix<T>, T), ModelError> {
    let n = q.dim();
    let qt = &relax.q_tilde;
    if qt.nrows() != n || qt.ncols() != n {
        return Err(ModelError::Invalid(format!(
            "relaxation is {}x{} for a {n}-state chain",
            qt.nrows(),
            qt.ncols()
        )));
    }
    let mut out = q.matrix().clone();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let v = qt[(i, j)];
            if v == T::zero() {
                continue;
            }
            if v < T::zero() || !v.is_finite() {
                return Err(ModelError::NonPositiveRate(format!(
                    "q_tilde[{i}, {j}] = {}",
                    to_f64(v)
                )));
            }
            if q.matrix()[(i, j)] != T::zero() {
                return Err(ModelError::SupportOverlap(i, j));
            }
            out[(i, j)] = v;
        }
    }
    Ok((RateMatrix::from_off_diagonal(out)?, relax.penalty()))
}
