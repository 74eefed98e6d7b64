//! Gradients of steady-state quantities with respect to θ.
//!
//! All engines go through `∂P/∂θ_k = J_k/γ − Q·γ'_k/γ²`, where `J_k = ∂Q/∂θ_k`
//! and `γ'_k` is nonzero only when θ_k moves the exit rate of the row that
//! sets γ. Four engines are provided:
//!
//! * truncated: `∂(P^t)/∂θ_k` by the product rule,
//! * exact: `πᵀ ∂P Z` with the fundamental matrix `Z`,
//! * DC-BPTT: reverse mode through `P^(2^T)` built by repeated squaring,
//! * ∞-SGD: the geometrically stopped series `πᵀ ∂P Σ_{t<X} P^t/(1−p)^t`,
//!   an unbiased estimate of the exact gradient. Term `t` survives with
//!   probability `Pr[X > t] = (1−p)^t`, which the weight cancels.
//!
//! The contracted engines never form `∂P/∂θ_k` densely; with `w` shared
//! across parameters each θ_k costs one sparse dot product.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{ChainError, RateMatrix, SteadyState, UniformizedChain};
use crate::likelihood::{
    nll_grad_pi, window_nll, LikelihoodError, ObservationWindow, ObservedStateSet,
};
use crate::models::{ModelError, ParametricModel, SparseJacobian};
use crate::scalar::{lit, Scalar};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GradientError {
    #[error("∂P/∂q_ii is not defined; diagonal entries are not free rates")]
    DiagonalRequest,
    #[error("q_{0}{1} is a structural zero")]
    StructuralZero(usize, usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{0:?} engine produced a non-finite gradient")]
    NonFinite(Engine),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    Truncated,
    Dcbptt,
    Infsgd,
    Exact,
}

/// `∂P/∂q_ij` as a dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DpDq<T: Scalar> {
    pub i: usize,
    pub j: usize,
    pub matrix: DMatrix<T>,
}

/// A θ-shaped gradient with the engine, stopping draw and seed that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate<T: Scalar> {
    pub values: Vec<T>,
    pub engine: Engine,
    pub draw: Option<u64>,
    pub seed: u64,
}

impl<T: Scalar> GradientEstimate<T> {
    fn checked(
        values: Vec<T>,
        engine: Engine,
        draw: Option<u64>,
        seed: u64,
    ) -> Result<Self, GradientError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GradientError::NonFinite(engine));
        }
        Ok(Self {
            values,
            engine,
            draw,
            seed,
        })
    }
}

/// Geometric stopping time on `{1, 2, …}` with `Pr[X > t] = (1−p)^t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoppingRule {
    pub p: f64,
    pub rng_seed: u64,
}

impl StoppingRule {
    pub fn new(p: f64, rng_seed: u64) -> Result<Self, GradientError> {
        if !(p > 0.0 && p < 1.0) {
            return Err(GradientError::InvalidArgument(format!(
                "p must be in (0, 1), got {p}"
            )));
        }
        Ok(Self { p, rng_seed })
    }

    pub fn draw<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        // rand_distr counts failures before the first success.
        Geometric::new(self.p).expect("p validated").sample(rng) + 1
    }

    /// Draws with a fresh generator seeded from `rng_seed`.
    pub fn draw_seeded(&self) -> u64 {
        self.draw(&mut ChaCha8Rng::seed_from_u64(self.rng_seed))
    }

    /// `E[X] = 1/p`.
    pub fn mean(&self) -> f64 {
        1.0 / self.p
    }
}

/// `∂γ/∂θ_k`: `(1 + slack)` times the change in the attaining row's exit rate.
pub fn gamma_derivative<T: Scalar>(chain: &UniformizedChain<T>, jac: &SparseJacobian<T>) -> T {
    match chain.attaining_row() {
        Some(r) => (T::one() + chain.slack()) * jac.exit_rate_derivative(r),
        None => T::zero(),
    }
}

pub fn dp_dq<T: Scalar>(
    chain: &UniformizedChain<T>,
    q: &RateMatrix<T>,
    i: usize,
    j: usize,
) -> Result<DpDq<T>, GradientError> {
    let n = q.dim();
    if i >= n || j >= n {
        return Err(GradientError::InvalidArgument(format!(
            "({i}, {j}) outside a {n}-state chain"
        )));
    }
    if i == j {
        return Err(GradientError::DiagonalRequest);
    }
    if q.matrix()[(i, j)] == T::zero() {
        return Err(GradientError::StructuralZero(i, j));
    }
    let jac = SparseJacobian::one_hot(n, i, j);
    Ok(DpDq {
        i,
        j,
        matrix: dp_dtheta(chain, q, &jac),
    })
}

/// Dense `∂P/∂θ_k` for a parameter with rate jacobian `jac`.
pub fn dp_dtheta<T: Scalar>(
    chain: &UniformizedChain<T>,
    q: &RateMatrix<T>,
    jac: &SparseJacobian<T>,
) -> DMatrix<T> {
    let g = chain.gamma();
    let gp = gamma_derivative(chain, jac);
    let mut m = jac.to_dense() / g;
    if gp != T::zero() {
        m -= q.matrix() * (gp / (g * g));
    }
    m
}

/// Evaluates `Σ_k`-free contractions `⟨A, ∂P/∂θ_k⟩` for every k given the
/// shared quantities `⟨A, J_k⟩` (per k) and `⟨A, Q⟩`.
fn contract_all<T: Scalar>(
    chain: &UniformizedChain<T>,
    jacs: &[SparseJacobian<T>],
    with_jac: impl Fn(&SparseJacobian<T>) -> T,
    with_q: T,
) -> Vec<T> {
    let g = chain.gamma();
    let g2 = g * g;
    jacs.iter()
        .map(|jac| with_jac(jac) / g - gamma_derivative(chain, jac) * with_q / g2)
        .collect()
}

/// `uᵀ ∂P_k w` for every k.
pub fn bilinear_gradients<T: Scalar>(
    chain: &UniformizedChain<T>,
    q: &RateMatrix<T>,
    jacs: &[SparseJacobian<T>],
    u: &DVector<T>,
    w: &DVector<T>,
) -> Vec<T> {
    let qw = q.matrix() * w;
    contract_all(
        chain,
        jacs,
        |jac| {
            jac.entries
                .iter()
                .fold(T::zero(), |acc, &(i, j, v)| acc + u[i] * v * w[j])
        },
        u.dot(&qw),
    )
}

/// `∂(P^t)/∂θ_k = Σ_{l=1}^{t} P^{t−l} ∂P P^{l−1}`, via
/// `D_{s+1} = D_s P + P^s ∂P`.
pub fn truncated_power_gradient<T: Scalar>(
    chain: &UniformizedChain<T>,
    dp: &DMatrix<T>,
    t: usize,
) -> Result<DMatrix<T>, GradientError> {
    if t == 0 {
        return Err(GradientError::InvalidArgument("t must be >= 1".into()));
    }
    let p = chain.transition();
    let mut d = dp.clone();
    let mut ps = p.clone();
    for _ in 1..t {
        d = &d * p + &ps * dp;
        ps = &ps * p;
    }
    Ok(d)
}

/// `gᵀ = πᵀ ∂P Z`, the common row of `Π Σ_l ∂P P^l`.
pub fn exact_steady_gradient<T: Scalar>(
    pi: &SteadyState<T>,
    z: &DMatrix<T>,
    dp: &DMatrix<T>,
) -> DVector<T> {
    let row = dp.tr_mul(pi.pi());
    z.tr_mul(&row)
}

/// `Σ_n (∂L/∂π_n)(∂π_n/∂θ_k) = πᵀ ∂P_k Z ∂L/∂π` for every k.
pub fn exact_loss_gradient<T: Scalar>(
    chain: &UniformizedChain<T>,
    q: &RateMatrix<T>,
    pi: &SteadyState<T>,
    z: &DMatrix<T>,
    jacs: &[SparseJacobian<T>],
    loss_grad: &[T],
) -> Result<GradientEstimate<T>, GradientError> {
    let lg = DVector::from_column_slice(loss_grad);
    let w = z * lg;
    GradientEstimate::checked(
        bilinear_gradients(chain, q, jacs, pi.pi(), &w),
        Engine::Exact,
        None,
        0,
    )
}

/// `w = Σ_{t=0}^{X−1} P^t v / (1−p)^t`.
pub fn stopped_series<T: Scalar>(
    chain: &UniformizedChain<T>,
    v: &DVector<T>,
    p: f64,
    draw: u64,
) -> DVector<T> {
    let pm = chain.transition();
    let decay = T::one() / lit::<T>(1.0 - p);
    let mut w = v.clone();
    let mut cur = v.clone();
    let mut weight = T::one();
    for _ in 1..draw {
        cur = pm * cur;
        weight *= decay;
        w.axpy(weight, &cur, T::one());
    }
    w
}

/// The stopped row `πᵀ ∂P Σ_{t=0}^{X−1} P^t / (1−p)^t`, before contraction
/// with `∂L/∂π`.
pub fn stopped_row<T: Scalar>(
    chain: &UniformizedChain<T>,
    pi: &SteadyState<T>,
    dp: &DMatrix<T>,
    p: f64,
    draw: u64,
) -> DVector<T> {
    let pm = chain.transition();
    let decay = T::one() / lit::<T>(1.0 - p);
    let mut cur = dp.tr_mul(pi.pi());
    let mut acc = cur.clone();
    let mut weight = T::one();
    for _ in 1..draw {
        cur = pm.tr_mul(&cur);
        weight *= decay;
        acc.axpy(weight, &cur, T::one());
    }
    acc
}

/// ∞-SGD estimate for a fixed draw `X`.
pub fn stopped_gradient_with_draw<T: Scalar>(
    chain: &UniformizedChain<T>,
    q: &RateMatrix<T>,
    pi: &SteadyState<T>,
    jacs: &[SparseJacobian<T>],
    loss_grad: &[T],
    p: f64,
    draw: u64,
) -> Vec<T> {
    let lg = DVector::from_column_slice(loss_grad);
    let w = stopped_series(chain, &lg, p, draw);
    bilinear_gradients(chain, q, jacs, pi.pi(), &w)
}

/// Draws `X ~ Geometric(p)` from the rule's seed and returns the stopped
/// gradient estimate.
pub fn sample_stopped_gradient<T: Scalar>(
    chain: &UniformizedChain<T>,
    q: &RateMatrix<T>,
    pi: &SteadyState<T>,
    jacs: &[SparseJacobian<T>],
    loss_grad: &[T],
    rule: &StoppingRule,
) -> Result<GradientEstimate<T>, GradientError> {
    let draw = rule.draw_seeded();
    let values = stopped_gradient_with_draw(chain, q, pi, jacs, loss_grad, rule.p, draw);
    GradientEstimate::checked(values, Engine::Infsgd, Some(draw), rule.rng_seed)
}

/// `p₀ᵀ P^(2^T)` with `p₀` uniform.
pub fn horizon_distribution<T: Scalar>(
    chain: &UniformizedChain<T>,
    squarings: usize,
) -> Result<DVector<T>, GradientError> {
    let a = crate::chain::power_by_squaring(chain, squarings)?;
    let n = chain.dim();
    let p0 = DVector::from_element(n, T::one() / lit::<T>(n as f64));
    Ok(a.tr_mul(&p0))
}

/// DC-BPTT on a uniformized chain: forward `A_{s+1} = A_s²`, loss on
/// `p₀ᵀ A_T`, reverse `Ā_s = Ā_{s+1} A_sᵀ + A_sᵀ Ā_{s+1}`. `loss` maps the
/// horizon distribution to the loss and its gradient.
pub fn dcbptt_chain<T: Scalar>(
    chain: &UniformizedChain<T>,
    q: &RateMatrix<T>,
    jacs: &[SparseJacobian<T>],
    squarings: usize,
    loss: impl FnOnce(&[T]) -> Result<(T, Vec<T>), GradientError>,
) -> Result<(T, Vec<T>), GradientError> {
    if squarings == 0 {
        return Err(GradientError::InvalidArgument(
            "need at least one squaring".into(),
        ));
    }
    let n = chain.dim();
    let mut powers = Vec::with_capacity(squarings + 1);
    powers.push(chain.transition().clone());
    for s in 0..squarings {
        let next = &powers[s] * &powers[s];
        powers.push(next);
    }
    let p0 = DVector::from_element(n, T::one() / lit::<T>(n as f64));
    let pi_t = powers[squarings].tr_mul(&p0);
    let (value, lg) = loss(pi_t.as_slice())?;
    let lg = DVector::from_column_slice(&lg);
    let mut adj = &p0 * lg.transpose();
    for s in (0..squarings).rev() {
        let a = &powers[s];
        adj = &adj * a.transpose() + a.tr_mul(&adj);
    }
    let with_q = adj.component_mul(q.matrix()).sum();
    let grads = contract_all(chain, jacs, |jac| jac.contract(&adj), with_q);
    Ok((value, grads))
}

/// Window loss and gradient through the `2^T`-step horizon.
#[allow(clippy::too_many_arguments)]
pub fn dcbptt_loss_grad<T: Scalar>(
    model: &ParametricModel,
    x: T,
    theta: &[T],
    window: &ObservationWindow,
    obs: &ObservedStateSet,
    squarings: usize,
    slack: T,
) -> Result<(T, GradientEstimate<T>), GradientError> {
    let q = model.build_rate_matrix(x, theta)?;
    let chain = crate::chain::uniformize(&q, slack)?;
    let jacs = model.jacobians::<T>();
    let (value, grads) = dcbptt_chain(&chain, &q, &jacs, squarings, |pi| {
        Ok((window_nll(window, pi, obs)?, nll_grad_pi(window, pi, obs)?))
    })?;
    Ok((
        value,
        GradientEstimate::checked(grads, Engine::Dcbptt, None, 0)?,
    ))
}
