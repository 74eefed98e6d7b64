//! Conditional multinomial NLL of observed-state counts.
//!
//! Counts are only available on `S'`, so the steady state is renormalized
//! over `S'` before scoring:
//! `L = −Σ_{j∈S'} y_j log(π_j / Σ_{j'∈S'} π_j')`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{
    steady_state, uniformize, ChainError, RateMatrix, SteadyState, SteadyStateMethod,
    UniformizedChain,
};
use crate::models::{apply_relaxation, ModelError, ParametricModel, Relaxation};
use crate::scalar::{lit, Scalar};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LikelihoodError {
    #[error("observed states carry no probability mass")]
    ZeroMass,
    #[error("state {0} has a positive count but zero probability")]
    ZeroProbabilityObserved(usize),
    #[error("count for state {0}, which is not in the observed set")]
    UnobservedCount(usize),
    #[error("observed state {state} is outside a {dim}-state chain")]
    StateOutOfRange { state: usize, dim: usize },
    #[error("observed state set must be non-empty")]
    EmptyObservedSet,
    #[error("window {index}: {source}")]
    Window {
        index: usize,
        #[source]
        source: Box<LikelihoodError>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Chain(#[from] ChainError),
}

/// Sorted, duplicate-free, non-empty set of observed state indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct ObservedStateSet {
    indices: Vec<usize>,
}

impl ObservedStateSet {
    pub fn new(mut indices: Vec<usize>) -> Result<Self, LikelihoodError> {
        indices.sort_unstable();
        indices.dedup();
        if indices.is_empty() {
            return Err(LikelihoodError::EmptyObservedSet);
        }
        Ok(Self { indices })
    }

    /// Every state of an `n`-state chain.
    pub fn all(n: usize) -> Self {
        Self {
            indices: (0..n).collect(),
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn contains(&self, s: usize) -> bool {
        self.indices.binary_search(&s).is_ok()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn check_dim(&self, dim: usize) -> Result<(), LikelihoodError> {
        match self.indices.last() {
            Some(&s) if s >= dim => Err(LikelihoodError::StateOutOfRange { state: s, dim }),
            _ => Ok(()),
        }
    }
}

impl TryFrom<Vec<usize>> for ObservedStateSet {
    type Error = LikelihoodError;
    fn try_from(v: Vec<usize>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<ObservedStateSet> for Vec<usize> {
    fn from(s: ObservedStateSet) -> Self {
        s.indices
    }
}

/// One observation window: the known input `x` and counts per observed state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationWindow {
    pub x: f64,
    pub counts: BTreeMap<usize, u64>,
}

impl ObservationWindow {
    pub fn new(x: f64, counts: impl IntoIterator<Item = (usize, u64)>) -> Self {
        Self {
            x,
            counts: counts.into_iter().collect(),
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn count(&self, s: usize) -> u64 {
        self.counts.get(&s).copied().unwrap_or(0)
    }

    pub fn check(&self, obs: &ObservedStateSet) -> Result<(), LikelihoodError> {
        match self.counts.keys().find(|s| !obs.contains(**s)) {
            Some(&s) => Err(LikelihoodError::UnobservedCount(s)),
            None => Ok(()),
        }
    }
}

fn observed_mass<T: Scalar>(pi: &[T], obs: &ObservedStateSet) -> Result<T, LikelihoodError> {
    obs.check_dim(pi.len())?;
    let mass = obs.indices().iter().fold(T::zero(), |a, &j| a + pi[j]);
    if !(mass > T::prob_floor()) {
        return Err(LikelihoodError::ZeroMass);
    }
    Ok(mass)
}

pub fn window_nll<T: Scalar>(
    y: &ObservationWindow,
    pi: &[T],
    obs: &ObservedStateSet,
) -> Result<T, LikelihoodError> {
    y.check(obs)?;
    let mass = observed_mass(pi, obs)?;
    let mut loss = T::zero();
    for &j in obs.indices() {
        let c = y.count(j);
        if c == 0 {
            continue;
        }
        if pi[j] < T::prob_floor() {
            return Err(LikelihoodError::ZeroProbabilityObserved(j));
        }
        loss -= lit::<T>(c as f64) * (pi[j] / mass).ln();
    }
    Ok(loss)
}

/// `∂L/∂π_n = −y_n/π_n + N/Σ_{S'}π` on `S'`, zero elsewhere.
pub fn nll_grad_pi<T: Scalar>(
    y: &ObservationWindow,
    pi: &[T],
    obs: &ObservedStateSet,
) -> Result<Vec<T>, LikelihoodError> {
    y.check(obs)?;
    let mass = observed_mass(pi, obs)?;
    let n_total = lit::<T>(y.total() as f64);
    let mut g = vec![T::zero(); pi.len()];
    for &j in obs.indices() {
        let c = y.count(j);
        if c > 0 && pi[j] < T::prob_floor() {
            return Err(LikelihoodError::ZeroProbabilityObserved(j));
        }
        let first = if c == 0 {
            T::zero()
        } else {
            lit::<T>(c as f64) / pi[j]
        };
        g[j] = n_total / mass - first;
    }
    Ok(g)
}

/// Everything derived from one `(x, θ[, Q̃])` evaluation.
#[derive(Debug, Clone)]
pub struct Evaluated<T: Scalar> {
    pub q: RateMatrix<T>,
    pub chain: UniformizedChain<T>,
    pub steady: SteadyState<T>,
    pub penalty: T,
}

/// `Q(x, θ)` (optionally relaxed), its uniformization and exact steady state.
pub fn evaluate_at<T: Scalar>(
    model: &ParametricModel,
    x: T,
    theta: &[T],
    relax: Option<&Relaxation<T>>,
    slack: T,
) -> Result<Evaluated<T>, LikelihoodError> {
    let q = model.build_rate_matrix(x, theta)?;
    let (q, penalty) = match relax {
        Some(r) => apply_relaxation(&q, r)?,
        None => (q, T::zero()),
    };
    let chain = uniformize(&q, slack)?;
    let steady = steady_state(
        &chain,
        lit(1e-10),
        1_000_000,
        SteadyStateMethod::LinearSolve,
    )
    .or_else(|_| {
        steady_state(
            &chain,
            T::row_sum_tol(),
            1_000_000,
            SteadyStateMethod::LinearSolve,
        )
    })?;
    Ok(Evaluated {
        q,
        chain,
        steady,
        penalty,
    })
}

/// `Σ_m window_nll(y_m, π(x_m, θ)) + α‖Q̃‖²`.
pub fn dataset_nll<T: Scalar>(
    data: &[ObservationWindow],
    model: &ParametricModel,
    theta: &[T],
    obs: &ObservedStateSet,
    relax: Option<&Relaxation<T>>,
    slack: T,
) -> Result<T, LikelihoodError> {
    let mut total = T::zero();
    for (index, w) in data.iter().enumerate() {
        let wrap = |e: LikelihoodError| LikelihoodError::Window {
            index,
            source: Box::new(e),
        };
        let ev = evaluate_at(model, lit::<T>(w.x), theta, relax, slack).map_err(wrap)?;
        total += window_nll(w, ev.steady.as_slice(), obs).map_err(wrap)?;
    }
    if let Some(r) = relax {
        total += r.penalty();
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn obs01() -> ObservedStateSet {
        ObservedStateSet::new(vec![1, 0]).unwrap()
    }

    #[test]
    fn uniform_conditional() {
        let y = ObservationWindow::new(1.0, [(0, 7)]);
        let v = window_nll(&y, &[0.25, 0.25, 0.3, 0.2], &obs01()).unwrap();
        assert_relative_eq!(v, 7.0 * 2f64.ln(), max_relative = 1e-14);
    }

    #[test]
    fn four_state_example() {
        let y = ObservationWindow::new(1.0, [(0, 4), (1, 3)]);
        let v = window_nll(&y, &[0.4, 0.3, 0.2, 0.1], &obs01()).unwrap();
        let expected = -4.0 * (4.0f64 / 7.0).ln() - 3.0 * (3.0f64 / 7.0).ln();
        assert_relative_eq!(v, expected, max_relative = 1e-14);
        assert!((v - 4.780).abs() < 1e-3);
    }

    #[test]
    fn error_cases() {
        let y = ObservationWindow::new(1.0, [(0, 4), (1, 3)]);
        assert_eq!(
            window_nll(&y, &[0.0, 0.0, 1.0], &obs01()),
            Err(LikelihoodError::ZeroMass)
        );
        assert_eq!(
            window_nll(&y, &[0.0, 0.5, 0.5], &obs01()),
            Err(LikelihoodError::ZeroProbabilityObserved(0))
        );
        let bad = ObservationWindow::new(1.0, [(2, 1)]);
        assert_eq!(
            window_nll(&bad, &[0.3, 0.3, 0.4], &obs01()),
            Err(LikelihoodError::UnobservedCount(2))
        );
        assert!(ObservedStateSet::new(vec![]).is_err());
    }

    #[test]
    fn gradient_zero_off_set_and_stationary_at_empirical_proportions() {
        let y = ObservationWindow::new(1.0, [(0, 4), (1, 3)]);
        let pi = [0.4, 0.3, 0.2, 0.1];
        let g: Vec<f64> = nll_grad_pi(&y, &pi, &obs01()).unwrap();
        assert_eq!(g[2], 0.0);
        assert_eq!(g[3], 0.0);
        // π restricted to S' is proportional to y: the gradient is constant
        // on S', so it vanishes along mass-preserving directions.
        assert!((g[0] - g[1]).abs() < 1e-12);
    }

    #[test]
    fn dataset_nll_is_additive() {
        let m = ParametricModel::Mm1k { capacity: 2 };
        let obs = obs01();
        let w = ObservationWindow::new(1.0, [(0, 5), (1, 2)]);
        let one = dataset_nll(std::slice::from_ref(&w), &m, &[2.0], &obs, None, 0.01).unwrap();
        let two = dataset_nll(&[w.clone(), w.clone()], &m, &[2.0], &obs, None, 0.01).unwrap();
        assert_relative_eq!(two, 2.0 * one, max_relative = 1e-14);
        let ev = evaluate_at(&m, 1.0, &[2.0], None, 0.01).unwrap();
        assert_relative_eq!(
            one,
            window_nll(&w, ev.steady.as_slice(), &obs).unwrap(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn dataset_nll_reports_window_index() {
        let m = ParametricModel::Mm1k { capacity: 2 };
        let data = vec![
            ObservationWindow::new(1.0, [(0, 1)]),
            ObservationWindow::new(-1.0, [(0, 1)]),
        ];
        match dataset_nll(&data, &m, &[2.0], &obs01(), None, 0.01) {
            Err(LikelihoodError::Window { index: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    fn random_case() -> impl Strategy<Value = (Vec<f64>, Vec<u64>, Vec<usize>)> {
        (2usize..7).prop_flat_map(|n| {
            (
                proptest::collection::vec(0.01f64..1.0, n),
                proptest::collection::vec(0u64..20, n),
                proptest::sample::subsequence((0..n).collect::<Vec<_>>(), 1..=n),
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn gradient_matches_finite_differences((pi, counts, sub) in random_case()) {
            let obs = ObservedStateSet::new(sub).unwrap();
            let y = ObservationWindow::new(1.0, obs.indices().iter().map(|&j| (j, counts[j])));
            let g = nll_grad_pi(&y, &pi, &obs).unwrap();
            for n in 0..pi.len() {
                let h = 1e-6 * pi[n];
                let mut up = pi.clone();
                let mut dn = pi.clone();
                up[n] += h;
                dn[n] -= h;
                let fd = (window_nll(&y, &up, &obs).unwrap() - window_nll(&y, &dn, &obs).unwrap()) / (2.0 * h);
                let scale = g[n].abs().max(1.0);
                prop_assert!((fd - g[n]).abs() <= 1e-6 * scale, "n={} fd={} g={}", n, fd, g[n]);
            }
        }

        #[test]
        fn invariant_under_rescaling((pi, counts, sub) in random_case(), c in 0.001f64..1000.0) {
            let obs = ObservedStateSet::new(sub).unwrap();
            let y = ObservationWindow::new(1.0, obs.indices().iter().map(|&j| (j, counts[j])));
            let scaled: Vec<f64> = pi.iter().map(|v| v * c).collect();
            let a = window_nll(&y, &pi, &obs).unwrap();
            let b = window_nll(&y, &scaled, &obs).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }
}
