//! Synthetic observation windows.
//!
//! A window starts in a state drawn from the exact steady state, then
//! follows the uniformized chain at the events of a rate-γ Poisson process
//! until the window length is exceeded. Poisson arrivals see time averages,
//! so the visited states are draws from π without any burn-in. Counts
//! include the initial state.

use rand::distr::weighted::WeightedIndex;
use rand::distr::{Distribution, Uniform};
use rand::Rng;
use rand_distr::Exp;
use thiserror::Error;

use crate::chain::{stationary, uniformize, ChainError, RateMatrix, DEFAULT_SLACK};
use crate::likelihood::{ObservationWindow, ObservedStateSet};
use crate::models::{ModelError, ParametricModel};
use crate::rng::window_rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimulationError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("window {index}: {source}")]
    Window {
        index: usize,
        #[source]
        source: Box<SimulationError>,
    },
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub model: ParametricModel,
    pub theta_star: Vec<f64>,
    pub windows: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub window_length: f64,
    pub observed: ObservedStateSet,
    pub seed: u64,
    pub slack: f64,
}

impl SimulationConfig {
    /// Defaults: window length 1, slack 0.01.
    pub fn new(
        model: ParametricModel,
        theta_star: Vec<f64>,
        windows: usize,
        (lambda_min, lambda_max): (f64, f64),
        observed: ObservedStateSet,
        seed: u64,
    ) -> Self {
        Self {
            model,
            theta_star,
            windows,
            lambda_min,
            lambda_max,
            window_length: 1.0,
            observed,
            seed,
            slack: DEFAULT_SLACK,
        }
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        self.model.validate()?;
        if self.windows == 0 {
            return Err(SimulationError::Config("need at least one window".into()));
        }
        if !(self.lambda_min > 0.0
            && self.lambda_min <= self.lambda_max
            && self.lambda_max.is_finite())
        {
            return Err(SimulationError::Config(format!(
                "bad load interval [{}, {}]",
                self.lambda_min, self.lambda_max
            )));
        }
        if !(self.window_length > 0.0 && self.window_length.is_finite()) {
            return Err(SimulationError::Config("window length must be > 0".into()));
        }
        if !(self.slack > 0.0) {
            return Err(SimulationError::Config("slack must be > 0".into()));
        }
        self.observed
            .check_dim(self.model.state_count())
            .map_err(|e| SimulationError::Config(e.to_string()))?;
        // Surfaces length and positivity errors before any simulation.
        self.model
            .build_rate_matrix(self.lambda_min, &self.theta_star)?;
        Ok(())
    }
}

/// Visit counts for every state over one window of length `t`.
pub fn simulate_window<R: Rng + ?Sized>(
    q: &RateMatrix<f64>,
    t: f64,
    slack: f64,
    rng: &mut R,
) -> Result<Vec<u64>, SimulationError> {
    if !(t > 0.0) {
        return Err(SimulationError::Config("window length must be > 0".into()));
    }
    let chain = uniformize(q, slack)?;
    let pi = stationary(&chain)?;
    let n = chain.dim();
    let p = chain.transition();
    let rows: Vec<WeightedIndex<f64>> = (0..n)
        .map(|i| {
            WeightedIndex::new(p.row(i).iter().map(|v| v.max(0.0))).map_err(|e| {
                SimulationError::Chain(ChainError::InvariantViolation(format!("row {i}: {e}")))
            })
        })
        .collect::<Result<_, _>>()?;
    let start = WeightedIndex::new(pi.as_slice().iter().map(|v| v.max(0.0)))
        .map_err(|e| SimulationError::Chain(ChainError::DegenerateChain(e.to_string())))?;
    let gaps = Exp::new(chain.gamma()).map_err(|e| SimulationError::Config(e.to_string()))?;

    let mut counts = vec![0u64; n];
    let mut state = start.sample(rng);
    counts[state] += 1;
    let mut clock = gaps.sample(rng);
    while clock <= t {
        state = rows[state].sample(rng);
        counts[state] += 1;
        clock += gaps.sample(rng);
    }
    Ok(counts)
}

/// One window per index: `x ~ U[λ_min, λ_max]`, simulate under `Q(x, θ*)`,
/// keep only the observed states.
pub fn generate_dataset(cfg: &SimulationConfig) -> Result<Vec<ObservationWindow>, SimulationError> {
    cfg.validate()?;
    let load = Uniform::new_inclusive(cfg.lambda_min, cfg.lambda_max)
        .map_err(|e| SimulationError::Config(e.to_string()))?;
    (0..cfg.windows)
        .map(|index| {
            let wrap = |e: SimulationError| SimulationError::Window {
                index,
                source: Box::new(e),
            };
            let mut rng = window_rng(cfg.seed, index);
            let x = load.sample(&mut rng);
            let q = cfg
                .model
                .build_rate_matrix(x, &cfg.theta_star)
                .map_err(|e| wrap(e.into()))?;
            let counts =
                simulate_window(&q, cfg.window_length, cfg.slack, &mut rng).map_err(wrap)?;
            Ok(mask(x, &counts, &cfg.observed))
        })
        .collect()
}

/// Projects full counts onto `obs`. Observed states with no visits are kept
/// with a zero count.
pub fn mask(x: f64, counts: &[u64], obs: &ObservedStateSet) -> ObservationWindow {
    ObservationWindow::new(x, obs.indices().iter().map(|&s| (s, counts[s])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn single_state_chain_counts_every_event() {
        let q = RateMatrix::new(nalgebra::DMatrix::zeros(1, 1)).unwrap();
        let mut rng = stream_rng(3, 0);
        let c = simulate_window(&q, 50.0, 2.0, &mut rng).unwrap();
        // γ = slack = 2, so about 101 events.
        assert!(c[0] > 50 && c[0] < 160, "{c:?}");
    }

    #[test]
    fn long_window_frequencies_match_closed_form() {
        let m = ParametricModel::Mm1k { capacity: 2 };
        let q = m.build_rate_matrix(1.0, &[2.0]).unwrap();
        let mut rng = stream_rng(5, 0);
        let counts = simulate_window(&q, 1000.0, 0.01, &mut rng).unwrap();
        let n: u64 = counts.iter().sum();
        let pi = [4.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0];
        // Successive visits are correlated; inflate the multinomial SE by
        // the integrated autocorrelation of this fast chain.
        for s in 0..3 {
            let f = counts[s] as f64 / n as f64;
            let se = (pi[s] * (1.0 - pi[s]) / n as f64).sqrt();
            assert!(
                (f - pi[s]).abs() < 3.0 * 3.0 * se,
                "state {s}: {f} vs {}",
                pi[s]
            );
        }
        // Expected total γT + 1 with γ = 3.03.
        assert!((n as f64 - 3031.0).abs() < 4.0 * 3030f64.sqrt());
    }

    #[test]
    fn pooled_windows_match_pi() {
        let m = ParametricModel::Mm1k { capacity: 3 };
        let q = m.build_rate_matrix(2.0, &[3.0]).unwrap();
        let pi = stationary(&uniformize(&q, 0.01).unwrap()).unwrap();
        let mut pooled = [0u64; 4];
        let mut starts = [0u64; 4];
        for w in 0..200 {
            let mut rng = window_rng(9, w);
            let c = simulate_window(&q, 1.0, 0.01, &mut rng).unwrap();
            for s in 0..4 {
                pooled[s] += c[s];
            }
            let mut rng = window_rng(9, w);
            let c0 = simulate_window(&q, 1e-9, 0.01, &mut rng).unwrap();
            starts[c0.iter().position(|&v| v == 1).unwrap()] += 1;
        }
        let n: u64 = pooled.iter().sum();
        for s in 0..4 {
            let p = pi.pi()[s];
            let f = pooled[s] as f64 / n as f64;
            // Visits within a window are correlated; one effective draw per
            // window is the conservative bound.
            let se = (p * (1.0 - p) / 200.0).sqrt();
            assert!((f - p).abs() < 3.0 * se, "state {s}");
            let f0 = starts[s] as f64 / 200.0;
            assert!(
                (f0 - p).abs() < 3.0 * (p * (1.0 - p) / 200.0).sqrt(),
                "start {s}"
            );
        }
    }

    fn config(obs: Vec<usize>) -> SimulationConfig {
        SimulationConfig::new(
            ParametricModel::Mm1k { capacity: 20 },
            vec![25.0],
            50,
            (11.0, 15.0),
            ObservedStateSet::new(obs).unwrap(),
            42,
        )
    }

    #[test]
    fn dataset_is_deterministic_and_masked() {
        let cfg = config(vec![0, 1]);
        let a = generate_dataset(&cfg).unwrap();
        assert_eq!(a, generate_dataset(&cfg).unwrap());
        assert_eq!(a.len(), 50);
        for w in &a {
            assert!((11.0..=15.0).contains(&w.x));
            assert_eq!(w.counts.keys().copied().collect::<Vec<_>>(), vec![0, 1]);
        }
        let mut other = cfg.clone();
        other.seed = 43;
        assert_ne!(a, generate_dataset(&other).unwrap());
    }

    #[test]
    fn full_observation_keeps_every_count() {
        let full = generate_dataset(&config((0..21).collect())).unwrap();
        let part = generate_dataset(&config(vec![0, 1])).unwrap();
        for (f, p) in full.iter().zip(&part) {
            assert_eq!(f.x, p.x);
            for (s, c) in &p.counts {
                assert_eq!(f.counts[s], *c);
            }
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = config(vec![0]);
        cfg.lambda_min = 20.0;
        assert!(generate_dataset(&cfg).is_err());
        let mut cfg = config(vec![0]);
        cfg.theta_star = vec![1.0, 2.0];
        assert!(generate_dataset(&cfg).is_err());
        let cfg = config(vec![30]);
        assert!(generate_dataset(&cfg).is_err());
    }
}
