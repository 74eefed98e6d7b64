//! Projected SGD on the conditional NLL.
//!
//! Each update averages per-window gradients over a minibatch and applies
//! `θ_k ← max(θ_k − η_h ḡ_k, ε)`. Relaxation entries take the same step
//! with the extra `2αQ̃` penalty gradient and are clamped at zero. Every
//! stochastic draw comes from a stream keyed by `(seed, epoch, window)`.

use log::{info, warn};
use nalgebra::DVector;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{fundamental_matrix, spectral_gap, uniformize, DEFAULT_SLACK};
use crate::gradients::{
    dcbptt_chain, exact_loss_gradient, horizon_distribution, sample_stopped_gradient,
    GradientError, StoppingRule,
};
use crate::likelihood::{
    dataset_nll, evaluate_at, nll_grad_pi, window_nll, ObservationWindow, ObservedStateSet,
};
use crate::models::{ParametricModel, Relaxation, SparseJacobian, DEFAULT_EPS_FLOOR};
use crate::rng::update_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineKind {
    /// Randomly stopped unbiased estimator.
    Infsgd,
    /// Backpropagation through `2^T` squarings.
    Dcbptt,
    /// Fundamental-matrix gradient; deterministic reference.
    Exact,
}

impl std::fmt::Display for EngineKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EngineKind::Infsgd => "infsgd",
            EngineKind::Dcbptt => "dcbptt",
            EngineKind::Exact => "exact",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    Constant,
    /// `η_h = η₀ / (1 + h·decay)`.
    InverseT {
        decay: f64,
    },
}

fn d_epochs() -> usize {
    50
}
fn d_eta0() -> f64 {
    0.01
}
fn d_schedule() -> Schedule {
    Schedule::Constant
}
fn d_p() -> f64 {
    0.1
}
fn d_squarings() -> usize {
    7
}
fn d_floor() -> f64 {
    DEFAULT_EPS_FLOOR
}
fn d_slack() -> f64 {
    DEFAULT_SLACK
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub engine: EngineKind,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_eta0")]
    pub eta0: f64,
    /// Candidate η₀ values; when set, the harness fits once per value and
    /// keeps the run with the lowest final engine loss. `fit` ignores it.
    #[serde(default)]
    pub eta_grid: Option<Vec<f64>>,
    #[serde(default = "d_schedule")]
    pub schedule: Schedule,
    /// Geometric stopping probability (infsgd).
    #[serde(default = "d_p")]
    pub p: f64,
    /// Squaring depth T, horizon `2^T` (dcbptt).
    #[serde(default = "d_squarings")]
    pub squarings: usize,
    #[serde(default = "d_floor")]
    pub eps_floor: f64,
    /// Relaxation weight; absent means no relaxation.
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    /// Windows per update; absent means the full dataset.
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default = "d_slack")]
    pub slack: f64,
    /// θ₀; defaults to the model's own initialization.
    #[serde(default)]
    pub init: Option<Vec<f64>>,
}

impl OptimizerConfig {
    pub fn new(engine: EngineKind) -> Self {
        Self {
            engine,
            epochs: d_epochs(),
            eta0: d_eta0(),
            eta_grid: None,
            schedule: d_schedule(),
            p: d_p(),
            squarings: d_squarings(),
            eps_floor: d_floor(),
            alpha: None,
            seed: 0,
            batch_size: None,
            slack: d_slack(),
            init: None,
        }
    }

    pub fn validate(&self, model: &ParametricModel) -> Result<(), FitError> {
        let bad = |m: String| Err(FitError::Config(m));
        if !(self.eta0 > 0.0 && self.eta0.is_finite()) {
            return bad(format!("eta0 must be > 0, got {}", self.eta0));
        }
        if let Schedule::InverseT { decay } = self.schedule {
            if !(decay >= 0.0 && decay.is_finite()) {
                return bad(format!("decay must be >= 0, got {decay}"));
            }
        }
        if self.engine == EngineKind::Infsgd && !(self.p > 0.0 && self.p < 1.0) {
            return bad(format!("p must be in (0, 1), got {}", self.p));
        }
        if self.engine == EngineKind::Dcbptt && self.squarings == 0 {
            return bad("squarings must be >= 1".into());
        }
        if !(self.eps_floor > 0.0) {
            return bad("eps_floor must be > 0".into());
        }
        if !(self.slack > 0.0) {
            return bad("slack must be > 0".into());
        }
        if matches!(self.alpha, Some(a) if !(a >= 0.0)) {
            return bad("alpha must be >= 0".into());
        }
        if self.batch_size == Some(0) {
            return bad("batch_size must be >= 1".into());
        }
        if let Some(init) = &self.init {
            if init.len() != model.param_len() {
                return bad(format!(
                    "init has {} entries, model needs {}",
                    init.len(),
                    model.param_len()
                ));
            }
            if init.iter().any(|v| !(*v > 0.0)) {
                return bad("init entries must be > 0".into());
            }
        }
        Ok(())
    }
}

/// Step size at epoch `h`.
pub fn lr_schedule(cfg: &OptimizerConfig, h: usize) -> f64 {
    match cfg.schedule {
        Schedule::Constant => cfg.eta0,
        Schedule::InverseT { decay } => cfg.eta0 / (1.0 + h as f64 * decay),
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("no training windows")]
    EmptyData,
    #[error("invalid optimizer config: {0}")]
    Config(String),
    #[error("epoch {epoch}, window {window}: {message}")]
    EngineFailure {
        epoch: usize,
        window: usize,
        message: String,
    },
    #[error("epoch {epoch}, window {window}: non-finite gradient {values:?} at theta {theta:?}")]
    NonFiniteGradient {
        epoch: usize,
        window: usize,
        values: Vec<f64>,
        theta: Vec<f64>,
    },
    #[error("epoch {epoch}: loss evaluation failed: {message}")]
    Loss { epoch: usize, message: String },
}

/// One row of the training curve. Record `h` holds the state after `h` epochs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Exact-π dataset NLL (plus penalty).
    pub train_nll: f64,
    /// The loss the engine itself sees: the horizon loss for dcbptt, the
    /// exact NLL otherwise.
    pub engine_loss: f64,
    pub theta: Vec<f64>,
    pub test_mape: Option<f64>,
    pub test_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Diagnostics {
    /// Spectral-gap range of the training chains at θ̂.
    pub gap_range: Option<(f64, f64)>,
    pub skipped_windows: Vec<usize>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub theta_hat: Vec<f64>,
    pub q_tilde_hat: Option<Relaxation<f64>>,
    pub trajectory: Vec<EpochRecord>,
    pub diagnostics: Diagnostics,
}

impl FitResult {
    pub fn final_record(&self) -> &EpochRecord {
        self.trajectory
            .last()
            .expect("trajectory includes the initial state")
    }
}

/// Test-set metrics for a parameter snapshot, `(mape, mse)`.
pub type Monitor<'a> = dyn Fn(&[f64], Option<&Relaxation<f64>>) -> Option<(f64, f64)> + 'a;

pub fn fit(
    data: &[ObservationWindow],
    model: &ParametricModel,
    obs: &ObservedStateSet,
    cfg: &OptimizerConfig,
) -> Result<FitResult, FitError> {
    fit_with_monitor(data, model, obs, cfg, None)
}

/// Min and max spectral gap of the uniformized chains at the given inputs.
pub fn gap_range(
    model: &ParametricModel,
    xs: &[f64],
    theta: &[f64],
    slack: f64,
) -> Option<(f64, f64)> {
    let mut out: Option<(f64, f64)> = None;
    for &x in xs {
        let q = model.build_rate_matrix(x, theta).ok()?;
        let gap = spectral_gap(&uniformize(&q, slack).ok()?).ok()?;
        out = Some(match out {
            None => (gap, gap),
            Some((lo, hi)) => (lo.min(gap), hi.max(gap)),
        });
    }
    out
}

struct Problem<'a> {
    data: &'a [ObservationWindow],
    model: &'a ParametricModel,
    obs: &'a ObservedStateSet,
    cfg: &'a OptimizerConfig,
    jacs: Vec<SparseJacobian<f64>>,
    free: Vec<(usize, usize)>,
}

impl Problem<'_> {
    /// Per-window gradient w.r.t. θ followed by the free relaxation entries.
    fn window_gradient(
        &self,
        theta: &[f64],
        relax: Option<&Relaxation<f64>>,
        epoch: usize,
        index: usize,
    ) -> Result<Vec<f64>, GradientError> {
        let w = &self.data[index];
        let cfg = self.cfg;
        match cfg.engine {
            EngineKind::Dcbptt => {
                let (q, _) = self.rate_matrix(w.x, theta, relax)?;
                let chain = uniformize(&q, cfg.slack)?;
                let (_, g) = dcbptt_chain(&chain, &q, &self.jacs, cfg.squarings, |pi| {
                    Ok((window_nll(w, pi, self.obs)?, nll_grad_pi(w, pi, self.obs)?))
                })?;
                Ok(g)
            }
            EngineKind::Infsgd | EngineKind::Exact => {
                let ev = evaluate_at(self.model, w.x, theta, relax, cfg.slack)?;
                let lg = nll_grad_pi(w, ev.steady.as_slice(), self.obs)?;
                let est = if cfg.engine == EngineKind::Infsgd {
                    let seed = update_rng(cfg.seed, epoch, index).next_u64();
                    let rule = StoppingRule::new(cfg.p, seed)?;
                    sample_stopped_gradient(&ev.chain, &ev.q, &ev.steady, &self.jacs, &lg, &rule)?
                } else {
                    let z = fundamental_matrix(&ev.chain, &ev.steady)?;
                    exact_loss_gradient(&ev.chain, &ev.q, &ev.steady, &z, &self.jacs, &lg)?
                };
                Ok(est.values)
            }
        }
    }

    fn rate_matrix(
        &self,
        x: f64,
        theta: &[f64],
        relax: Option<&Relaxation<f64>>,
    ) -> Result<(crate::chain::RateMatrix<f64>, f64), GradientError> {
        let q = self.model.build_rate_matrix(x, theta)?;
        Ok(match relax {
            Some(r) => crate::models::apply_relaxation(&q, r)?,
            None => (q, 0.0),
        })
    }

    fn engine_loss(
        &self,
        theta: &[f64],
        relax: Option<&Relaxation<f64>>,
        exact: f64,
    ) -> Result<f64, GradientError> {
        if self.cfg.engine != EngineKind::Dcbptt {
            return Ok(exact);
        }
        let mut total = 0.0;
        for w in self.data {
            if w.total() == 0 {
                continue;
            }
            let (q, _) = self.rate_matrix(w.x, theta, relax)?;
            let pi = horizon_distribution(&uniformize(&q, self.cfg.slack)?, self.cfg.squarings)?;
            total += window_nll(w, pi.as_slice(), self.obs)?;
        }
        Ok(total + relax.map_or(0.0, |r| r.penalty()))
    }

    fn record(
        &self,
        epoch: usize,
        theta: &[f64],
        relax: Option<&Relaxation<f64>>,
        monitor: Option<&Monitor>,
    ) -> Result<EpochRecord, FitError> {
        let train_nll = dataset_nll(
            self.data,
            self.model,
            theta,
            self.obs,
            relax,
            self.cfg.slack,
        )
        .map_err(|e| FitError::Loss {
            epoch,
            message: e.to_string(),
        })?;
        let engine_loss =
            self.engine_loss(theta, relax, train_nll)
                .map_err(|e| FitError::Loss {
                    epoch,
                    message: e.to_string(),
                })?;
        let metrics = monitor.and_then(|m| m(theta, relax));
        Ok(EpochRecord {
            epoch,
            train_nll,
            engine_loss,
            theta: theta.to_vec(),
            test_mape: metrics.map(|m| m.0),
            test_mse: metrics.map(|m| m.1),
        })
    }
}

/// [`fit`] with per-epoch test metrics.
pub fn fit_with_monitor(
    data: &[ObservationWindow],
    model: &ParametricModel,
    obs: &ObservedStateSet,
    cfg: &OptimizerConfig,
    monitor: Option<&Monitor>,
) -> Result<FitResult, FitError> {
    model
        .validate()
        .map_err(|e| FitError::Config(e.to_string()))?;
    cfg.validate(model)?;
    obs.check_dim(model.state_count())
        .map_err(|e| FitError::Config(e.to_string()))?;
    if data.is_empty() {
        return Err(FitError::EmptyData);
    }
    let mut diagnostics = Diagnostics::default();
    let active: Vec<usize> = (0..data.len()).filter(|&i| data[i].total() > 0).collect();
    for (i, w) in data.iter().enumerate() {
        if w.total() == 0 {
            info!("window {i} has no observed counts; skipped");
            diagnostics.skipped_windows.push(i);
        }
        w.check(obs)
            .map_err(|e| FitError::Config(format!("window {i}: {e}")))?;
    }
    if active.is_empty() {
        return Err(FitError::EmptyData);
    }

    let mut relax = cfg.alpha.map(|a| Relaxation::zeros(model, a));
    let free = if relax.is_some() {
        Relaxation::<f64>::free_positions(model)
    } else {
        Vec::new()
    };
    let mut jacs = model.jacobians::<f64>();
    let n = model.state_count();
    jacs.extend(free.iter().map(|&(i, j)| SparseJacobian::one_hot(n, i, j)));
    let problem = Problem {
        data,
        model,
        obs,
        cfg,
        jacs,
        free,
    };

    let np = model.param_len();
    let mut theta = cfg.init.clone().unwrap_or_else(|| model.default_init());
    for v in &mut theta {
        *v = v.max(cfg.eps_floor);
    }
    let batch = cfg.batch_size.unwrap_or(active.len()).min(active.len());
    let mut trajectory = Vec::with_capacity(cfg.epochs + 1);
    trajectory.push(problem.record(0, &theta, relax.as_ref(), monitor)?);

    for epoch in 0..cfg.epochs {
        let eta = lr_schedule(cfg, epoch);
        for chunk in active.chunks(batch) {
            let mut acc = DVector::<f64>::zeros(problem.jacs.len());
            for &index in chunk {
                let g = problem
                    .window_gradient(&theta, relax.as_ref(), epoch, index)
                    .map_err(|e| match e {
                        GradientError::NonFinite(_) => FitError::NonFiniteGradient {
                            epoch,
                            window: index,
                            values: Vec::new(),
                            theta: theta.clone(),
                        },
                        other => FitError::EngineFailure {
                            epoch,
                            window: index,
                            message: other.to_string(),
                        },
                    })?;
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(FitError::NonFiniteGradient {
                        epoch,
                        window: index,
                        values: g,
                        theta: theta.clone(),
                    });
                }
                acc += DVector::from_vec(g);
            }
            acc /= chunk.len() as f64;
            for k in 0..np {
                theta[k] = (theta[k] - eta * acc[k]).max(cfg.eps_floor);
            }
            if let Some(r) = relax.as_mut() {
                for (slot, &(i, j)) in problem.free.iter().enumerate() {
                    let v = r.q_tilde[(i, j)];
                    let g = acc[np + slot] + 2.0 * r.alpha * v;
                    r.q_tilde[(i, j)] = (v - eta * g).max(0.0);
                }
            }
        }
        trajectory.push(problem.record(epoch + 1, &theta, relax.as_ref(), monitor)?);
    }

    let xs: Vec<f64> = active.iter().map(|&i| data[i].x).collect();
    diagnostics.gap_range = if relax.is_none() {
        gap_range(model, &xs, &theta, cfg.slack)
    } else {
        None
    };
    if cfg.engine == EngineKind::Infsgd {
        if let Some((lo, _)) = diagnostics.gap_range {
            if cfg.p >= lo {
                let msg = format!(
                    "p = {} is not below the smallest spectral gap {lo:.3e}",
                    cfg.p
                );
                warn!("{msg}");
                diagnostics.warnings.push(msg);
            }
        }
    }
    Ok(FitResult {
        theta_hat: theta,
        q_tilde_hat: relax,
        trajectory,
        diagnostics,
    })
}
