//! Failure-probability extrapolation metrics.

use log::info;
use serde::Serialize;
use thiserror::Error;

use crate::likelihood::{evaluate_at, LikelihoodError};
use crate::models::{ParametricModel, Relaxation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("every test window has zero true failure probability")]
    ZeroTruth,
    #[error("no test windows")]
    Empty,
    #[error("x = {x}: {source}")]
    Solve {
        x: f64,
        #[source]
        source: LikelihoodError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowPrediction {
    pub x: f64,
    pub predicted: f64,
    pub truth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    /// Mean of `|π̂ − π| / π`, as a fraction (not a percentage).
    pub mape: f64,
    pub mse: f64,
    pub per_window: Vec<WindowPrediction>,
    /// 95% half-widths `(mape, mse)` across replicates; set on summaries.
    pub ci95: Option<(f64, f64)>,
    /// Windows left out of the MAPE because their truth is zero.
    pub excluded: Vec<usize>,
}

/// Steady-state mass on `failure_states` under `Q(x, θ)` (optionally relaxed).
pub fn predict_failure_prob(
    model: &ParametricModel,
    theta: &[f64],
    relax: Option<&Relaxation<f64>>,
    x: f64,
    failure_states: &[usize],
    slack: f64,
) -> Result<f64, EvalError> {
    let ev = evaluate_at(model, x, theta, relax, slack)
        .map_err(|source| EvalError::Solve { x, source })?;
    Ok(failure_states.iter().map(|&s| ev.steady.pi()[s]).sum())
}

/// Ground truth `(x, π_fail(x, θ*))` pairs from the exact solver.
pub fn truth_at(
    model: &ParametricModel,
    theta_star: &[f64],
    xs: &[f64],
    failure_states: &[usize],
    slack: f64,
) -> Result<Vec<(f64, f64)>, EvalError> {
    xs.iter()
        .map(|&x| {
            Ok((
                x,
                predict_failure_prob(model, theta_star, None, x, failure_states, slack)?,
            ))
        })
        .collect()
}

pub fn evaluate(
    theta_hat: &[f64],
    relax: Option<&Relaxation<f64>>,
    model: &ParametricModel,
    truth: &[(f64, f64)],
    failure_states: &[usize],
    slack: f64,
) -> Result<EvalReport, EvalError> {
    let per_window = truth
        .iter()
        .map(|&(x, t)| {
            Ok(WindowPrediction {
                x,
                predicted: predict_failure_prob(model, theta_hat, relax, x, failure_states, slack)?,
                truth: t,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    report(per_window)
}

/// MAPE and MSE of a list of predictions.
pub fn report(per_window: Vec<WindowPrediction>) -> Result<EvalReport, EvalError> {
    if per_window.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut excluded = Vec::new();
    let mut ape = 0.0;
    let mut sq = 0.0;
    for (i, w) in per_window.iter().enumerate() {
        let err = w.predicted - w.truth;
        sq += err * err;
        if w.truth > 0.0 {
            ape += err.abs() / w.truth;
        } else {
            info!("test window {i} has zero truth; excluded from MAPE");
            excluded.push(i);
        }
    }
    let kept = per_window.len() - excluded.len();
    if kept == 0 {
        return Err(EvalError::ZeroTruth);
    }
    Ok(EvalReport {
        mape: ape / kept as f64,
        mse: sq / per_window.len() as f64,
        per_window,
        ci95: None,
        excluded,
    })
}

/// Mean and normal-approximation 95% half-width.
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_blocking_probability() {
        let m = ParametricModel::Mm1k { capacity: 2 };
        let p = predict_failure_prob(&m, &[2.0], None, 1.0, &[2], 0.01).unwrap();
        assert!((p - 1.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn blocking_grows_with_load() {
        let m = ParametricModel::Mm1k { capacity: 20 };
        let mut last = 0.0;
        for x in [1e-3, 0.1, 1.0, 10.0, 31.0, 60.0] {
            let p = predict_failure_prob(&m, &[25.0], None, x, &[20], 0.01).unwrap();
            assert!(p > last);
            last = p;
        }
        let tiny = predict_failure_prob(&m, &[25.0], None, 1e-3, &[20], 0.01).unwrap();
        assert!(tiny < 1e-50);
    }

    #[test]
    fn perfect_and_doubled_predictors() {
        let m = ParametricModel::Mm1k { capacity: 20 };
        let xs: Vec<f64> = (31..=60).map(f64::from).collect();
        let truth = truth_at(&m, &[25.0], &xs, &[20], 0.01).unwrap();
        let r = evaluate(&[25.0], None, &m, &truth, &[20], 0.01).unwrap();
        assert_eq!((r.mape, r.mse), (0.0, 0.0));
        let doubled = truth
            .iter()
            .map(|&(x, t)| WindowPrediction {
                x,
                predicted: 2.0 * t,
                truth: t,
            })
            .collect();
        assert_eq!(report(doubled).unwrap().mape, 1.0);
    }

    #[test]
    fn zero_truth_windows_are_excluded() {
        let w = |t: f64| WindowPrediction {
            x: 1.0,
            predicted: 0.5,
            truth: t,
        };
        let r = report(vec![w(0.25), w(0.0)]).unwrap();
        assert_eq!(r.excluded, vec![1]);
        assert_eq!(r.mape, 1.0);
        assert_eq!(report(vec![w(0.0)]), Err(EvalError::ZeroTruth));
    }

    #[test]
    fn ci95_of_constant_is_zero() {
        assert_eq!(mean_ci95(&[2.0, 2.0, 2.0]), (2.0, 0.0));
        let (m, h) = mean_ci95(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((h - 1.96).abs() < 1e-12);
    }
}
