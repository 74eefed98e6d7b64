//! simulate → fit → evaluate, per replicate, with everything written under
//! `<out>/<name>/`:
//!
//! ```text
//! manifest.json  summary.json
//! rep_0/ train.dat test.dat trajectory.csv theta_trajectory.csv theta.csv
//!        [q_tilde.csv] fit.json eval.json predictions.csv
//! ```
//!
//! Data files (`*.dat`, `theta.csv`, `q_tilde.csv`) keep full precision so
//! each stage can be rerun from disk; reports use 6 significant digits.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::config::{set_path, ConfigError, ExperimentConfig};
use super::dataset_io::{load_dataset, save_dataset, DatasetHeader};
use super::eval::{evaluate, mean_ci95, truth_at, EvalReport};
use super::fmt::{round6, sig6};
use super::HarnessError;
use crate::likelihood::ObservationWindow;
use crate::models::Relaxation;
use crate::optimizer::{fit_with_monitor, gap_range, FitResult, Monitor};
use crate::simulator::generate_dataset;

#[derive(Debug, Clone, PartialEq)]
pub struct Replicate {
    pub index: usize,
    pub train: Vec<ObservationWindow>,
    pub test: Vec<ObservationWindow>,
}

pub fn simulate_replicate(cfg: &ExperimentConfig, index: usize) -> Result<Replicate, HarnessError> {
    let gen = |test| {
        generate_dataset(&cfg.simulation(index, test))
            .map_err(|e| HarnessError::stage("simulate", e))
    };
    Ok(Replicate {
        index,
        train: gen(false)?,
        test: gen(true)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub fit: FitResult,
    pub eta0: f64,
    /// `(η₀, final engine loss)` per grid value; `None` when that run failed.
    pub candidates: Vec<(f64, Option<f64>)>,
}

fn test_truth(
    cfg: &ExperimentConfig,
    test: &[ObservationWindow],
) -> Result<Vec<(f64, f64)>, HarnessError> {
    let xs: Vec<f64> = test.iter().map(|w| w.x).collect();
    truth_at(
        &cfg.model,
        &cfg.theta_star(),
        &xs,
        &cfg.failure_states(),
        cfg.optimizer.slack,
    )
    .map_err(|e| HarnessError::stage("evaluate", e))
}

/// Fits one replicate, once per η₀ in the grid, keeping the run whose
/// final engine loss is lowest.
pub fn fit_replicate(
    cfg: &ExperimentConfig,
    index: usize,
    train: &[ObservationWindow],
    test: Option<&[ObservationWindow]>,
) -> Result<FitOutcome, HarnessError> {
    let truth = match test {
        Some(t) if cfg.evaluate.monitor => Some(test_truth(cfg, t)?),
        _ => None,
    };
    let failure = cfg.failure_states();
    let slack = cfg.optimizer.slack;
    let metrics = |theta: &[f64], relax: Option<&Relaxation<f64>>| {
        let truth = truth.as_ref()?;
        evaluate(theta, relax, &cfg.model, truth, &failure, slack)
            .ok()
            .map(|r| (r.mape, r.mse))
    };
    let monitor: Option<&Monitor> = if truth.is_some() {
        Some(&metrics)
    } else {
        None
    };

    let base = cfg.optimizer_for(index);
    let grid = base.eta_grid.clone().unwrap_or_else(|| vec![base.eta0]);
    let mut best: Option<FitOutcome> = None;
    let mut candidates = Vec::new();
    let mut last_err = None;
    for &eta in &grid {
        let mut oc = base.clone();
        oc.eta0 = eta;
        match fit_with_monitor(train, &cfg.model, &cfg.observe.states, &oc, monitor) {
            Ok(fit) => {
                let loss = fit.final_record().engine_loss;
                candidates.push((eta, Some(loss)));
                let better = best.as_ref().is_none_or(|b| {
                    loss < b.fit.final_record().engine_loss
                        || b.fit.final_record().engine_loss.is_nan()
                });
                if better {
                    best = Some(FitOutcome {
                        fit,
                        eta0: eta,
                        candidates: Vec::new(),
                    });
                }
            }
            Err(e) => {
                log::warn!("replicate {index}, eta0 = {eta}: {e}");
                candidates.push((eta, None));
                last_err = Some(e);
            }
        }
    }
    match best {
        Some(mut b) => {
            b.candidates = candidates;
            Ok(b)
        }
        None => Err(HarnessError::stage(
            "fit",
            last_err.map_or_else(|| "no learning rate to try".to_string(), |e| e.to_string()),
        )),
    }
}

pub fn evaluate_replicate(
    cfg: &ExperimentConfig,
    theta: &[f64],
    relax: Option<&Relaxation<f64>>,
    test: &[ObservationWindow],
) -> Result<EvalReport, HarnessError> {
    let truth = test_truth(cfg, test)?;
    evaluate(
        theta,
        relax,
        &cfg.model,
        &truth,
        &cfg.failure_states(),
        cfg.optimizer.slack,
    )
    .map_err(|e| HarnessError::stage("evaluate", e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateResult {
    pub index: usize,
    pub theta_hat: Vec<f64>,
    pub eta0: f64,
    pub final_train_nll: f64,
    pub final_engine_loss: f64,
    pub mape: f64,
    pub mse: f64,
    pub q_tilde_norm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub name: String,
    pub emulated: bool,
    pub engine: crate::optimizer::EngineKind,
    pub theta_star: Vec<f64>,
    pub theta_mean: Vec<f64>,
    pub mape_mean: f64,
    pub mape_ci95: f64,
    pub mse_mean: f64,
    pub mse_ci95: f64,
    /// Spectral-gap range of the true training chains.
    pub train_gap_range: Option<(f64, f64)>,
    pub replicates: Vec<ReplicateResult>,
}

impl RunSummary {
    fn build(cfg: &ExperimentConfig, replicates: Vec<ReplicateResult>, xs: &[f64]) -> Self {
        let np = cfg.model.param_len();
        let n = replicates.len() as f64;
        let theta_mean = (0..np)
            .map(|k| replicates.iter().map(|r| r.theta_hat[k]).sum::<f64>() / n)
            .collect();
        let (mape_mean, mape_ci95) =
            mean_ci95(&replicates.iter().map(|r| r.mape).collect::<Vec<_>>());
        let (mse_mean, mse_ci95) = mean_ci95(&replicates.iter().map(|r| r.mse).collect::<Vec<_>>());
        Self {
            name: cfg.name.clone(),
            emulated: cfg.is_emulated(),
            engine: cfg.optimizer.engine,
            theta_star: cfg.theta_star(),
            theta_mean,
            mape_mean,
            mape_ci95,
            mse_mean,
            mse_ci95,
            train_gap_range: gap_range(&cfg.model, xs, &cfg.theta_star(), cfg.optimizer.slack),
            replicates,
        }
    }

    /// One line per replicate plus the aggregate, 6 significant digits.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let label = if self.emulated { " (emulated)" } else { "" };
        let vec6 = |v: &[f64]| v.iter().map(|x| sig6(*x)).collect::<Vec<_>>().join(" ");
        for r in &self.replicates {
            let theta = if r.theta_hat.len() <= 8 {
                vec6(&r.theta_hat)
            } else {
                format!("<{} params>", r.theta_hat.len())
            };
            let _ = writeln!(
                out,
                "{}{label} rep {}: eta0={} theta=[{theta}] mape={} mse={}",
                self.name,
                r.index,
                sig6(r.eta0),
                sig6(r.mape),
                sig6(r.mse)
            );
        }
        let theta = if self.theta_mean.len() <= 8 {
            vec6(&self.theta_mean)
        } else {
            format!("<{} params>", self.theta_mean.len())
        };
        let _ = writeln!(
            out,
            "{}{label} {}: theta_mean=[{theta}] mape={} ±{} mse={} ±{}",
            self.name,
            self.engine,
            sig6(self.mape_mean),
            sig6(self.mape_ci95),
            sig6(self.mse_mean),
            sig6(self.mse_ci95)
        );
        out
    }

    fn to_json(&self) -> Value {
        let v6 = |v: &[f64]| v.iter().map(|x| round6(*x)).collect::<Vec<_>>();
        json!({
            "name": self.name,
            "emulated": self.emulated,
            "engine": self.engine,
            "theta_star": v6(&self.theta_star),
            "theta_mean": v6(&self.theta_mean),
            "mape_mean": round6(self.mape_mean),
            "mape_ci95": round6(self.mape_ci95),
            "mse_mean": round6(self.mse_mean),
            "mse_ci95": round6(self.mse_ci95),
            "train_gap_range": self.train_gap_range.map(|(a, b)| [round6(a), round6(b)]),
            "replicates": self.replicates.iter().map(|r| json!({
                "index": r.index,
                "eta0": round6(r.eta0),
                "theta_hat": v6(&r.theta_hat),
                "final_train_nll": round6(r.final_train_nll),
                "final_engine_loss": round6(r.final_engine_loss),
                "mape": round6(r.mape),
                "mse": round6(r.mse),
                "q_tilde_norm": r.q_tilde_norm.map(round6),
            })).collect::<Vec<_>>(),
        })
    }
}

fn replicate_result(index: usize, outcome: &FitOutcome, report: &EvalReport) -> ReplicateResult {
    let last = outcome.fit.final_record();
    ReplicateResult {
        index,
        theta_hat: outcome.fit.theta_hat.clone(),
        eta0: outcome.eta0,
        final_train_nll: last.train_nll,
        final_engine_loss: last.engine_loss,
        mape: report.mape,
        mse: report.mse,
        q_tilde_norm: outcome.fit.q_tilde_hat.as_ref().map(|r| r.frobenius_norm()),
    }
}

/// The whole pipeline without touching the filesystem.
pub fn run_in_memory(cfg: &ExperimentConfig) -> Result<RunSummary, HarnessError> {
    let mut results = Vec::new();
    let mut xs = Vec::new();
    for r in 0..cfg.evaluate.replicates {
        let rep = simulate_replicate(cfg, r)?;
        let outcome = fit_replicate(cfg, r, &rep.train, Some(&rep.test))?;
        let report = evaluate_replicate(
            cfg,
            &outcome.fit.theta_hat,
            outcome.fit.q_tilde_hat.as_ref(),
            &rep.test,
        )?;
        xs.extend(rep.train.iter().map(|w| w.x));
        results.push(replicate_result(r, &outcome, &report));
    }
    Ok(RunSummary::build(cfg, results, &xs))
}

// ---------------------------------------------------------------- files

fn write(path: &Path, text: impl AsRef<[u8]>) -> Result<(), HarnessError> {
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

fn read(path: &Path) -> Result<String, HarnessError> {
    std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))
}

fn mkdir(path: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(path).map_err(|e| HarnessError::io(path, e))
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json");
    s.push('\n');
    s
}

pub fn run_dir(out_root: &Path, cfg: &ExperimentConfig) -> PathBuf {
    out_root.join(&cfg.name)
}

fn rep_dir(dir: &Path, r: usize) -> PathBuf {
    dir.join(format!("rep_{r}"))
}

/// SHA-256 of the canonical (key-sorted, compact) config JSON.
pub fn config_hash(raw: &Value) -> String {
    hex::encode(Sha256::digest(raw.to_string().as_bytes()))
}

fn manifest(cfg: &ExperimentConfig, raw: &Value) -> Value {
    json!({
        "name": cfg.name,
        "config_sha256": config_hash(raw),
        "config": raw,
        "seeds": {
            "simulate": cfg.simulate.seed,
            "optimizer": cfg.optimizer.seed,
            "train": (0..cfg.evaluate.replicates).map(|r| cfg.simulation(r, false).seed).collect::<Vec<_>>(),
            "test": (0..cfg.evaluate.replicates).map(|r| cfg.simulation(r, true).seed).collect::<Vec<_>>(),
        },
        "version": env!("CARGO_PKG_VERSION"),
    })
}

/// Checks that `dir/manifest.json` was produced from `raw`.
pub fn verify_manifest(dir: &Path, raw: &Value) -> Result<bool, HarnessError> {
    let text = read(&dir.join("manifest.json"))?;
    let m: Value = serde_json::from_str(&text).map_err(|e| HarnessError::stage("manifest", e))?;
    Ok(m.get("config_sha256").and_then(Value::as_str) == Some(config_hash(raw).as_str()))
}

fn require_manifest(dir: &Path, raw: &Value) -> Result<(), HarnessError> {
    if !verify_manifest(dir, raw)? {
        return Err(HarnessError::stage(
            "manifest",
            format!(
                "{} was produced from a different config; rerun `simulate`",
                dir.display()
            ),
        ));
    }
    Ok(())
}

/// Applies a `--seed` override to both the parsed and the raw config.
pub fn apply_seed(
    cfg: ExperimentConfig,
    raw: &mut Value,
    seed: Option<u64>,
) -> Result<ExperimentConfig, ConfigError> {
    match seed {
        None => Ok(cfg),
        Some(s) => {
            set_path(raw, "simulate.seed", json!(s))?;
            set_path(raw, "optimizer.seed", json!(s))?;
            Ok(cfg.with_seed(s))
        }
    }
}

fn header(cfg: &ExperimentConfig, seed: u64) -> DatasetHeader {
    DatasetHeader {
        model: cfg.model.clone(),
        theta_star: Some(cfg.theta_star()),
        observed: cfg.observe.states.clone(),
        seed: Some(seed),
    }
}

/// Writes the manifest and both datasets of every replicate.
pub fn simulate_stage(
    cfg: &ExperimentConfig,
    raw: &Value,
    out_root: &Path,
) -> Result<PathBuf, HarnessError> {
    let dir = run_dir(out_root, cfg);
    mkdir(&dir)?;
    write(&dir.join("manifest.json"), pretty(&manifest(cfg, raw)))?;
    for r in 0..cfg.evaluate.replicates {
        let rep = simulate_replicate(cfg, r)?;
        let rd = rep_dir(&dir, r);
        mkdir(&rd)?;
        save_dataset(
            &rd.join("train.dat"),
            &header(cfg, cfg.simulation(r, false).seed),
            &rep.train,
        )?;
        save_dataset(
            &rd.join("test.dat"),
            &header(cfg, cfg.simulation(r, true).seed),
            &rep.test,
        )?;
    }
    Ok(dir)
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(sig6).unwrap_or_default()
}

fn write_fit(cfg: &ExperimentConfig, rd: &Path, outcome: &FitOutcome) -> Result<(), HarnessError> {
    let fit = &outcome.fit;
    let mut traj = String::from("epoch,train_nll,test_mape,test_mse,engine_loss\n");
    let names = cfg.model.param_names();
    let mut thetas = format!("epoch,{}\n", names.join(","));
    for rec in &fit.trajectory {
        let _ = writeln!(
            traj,
            "{},{},{},{},{}",
            rec.epoch,
            sig6(rec.train_nll),
            opt_cell(rec.test_mape),
            opt_cell(rec.test_mse),
            sig6(rec.engine_loss)
        );
        let cells: Vec<String> = rec.theta.iter().map(|v| sig6(*v)).collect();
        let _ = writeln!(thetas, "{},{}", rec.epoch, cells.join(","));
    }
    write(&rd.join("trajectory.csv"), traj)?;
    write(&rd.join("theta_trajectory.csv"), thetas)?;
    let mut theta = String::from("name,value\n");
    for (n, v) in names.iter().zip(&fit.theta_hat) {
        let _ = writeln!(theta, "{n},{v:?}");
    }
    write(&rd.join("theta.csv"), theta)?;
    if let Some(r) = &fit.q_tilde_hat {
        let mut q = String::from("i,j,value\n");
        for i in 0..r.q_tilde.nrows() {
            for j in 0..r.q_tilde.ncols() {
                let v = r.q_tilde[(i, j)];
                if v != 0.0 {
                    let _ = writeln!(q, "{i},{j},{v:?}");
                }
            }
        }
        write(&rd.join("q_tilde.csv"), q)?;
    }
    let last = fit.final_record();
    let doc = json!({
        "engine": cfg.optimizer.engine,
        "eta0": round6(outcome.eta0),
        "eta_candidates": outcome.candidates.iter().map(|(e, l)| json!({
            "eta0": round6(*e),
            "final_engine_loss": l.map(round6),
        })).collect::<Vec<_>>(),
        "epochs": cfg.optimizer.epochs,
        "theta_hat": fit.theta_hat.iter().map(|v| round6(*v)).collect::<Vec<_>>(),
        "final_train_nll": round6(last.train_nll),
        "final_engine_loss": round6(last.engine_loss),
        "q_tilde_norm": fit.q_tilde_hat.as_ref().map(|r| round6(r.frobenius_norm())),
        "gap_range": fit.diagnostics.gap_range.map(|(a, b)| [round6(a), round6(b)]),
        "skipped_windows": fit.diagnostics.skipped_windows,
        "warnings": fit.diagnostics.warnings,
    });
    write(&rd.join("fit.json"), pretty(&doc))
}

fn parse_err(path: &Path, msg: impl std::fmt::Display) -> HarnessError {
    HarnessError::stage("evaluate", format!("{}: {msg}", path.display()))
}

fn read_theta(
    cfg: &ExperimentConfig,
    rd: &Path,
) -> Result<(Vec<f64>, Option<Relaxation<f64>>), HarnessError> {
    let path = rd.join("theta.csv");
    let text = read(&path)?;
    let theta: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| {
            l.split_once(',')
                .and_then(|(_, v)| v.parse().ok())
                .ok_or_else(|| parse_err(&path, format!("bad row `{l}`")))
        })
        .collect::<Result<_, _>>()?;
    if theta.len() != cfg.model.param_len() {
        return Err(parse_err(
            &path,
            format!(
                "{} values for {} parameters",
                theta.len(),
                cfg.model.param_len()
            ),
        ));
    }
    let relax = match cfg.optimizer.alpha {
        None => None,
        Some(alpha) => {
            let path = rd.join("q_tilde.csv");
            let mut r = Relaxation::zeros(&cfg.model, alpha);
            for l in read(&path)?.lines().skip(1) {
                let f: Vec<&str> = l.split(',').collect();
                let bad = || parse_err(&path, format!("bad row `{l}`"));
                if f.len() != 3 {
                    return Err(bad());
                }
                let i: usize = f[0].parse().map_err(|_| bad())?;
                let j: usize = f[1].parse().map_err(|_| bad())?;
                let n = r.q_tilde.nrows();
                if i >= n || j >= n {
                    return Err(bad());
                }
                r.q_tilde[(i, j)] = f[2].parse().map_err(|_| bad())?;
            }
            Some(r)
        }
    };
    Ok((theta, relax))
}

fn load_rep(dir: &Path, r: usize, name: &str) -> Result<Vec<ObservationWindow>, HarnessError> {
    Ok(load_dataset(&rep_dir(dir, r).join(name))?.1)
}

/// Fits every replicate from its `train.dat`.
pub fn fit_stage(
    cfg: &ExperimentConfig,
    raw: &Value,
    out_root: &Path,
) -> Result<Vec<FitOutcome>, HarnessError> {
    let dir = run_dir(out_root, cfg);
    require_manifest(&dir, raw)?;
    let mut out = Vec::new();
    for r in 0..cfg.evaluate.replicates {
        let train = load_rep(&dir, r, "train.dat")?;
        let test = if cfg.evaluate.monitor {
            Some(load_rep(&dir, r, "test.dat")?)
        } else {
            None
        };
        let outcome = fit_replicate(cfg, r, &train, test.as_deref())?;
        write_fit(cfg, &rep_dir(&dir, r), &outcome)?;
        out.push(outcome);
    }
    Ok(out)
}

/// Evaluates every replicate's `theta.csv` on its `test.dat` and writes the summary.
pub fn evaluate_stage(
    cfg: &ExperimentConfig,
    raw: &Value,
    out_root: &Path,
) -> Result<RunSummary, HarnessError> {
    let dir = run_dir(out_root, cfg);
    require_manifest(&dir, raw)?;
    let mut results = Vec::new();
    let mut xs = Vec::new();
    for r in 0..cfg.evaluate.replicates {
        let rd = rep_dir(&dir, r);
        let test = load_rep(&dir, r, "test.dat")?;
        xs.extend(load_rep(&dir, r, "train.dat")?.iter().map(|w| w.x));
        let (theta, relax) = read_theta(cfg, &rd)?;
        let report = evaluate_replicate(cfg, &theta, relax.as_ref(), &test)?;
        let mut preds = String::from("x,predicted,truth\n");
        for w in &report.per_window {
            let _ = writeln!(
                preds,
                "{},{},{}",
                sig6(w.x),
                sig6(w.predicted),
                sig6(w.truth)
            );
        }
        write(&rd.join("predictions.csv"), preds)?;
        write(
            &rd.join("eval.json"),
            pretty(&json!({
                "mape": round6(report.mape),
                "mse": round6(report.mse),
                "excluded": report.excluded,
                "windows": report.per_window.len(),
            })),
        )?;
        let fit: Value = serde_json::from_str(&read(&rd.join("fit.json"))?)
            .map_err(|e| HarnessError::stage("evaluate", e))?;
        let num = |k: &str| fit.get(k).and_then(Value::as_f64).unwrap_or(f64::NAN);
        results.push(ReplicateResult {
            index: r,
            theta_hat: theta,
            eta0: num("eta0"),
            final_train_nll: num("final_train_nll"),
            final_engine_loss: num("final_engine_loss"),
            mape: report.mape,
            mse: report.mse,
            q_tilde_norm: relax.as_ref().map(|q| q.frobenius_norm()),
        });
    }
    let summary = RunSummary::build(cfg, results, &xs);
    write(&dir.join("summary.json"), pretty(&summary.to_json()))?;
    Ok(summary)
}

pub fn run_experiment(
    cfg: &ExperimentConfig,
    raw: &Value,
    out_root: &Path,
) -> Result<RunSummary, HarnessError> {
    simulate_stage(cfg, raw, out_root)?;
    fit_stage(cfg, raw, out_root)?;
    evaluate_stage(cfg, raw, out_root)
}

fn sweep_label(path: &str, v: &Value) -> String {
    let last = path.rsplit('.').next().unwrap_or(path);
    let val = match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    };
    format!("{last}={val}")
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "=._-".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// One full run per sweep value under `<out>/<name>/<label>/`, plus
/// `<out>/<name>/sweep.csv`.
pub fn sweep(
    cfg: &ExperimentConfig,
    raw: &Value,
    out_root: &Path,
) -> Result<Vec<(String, RunSummary)>, HarnessError> {
    let spec = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| ConfigError::new("sweep", "config has no sweep section"))?;
    let root = run_dir(out_root, cfg);
    let mut rows = String::from("label,mape_mean,mape_ci95,mse_mean,mse_ci95,theta_mean\n");
    let mut out = Vec::new();
    for v in &spec.values {
        let label = sweep_label(&spec.path, v);
        let mut point = raw.clone();
        if let Some(o) = point.as_object_mut() {
            o.remove("sweep");
        }
        set_path(&mut point, &spec.path, v.clone())?;
        set_path(&mut point, "name", Value::String(label.clone()))?;
        let pcfg = ExperimentConfig::from_value(&point).map_err(|e| {
            ConfigError::new(format!("sweep.values[{label}] -> {}", e.path), e.message)
        })?;
        let summary = run_experiment(&pcfg, &point, &root)?;
        let theta: Vec<String> = summary.theta_mean.iter().map(|t| sig6(*t)).collect();
        let _ = writeln!(
            rows,
            "{label},{},{},{},{},{}",
            sig6(summary.mape_mean),
            sig6(summary.mape_ci95),
            sig6(summary.mse_mean),
            sig6(summary.mse_ci95),
            theta.join(" ")
        );
        out.push((label, summary));
    }
    write(&root.join("sweep.csv"), rows)?;
    Ok(out)
}
