//! Plain-text dataset files.
//!
//! ```text
//! # model={"kind":"mm1k","capacity":20} theta_star=[25.0] observed=[0,1] seed=7
//! 0 12.83004529315508 0:3 1:1
//! 1 14.20871311043952 0:0 1:2
//! ```
//!
//! One record per window: id, `x`, then `state:count` pairs for observed
//! states. `x` is written in shortest round-trip form so a fit from file is
//! bit-identical to a fit from memory.

use std::fmt::Write as _;
use std::path::Path;

use crate::harness::HarnessError;
use crate::likelihood::{ObservationWindow, ObservedStateSet};
use crate::models::ParametricModel;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHeader {
    pub model: ParametricModel,
    pub theta_star: Option<Vec<f64>>,
    pub observed: ObservedStateSet,
    pub seed: Option<u64>,
}

pub fn write_dataset(header: &DatasetHeader, windows: &[ObservationWindow]) -> String {
    let mut out = String::new();
    let _ = write!(out, "# model={}", json(&header.model));
    if let Some(t) = &header.theta_star {
        let _ = write!(out, " theta_star={}", json(t));
    }
    let _ = write!(out, " observed={}", json(&header.observed));
    if let Some(s) = header.seed {
        let _ = write!(out, " seed={s}");
    }
    out.push('\n');
    for (id, w) in windows.iter().enumerate() {
        let _ = write!(out, "{id} {:?}", w.x);
        for (s, c) in &w.counts {
            let _ = write!(out, " {s}:{c}");
        }
        out.push('\n');
    }
    out
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("serializable")
}

fn parse_err(line: usize, msg: impl std::fmt::Display) -> HarnessError {
    HarnessError::Stage {
        stage: "dataset",
        message: format!("line {line}: {msg}"),
    }
}

pub fn parse_dataset(text: &str) -> Result<(DatasetHeader, Vec<ObservationWindow>), HarnessError> {
    let mut lines = text.lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let body = first
        .strip_prefix("# ")
        .ok_or_else(|| parse_err(1, "missing header"))?;
    let (mut model, mut theta_star, mut observed, mut seed) = (None, None, None, None);
    for field in body.split(' ').filter(|f| !f.is_empty()) {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| parse_err(1, format!("bad header field `{field}`")))?;
        match key {
            "model" => model = Some(serde_json::from_str(value).map_err(|e| parse_err(1, e))?),
            "theta_star" => {
                theta_star = Some(serde_json::from_str(value).map_err(|e| parse_err(1, e))?)
            }
            "observed" => {
                observed = Some(serde_json::from_str(value).map_err(|e| parse_err(1, e))?)
            }
            "seed" => seed = Some(value.parse().map_err(|e| parse_err(1, e))?),
            other => return Err(parse_err(1, format!("unknown header field `{other}`"))),
        }
    }
    let header = DatasetHeader {
        model: model.ok_or_else(|| parse_err(1, "header lacks model"))?,
        theta_star,
        observed: observed.ok_or_else(|| parse_err(1, "header lacks observed"))?,
        seed,
    };
    let mut windows = Vec::new();
    for (i, line) in lines {
        let ln = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let id: usize = parts
            .next()
            .ok_or_else(|| parse_err(ln, "missing id"))?
            .parse()
            .map_err(|e| parse_err(ln, e))?;
        if id != windows.len() {
            return Err(parse_err(
                ln,
                format!("expected window id {}, got {id}", windows.len()),
            ));
        }
        let x: f64 = parts
            .next()
            .ok_or_else(|| parse_err(ln, "missing x"))?
            .parse()
            .map_err(|e| parse_err(ln, e))?;
        let mut counts = Vec::new();
        for pair in parts {
            let (s, c) = pair
                .split_once(':')
                .ok_or_else(|| parse_err(ln, format!("bad pair `{pair}`")))?;
            let s: usize = s.parse().map_err(|e| parse_err(ln, e))?;
            if !header.observed.contains(s) {
                return Err(parse_err(ln, format!("state {s} is not observed")));
            }
            counts.push((s, c.parse::<u64>().map_err(|e| parse_err(ln, e))?));
        }
        windows.push(ObservationWindow::new(x, counts));
    }
    Ok((header, windows))
}

pub fn save_dataset(
    path: &Path,
    header: &DatasetHeader,
    windows: &[ObservationWindow],
) -> Result<(), HarnessError> {
    std::fs::write(path, write_dataset(header, windows)).map_err(|e| HarnessError::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<(DatasetHeader, Vec<ObservationWindow>), HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse_dataset(&text).map_err(|e| match e {
        HarnessError::Stage { message, .. } => HarnessError::Stage {
            stage: "dataset",
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> DatasetHeader {
        DatasetHeader {
            model: ParametricModel::Mm1k { capacity: 20 },
            theta_star: Some(vec![25.0]),
            observed: ObservedStateSet::new(vec![0, 1]).unwrap(),
            seed: Some(7),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let windows = vec![
            ObservationWindow::new(12.83004529315508, [(0, 3), (1, 1)]),
            ObservationWindow::new(1.0 / 3.0, [(0, 0), (1, 2)]),
        ];
        let text = write_dataset(&header(), &windows);
        assert!(text.starts_with(
            "# model={\"kind\":\"mm1k\",\"capacity\":20} theta_star=[25.0] observed=[0,1] seed=7\n"
        ));
        assert!(text.contains("\n0 12.83004529315508 0:3 1:1\n"));
        let (h, w) = parse_dataset(&text).unwrap();
        assert_eq!(h, header());
        assert_eq!(w, windows);
        assert_eq!(write_dataset(&h, &w), text);
    }

    #[test]
    fn rejects_malformed_records() {
        let head = write_dataset(&header(), &[]);
        assert!(parse_dataset(&format!("{head}0 1.0 2:5\n")).is_err());
        assert!(parse_dataset(&format!("{head}1 1.0 0:5\n")).is_err());
        assert!(parse_dataset(&format!("{head}0 abc 0:5\n")).is_err());
        assert!(parse_dataset("0 1.0 0:1\n").is_err());
    }
}
