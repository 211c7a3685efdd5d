//! Per-layer temperature scaling of HasAnswer logits.
//!
//! HasAnswer is a sigmoid, so a temperature divides the logit:
//! `p = sigmoid(logit / T)`. Each layer gets its own `T`, fitted by grid
//! search on binary negative log-likelihood.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Exec};
use crate::trace::QuestionInstance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationTable {
    temperatures: Vec<f64>,
}

impl CalibrationTable {
    pub fn new(temperatures: Vec<f64>) -> Result<Self> {
        let table = CalibrationTable { temperatures };
        table.validate()?;
        Ok(table)
    }

    /// `T = 1` at every layer.
    pub fn identity(n_layers: usize) -> Self {
        CalibrationTable {
            temperatures: vec![1.0; n_layers],
        }
    }

    pub fn temperatures(&self) -> &[f64] {
        &self.temperatures
    }

    pub fn n_layers(&self) -> usize {
        self.temperatures.len()
    }

    /// Calibrated probability for the logit produced by 0-based layer `layer`.
    #[inline]
    pub fn probability(&self, layer: usize, logit: f64) -> f64 {
        apply_calibration(logit, self.temperatures[layer])
    }

    fn validate(&self) -> Result<()> {
        if self.temperatures.is_empty() {
            return Err(Error::Config("calibration table has no layers".into()));
        }
        if let Some(i) = self.temperatures.iter().position(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::Config(format!(
                "temperature for layer {i} must be positive and finite, got {}",
                self.temperatures[i]
            )));
        }
        Ok(())
    }

    /// Errors unless the table covers exactly `n_layers` layers.
    pub fn check_layers(&self, n_layers: usize) -> Result<()> {
        if self.n_layers() != n_layers {
            return Err(Error::Shape(format!(
                "calibration table has {} layers, traces have {n_layers}",
                self.n_layers()
            )));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let table: CalibrationTable = serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        table.validate()?;
        Ok(table)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string(self).expect("table serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Numerically stable logistic function, kept inside the open unit interval.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    let p = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// `sigmoid(logit / t)`.
#[inline]
pub fn apply_calibration(logit: f64, t: f64) -> f64 {
    debug_assert!(t > 0.0);
    sigmoid(logit / t)
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Mean binary negative log-likelihood of `sigmoid(logit / t)` against the
/// labels.
pub fn binary_nll(logits: &[f64], labels: &[bool], t: f64) -> f64 {
    assert_eq!(logits.len(), labels.len());
    if logits.is_empty() {
        return 0.0;
    }
    let total: f64 = logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| {
            let z = z / t;
            // -log sigmoid(z) = softplus(-z); -log(1 - sigmoid(z)) = softplus(z)
            if y {
                softplus(-z)
            } else {
                softplus(z)
            }
        })
        .sum();
    total / logits.len() as f64
}

/// 32 log-spaced temperatures from 0.25 to 8.0.
pub fn default_grid() -> Vec<f64> {
    log_grid(0.25, 8.0, 32).expect("valid default grid")
}

/// `points` log-spaced temperatures from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>> {
    if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) || points == 0 {
        return Err(Error::Config(format!(
            "temperature grid needs 0 < lo <= hi and at least one point, got {lo}..{hi} x {points}"
        )));
    }
    if points == 1 {
        return Ok(vec![lo]);
    }
    let ratio = (hi / lo).ln() / (points - 1) as f64;
    Ok((0..points)
        .map(|i| if i == points - 1 { hi } else { lo * (ratio * i as f64).exp() })
        .collect())
}

/// Picks the grid temperature minimizing NLL; exact ties go to the
/// smaller temperature.
pub fn best_temperature(logits: &[f64], labels: &[bool], grid: &[f64]) -> f64 {
    let mut best = (f64::INFINITY, f64::INFINITY);
    for &t in grid {
        let nll = binary_nll(logits, labels, t);
        if nll < best.0 || (nll == best.0 && t < best.1) {
            best = (nll, t);
        }
    }
    best.1
}

/// Fits one temperature per layer on `dev` (labels are `has_answer`).
pub fn calibrate(dev: &[QuestionInstance], grid: &[f64]) -> Result<CalibrationTable> {
    calibrate_with(dev, grid, Exec::default())
}

pub fn calibrate_with(dev: &[QuestionInstance], grid: &[f64], exec: Exec) -> Result<CalibrationTable> {
    if grid.is_empty() {
        return Err(Error::Config("temperature grid is empty".into()));
    }
    if let Some(t) = grid.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
        return Err(Error::Config(format!("grid temperature {t} is not positive")));
    }
    let first = dev
        .iter()
        .find(|q| q.n() > 0)
        .ok_or_else(|| Error::Config("calibration set has no passages".into()))?;
    let n_layers = first.n_layers();
    if let Some(q) = dev.iter().find(|q| q.n() > 0 && q.n_layers() != n_layers) {
        return Err(Error::invariant(
            &q.question_id,
            "passages",
            format!("has {} layers, expected {n_layers}", q.n_layers()),
        ));
    }
    let labels: Vec<bool> = dev
        .iter()
        .flat_map(|q| q.passages.iter().map(|p| p.has_answer))
        .collect();
    let temperatures = par::map_range(exec, n_layers, |layer| {
        let logits: Vec<f64> = dev
            .iter()
            .flat_map(|q| q.passages.iter().map(move |p| p.logits[layer]))
            .collect();
        best_temperature(&logits, &labels, grid)
    });
    CalibrationTable::new(temperatures)
}
