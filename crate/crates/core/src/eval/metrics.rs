use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// Forecast lead-time prefix. Reports are cumulative: `H48` covers steps
/// 1–16, not 9–16.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Horizon {
    #[serde(rename = "24h")]
    H24,
    #[serde(rename = "48h")]
    H48,
    #[serde(rename = "72h")]
    H72,
}

impl Horizon {
    pub const ALL: [Horizon; 3] = [Horizon::H24, Horizon::H48, Horizon::H72];

    /// Number of 3-hour steps in the prefix.
    pub fn steps(self) -> usize {
        match self {
            Horizon::H24 => 8,
            Horizon::H48 => 16,
            Horizon::H72 => 24,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Horizon::H24 => "24h",
            Horizon::H48 => "48h",
            Horizon::H72 => "72h",
        }
    }
}

impl fmt::Display for Horizon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Horizon {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Horizon::ALL
            .into_iter()
            .find(|h| h.label() == s)
            .ok_or_else(|| Error::Config(format!("unknown horizon {s:?} (expected 24h, 48h or 72h)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub horizon: String,
    pub mae: f64,
    pub rmse: f64,
    pub n_points: usize,
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "horizon={} (cumulative) mae={:.4} rmse={:.4} points={}",
            self.horizon, self.mae, self.rmse, self.n_points
        )
    }
}

/// Accumulates absolute and squared errors.
#[derive(Clone, Copy, Debug, Default)]
pub struct ErrorSums {
    abs: f64,
    sq: f64,
    n: usize,
}

impl ErrorSums {
    pub fn add(&mut self, pred: f64, truth: f64) {
        let e = pred - truth;
        self.abs += e.abs();
        self.sq += e * e;
        self.n += 1;
    }

    pub fn report(&self, label: impl Into<String>) -> Result<MetricsReport> {
        if self.n == 0 {
            return Err(Error::Data("no points selected for evaluation".into()));
        }
        let n = self.n as f64;
        Ok(MetricsReport {
            horizon: label.into(),
            mae: self.abs / n,
            rmse: (self.sq / n).sqrt(),
            n_points: self.n,
        })
    }
}

fn check_pairs(preds: &[Tensor], truths: &[Tensor], steps: usize) -> Result<()> {
    if preds.len() != truths.len() {
        return Err(Error::Dimension(format!(
            "{} forecasts against {} truths",
            preds.len(),
            truths.len()
        )));
    }
    for (p, t) in preds.iter().zip(truths) {
        if p.shape() != t.shape() || p.rank() != 2 {
            return Err(Error::Dimension(format!(
                "forecast {:?} and truth {:?} must be equal τ×N matrices",
                p.shape(),
                t.shape()
            )));
        }
        if steps > p.rows() {
            return Err(Error::Dimension(format!(
                "horizon of {steps} steps exceeds forecast length {}",
                p.rows()
            )));
        }
    }
    Ok(())
}

/// MAE and RMSE over the first `steps` rows of every τ×N forecast.
pub fn compute_metrics(preds: &[Tensor], truths: &[Tensor], steps: usize, label: &str) -> Result<MetricsReport> {
    check_pairs(preds, truths, steps)?;
    let mut acc = ErrorSums::default();
    for (p, t) in preds.iter().zip(truths) {
        for (a, b) in p.data()[..steps * p.cols()].iter().zip(t.data()) {
            acc.add(*a, *b);
        }
    }
    acc.report(label)
}

/// Like [`compute_metrics`] but restricted to points whose mask entry
/// (same layout as the forecasts) is set.
pub fn compute_metrics_masked(
    preds: &[Tensor],
    truths: &[Tensor],
    masks: &[Vec<bool>],
    steps: usize,
    label: &str,
) -> Result<MetricsReport> {
    check_pairs(preds, truths, steps)?;
    if masks.len() != preds.len() {
        return Err(Error::Dimension("one mask per forecast is required".into()));
    }
    let mut acc = ErrorSums::default();
    for ((p, t), m) in preds.iter().zip(truths).zip(masks) {
        if m.len() != p.numel() {
            return Err(Error::Dimension(format!("mask of {} entries for {:?}", m.len(), p.shape())));
        }
        let k = steps * p.cols();
        for ((a, b), keep) in p.data()[..k].iter().zip(t.data()).zip(m) {
            if *keep {
                acc.add(*a, *b);
            }
        }
    }
    acc.report(label)
}

/// Thresholds that define a sudden change.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuddenChangeSpec {
    /// Concentration that must be exceeded, µg/m³.
    pub level_threshold: f64,
    /// Change over the next step that must be exceeded in magnitude, µg/m³.
    pub delta_threshold: f64,
}

impl SuddenChangeSpec {
    pub fn beijing() -> Self {
        SuddenChangeSpec { level_threshold: 50.0, delta_threshold: 20.0 }
    }

    pub fn shenzhen() -> Self {
        SuddenChangeSpec { level_threshold: 20.0, delta_threshold: 20.0 }
    }

    pub fn for_city(city: &str) -> Result<Self> {
        match city {
            "beijing" => Ok(Self::beijing()),
            "shenzhen" => Ok(Self::shenzhen()),
            other => Err(Error::Config(format!("unknown city {other:?} (expected beijing or shenzhen)"))),
        }
    }
}

/// Flags `(t, i)` of a `[steps, N]` series where `x[t,i]` exceeds the level
/// and `|x[t+1,i] − x[t,i]|` exceeds the delta. The last step is never
/// flagged. Output is row-major like the series.
pub fn sudden_change_mask(series: &Tensor, spec: &SuddenChangeSpec) -> Result<Vec<bool>> {
    if !(spec.level_threshold > 0.0 && spec.delta_threshold > 0.0) {
        return Err(Error::Config("sudden-change thresholds must be positive".into()));
    }
    if series.rank() != 2 || series.rows() < 2 {
        return Err(Error::Data(format!(
            "sudden-change detection needs at least 2 steps, got shape {:?}",
            series.shape()
        )));
    }
    let (s, n) = (series.rows(), series.cols());
    let mut mask = vec![false; s * n];
    for t in 0..s - 1 {
        for i in 0..n {
            let x = series.get(t, i);
            mask[t * n + i] =
                x > spec.level_threshold && (series.get(t + 1, i) - x).abs() > spec.delta_threshold;
        }
    }
    Ok(mask)
}
