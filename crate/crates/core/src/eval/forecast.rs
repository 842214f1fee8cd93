//! Forecast files and the shared evaluation point set.
//!
//! Model and baseline forecasts are written as long-format CSV rows
//! `timestamp,station_id,pm25_pred`. Ground truth uses the same layout
//! with a `pm25` column. Every method forecasts from the same
//! non-overlapping test windows, so reports compare identical
//! (station, time) points.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use chrono::{DateTime, Duration, Utc};

use crate::data_io::{format_timestamp, parse_timestamp, Dataset, WindowSample, STEP_HOURS};
use crate::error::{Error, Result};
use crate::eval::baselines::{ha_forecast, var_fit};
use crate::eval::metrics::{ErrorSums, MetricsReport, SuddenChangeSpec};
use crate::numcore::Tensor;

pub const FORECAST_HEADER: [&str; 3] = ["timestamp", "station_id", "pm25_pred"];
pub const TRUTH_HEADER: [&str; 3] = ["timestamp", "station_id", "pm25"];

#[derive(Clone, Debug, PartialEq)]
pub struct PointValue {
    pub time: DateTime<Utc>,
    pub station_id: String,
    pub value: f64,
}

/// Test windows spaced `horizon` steps apart, so their forecast periods
/// tile the test range without overlap.
pub fn evaluation_windows(
    dataset: &Dataset,
    history: usize,
    horizon: usize,
    ratio: (u32, u32, u32),
) -> Result<Vec<WindowSample>> {
    let split = dataset.split(history, horizon, ratio)?;
    Ok(split.test.into_iter().step_by(horizon).collect())
}

/// Training range of the series (every step covered by a training
/// window) under the same split.
pub fn training_steps(dataset: &Dataset, history: usize, horizon: usize, ratio: (u32, u32, u32)) -> Result<usize> {
    let split = dataset.split(history, horizon, ratio)?;
    let last = split.train.last().expect("split partitions are non-empty");
    Ok(last.start + history + horizon)
}

/// Rows for the first `steps` lead times of each `τ×N` forecast.
pub fn forecast_points(
    windows: &[WindowSample],
    forecasts: &[Tensor],
    station_ids: &[String],
    steps: usize,
) -> Result<Vec<PointValue>> {
    if windows.len() != forecasts.len() {
        return Err(Error::dim(format!("{} windows but {} forecasts", windows.len(), forecasts.len())));
    }
    let mut out = Vec::new();
    for (w, f) in windows.iter().zip(forecasts) {
        if f.rank() != 2 || f.cols() != station_ids.len() || f.rows() < steps {
            return Err(Error::dim(format!(
                "forecast {:?} does not cover {steps} steps of {} stations",
                f.shape(),
                station_ids.len()
            )));
        }
        for k in 0..steps {
            for (i, id) in station_ids.iter().enumerate() {
                out.push(PointValue { time: w.forecast_time(k), station_id: id.clone(), value: f.get(k, i) });
            }
        }
    }
    Ok(out)
}

/// Observed series from the first evaluation forecast step to the end.
pub fn truth_points(dataset: &Dataset, windows: &[WindowSample]) -> Result<Vec<PointValue>> {
    let first = windows
        .first()
        .ok_or_else(|| Error::Data("no evaluation windows".into()))?
        .forecast_start();
    let s = &dataset.series;
    let mut out = Vec::new();
    for t in first..s.steps() {
        for (i, id) in s.station_ids.iter().enumerate() {
            out.push(PointValue { time: s.time_of(t), station_id: id.clone(), value: s.pm25.get(t, i) });
        }
    }
    Ok(out)
}

/// Historical-average forecasts for each window.
pub fn ha_forecasts(dataset: &Dataset, windows: &[WindowSample], horizon: usize) -> Result<Vec<Tensor>> {
    windows
        .iter()
        .map(|w| ha_forecast(&dataset.series.pm25, w.forecast_start(), horizon))
        .collect()
}

/// VAR forecasts fitted on the first `train_steps` steps of the series and
/// run from each window's history.
pub fn var_forecasts(
    dataset: &Dataset,
    windows: &[WindowSample],
    lags: usize,
    train_steps: usize,
    horizon: usize,
) -> Result<Vec<Tensor>> {
    let s = &dataset.series.pm25;
    let n = s.cols();
    let train = Tensor::matrix(train_steps, n, s.data()[..train_steps * n].to_vec())?;
    let model = var_fit(&train, lags, true)?;
    windows.iter().map(|w| model.forecast(&w.x_hist, horizon)).collect()
}

pub fn write_points_csv(path: impl AsRef<Path>, header: [&str; 3], points: &[PointValue]) -> Result<()> {
    let path = path.as_ref();
    let io = |e: csv::Error| Error::io(path, e.into());
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(header).map_err(io)?;
    for p in points {
        w.write_record([format_timestamp(p.time), p.station_id.clone(), format!("{}", p.value)])
            .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a three-column point file. The third header may be `pm25_pred`
/// or `pm25`.
pub fn read_points_csv(path: impl AsRef<Path>) -> Result<Vec<PointValue>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_points(file)
}

pub fn parse_points(reader: impl std::io::Read) -> Result<Vec<PointValue>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?.clone();
    let h: Vec<&str> = headers.iter().collect();
    if h != FORECAST_HEADER && h != TRUTH_HEADER {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header `{}` or `{}`", FORECAST_HEADER.join(","), TRUTH_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse { line: e.position().map_or(0, |p| p.line()), msg: e.to_string() })?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |msg: String| Error::Parse { line, msg };
        let time = parse_timestamp(&rec[0]).ok_or_else(|| bad(format!("invalid timestamp {:?}", &rec[0])))?;
        let value: f64 = rec[2].trim().parse().map_err(|_| bad(format!("invalid value {:?}", &rec[2])))?;
        if !value.is_finite() {
            return Err(bad(format!("non-finite value {value}")));
        }
        out.push(PointValue { time, station_id: rec[1].to_string(), value });
    }
    Ok(out)
}

type Key = (DateTime<Utc>, String);

fn index(points: &[PointValue], what: &str) -> Result<HashMap<Key, f64>> {
    let mut map = HashMap::with_capacity(points.len());
    for p in points {
        if map.insert((p.time, p.station_id.clone()), p.value).is_some() {
            return Err(Error::Data(format!(
                "duplicate {what} row for station `{}` at {}",
                p.station_id,
                format_timestamp(p.time)
            )));
        }
    }
    Ok(map)
}

/// Points of `truth` that open a sudden change: above the level, with a
/// jump beyond the delta by the next 3-hour step.
pub fn sudden_change_points(truth: &[PointValue], spec: &SuddenChangeSpec) -> Result<Vec<Key>> {
    let map = index(truth, "truth")?;
    let mut by_station: BTreeMap<&str, Vec<(DateTime<Utc>, f64)>> = BTreeMap::new();
    for p in truth {
        by_station.entry(&p.station_id).or_default().push((p.time, p.value));
    }
    let mut out = Vec::new();
    for (id, rows) in by_station {
        for (t, x) in rows {
            let next = map.get(&(t + Duration::hours(STEP_HOURS), id.to_string()));
            if let Some(y) = next {
                if x > spec.level_threshold && (y - x).abs() > spec.delta_threshold {
                    out.push((t, id.to_string()));
                }
            }
        }
    }
    Ok(out)
}

/// Joins forecasts with truth and reports errors over every forecast
/// point, or only over sudden-change points when `sudden` is given.
pub fn evaluate_points(
    pred: &[PointValue],
    truth: &[PointValue],
    sudden: Option<&SuddenChangeSpec>,
    label: &str,
) -> Result<MetricsReport> {
    let truth_map = index(truth, "truth")?;
    index(pred, "forecast")?;
    let keep: Option<std::collections::HashSet<Key>> = match sudden {
        Some(spec) => Some(sudden_change_points(truth, spec)?.into_iter().collect()),
        None => None,
    };
    let mut acc = ErrorSums::default();
    for p in pred {
        let key = (p.time, p.station_id.clone());
        let t = truth_map.get(&key).ok_or_else(|| {
            Error::Data(format!("no truth for station `{}` at {}", p.station_id, format_timestamp(p.time)))
        })?;
        if keep.as_ref().is_none_or(|k| k.contains(&key)) {
            acc.add(p.value, *t);
        }
    }
    acc.report(label)
}
