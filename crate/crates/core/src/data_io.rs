//! Readings ingestion and the windowing pipeline.
//!
//! Raw hourly readings are placed on a regular grid, gaps are imputed,
//! hours are averaged into 3-hour steps and the resulting series is cut
//! into history/forecast windows that are split chronologically.

use std::collections::HashMap;
use std::path::Path;

use chrono::{DateTime, Duration, NaiveDateTime, Timelike, Utc};
use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::error::{Error, Result};
use crate::geo_graph::{SensorGraph, Station};
use crate::model::NormStats;
use crate::numcore::Tensor;

pub const READINGS_HEADER: [&str; 5] = ["timestamp", "station_id", "pm25", "wind_speed", "wind_direction"];
pub const DATASET_KIND: &str = "aqc-dataset";
/// Hours per model time step.
pub const STEP_HOURS: i64 = 3;

/// Accepts RFC 3339 (`2020-01-01T03:00:00Z`) or a naive
/// `YYYY-MM-DDTHH:MM:SS` / `YYYY-MM-DD HH:MM:SS` read as UTC.
pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .map(|n| n.and_utc())
}

pub fn format_timestamp(t: DateTime<Utc>) -> String {
    t.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

/// Wind (speed, meteorological direction in degrees) to `(u, v)`.
/// Direction is where the wind comes from, clockwise from north.
pub fn wind_components(speed: f64, direction_deg: f64) -> (f64, f64) {
    let th = direction_deg.to_radians();
    (-speed * th.sin(), -speed * th.cos())
}

/// Hourly observations per station; `None` marks a missing value.
#[derive(Clone, Debug, PartialEq)]
pub struct HourlyGrid {
    pub start: DateTime<Utc>,
    pub station_ids: Vec<String>,
    /// `pm25[station][hour]`.
    pub pm25: Vec<Vec<Option<f64>>>,
    pub wind_u: Vec<Vec<Option<f64>>>,
    pub wind_v: Vec<Vec<Option<f64>>>,
}

impl HourlyGrid {
    pub fn hours(&self) -> usize {
        self.pm25.first().map_or(0, Vec::len)
    }

    pub fn missing_pm25(&self) -> usize {
        self.pm25.iter().flatten().filter(|v| v.is_none()).count()
    }
}

struct Row {
    line: u64,
    time: DateTime<Utc>,
    station: usize,
    pm25: Option<f64>,
    wind: Option<(f64, f64)>,
}

fn parse_field(raw: &str, what: &str, line: u64) -> Result<Option<f64>> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(None);
    }
    let v: f64 = raw.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("{what}: cannot parse {raw:?} as a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            msg: format!("{what}: non-finite value {raw:?}"),
        });
    }
    Ok(Some(v))
}

/// Reads a readings CSV onto an hourly grid covering the first to the last
/// timestamp. Station order follows `stations`.
pub fn read_readings_csv(path: impl AsRef<Path>, stations: &[Station]) -> Result<HourlyGrid> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_readings(file, stations)
}

pub fn parse_readings(reader: impl std::io::Read, stations: &[Station]) -> Result<HourlyGrid> {
    let index: HashMap<&str, usize> = stations.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
    let mut rows = Vec::new();
    let mut header_seen = false;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if !header_seen {
            if rec.iter().map(str::trim).collect::<Vec<_>>() != READINGS_HEADER {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected header `{}`", READINGS_HEADER.join(",")),
                });
            }
            header_seen = true;
            continue;
        }
        if rec.len() != READINGS_HEADER.len() {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, found {}", READINGS_HEADER.len(), rec.len()),
            });
        }
        let time = parse_timestamp(rec[0].trim()).ok_or_else(|| Error::Parse {
            line,
            msg: format!("unparseable timestamp {:?}", &rec[0]),
        })?;
        if time.minute() != 0 || time.second() != 0 || time.nanosecond() != 0 {
            return Err(Error::Parse {
                line,
                msg: format!("timestamp {:?} is not on the hour", &rec[0]),
            });
        }
        let id = rec[1].trim();
        let station = *index
            .get(id)
            .ok_or_else(|| Error::Reference(format!("line {line}: unknown station `{id}`")))?;
        let pm25 = parse_field(&rec[2], "pm25", line)?;
        let speed = parse_field(&rec[3], "wind_speed", line)?;
        let dir = parse_field(&rec[4], "wind_direction", line)?;
        if pm25.is_some_and(|v| v < 0.0) {
            return Err(Error::Parse { line, msg: "pm25 must be non-negative".into() });
        }
        if speed.is_some_and(|v| v < 0.0) {
            return Err(Error::Parse { line, msg: "wind_speed must be non-negative".into() });
        }
        if dir.is_some_and(|v| !(0.0..360.0).contains(&v)) {
            return Err(Error::Parse { line, msg: "wind_direction must lie in [0, 360)".into() });
        }
        let wind = match (speed, dir) {
            (Some(s), Some(d)) => Some(wind_components(s, d)),
            _ => None,
        };
        rows.push(Row { line, time, station, pm25, wind });
    }
    if !header_seen {
        return Err(Error::Parse { line: 1, msg: "empty readings file".into() });
    }
    let start = rows
        .iter()
        .map(|r| r.time)
        .min()
        .ok_or_else(|| Error::Data("readings file has no rows".into()))?;
    let end = rows.iter().map(|r| r.time).max().expect("non-empty");
    let hours = ((end - start).num_hours() + 1) as usize;
    let n = stations.len();
    let mut pm25 = vec![vec![None; hours]; n];
    let mut wind_u = vec![vec![None; hours]; n];
    let mut wind_v = vec![vec![None; hours]; n];
    let mut seen = vec![vec![false; hours]; n];
    for r in rows {
        let h = (r.time - start).num_hours() as usize;
        if std::mem::replace(&mut seen[r.station][h], true) {
            return Err(Error::Parse {
                line: r.line,
                msg: format!("duplicate reading for station `{}` at {}", stations[r.station].id, format_timestamp(r.time)),
            });
        }
        pm25[r.station][h] = r.pm25;
        if let Some((u, v)) = r.wind {
            wind_u[r.station][h] = Some(u);
            wind_v[r.station][h] = Some(v);
        }
    }
    Ok(HourlyGrid {
        start,
        station_ids: stations.iter().map(|s| s.id.clone()).collect(),
        pm25,
        wind_u,
        wind_v,
    })
}

/// Fills gaps in one hourly series: the mean of the available values among
/// the preceding 24 hours, else the last known value, else `leading`.
/// Only observed values enter the 24-hour mean.
pub fn impute_series(values: &[Option<f64>], leading: f64) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(values.len());
    let mut last_known: Option<f64> = None;
    for (t, v) in values.iter().enumerate() {
        let filled = match v {
            Some(x) => {
                last_known = Some(*x);
                *x
            }
            None => {
                let window = &values[t.saturating_sub(24)..t];
                let avail: Vec<f64> = window.iter().flatten().copied().collect();
                if !avail.is_empty() {
                    avail.iter().sum::<f64>() / avail.len() as f64
                } else {
                    last_known.unwrap_or(leading)
                }
            }
        };
        out.push(filled);
    }
    out
}

/// Mean of the observed PM2.5 values in the first `fraction` of the
/// timeline, used to fill values missing before a station's first reading.
pub fn leading_fill_value(grid: &HourlyGrid, fraction: f64) -> Result<f64> {
    let cut = ((grid.hours() as f64 * fraction).floor() as usize).max(1);
    let vals: Vec<f64> = grid.pm25.iter().flat_map(|s| s[..cut.min(s.len())].iter().flatten().copied()).collect();
    if vals.is_empty() {
        return Err(Error::Data("no PM2.5 observations in the training period".into()));
    }
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Hourly grid with every gap filled.
#[derive(Clone, Debug, PartialEq)]
pub struct ImputedGrid {
    pub start: DateTime<Utc>,
    pub station_ids: Vec<String>,
    pub pm25: Vec<Vec<f64>>,
    pub wind_u: Vec<Vec<f64>>,
    pub wind_v: Vec<Vec<f64>>,
}

/// Imputes PM2.5 and both wind components. PM2.5 missing before a
/// station's first reading takes `pm25_leading`; wind takes calm air.
pub fn impute_missing(grid: &HourlyGrid, pm25_leading: f64) -> Result<ImputedGrid> {
    for (id, s) in grid.station_ids.iter().zip(&grid.pm25) {
        if s.iter().all(Option::is_none) {
            return Err(Error::Data(format!("station `{id}` has no PM2.5 observations")));
        }
    }
    Ok(ImputedGrid {
        start: grid.start,
        station_ids: grid.station_ids.clone(),
        pm25: grid.pm25.iter().map(|s| impute_series(s, pm25_leading)).collect(),
        wind_u: grid.wind_u.iter().map(|s| impute_series(s, 0.0)).collect(),
        wind_v: grid.wind_v.iter().map(|s| impute_series(s, 0.0)).collect(),
    })
}

/// Series at 3-hour resolution, time-major.
#[derive(Clone, Debug, PartialEq)]
pub struct StepSeries {
    pub start: DateTime<Utc>,
    pub station_ids: Vec<String>,
    /// `[steps, N]` in µg/m³.
    pub pm25: Tensor,
    /// `[steps, N, 2]` wind `(u, v)` in m/s.
    pub wind: Tensor,
}

impl StepSeries {
    pub fn steps(&self) -> usize {
        self.pm25.shape()[0]
    }

    pub fn num_stations(&self) -> usize {
        self.station_ids.len()
    }

    pub fn time_of(&self, step: usize) -> DateTime<Utc> {
        self.start + Duration::hours(STEP_HOURS * step as i64)
    }
}

/// Block means over consecutive 3-hour blocks. Returns the series and the
/// number of trailing hours dropped because they did not fill a block.
pub fn resample_3h(grid: &ImputedGrid) -> Result<(StepSeries, usize)> {
    let hours = grid.pm25.first().map_or(0, Vec::len);
    let steps = hours / 3;
    if steps == 0 {
        return Err(Error::Data(format!("{hours} hours do not fill a single 3-hour step")));
    }
    let n = grid.station_ids.len();
    let mean3 = |s: &[f64], b: usize| (s[3 * b] + s[3 * b + 1] + s[3 * b + 2]) / 3.0;
    let mut pm = Vec::with_capacity(steps * n);
    let mut wind = Vec::with_capacity(steps * n * 2);
    for b in 0..steps {
        for i in 0..n {
            pm.push(mean3(&grid.pm25[i], b));
            wind.push(mean3(&grid.wind_u[i], b));
            wind.push(mean3(&grid.wind_v[i], b));
        }
    }
    Ok((
        StepSeries {
            start: grid.start,
            station_ids: grid.station_ids.clone(),
            pm25: Tensor::matrix(steps, n, pm)?,
            wind: Tensor::new(vec![steps, n, 2], wind)?,
        },
        hours - steps * 3,
    ))
}

/// One training/evaluation example. Values are in physical units; the
/// model normalizes internally.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSample {
    /// Time of the first history step.
    pub origin: DateTime<Utc>,
    /// Index of the first history step in the source series.
    pub start: usize,
    /// `[T, N]` µg/m³.
    pub x_hist: Tensor,
    /// `[T, N, 2]` wind `(u, v)`.
    pub wind_hist: Tensor,
    /// `[τ, N]` µg/m³.
    pub x_future: Tensor,
}

impl WindowSample {
    /// Index of the first forecast step in the source series.
    pub fn forecast_start(&self) -> usize {
        self.start + self.x_hist.shape()[0]
    }

    /// Timestamp of forecast step `k` (0-based).
    pub fn forecast_time(&self, k: usize) -> DateTime<Utc> {
        self.origin + Duration::hours(STEP_HOURS * (self.x_hist.shape()[0] + k) as i64)
    }
}

fn rows(t: &Tensor, from: usize, count: usize) -> Result<Tensor> {
    let inner: usize = t.shape()[1..].iter().product();
    let mut shape = t.shape().to_vec();
    shape[0] = count;
    Tensor::new(shape, t.data()[from * inner..(from + count) * inner].to_vec())
}

/// Sliding windows of `history` steps followed by `horizon` steps.
pub fn make_windows(series: &StepSeries, history: usize, horizon: usize, stride: usize) -> Result<Vec<WindowSample>> {
    if history == 0 || horizon == 0 || stride == 0 {
        return Err(Error::Config("history, horizon and stride must be positive".into()));
    }
    let need = history + horizon;
    let len = series.steps();
    if len < need {
        return Err(Error::Data(format!(
            "series has {len} steps but a window needs {need} ({history} history + {horizon} horizon)"
        )));
    }
    (0..=len - need)
        .step_by(stride)
        .map(|s| {
            Ok(WindowSample {
                origin: series.time_of(s),
                start: s,
                x_hist: rows(&series.pm25, s, history)?,
                wind_hist: rows(&series.wind, s, history)?,
                x_future: rows(&series.pm25, s + history, horizon)?,
            })
        })
        .collect()
}

/// Partition sizes for `n` windows at ratio `a:b:c`: `⌊a·n/(a+b+c)⌋`,
/// `⌊b·n/(a+b+c)⌋` and the remainder.
pub fn split_sizes(n: usize, ratio: (u32, u32, u32)) -> Result<(usize, usize, usize)> {
    let (a, b, c) = ratio;
    let total = a as u64 + b as u64 + c as u64;
    if total == 0 {
        return Err(Error::Config("split ratio must have a positive sum".into()));
    }
    let train = (a as u64 * n as u64 / total) as usize;
    let val = (b as u64 * n as u64 / total) as usize;
    let test = n - train - val;
    if train == 0 || val == 0 || test == 0 {
        return Err(Error::Config(format!(
            "split {a}:{b}:{c} of {n} windows leaves an empty partition ({train}/{val}/{test})"
        )));
    }
    Ok((train, val, test))
}

/// Chronological train/validation/test split with normalization fitted on
/// the training partition.
#[derive(Clone, Debug)]
pub struct DatasetSplit {
    pub train: Vec<WindowSample>,
    pub val: Vec<WindowSample>,
    pub test: Vec<WindowSample>,
    pub norm: NormStats,
}

/// PM2.5 statistics over every series step covered by `windows`.
pub fn fit_norm(windows: &[WindowSample]) -> Result<NormStats> {
    let mut by_step: std::collections::BTreeMap<usize, &[f64]> = std::collections::BTreeMap::new();
    for w in windows {
        let t = w.x_hist.shape()[0];
        for r in 0..t {
            by_step.entry(w.start + r).or_insert(w.x_hist.row(r));
        }
        for r in 0..w.x_future.shape()[0] {
            by_step.entry(w.start + t + r).or_insert(w.x_future.row(r));
        }
    }
    let values: Vec<f64> = by_step.values().flat_map(|r| r.iter().copied()).collect();
    NormStats::fit(&values)
}

pub fn chronological_split(windows: Vec<WindowSample>, ratio: (u32, u32, u32)) -> Result<DatasetSplit> {
    if windows.windows(2).any(|w| w[1].start <= w[0].start) {
        return Err(Error::Contract("windows must be in increasing time order".into()));
    }
    let (n_train, n_val, _) = split_sizes(windows.len(), ratio)?;
    let mut rest = windows;
    let mut val = rest.split_off(n_train);
    let test = val.split_off(n_val);
    let train = rest;
    let norm = fit_norm(&train)?;
    Ok(DatasetSplit { train, val, test, norm })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct DatasetMeta {
    stations: Vec<Station>,
    start: String,
    step_hours: i64,
    dropped_hours: usize,
}

/// Processed dataset: stations and their 3-hour series.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub stations: Vec<Station>,
    pub series: StepSeries,
    /// Trailing hours dropped during resampling.
    pub dropped_hours: usize,
}

impl Dataset {
    /// Full pipeline from readings to a 3-hour series. Gaps before a
    /// station's first reading take the mean over the first `train_fraction`
    /// of the timeline.
    pub fn from_grid(stations: Vec<Station>, grid: &HourlyGrid, train_fraction: f64) -> Result<Self> {
        let leading = leading_fill_value(grid, train_fraction)?;
        let imputed = impute_missing(grid, leading)?;
        let (series, dropped_hours) = resample_3h(&imputed)?;
        Ok(Dataset { stations, series, dropped_hours })
    }

    pub fn graph(&self) -> Result<SensorGraph> {
        crate::geo_graph::distance_adjacency(self.stations.clone())
    }

    pub fn windows(&self, history: usize, horizon: usize) -> Result<Vec<WindowSample>> {
        make_windows(&self.series, history, horizon, 1)
    }

    pub fn split(&self, history: usize, horizon: usize, ratio: (u32, u32, u32)) -> Result<DatasetSplit> {
        chronological_split(self.windows(history, horizon)?, ratio)
    }

    pub fn to_container(&self) -> Result<Container> {
        let meta = DatasetMeta {
            stations: self.stations.clone(),
            start: format_timestamp(self.series.start),
            step_hours: STEP_HOURS,
            dropped_hours: self.dropped_hours,
        };
        let meta = serde_json::to_value(meta).map_err(|e| Error::Format(e.to_string()))?;
        let mut c = Container::new(DATASET_KIND, meta);
        c.push("pm25", self.series.pm25.clone());
        c.push("wind", self.series.wind.clone());
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let meta: DatasetMeta =
            serde_json::from_value(c.meta.clone()).map_err(|e| Error::Format(format!("dataset metadata: {e}")))?;
        if meta.step_hours != STEP_HOURS {
            return Err(Error::Format(format!("dataset step of {} hours, expected {STEP_HOURS}", meta.step_hours)));
        }
        let start = parse_timestamp(&meta.start)
            .ok_or_else(|| Error::Format(format!("dataset start time {:?}", meta.start)))?;
        let n = meta.stations.len();
        let pm25 = c.array("pm25")?;
        let steps = pm25.shape().first().copied().unwrap_or(0);
        let pm25 = c.array_with_shape("pm25", &[steps, n])?.clone();
        let wind = c.array_with_shape("wind", &[steps, n, 2])?.clone();
        Ok(Dataset {
            series: StepSeries {
                start,
                station_ids: meta.stations.iter().map(|s| s.id.clone()).collect(),
                pm25,
                wind,
            },
            stations: meta.stations,
            dropped_hours: meta.dropped_hours,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Dataset::from_container(&Container::load(path, DATASET_KIND)?)
    }
}
