//! Command-line interface.
//!
//! Exit codes: 0 on success, 1 on usage or configuration errors, 2 on
//! data, numeric and I/O errors.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::data_io::{read_readings_csv, Dataset};
use crate::error::{Error, Result};
use crate::eval::forecast::{
    evaluate_points, evaluation_windows, forecast_points, ha_forecasts, read_points_csv, training_steps,
    truth_points, var_forecasts, write_points_csv, FORECAST_HEADER, TRUTH_HEADER,
};
use crate::eval::{render_diffusion_lines, render_wind_heatmap, Horizon, SuddenChangeSpec};
use crate::geo_graph::{distance_adjacency, parse_stations, read_stations_csv};
use crate::model::{Model, ModelConfig};
use crate::numcore::Tensor;
use crate::physics::{simulate_advection_reference, simulate_diffusion_reference};
use crate::train::{train_loop, TrainConfig, LOG_HEADER};

/// Environment variable that overrides the configured seeds.
pub const SEED_ENV: &str = "AQC_SEED";
/// Lags of the VAR baseline.
pub const VAR_LAGS: usize = 3;
pub const CHECKPOINT_FILE: &str = "model.json";
pub const LOG_FILE: &str = "train_log.csv";

/// Contents of a TOML run configuration. Missing fields take their defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        RunConfig::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// Applies a seed override to both the model and the trainer.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.model.seed = s;
            self.train.seed = s;
        }
        self
    }
}

fn seed_from_env() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

#[derive(Parser, Debug)]
#[command(name = "aqc", version, about = "PM2.5 forecasting on sensor-network graphs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Impute, resample and store hourly readings as a processed dataset.
    Ingest {
        #[arg(long)]
        stations: PathBuf,
        #[arg(long)]
        readings: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Fraction of the timeline whose mean fills gaps before a station's first reading.
        #[arg(long, default_value_t = 0.7)]
        train_fraction: f64,
    },
    /// Train a model; writes the checkpoint and the epoch log into the output directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Use the 3:1:6 split instead of 7:1:2.
        #[arg(long)]
        sparse_split: bool,
    },
    /// Forecast every non-overlapping test window.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_parser = parse_horizon)]
        horizon: Horizon,
        #[arg(long)]
        out: PathBuf,
        /// Also write the observed test-period series.
        #[arg(long)]
        truth_out: Option<PathBuf>,
        #[arg(long)]
        sparse_split: bool,
    },
    /// Score a forecast file against a truth file.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Restrict to points that open a sudden change.
        #[arg(long, requires = "city")]
        sudden_change: bool,
        #[arg(long, value_enum)]
        city: Option<City>,
        /// Label printed with the report.
        #[arg(long, value_parser = parse_horizon)]
        horizon: Option<Horizon>,
        /// Write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Forecast the test windows with a classical baseline.
    Baseline {
        #[arg(long, value_enum)]
        method: BaselineMethod,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = parse_horizon, default_value = "72h")]
        horizon: Horizon,
        /// History and horizon window lengths in 3-hour steps; match the model's.
        #[arg(long, default_value_t = 24)]
        history: usize,
        #[arg(long, default_value_t = 24)]
        window_horizon: usize,
        #[arg(long)]
        sparse_split: bool,
    },
    /// Run a reference simulator on a weighted graph.
    Simulate {
        #[arg(long, value_enum)]
        mode: SimMode,
        /// N×N weight (diffusion) or edge-velocity (advection) matrix CSV, or a stations CSV.
        #[arg(long)]
        graph: PathBuf,
        /// Initial concentrations, one per node.
        #[arg(long)]
        x0: PathBuf,
        #[arg(long)]
        t: f64,
        /// Diffusion coefficient.
        #[arg(long, default_value_t = 1.0)]
        k: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render an SVG figure from a dataset step.
    Plot {
        #[arg(long = "type", value_enum)]
        kind: PlotKind,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Series step to draw; defaults to the last one.
        #[arg(long)]
        step: Option<usize>,
        /// Draw the model's first forecast step from the window ending before `step`,
        /// and take k from the model.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Source station for diffusion lines; defaults to the first station.
        #[arg(long)]
        source: Option<String>,
        /// Diffusion coefficient when no checkpoint is given.
        #[arg(long, default_value_t = 1.0)]
        k: f64,
    },
}

fn parse_horizon(s: &str) -> std::result::Result<Horizon, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum City {
    Beijing,
    Shenzhen,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BaselineMethod {
    Ha,
    Var,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SimMode {
    Diffusion,
    Advection,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PlotKind {
    WindHeatmap,
    DiffusionLines,
}

fn split_ratio(sparse: bool) -> (u32, u32, u32) {
    if sparse {
        (3, 1, 6)
    } else {
        (7, 1, 2)
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code. Messages go to `out` and `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    1
                }
            };
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 1,
        _ => 2,
    }
}

fn say(out: &mut dyn Write, msg: std::fmt::Arguments) -> Result<()> {
    out.write_fmt(msg).and_then(|_| out.write_all(b"\n")).map_err(|e| Error::io("<stdout>", e))
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Ingest { stations, readings, out: path, train_fraction } => {
            let stations = read_stations_csv(&stations)?;
            let grid = read_readings_csv(&readings, &stations)?;
            let missing = grid.missing_pm25();
            let ds = Dataset::from_grid(stations, &grid, train_fraction)?;
            ds.save(&path)?;
            say(
                out,
                format_args!(
                    "ingested {} stations, {} hours ({} missing PM2.5 values imputed) -> {} steps, {} trailing hours dropped",
                    ds.stations.len(),
                    grid.hours(),
                    missing,
                    ds.series.steps(),
                    ds.dropped_hours
                ),
            )
        }
        Command::Train { config, data, out_dir, sparse_split } => {
            let cfg = RunConfig::load(&config)?.with_seed(seed_from_env()?);
            let ds = Dataset::load(&data)?;
            let split = ds.split(cfg.model.history, cfg.model.horizon, split_ratio(sparse_split))?;
            std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
            let log_path = out_dir.join(LOG_FILE);
            let mut log = std::fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
            writeln!(log, "{LOG_HEADER}").map_err(|e| Error::io(&log_path, e))?;
            let mut model = Model::new(cfg.model.clone(), &ds.graph()?)?;
            let report = train_loop(&mut model, &split, &cfg.train, Some(&mut log))?;
            let ckpt = out_dir.join(CHECKPOINT_FILE);
            model.save(&ckpt)?;
            say(
                out,
                format_args!(
                    "trained {} epochs on {}/{}/{} windows; best epoch {} (val MAE {:.4}, normalized); k = {:.6}; checkpoint {}",
                    report.epochs.len(),
                    split.train.len(),
                    split.val.len(),
                    split.test.len(),
                    report.best_epoch,
                    report.best_val_mae,
                    model.diffusion_coefficient(),
                    ckpt.display()
                ),
            )
        }
        Command::Predict { checkpoint, data, horizon, out: path, truth_out, sparse_split } => {
            let ds = Dataset::load(&data)?;
            let model = Model::load(&checkpoint, Some(&ds.graph()?))?;
            let (t, tau) = (model.config.history, model.config.horizon);
            if horizon.steps() > tau {
                return Err(Error::Config(format!("model forecasts {tau} steps, {horizon} needs {}", horizon.steps())));
            }
            let windows = evaluation_windows(&ds, t, tau, split_ratio(sparse_split))?;
            let forecasts = windows.iter().map(|w| model.predict(w)).collect::<Result<Vec<_>>>()?;
            let points = forecast_points(&windows, &forecasts, &ds.series.station_ids, horizon.steps())?;
            write_points_csv(&path, FORECAST_HEADER, &points)?;
            if let Some(tp) = truth_out {
                write_points_csv(&tp, TRUTH_HEADER, &truth_points(&ds, &windows)?)?;
            }
            say(out, format_args!("{} windows, {} forecast rows ({horizon}) -> {}", windows.len(), points.len(), path.display()))
        }
        Command::Evaluate { pred, truth, sudden_change, city, horizon, out: report_path } => {
            let spec = match (sudden_change, city) {
                (true, Some(City::Beijing)) => Some(SuddenChangeSpec::beijing()),
                (true, Some(City::Shenzhen)) => Some(SuddenChangeSpec::shenzhen()),
                _ => None,
            };
            let label = horizon.map_or("all", Horizon::label);
            let report = evaluate_points(&read_points_csv(&pred)?, &read_points_csv(&truth)?, spec.as_ref(), label)?;
            if let Some(p) = report_path {
                let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Format(e.to_string()))?;
                std::fs::write(&p, text + "\n").map_err(|e| Error::io(&p, e))?;
            }
            let scope = if spec.is_some() { " sudden-change" } else { "" };
            say(out, format_args!("{report}{scope}"))
        }
        Command::Baseline { method, data, out: path, horizon, history, window_horizon, sparse_split } => {
            if horizon.steps() > window_horizon {
                return Err(Error::Config(format!("{horizon} exceeds the {window_horizon}-step window")));
            }
            let ds = Dataset::load(&data)?;
            let ratio = split_ratio(sparse_split);
            let windows = evaluation_windows(&ds, history, window_horizon, ratio)?;
            let forecasts = match method {
                BaselineMethod::Ha => ha_forecasts(&ds, &windows, window_horizon)?,
                BaselineMethod::Var => {
                    let train = training_steps(&ds, history, window_horizon, ratio)?;
                    var_forecasts(&ds, &windows, VAR_LAGS, train, window_horizon)?
                }
            };
            let points = forecast_points(&windows, &forecasts, &ds.series.station_ids, horizon.steps())?;
            write_points_csv(&path, FORECAST_HEADER, &points)?;
            say(out, format_args!("{method:?} baseline: {} windows, {} rows -> {}", windows.len(), points.len(), path.display()))
        }
        Command::Simulate { mode, graph, x0, t, k, out: path } => {
            let w = read_graph(&graph)?;
            let x0 = read_values(&x0)?;
            if x0.len() != w.rows() {
                return Err(Error::dim(format!("{} initial values for a {}-node graph", x0.len(), w.rows())));
            }
            let x = match mode {
                SimMode::Diffusion => simulate_diffusion_reference(&w, &x0, k, t)?,
                SimMode::Advection => simulate_advection_reference(&w, &x0, t)?,
            };
            let mut text = String::from("node,x\n");
            for (i, v) in x.iter().enumerate() {
                text += &format!("{i},{v}\n");
            }
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            let (m0, m1): (f64, f64) = (x0.iter().sum(), x.iter().sum());
            say(out, format_args!("{mode:?} to t = {t}: total mass {m0} -> {m1}"))
        }
        Command::Plot { kind, data, out: path, step, checkpoint, source, k } => {
            let ds = Dataset::load(&data)?;
            let s = &ds.series;
            let step = step.unwrap_or(s.steps() - 1);
            if step >= s.steps() {
                return Err(Error::Data(format!("step {step} outside the {}-step series", s.steps())));
            }
            let n = s.num_stations();
            let graph = ds.graph()?;
            let (values, k) = match checkpoint {
                Some(c) => {
                    let model = Model::load(&c, Some(&graph))?;
                    let history = model.config.history;
                    if step < history {
                        return Err(Error::Data(format!("step {step} has fewer than {history} steps of history")));
                    }
                    let window = crate::data_io::make_windows(s, history, 1, 1)?
                        .into_iter()
                        .nth(step - history)
                        .expect("window exists for an in-range step");
                    (model.predict(&window)?.row(0).to_vec(), model.diffusion_coefficient())
                }
                None => (s.pm25.row(step).to_vec(), k),
            };
            match kind {
                PlotKind::WindHeatmap => {
                    let wd = &s.wind.data()[step * n * 2..(step + 1) * n * 2];
                    let wind: Vec<(f64, f64)> = wd.chunks(2).map(|c| (c[0], c[1])).collect();
                    render_wind_heatmap(&ds.stations, &values, &wind, &path)?;
                }
                PlotKind::DiffusionLines => {
                    let source = source.unwrap_or_else(|| ds.stations[0].id.clone());
                    render_diffusion_lines(&graph, &values, &source, k, &path)?;
                }
            }
            say(out, format_args!("wrote {}", path.display()))
        }
    }
}

/// A graph file is either a stations CSV (inverse-distance weights) or a
/// headerless square matrix of comma-separated numbers.
pub fn read_graph(path: &Path) -> Result<Tensor> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim_start().starts_with("station_id") {
        return Ok(distance_adjacency(parse_stations(text.as_bytes())?)?.weights().clone());
    }
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse { line: i as u64 + 1, msg: e.to_string() })?;
        rows.push(row);
    }
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::dim(format!("graph matrix in {} is not square", path.display())));
    }
    Tensor::matrix(n, n, rows.concat())
}

/// Numbers separated by commas, whitespace or newlines; a non-numeric
/// first line is treated as a header.
pub fn read_values(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split([',', ' ', '\t']).filter(|f| !f.is_empty()).collect();
        let parsed: std::result::Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        match parsed {
            Ok(v) => out.extend(v),
            Err(_) if i == 0 => continue,
            Err(e) => return Err(Error::Parse { line: i as u64 + 1, msg: e.to_string() }),
        }
    }
    Ok(out)
}
