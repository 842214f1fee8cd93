//! Seeded synthetic datasets whose concentrations follow graph diffusion.
//!
//! The series is a chain of episodes. Each episode starts from a fresh
//! uneven concentration profile (a background level plus plumes at a few
//! stations) that then relaxes by diffusion over the inverse-distance
//! graph. Observations carry 1% multiplicative noise. Wind is drawn
//! independently per station and step, so it carries no information about
//! the concentrations.

use chrono::{DateTime, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data_io::{format_timestamp, Dataset, StepSeries, READINGS_HEADER, STEP_HOURS};
use crate::error::{Error, Result};
use crate::geo_graph::{distance_adjacency, Station};
use crate::numcore::Tensor;
use crate::physics::diffusion_trajectory;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub stations: usize,
    /// Number of 3-hour steps.
    pub steps: usize,
    pub seed: u64,
    /// Relative standard deviation of the observation noise.
    pub noise: f64,
    /// Episode lengths are drawn uniformly from this range (steps).
    pub episode_len: (usize, usize),
    /// Diffusion coefficient relative to the mean node degree; the slowest
    /// mode then decays over roughly `1 / relaxation` steps.
    pub relaxation: f64,
    pub background: f64,
    pub plume: f64,
    /// Standard deviation of each wind component, m/s.
    pub wind_std: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            stations: 6,
            steps: 447,
            seed: 7,
            noise: 0.01,
            episode_len: (40, 72),
            relaxation: 0.04,
            background: 30.0,
            plume: 150.0,
            wind_std: 2.0,
        }
    }
}

/// Stations scattered within roughly 40 km of central Beijing.
pub fn synthetic_stations(n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Station>> {
    (0..n)
        .map(|i| {
            let lat = 39.9 + rng.random_range(-0.3..0.3);
            let lon = 116.4 + rng.random_range(-0.4..0.4);
            Station::new(format!("S{:02}", i + 1), lat, lon)
        })
        .collect()
}

pub fn synthetic_start() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).single().expect("valid date")
}

/// Generates a dataset and the diffusion coefficient used.
pub fn generate(cfg: &SyntheticConfig) -> Result<(Dataset, f64)> {
    if cfg.stations < 2 || cfg.steps == 0 || cfg.episode_len.0 == 0 || cfg.episode_len.0 > cfg.episode_len.1 {
        return Err(Error::Config("synthetic config needs ≥ 2 stations, steps > 0 and a valid episode range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let stations = synthetic_stations(cfg.stations, &mut rng)?;
    let graph = distance_adjacency(stations.clone())?;
    let n = cfg.stations;
    let w = graph.weights();
    let mean_degree = (0..n).map(|i| w.row(i).iter().sum::<f64>()).sum::<f64>() / n as f64;
    let k = cfg.relaxation / mean_degree;

    let mut clean: Vec<Vec<f64>> = Vec::with_capacity(cfg.steps);
    while clean.len() < cfg.steps {
        let len = rng.random_range(cfg.episode_len.0..=cfg.episode_len.1).min(cfg.steps - clean.len());
        let mut x0: Vec<f64> = (0..n).map(|_| cfg.background * rng.random_range(0.6..1.4)).collect();
        let plumes = rng.random_range(1..=n.div_ceil(2));
        for _ in 0..plumes {
            let i = rng.random_range(0..n);
            x0[i] += cfg.plume * rng.random_range(0.3..1.0);
        }
        clean.push(x0.clone());
        if len > 1 {
            let times: Vec<f64> = (1..len).map(|t| t as f64).collect();
            clean.extend(diffusion_trajectory(w, &x0, k, &times)?);
        }
    }

    let noise = Normal::new(0.0, cfg.noise).map_err(|e| Error::Config(e.to_string()))?;
    let wind_dist = Normal::new(0.0, cfg.wind_std).map_err(|e| Error::Config(e.to_string()))?;
    let mut pm = Vec::with_capacity(cfg.steps * n);
    let mut wind = Vec::with_capacity(cfg.steps * n * 2);
    for row in &clean {
        for x in row {
            pm.push((x * (1.0 + noise.sample(&mut rng))).max(0.0));
            wind.push(wind_dist.sample(&mut rng));
            wind.push(wind_dist.sample(&mut rng));
        }
    }
    let series = StepSeries {
        start: synthetic_start(),
        station_ids: stations.iter().map(|s| s.id.clone()).collect(),
        pm25: Tensor::matrix(cfg.steps, n, pm)?,
        wind: Tensor::new(vec![cfg.steps, n, 2], wind)?,
    };
    Ok((Dataset { stations, series, dropped_hours: 0 }, k))
}

/// Hourly readings CSV for a 3-hour series: each step is written as three
/// identical hourly rows. Every `gap_every`-th row (if non-zero) has its
/// PM2.5 left empty.
pub fn readings_csv(dataset: &Dataset, gap_every: usize) -> String {
    let s = &dataset.series;
    let mut out = READINGS_HEADER.join(",") + "\n";
    let mut row = 0usize;
    for t in 0..s.steps() {
        for h in 0..STEP_HOURS {
            let time = s.time_of(t) + chrono::Duration::hours(h);
            for (i, id) in s.station_ids.iter().enumerate() {
                row += 1;
                let pm = s.pm25.get(t, i);
                let (u, v) = (s.wind.data()[(t * s.num_stations() + i) * 2], s.wind.data()[(t * s.num_stations() + i) * 2 + 1]);
                let speed = u.hypot(v);
                let mut dir = (-u).atan2(-v).to_degrees();
                if dir < 0.0 {
                    dir += 360.0;
                }
                if dir >= 360.0 {
                    dir -= 360.0;
                }
                let pm = if gap_every > 0 && row % gap_every == 0 { String::new() } else { format!("{pm}") };
                out += &format!("{},{id},{pm},{speed},{dir}\n", format_timestamp(time));
            }
        }
    }
    out
}
