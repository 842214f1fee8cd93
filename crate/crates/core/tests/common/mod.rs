//! Helpers shared by the integration tests. Each test binary uses a
//! different subset.
#![allow(dead_code)]

use aqc::data_io::{Dataset, DatasetSplit, StepSeries, WindowSample};
use aqc::model::{Model, ModelConfig};
use aqc::numcore::Tensor;
use aqc::ode::{dopri5_integrate, fixed_step_integrate, Method, SolverConfig, TimeGrid};
use aqc::synthetic::{generate, SyntheticConfig};
use chrono::{TimeZone, Utc};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn to_dmatrix(t: &Tensor) -> DMatrix<f64> {
    DMatrix::from_row_slice(t.rows(), t.cols(), t.data())
}

/// Random symmetric nonnegative weights with a zero diagonal; each edge
/// is present with probability `density`.
pub fn random_weights(rng: &mut ChaCha8Rng, n: usize, density: f64) -> Tensor {
    let mut w = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(density) {
                let v = rng.random_range(0.05..2.0);
                w[i * n + j] = v;
                w[j * n + i] = v;
            }
        }
    }
    Tensor::matrix(n, n, w).unwrap()
}

/// Dense `exp(A·t)·x0` via nalgebra.
pub fn expm_apply(a: &DMatrix<f64>, t: f64, x0: &[f64]) -> Vec<f64> {
    let e = (a * t).exp();
    (e * nalgebra::DVector::from_column_slice(x0)).iter().copied().collect()
}

/// Small model configuration for gradient and behaviour tests.
pub fn toy_config(history: usize, horizon: usize, latent_dim: usize) -> ModelConfig {
    ModelConfig {
        history,
        horizon,
        latent_dim,
        gru_hidden: 6,
        head_hidden: 7,
        flow_hidden: 4,
        cheb_order: 3,
        cheb_layers: 2,
        seed: 11,
        ..Default::default()
    }
}

/// Synthetic diffusion data with `stations` nodes and `steps` 3-hour steps.
pub fn synthetic(stations: usize, steps: usize, seed: u64) -> Dataset {
    generate(&SyntheticConfig { stations, steps, seed, ..Default::default() }).unwrap().0
}

/// Like [`synthetic`] without observation noise.
pub fn synthetic_clean(stations: usize, steps: usize, seed: u64) -> Dataset {
    generate(&SyntheticConfig { stations, steps, seed, noise: 0.0, ..Default::default() }).unwrap().0
}

/// A model with normalization fitted on `split` and its first training window.
pub fn toy_model(config: ModelConfig, dataset: &Dataset, split: &DatasetSplit) -> (Model, WindowSample) {
    let mut model = Model::new(config, &dataset.graph().unwrap()).unwrap();
    model.set_norm(split.norm);
    (model, split.train[0].clone())
}

pub fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

/// Train/val/test counts for `n` windows: each of the first two parts is
/// the largest count within its share, the test part takes the rest.
pub fn oracle_split(n: usize, (a, b, c): (usize, usize, usize)) -> (usize, usize, usize) {
    let total = a + b + c;
    let largest = |share: usize| (0..=n).rev().find(|k| k * total <= share * n).unwrap();
    let (train, val) = (largest(a), largest(b));
    (train, val, n - train - val)
}

/// Straight-line imputation rule: mean of the observed values in the
/// preceding 24 entries, else the last observation, else `leading`.
pub fn oracle_impute(values: &[Option<f64>], leading: f64) -> Vec<f64> {
    let mut out = Vec::new();
    for t in 0..values.len() {
        if let Some(v) = values[t] {
            out.push(v);
            continue;
        }
        let lo = t.saturating_sub(24);
        let mut sum = 0.0;
        let mut count = 0;
        for v in values[lo..t].iter().flatten() {
            sum += v;
            count += 1;
        }
        if count > 0 {
            out.push(sum / count as f64);
        } else if let Some(prev) = (0..t).rev().find_map(|u| values[u]) {
            out.push(prev);
        } else {
            out.push(leading);
        }
    }
    out
}

pub fn random_series(r: &mut ChaCha8Rng, steps: usize, n: usize) -> StepSeries {
    StepSeries {
        start: Utc.with_ymd_and_hms(2020, 3, 1, 0, 0, 0).unwrap(),
        station_ids: (0..n).map(|i| format!("s{i}")).collect(),
        pm25: Tensor::matrix(steps, n, (0..steps * n).map(|_| r.random_range(0.0..300.0)).collect()).unwrap(),
        wind: Tensor::new(vec![steps, n, 2], (0..steps * n * 2).map(|_| r.random_range(-5.0..5.0)).collect()).unwrap(),
    }
}

fn decay(_: f64, z: &Vec<f64>) -> aqc::Result<Vec<f64>> {
    Ok(z.iter().map(|v| -v).collect())
}

/// Least-squares slope of log error against log step size for
/// `dz/dt = −z` on [0, 1].
pub fn convergence_slope(method: Method, steps: &[usize]) -> f64 {
    let grid = TimeGrid::new(vec![0.0, 1.0]).unwrap();
    let exact = (-1.0f64).exp();
    let pts: Vec<(f64, f64)> = steps
        .iter()
        .map(|&n| {
            let z = fixed_step_integrate(decay, vec![1.0], &grid, method, n).unwrap();
            ((1.0 / n as f64).ln(), (z[0][0] - exact).abs().ln())
        })
        .collect();
    let m = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mx, my) = (sx / m, sy / m);
    let num: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let den: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    num / den
}

/// Dormand–Prince solution of `dz/dt = −z` at t = 1.
pub fn dopri5_decay(tol: f64) -> f64 {
    let grid = TimeGrid::new(vec![0.0, 1.0]).unwrap();
    let (z, _) = dopri5_integrate(decay, vec![1.0], &grid, &SolverConfig::with_tolerance(tol)).unwrap();
    z[0][0]
}

/// Largest deviation of dopri5 from `exp(A t) x0` over random 3×3 systems.
pub fn dopri5_linear_error(seed: u64, systems: usize, tol: f64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..systems {
        let a: Vec<f64> = (0..9).map(|_| r.random_range(-1.0..1.0)).collect();
        let x0: Vec<f64> = (0..3).map(|_| r.random_range(-2.0..2.0)).collect();
        let am = DMatrix::from_row_slice(3, 3, &a);
        let times = vec![0.0, 0.5, 1.0, 2.0];
        let grid = TimeGrid::new(times.clone()).unwrap();
        let field = |_: f64, z: &Vec<f64>| -> aqc::Result<Vec<f64>> {
            Ok((0..3).map(|i| (0..3).map(|j| a[i * 3 + j] * z[j]).sum()).collect())
        };
        let (zs, _) = dopri5_integrate(field, x0.clone(), &grid, &SolverConfig::with_tolerance(tol)).unwrap();
        for (z, t) in zs.iter().zip(&times[1..]) {
            let want = expm_apply(&am, *t, &x0);
            for (p, q) in z.iter().zip(&want) {
                worst = worst.max((p - q).abs());
            }
        }
    }
    worst
}
