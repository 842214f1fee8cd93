//! Trains the forecaster on a synthetic diffusion dataset and compares it
//! with the historical-average baseline on the test windows.
//!
//! Run with `cargo run --release --example train_synthetic [epochs]`.

use std::time::Instant;

use aqc::eval::{compute_metrics, ha_forecast};
use aqc::model::{Model, ModelConfig};
use aqc::physics::GateMode;
use aqc::synthetic::{generate, SyntheticConfig};
use aqc::train::{train_loop, TrainConfig};

fn main() -> aqc::Result<()> {
    let epochs: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(10);
    let (dataset, k_true) = generate(&SyntheticConfig::default())?;
    let graph = dataset.graph()?;
    let split = dataset.split(24, 24, (7, 1, 2))?;
    println!(
        "windows: {} train / {} val / {} test; generating k = {k_true:.4}",
        split.train.len(),
        split.val.len(),
        split.test.len()
    );

    let truths: Vec<_> = split.test.iter().map(|w| w.x_future.clone()).collect();
    let ha: Vec<_> = split
        .test
        .iter()
        .map(|w| ha_forecast(&dataset.series.pm25, w.forecast_start(), 24))
        .collect::<aqc::Result<_>>()?;
    let ha_report = compute_metrics(&ha, &truths, 24, "72h")?;
    println!("HA          {ha_report}");

    for gate in [GateMode::Learned, GateMode::DiffusionOnly, GateMode::AdvectionOnly] {
        let config = ModelConfig { gate, ..Default::default() };
        let mut model = Model::new(config, &graph)?;
        let cfg = TrainConfig {
            lr0: 5e-3,
            max_epochs: epochs,
            patience: epochs,
            decay_steps: vec![],
            ..Default::default()
        };
        let t0 = Instant::now();
        let report = train_loop(&mut model, &split, &cfg, None)?;
        let elapsed = t0.elapsed().as_secs_f64();
        for e in &report.epochs {
            println!("  epoch {:>3} train {:.4} val {:.4}", e.epoch, e.train_mae, e.val_mae);
        }
        let preds: Vec<_> = split.test.iter().map(|w| model.predict(w)).collect::<aqc::Result<_>>()?;
        let r = compute_metrics(&preds, &truths, 24, "72h")?;
        println!("{gate:?} {r} k = {:.4} ({elapsed:.1} s)", model.diffusion_coefficient());
    }
    Ok(())
}
