//! Writes a synthetic `stations.csv` and hourly `readings.csv` that the
//! command-line pipeline can ingest.
//!
//! Run with `cargo run --example synthetic_fixture [out_dir] [gap_every]`.
//! Every `gap_every`-th reading has its PM2.5 left blank (default 17).

use std::path::PathBuf;

use aqc::geo_graph::write_stations_csv;
use aqc::synthetic::{generate, readings_csv, SyntheticConfig};

fn main() -> aqc::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "fixture".into()));
    let gap_every: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(17);
    std::fs::create_dir_all(&dir).map_err(|e| aqc::Error::Io { path: dir.clone(), source: e })?;

    let (dataset, k) = generate(&SyntheticConfig::default())?;
    write_stations_csv(dir.join("stations.csv"), &dataset.stations)?;
    let readings = dir.join("readings.csv");
    std::fs::write(&readings, readings_csv(&dataset, gap_every))
        .map_err(|e| aqc::Error::Io { path: readings.clone(), source: e })?;
    println!(
        "{} stations, {} three-hour steps, generating k = {k:.4} -> {}",
        dataset.stations.len(),
        dataset.series.steps(),
        dir.display()
    );
    Ok(())
}
