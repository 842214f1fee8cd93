//! Writes the wind heat map and the diffusion-line figure for one step of
//! a synthetic dataset.
//!
//! `cargo run --example figures [out_dir]`

use std::path::PathBuf;

use aqc::eval::{render_diffusion_lines, render_wind_heatmap};
use aqc::synthetic::{generate, SyntheticConfig};

fn main() -> aqc::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| ".".into()));
    let (ds, k) = generate(&SyntheticConfig { steps: 60, ..Default::default() })?;
    let s = &ds.series;
    let step = 30;
    let n = s.num_stations();
    let values = s.pm25.row(step).to_vec();
    let wind: Vec<(f64, f64)> = (0..n).map(|i| (s.wind.data()[(step * n + i) * 2], s.wind.data()[(step * n + i) * 2 + 1])).collect();

    let heat = dir.join("wind_heatmap.svg");
    render_wind_heatmap(&ds.stations, &values, &wind, &heat)?;
    println!("wrote {}", heat.display());

    let lines = dir.join("diffusion_lines.svg");
    let fluxes = render_diffusion_lines(&ds.graph()?, &values, "S01", k, &lines)?;
    println!("wrote {}", lines.display());
    for (to, f) in fluxes {
        println!("  S01 -> {to}: {f:+.4} ug/m3 per step");
    }
    Ok(())
}
