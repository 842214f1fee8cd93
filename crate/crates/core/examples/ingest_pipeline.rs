//! Hourly readings with gaps -> imputation -> 3-hour steps -> windows and
//! chronological splits.

use aqc::data_io::{parse_readings, Dataset};
use aqc::synthetic::{generate, readings_csv, SyntheticConfig};

fn main() -> aqc::Result<()> {
    let (source, _) = generate(&SyntheticConfig { steps: 120, ..Default::default() })?;
    // blank every 11th PM2.5 reading
    let text = readings_csv(&source, 11);
    let grid = parse_readings(text.as_bytes(), &source.stations)?;
    println!("hourly grid: {} hours x {} stations, {} missing PM2.5", grid.hours(), source.stations.len(), grid.missing_pm25());

    let ds = Dataset::from_grid(source.stations.clone(), &grid, 0.7)?;
    println!("3-hour series: {} steps ({} trailing hours dropped)", ds.series.steps(), ds.dropped_hours);
    let err = ds.series.pm25.max_abs_diff(&source.series.pm25);
    println!("largest deviation from the gap-free series: {err:.3} ug/m3");

    for ratio in [(7, 1, 2), (3, 1, 6)] {
        let split = ds.split(24, 24, ratio)?;
        println!(
            "split {ratio:?}: {} / {} / {} windows, train mean {:.2} std {:.2}",
            split.train.len(),
            split.val.len(),
            split.test.len(),
            split.norm.mean,
            split.norm.std
        );
    }
    Ok(())
}
