//! Historical-average and VAR(3) forecasts on the test windows, scored
//! overall and on sudden-change points.

use aqc::eval::{compute_metrics, compute_metrics_masked, ha_forecast, sudden_change_mask, var_fit, Horizon, SuddenChangeSpec};
use aqc::numcore::Tensor;
use aqc::synthetic::{generate, SyntheticConfig};

fn main() -> aqc::Result<()> {
    let (ds, _) = generate(&SyntheticConfig::default())?;
    let pm = &ds.series.pm25;
    let n = pm.cols();
    let split = ds.split(24, 24, (7, 1, 2))?;
    let train_end = split.train.last().map(|w| w.start + 48).unwrap_or(0);
    let var = var_fit(&Tensor::matrix(train_end, n, pm.data()[..train_end * n].to_vec())?, 3, true)?;

    let truths: Vec<_> = split.test.iter().map(|w| w.x_future.clone()).collect();
    let ha: Vec<_> = split.test.iter().map(|w| ha_forecast(pm, w.forecast_start(), 24)).collect::<aqc::Result<_>>()?;
    let vf: Vec<_> = split.test.iter().map(|w| var.forecast(&w.x_hist, 24)).collect::<aqc::Result<_>>()?;

    // a point counts as a sudden change if the next step jumps; the mask
    // is computed on the whole series and cut per window
    let spec = SuddenChangeSpec::beijing();
    let full = sudden_change_mask(pm, &spec)?;
    let masks: Vec<Vec<bool>> = split
        .test
        .iter()
        .map(|w| full[w.forecast_start() * n..(w.forecast_start() + 24) * n].to_vec())
        .collect();

    for h in [Horizon::H24, Horizon::H48, Horizon::H72] {
        for (name, preds) in [("HA", &ha), ("VAR(3)", &vf)] {
            let all = compute_metrics(preds, &truths, h.steps(), h.label())?;
            let sc = compute_metrics_masked(preds, &truths, &masks, h.steps(), h.label())?;
            println!("{name:<7} {all}\n        sudden change: mae={:.4} points={}", sc.mae, sc.n_points);
        }
    }
    Ok(())
}
