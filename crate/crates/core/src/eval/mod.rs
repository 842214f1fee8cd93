//! Evaluation: error metrics, the sudden-change protocol, classical
//! baselines and SVG figures.

pub mod baselines;
pub mod figures;
pub mod forecast;
pub mod metrics;

pub use baselines::{ha_forecast, var_fit, VarModel, HA_DAYS, STEPS_PER_DAY};
pub use figures::{
    diffusion_fluxes, diffusion_lines_svg, render_diffusion_lines, render_wind_heatmap, wind_heatmap_svg,
};
pub use metrics::{
    compute_metrics, compute_metrics_masked, sudden_change_mask, Horizon, MetricsReport, SuddenChangeSpec,
};
pub use forecast::{
    evaluate_points, evaluation_windows, read_points_csv, write_points_csv, PointValue, FORECAST_HEADER, TRUTH_HEADER,
};
