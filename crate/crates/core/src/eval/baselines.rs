//! Classical baselines: historical average and vector autoregression.

use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// 3-hour steps per day.
pub const STEPS_PER_DAY: usize = 8;
/// Days averaged by the historical-average baseline.
pub const HA_DAYS: usize = 4;

/// Historical average: each target step `f + k` is predicted by the mean
/// of the same time of day on the four most recent days strictly before
/// the forecast origin `f`. `series` is `[steps, N]`.
pub fn ha_forecast(series: &Tensor, forecast_start: usize, horizon: usize) -> Result<Tensor> {
    if series.rank() != 2 {
        return Err(Error::Dimension(format!("series must be [steps, N], got {:?}", series.shape())));
    }
    let n = series.cols();
    let mut out = Vec::with_capacity(horizon * n);
    for k in 0..horizon {
        let target = forecast_start + k;
        // most recent same-slot step before the origin, then whole days back
        let back = (k / STEPS_PER_DAY + 1) * STEPS_PER_DAY;
        let needed = back + STEPS_PER_DAY * (HA_DAYS - 1);
        if target < needed || target - back >= series.rows() {
            return Err(Error::Data(format!(
                "historical average at step {target} needs {HA_DAYS} days of history before step {forecast_start}"
            )));
        }
        let latest = target - back;
        for i in 0..n {
            let sum: f64 = (0..HA_DAYS).map(|d| series.get(latest - d * STEPS_PER_DAY, i)).sum();
            out.push(sum / HA_DAYS as f64);
        }
    }
    Tensor::matrix(horizon, n, out)
}

/// VAR(p) with intercept: `y_t = c + Σ_{l=1..p} A_l y_{t−l}`.
#[derive(Clone, Debug, PartialEq)]
pub struct VarModel {
    pub lags: usize,
    /// `(1 + p·N) × N`; row 0 is the intercept, then lag-1 rows, lag-2 rows…
    pub coef: Tensor,
    /// Ridge actually applied to the normal equations.
    pub ridge: f64,
}

/// Ridge added when the normal equations are (near) singular.
pub const VAR_RIDGE: f64 = 1e-6;

fn cholesky_solve(a: &[f64], b: &[f64], m: usize, k: usize) -> Option<Vec<f64>> {
    let max_diag = (0..m).map(|i| a[i * m + i].abs()).fold(0.0, f64::max);
    let tol = 1e-12 * max_diag.max(f64::MIN_POSITIVE);
    let mut l = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..=i {
            let s: f64 = a[i * m + j] - (0..j).map(|p| l[i * m + p] * l[j * m + p]).sum::<f64>();
            if i == j {
                if !(s > tol) {
                    return None;
                }
                l[i * m + i] = s.sqrt();
            } else {
                l[i * m + j] = s / l[j * m + j];
            }
        }
    }
    let mut x = b.to_vec();
    for c in 0..k {
        for i in 0..m {
            let s: f64 = (0..i).map(|p| l[i * m + p] * x[p * k + c]).sum();
            x[i * k + c] = (x[i * k + c] - s) / l[i * m + i];
        }
        for i in (0..m).rev() {
            let s: f64 = (i + 1..m).map(|p| l[p * m + i] * x[p * k + c]).sum();
            x[i * k + c] = (x[i * k + c] - s) / l[i * m + i];
        }
    }
    Some(x)
}

fn design_row(series: &Tensor, t: usize, lags: usize) -> Vec<f64> {
    let mut row = vec![1.0];
    for l in 1..=lags {
        row.extend_from_slice(series.row(t - l));
    }
    row
}

/// Least-squares VAR fit via the normal equations. With `ridge_fallback`
/// a ridge of [`VAR_RIDGE`] is added when they are near singular; without
/// it a singular system is a numeric error.
pub fn var_fit(series: &Tensor, lags: usize, ridge_fallback: bool) -> Result<VarModel> {
    if series.rank() != 2 || lags == 0 {
        return Err(Error::Dimension(format!("VAR({lags}) on series {:?}", series.shape())));
    }
    let (s, n) = (series.rows(), series.cols());
    if s <= lags {
        return Err(Error::Data(format!("VAR({lags}) needs more than {lags} steps, got {s}")));
    }
    let m = 1 + lags * n;
    let mut xtx = vec![0.0; m * m];
    let mut xty = vec![0.0; m * n];
    for t in lags..s {
        let x = design_row(series, t, lags);
        let y = series.row(t);
        for i in 0..m {
            for j in 0..m {
                xtx[i * m + j] += x[i] * x[j];
            }
            for j in 0..n {
                xty[i * n + j] += x[i] * y[j];
            }
        }
    }
    if let Some(coef) = cholesky_solve(&xtx, &xty, m, n) {
        return Ok(VarModel { lags, coef: Tensor::matrix(m, n, coef)?, ridge: 0.0 });
    }
    if !ridge_fallback {
        return Err(Error::Numeric("VAR normal equations are singular".into()));
    }
    for i in 0..m {
        xtx[i * m + i] += VAR_RIDGE;
    }
    let coef = cholesky_solve(&xtx, &xty, m, n)
        .ok_or_else(|| Error::Numeric("VAR normal equations singular even with ridge".into()))?;
    Ok(VarModel { lags, coef: Tensor::matrix(m, n, coef)?, ridge: VAR_RIDGE })
}

impl VarModel {
    /// Recursive multi-step forecast from the last `lags` rows of `history`.
    pub fn forecast(&self, history: &Tensor, horizon: usize) -> Result<Tensor> {
        let n = self.coef.cols();
        if history.rank() != 2 || history.cols() != n || history.rows() < self.lags {
            return Err(Error::Dimension(format!(
                "VAR({}) forecast needs at least {} rows of {n} stations, got {:?}",
                self.lags,
                self.lags,
                history.shape()
            )));
        }
        let mut rows: Vec<Vec<f64>> = (history.rows() - self.lags..history.rows())
            .map(|r| history.row(r).to_vec())
            .collect();
        let mut out = Vec::with_capacity(horizon * n);
        for _ in 0..horizon {
            let mut x = vec![1.0];
            for l in 1..=self.lags {
                x.extend_from_slice(&rows[rows.len() - l]);
            }
            let y: Vec<f64> = (0..n)
                .map(|j| x.iter().enumerate().map(|(i, xi)| xi * self.coef.get(i, j)).sum())
                .collect();
            out.extend_from_slice(&y);
            rows.push(y);
        }
        Tensor::matrix(horizon, n, out)
    }

    /// Coefficient matrix `A_l` (N×N, row = target station).
    pub fn lag_matrix(&self, lag: usize) -> Tensor {
        let n = self.coef.cols();
        let mut a = vec![0.0; n * n];
        for src in 0..n {
            for dst in 0..n {
                a[dst * n + src] = self.coef.get(1 + (lag - 1) * n + src, dst);
            }
        }
        Tensor::from_parts_unchecked(vec![n, n], a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ha_same_slot_mean() {
        // 5 days of one station; slot 3 takes 10, 20, 30, 40 on days 1..4
        let mut v = vec![0.0; 5 * 8];
        for (d, x) in [10.0, 20.0, 30.0, 40.0].iter().enumerate() {
            v[d * 8 + 3] = *x;
        }
        let s = Tensor::matrix(40, 1, v).unwrap();
        let f = ha_forecast(&s, 32, 8).unwrap();
        assert_eq!(f.get(3, 0), 25.0);
    }

    #[test]
    fn ha_periodic_signal_is_exact() {
        let day: Vec<f64> = (0..8).map(|i| 10.0 + i as f64).collect();
        let v: Vec<f64> = (0..6).flat_map(|_| day.clone()).collect();
        let s = Tensor::matrix(48, 1, v).unwrap();
        let f = ha_forecast(&s, 32, 16).unwrap();
        for k in 0..16 {
            assert_eq!(f.get(k, 0), day[k % 8]);
        }
        assert!(matches!(ha_forecast(&s, 31, 8), Err(Error::Data(_))));
    }

    #[test]
    fn var_constant_series() {
        let s = Tensor::full(vec![50, 2], 7.0);
        assert!(matches!(var_fit(&s, 3, false), Err(Error::Numeric(_))));
        let m = var_fit(&s, 3, true).unwrap();
        assert_eq!(m.ridge, VAR_RIDGE);
        let f = m.forecast(&s, 5).unwrap();
        assert!(f.data().iter().all(|v| (v - 7.0).abs() < 1e-6), "{f:?}");
    }
}
