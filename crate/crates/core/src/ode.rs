//! Explicit integrators for `dz/dt = f(t, z)`.
//!
//! Fixed-step Euler and RK4 unroll every stage through the state type, so
//! when the state is a [`Var`] the whole trajectory is differentiable.
//! Dormand–Prince 5(4) adapts its step size from the embedded error
//! estimate and is used for inference.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Var;
use crate::physics::BoundDe;

/// State vector an integrator can advance.
pub trait OdeState: Clone {
    /// `Σ cᵢ·xᵢ`; every term has the same shape.
    fn lincomb(terms: &[(f64, &Self)]) -> Result<Self>;

    /// Flat copy of the current values, used for error control.
    fn values(&self) -> Vec<f64>;
}

impl OdeState for Vec<f64> {
    fn lincomb(terms: &[(f64, &Self)]) -> Result<Self> {
        let n = terms.first().map_or(0, |(_, v)| v.len());
        let mut out = vec![0.0; n];
        for (c, v) in terms {
            if v.len() != n {
                return Err(Error::Dimension(format!(
                    "state lengths {} and {} differ",
                    n,
                    v.len()
                )));
            }
            for (o, x) in out.iter_mut().zip(v.iter()) {
                *o += c * x;
            }
        }
        if let Some(i) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("state component {i} is {}", out[i])));
        }
        Ok(out)
    }

    fn values(&self) -> Vec<f64> {
        self.clone()
    }
}

impl<'t> OdeState for Var<'t> {
    fn lincomb(terms: &[(f64, &Self)]) -> Result<Self> {
        let (_, first) = terms
            .first()
            .ok_or_else(|| Error::Contract("empty linear combination".into()))?;
        let owned: Vec<(f64, Var<'t>)> = terms.iter().map(|(c, v)| (*c, **v)).collect();
        first.tape().lincomb(&owned)
    }

    fn values(&self) -> Vec<f64> {
        self.with_value(|t| t.data().to_vec())
    }
}

/// Output times `t_0 < t_1 < … < t_τ`, with `t_0 = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::Contract("time grid needs at least two points".into()));
        }
        if times[0] != 0.0 {
            return Err(Error::Contract(format!("time grid must start at 0, got {}", times[0])));
        }
        if times.windows(2).any(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
            return Err(Error::Contract("time grid must be strictly increasing".into()));
        }
        Ok(TimeGrid { times })
    }

    /// `0, 1, …, steps` in units of one sampling interval.
    pub fn uniform(steps: usize) -> Result<Self> {
        TimeGrid::new((0..=steps).map(|i| i as f64).collect())
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Number of output points after `t_0`.
    pub fn horizon(&self) -> usize {
        self.times.len() - 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Euler,
    Rk4,
    Dopri5,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub method: Method,
    pub rtol: f64,
    pub atol: f64,
    /// First trial step, in grid units.
    pub h_init: f64,
    pub max_steps: usize,
    pub safety: f64,
    pub factor_min: f64,
    pub factor_max: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            method: Method::Dopri5,
            rtol: 1e-5,
            atol: 1e-5,
            h_init: 0.1,
            max_steps: 100_000,
            safety: 0.9,
            factor_min: 0.2,
            factor_max: 10.0,
        }
    }
}

impl SolverConfig {
    pub fn with_tolerance(tol: f64) -> Self {
        SolverConfig {
            rtol: tol,
            atol: tol,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(Error::Config(format!(
                "tolerances must be positive (rtol {}, atol {})",
                self.rtol, self.atol
            )));
        }
        if !(self.factor_min < 1.0 && self.factor_max > 1.0 && self.factor_min > 0.0) {
            return Err(Error::Config(format!(
                "step factors need 0 < factor_min < 1 < factor_max, got {} and {}",
                self.factor_min, self.factor_max
            )));
        }
        if !(self.h_init > 0.0) || self.max_steps == 0 {
            return Err(Error::Config("h_init and max_steps must be positive".into()));
        }
        if !(self.safety > 0.0 && self.safety <= 1.0) {
            return Err(Error::Config(format!("safety factor {} outside (0, 1]", self.safety)));
        }
        Ok(())
    }
}

/// Step bookkeeping from an adaptive solve.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SolveStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
    /// Accepted steps inside each grid interval.
    pub accepted_per_interval: Vec<usize>,
}

fn at_step(step: usize, t: f64) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite(m) => Error::Numeric(format!("non-finite state at step {step} (t = {t}): {m}")),
        other => other,
    }
}

/// Classic explicit Euler or RK4 with `substeps` equal steps per grid
/// interval. Returns the states at `t_1 … t_τ`.
pub fn fixed_step_integrate<S, F>(
    mut f: F,
    z0: S,
    grid: &TimeGrid,
    method: Method,
    substeps: usize,
) -> Result<Vec<S>>
where
    S: OdeState,
    F: FnMut(f64, &S) -> Result<S>,
{
    if substeps == 0 {
        return Err(Error::Contract("substeps must be at least 1".into()));
    }
    let mut z = z0;
    let mut out = Vec::with_capacity(grid.horizon());
    let mut step = 0;
    for w in grid.times().windows(2) {
        let h = (w[1] - w[0]) / substeps as f64;
        for s in 0..substeps {
            let t = w[0] + s as f64 * h;
            let wrap = at_step(step, t);
            z = match method {
                Method::Euler => {
                    let k1 = f(t, &z).map_err(&wrap)?;
                    S::lincomb(&[(1.0, &z), (h, &k1)]).map_err(&wrap)?
                }
                Method::Rk4 => {
                    let k1 = f(t, &z).map_err(&wrap)?;
                    let y = S::lincomb(&[(1.0, &z), (h / 2.0, &k1)]).map_err(&wrap)?;
                    let k2 = f(t + h / 2.0, &y).map_err(&wrap)?;
                    let y = S::lincomb(&[(1.0, &z), (h / 2.0, &k2)]).map_err(&wrap)?;
                    let k3 = f(t + h / 2.0, &y).map_err(&wrap)?;
                    let y = S::lincomb(&[(1.0, &z), (h, &k3)]).map_err(&wrap)?;
                    let k4 = f(t + h, &y).map_err(&wrap)?;
                    S::lincomb(&[
                        (1.0, &z),
                        (h / 6.0, &k1),
                        (h / 3.0, &k2),
                        (h / 3.0, &k3),
                        (h / 6.0, &k4),
                    ])
                    .map_err(&wrap)?
                }
                Method::Dopri5 => {
                    return Err(Error::Config(
                        "dopri5 is adaptive; use dopri5_integrate".into(),
                    ))
                }
            };
            step += 1;
        }
        out.push(z.clone());
    }
    Ok(out)
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A2: [f64; 1] = [1.0 / 5.0];
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0];
const A6: [f64; 5] = [
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
];
/// Fifth-order weights (also the last stage row, FSAL).
const B5: [f64; 6] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
];
/// Difference between fifth- and embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

fn stage<S: OdeState>(y: &S, h: f64, coeffs: &[f64], ks: &[S]) -> Result<S> {
    let mut terms: Vec<(f64, &S)> = vec![(1.0, y)];
    for (c, k) in coeffs.iter().zip(ks) {
        if *c != 0.0 {
            terms.push((h * c, k));
        }
    }
    S::lincomb(&terms)
}

/// Adaptive Dormand–Prince 5(4). The step is clipped so the solution lands
/// exactly on every grid time; no dense output is used.
pub fn dopri5_integrate<S, F>(
    mut f: F,
    z0: S,
    grid: &TimeGrid,
    cfg: &SolverConfig,
) -> Result<(Vec<S>, SolveStats)>
where
    S: OdeState,
    F: FnMut(f64, &S) -> Result<S>,
{
    cfg.validate()?;
    let mut stats = SolveStats::default();
    let mut out = Vec::with_capacity(grid.horizon());
    let mut t = grid.times()[0];
    let mut y = z0;
    let mut h = cfg.h_init;
    let mut attempts = 0usize;
    let mut k1 = f(t, &y).map_err(at_step(0, t))?;
    stats.evaluations += 1;

    for &target in &grid.times()[1..] {
        let mut in_interval = 0;
        while t < target {
            if attempts >= cfg.max_steps {
                return Err(Error::Numeric(format!(
                    "dopri5 exceeded {} steps at t = {t}, h = {h:e}",
                    cfg.max_steps
                )));
            }
            attempts += 1;
            let remaining = target - t;
            let last = h >= remaining;
            let h_try = if last { remaining } else { h };
            let wrap = at_step(attempts, t);

            let y2 = stage(&y, h_try, &A2, std::slice::from_ref(&k1)).map_err(&wrap)?;
            let k2 = f(t + C[1] * h_try, &y2).map_err(&wrap)?;
            let mut ks = vec![k1.clone(), k2];
            for (row, c) in [(&A3[..], C[2]), (&A4[..], C[3]), (&A5[..], C[4]), (&A6[..], C[5])] {
                let yi = stage(&y, h_try, row, &ks).map_err(&wrap)?;
                ks.push(f(t + c * h_try, &yi).map_err(&wrap)?);
            }
            let y_new = stage(&y, h_try, &B5, &ks).map_err(&wrap)?;
            let t_new = if last { target } else { t + h_try };
            let k7 = f(t_new, &y_new).map_err(&wrap)?;
            stats.evaluations += 6;
            ks.push(k7);

            let y_old_v = y.values();
            let y_new_v = y_new.values();
            let kv: Vec<Vec<f64>> = ks.iter().map(OdeState::values).collect();
            let n = y_old_v.len().max(1);
            let mut sq = 0.0;
            for c in 0..y_old_v.len() {
                let err: f64 = h_try * (0..7).map(|i| E[i] * kv[i][c]).sum::<f64>();
                let sc = cfg.atol + cfg.rtol * y_old_v[c].abs().max(y_new_v[c].abs());
                sq += (err / sc).powi(2);
            }
            let norm = (sq / n as f64).sqrt();
            if !norm.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite error estimate at t = {t}, h = {h_try:e}"
                )));
            }
            let factor = if norm == 0.0 {
                cfg.factor_max
            } else {
                (cfg.safety * norm.powf(-0.2)).clamp(cfg.factor_min, cfg.factor_max)
            };
            if norm <= 1.0 {
                t = t_new;
                y = y_new;
                k1 = ks.pop().expect("seven stages");
                stats.accepted += 1;
                in_interval += 1;
                // a clipped final step says nothing about the natural step size
                h = if last { h.max(h_try * factor) } else { h_try * factor };
            } else {
                stats.rejected += 1;
                h = h_try * factor.min(1.0);
            }
        }
        stats.accepted_per_interval.push(in_interval);
        out.push(y.clone());
    }
    Ok((out, stats))
}

/// Latent trajectory at `t_1 … t_τ` for a bound derivative.
///
/// Training unrolls RK4 with `train_substeps` steps per interval so the
/// tape sees every stage; inference uses adaptive Dormand–Prince with `cfg`.
pub fn ode_solve<'t>(
    de: &BoundDe<'t>,
    z0: Var<'t>,
    grid: &TimeGrid,
    cfg: &SolverConfig,
    mode: Mode,
    train_substeps: usize,
) -> Result<Vec<Var<'t>>> {
    let f = |t: f64, z: &Var<'t>| de.eval(t, z);
    match mode {
        Mode::Train => fixed_step_integrate(f, z0, grid, Method::Rk4, train_substeps),
        Mode::Infer => Ok(dopri5_integrate(f, z0, grid, cfg)?.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay(_: f64, z: &Vec<f64>) -> Result<Vec<f64>> {
        Ok(z.iter().map(|v| -v).collect())
    }

    #[test]
    fn zero_field_keeps_state() {
        let grid = TimeGrid::uniform(4).unwrap();
        for m in [Method::Euler, Method::Rk4] {
            let out =
                fixed_step_integrate(|_, z: &Vec<f64>| Ok(vec![0.0; z.len()]), vec![1.5, -2.0], &grid, m, 3)
                    .unwrap();
            assert!(out.iter().all(|z| z == &vec![1.5, -2.0]));
        }
    }

    #[test]
    fn euler_single_step_hand_value() {
        let grid = TimeGrid::uniform(1).unwrap();
        let out = fixed_step_integrate(decay, vec![1.0], &grid, Method::Euler, 1).unwrap();
        assert_eq!(out[0], vec![0.0]);
    }

    #[test]
    fn rk4_two_half_steps() {
        let grid = TimeGrid::uniform(1).unwrap();
        let out = fixed_step_integrate(decay, vec![1.0], &grid, Method::Rk4, 2).unwrap();
        assert!((out[0][0] - (-1.0f64).exp()).abs() < 3e-4);
    }

    #[test]
    fn dopri5_exponential() {
        let grid = TimeGrid::uniform(1).unwrap();
        let exact = (-1.0f64).exp();
        let (out, stats) =
            dopri5_integrate(decay, vec![1.0], &grid, &SolverConfig::default()).unwrap();
        // standard error control at 1e-5 leaves about 2.3e-6 here
        assert!((out[0][0] - exact).abs() < 2e-3, "{}", out[0][0]);
        assert!(stats.accepted > 0);
        let (out, _) =
            dopri5_integrate(decay, vec![1.0], &grid, &SolverConfig::with_tolerance(1e-7)).unwrap();
        assert!((out[0][0] - 0.3678794).abs() < 1e-6, "{}", out[0][0]);
    }

    #[test]
    fn dopri5_zero_field() {
        let grid = TimeGrid::uniform(5).unwrap();
        let zero = |_: f64, z: &Vec<f64>| Ok(vec![0.0; z.len()]);
        let cfg = SolverConfig {
            h_init: 1.0,
            ..Default::default()
        };
        let (out, stats) = dopri5_integrate(zero, vec![2.0, 3.0], &grid, &cfg).unwrap();
        assert!(out.iter().all(|z| z == &vec![2.0, 3.0]));
        assert_eq!(stats.accepted_per_interval, vec![1; 5]);
        // the default 0.1 opening step ramps up once, then one step per interval
        let (out, stats) = dopri5_integrate(zero, vec![2.0, 3.0], &grid, &SolverConfig::default()).unwrap();
        assert!(out.iter().all(|z| z == &vec![2.0, 3.0]));
        assert_eq!(stats.accepted_per_interval, vec![2, 1, 1, 1, 1]);
    }

    #[test]
    fn dopri5_step_budget() {
        let grid = TimeGrid::uniform(1).unwrap();
        let cfg = SolverConfig {
            max_steps: 2,
            rtol: 1e-12,
            atol: 1e-12,
            ..Default::default()
        };
        let err = dopri5_integrate(decay, vec![1.0], &grid, &cfg).unwrap_err();
        assert!(matches!(err, Error::Numeric(ref m) if m.contains("h =")), "{err}");
    }

    #[test]
    fn blow_up_names_step() {
        let grid = TimeGrid::uniform(3).unwrap();
        let err = fixed_step_integrate(
            |_, z: &Vec<f64>| Ok(z.iter().map(|v| v * v * 1e200).collect()),
            vec![1e100],
            &grid,
            Method::Euler,
            1,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Numeric(ref m) if m.contains("step 0")), "{err}");
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        let bad = SolverConfig {
            factor_min: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(TimeGrid::new(vec![0.0, 1.0, 1.0]).is_err());
        assert!(TimeGrid::new(vec![0.5, 1.0]).is_err());
    }
}
