//! Sequence model: GRU encoder, latent head, graph ODE and decoder.
//!
//! Per node, a shared GRU reads the normalized PM2.5 history. A small head
//! maps the final hidden state to `(μ, log σ)` of the latent initial state
//! `z0 ∈ R^{N×d}`. The latent state is advanced with the learned
//! diffusion–advection derivative, and a shared affine map decodes each
//! latent state to a concentration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::data_io::WindowSample;
use crate::error::{Error, Result};
use crate::geo_graph::{LaplacianSource, SensorGraph, Station};
use crate::layers::{Affine, BoundAffine, Initializer};
use crate::numcore::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::ode::{ode_solve, Mode, SolverConfig, TimeGrid};
use crate::physics::{
    flow_field_adjacency, scaled_laplacian_var, Activation, DeConfig, DeFunction, FlowNet, GateMode,
};

pub const CHECKPOINT_KIND: &str = "aqc-model";

/// Mean and standard deviation of PM2.5 over the training partition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !mean.is_finite() || !(std > 0.0) || !std.is_finite() {
            return Err(Error::Data(format!(
                "normalization needs finite mean and positive std (got {mean}, {std})"
            )));
        }
        Ok(NormStats { mean, std })
    }

    /// Population mean and standard deviation of `values`.
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Data("cannot normalize an empty series".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        NormStats::new(mean, var.sqrt())
    }

    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn denormalize(&self, x: f64) -> f64 {
        x * self.std + self.mean
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// History length `T` in 3-hour steps.
    pub history: usize,
    /// Forecast length `τ` in 3-hour steps.
    pub horizon: usize,
    pub latent_dim: usize,
    pub gru_hidden: usize,
    pub head_hidden: usize,
    pub flow_hidden: usize,
    pub cheb_order: usize,
    pub cheb_layers: usize,
    pub activation: Activation,
    pub gate: GateMode,
    /// RK4 steps per interval on the training path.
    pub train_substeps: usize,
    /// Adaptive solver used at inference.
    pub solver: SolverConfig,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            history: 24,
            horizon: 24,
            latent_dim: 16,
            gru_hidden: 64,
            head_hidden: 50,
            flow_hidden: 16,
            cheb_order: 3,
            cheb_layers: 2,
            activation: Activation::Tanh,
            gate: GateMode::Learned,
            train_substeps: 2,
            solver: SolverConfig::default(),
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("history", self.history),
            ("horizon", self.horizon),
            ("latent_dim", self.latent_dim),
            ("gru_hidden", self.gru_hidden),
            ("head_hidden", self.head_hidden),
            ("flow_hidden", self.flow_hidden),
            ("cheb_order", self.cheb_order),
            ("cheb_layers", self.cheb_layers),
            ("train_substeps", self.train_substeps),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model.{name} must be positive")));
        }
        self.solver.validate()
    }

    fn de_config(&self) -> DeConfig {
        DeConfig {
            latent_dim: self.latent_dim,
            cheb_order: self.cheb_order,
            cheb_layers: self.cheb_layers,
            activation: self.activation,
            gate: self.gate,
        }
    }
}

/// Per-node GRU with weights shared across nodes.
#[derive(Clone, Debug)]
pub struct Gru {
    pub hidden: usize,
    gates: [GruGate; 3],
}

#[derive(Clone, Debug)]
struct GruGate {
    wx: ParamId,
    wh: ParamId,
    b: ParamId,
}

impl Gru {
    pub fn register(store: &mut ParamStore, hidden: usize, init: &mut Initializer) -> Result<Self> {
        let mut gate = |g: &str| -> Result<GruGate> {
            Ok(GruGate {
                wx: store.register(format!("gru.{g}.wx"), init.tensor(vec![1, hidden], hidden))?,
                wh: store.register(format!("gru.{g}.wh"), init.tensor(vec![hidden, hidden], hidden))?,
                b: store.register(format!("gru.{g}.b"), init.tensor(vec![1, hidden], hidden))?,
            })
        };
        Ok(Gru {
            hidden,
            gates: [gate("update")?, gate("reset")?, gate("candidate")?],
        })
    }

    pub fn bind<'t>(&self, tape: &'t Tape, store: &ParamStore) -> BoundGru<'t> {
        let b = |g: &GruGate| [tape.param(store, g.wx), tape.param(store, g.wh), tape.param(store, g.b)];
        BoundGru {
            update: b(&self.gates[0]),
            reset: b(&self.gates[1]),
            candidate: b(&self.gates[2]),
        }
    }

    pub fn ids(&self) -> Vec<ParamId> {
        self.gates.iter().flat_map(|g| [g.wx, g.wh, g.b]).collect()
    }

    /// Ids of the update gate's `(wx, wh, b)`.
    pub fn update_gate_ids(&self) -> [ParamId; 3] {
        let g = &self.gates[0];
        [g.wx, g.wh, g.b]
    }

    /// Ids of the candidate's `(wx, wh, b)`.
    pub fn candidate_ids(&self) -> [ParamId; 3] {
        let g = &self.gates[2];
        [g.wx, g.wh, g.b]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundGru<'t> {
    update: [Var<'t>; 3],
    reset: [Var<'t>; 3],
    candidate: [Var<'t>; 3],
}

/// One GRU update for every node: `x` is N×1, `h` is N×H.
///
/// ```text
/// z  = σ(x·Wxz + h·Whz + bz)
/// r  = σ(x·Wxr + h·Whr + br)
/// n  = tanh(x·Wxn + r ⊙ (h·Whn) + bn)
/// h' = (1 − z) ⊙ h + z ⊙ n
/// ```
pub fn gru_step<'t>(gru: &BoundGru<'t>, x: &Var<'t>, h: &Var<'t>) -> Result<Var<'t>> {
    let pre = |g: &[Var<'t>; 3]| -> Result<Var<'t>> { x.matmul(&g[0])?.add(&h.matmul(&g[1])?)?.add(&g[2]) };
    let z = pre(&gru.update)?.sigmoid()?;
    let r = pre(&gru.reset)?.sigmoid()?;
    let c = &gru.candidate;
    let n = x
        .matmul(&c[0])?
        .add(&r.mul(&h.matmul(&c[1])?)?)?
        .add(&c[2])?
        .tanh()?;
    z.one_minus()?.mul(h)?.add(&z.mul(&n)?)
}

/// Encoder output for one window.
#[derive(Clone, Copy, Debug)]
pub struct Latent<'t> {
    pub mu: Var<'t>,
    pub sigma: Var<'t>,
}

/// `z0 = μ + σ ⊙ ε` in training with noise, `μ` otherwise.
pub fn reparameterize<'t>(latent: &Latent<'t>, eps: Option<&Tensor>, mode: Mode) -> Result<Var<'t>> {
    match (mode, eps) {
        (Mode::Train, Some(eps)) => {
            let e = latent.mu.tape().constant(eps.clone());
            latent.mu.add(&latent.sigma.mul(&e)?)
        }
        _ => Ok(latent.mu),
    }
}

/// Full forecasting model together with its graph and normalization.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub gru: Gru,
    pub head_hidden: Affine,
    pub head_out: Affine,
    pub flow: FlowNet,
    pub de: DeFunction,
    pub decoder: Affine,
    stations: Vec<Station>,
    laplacian: Tensor,
    norm: Option<NormStats>,
}

impl Model {
    /// Fresh model with seeded uniform initialization.
    pub fn new(config: ModelConfig, graph: &SensorGraph) -> Result<Self> {
        let init = Initializer::uniform(config.seed);
        Model::build(config, graph.stations().to_vec(), graph.distance_laplacian()?.matrix, init)
    }

    /// Model with every weight and bias zero (the diffusion coefficient
    /// keeps its initial value).
    pub fn zeros(config: ModelConfig, graph: &SensorGraph) -> Result<Self> {
        Model::build(
            config,
            graph.stations().to_vec(),
            graph.distance_laplacian()?.matrix,
            Initializer::zeros(),
        )
    }

    fn build(config: ModelConfig, stations: Vec<Station>, laplacian: Tensor, mut init: Initializer) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let (h, d) = (config.gru_hidden, config.latent_dim);
        let gru = Gru::register(&mut store, h, &mut init)?;
        let head_hidden = Affine::register(&mut store, "head.hidden", h, config.head_hidden, &mut init)?;
        let head_out = Affine::register(&mut store, "head.out", config.head_hidden, 2 * d, &mut init)?;
        let flow = FlowNet::register(&mut store, config.flow_hidden, &mut init)?;
        let de = DeFunction::register(&mut store, &config.de_config(), &mut init)?;
        let decoder = Affine::register(&mut store, "decoder", d, 1, &mut init)?;
        Ok(Model {
            config,
            store,
            gru,
            head_hidden,
            head_out,
            flow,
            de,
            decoder,
            stations,
            laplacian,
            norm: None,
        })
    }

    pub fn stations(&self) -> &[Station] {
        &self.stations
    }

    pub fn num_nodes(&self) -> usize {
        self.stations.len()
    }

    pub fn laplacian(&self) -> &Tensor {
        &self.laplacian
    }

    pub fn norm(&self) -> Option<NormStats> {
        self.norm
    }

    pub fn set_norm(&mut self, norm: NormStats) {
        self.norm = Some(norm);
    }

    fn require_norm(&self) -> Result<NormStats> {
        self.norm
            .ok_or_else(|| Error::Config("model has no normalization statistics".into()))
    }

    /// Current diffusion coefficient `k`.
    pub fn diffusion_coefficient(&self) -> f64 {
        self.de.diffusion_coefficient(&self.store)
    }

    fn check_sample(&self, s: &WindowSample) -> Result<()> {
        let (t, n) = (self.config.history, self.num_nodes());
        if s.x_hist.shape() != [t, n] {
            return Err(Error::Dimension(format!(
                "history has shape {:?}, model expects [{t}, {n}]",
                s.x_hist.shape()
            )));
        }
        if s.wind_hist.shape() != [t, n, 2] {
            return Err(Error::Dimension(format!(
                "wind history has shape {:?}, model expects [{t}, {n}, 2]",
                s.wind_hist.shape()
            )));
        }
        Ok(())
    }

    /// Runs the GRU over the normalized history and returns `(μ, σ)`.
    pub fn encode<'t>(&self, tape: &'t Tape, x_hist: &Tensor) -> Result<Latent<'t>> {
        let norm = self.require_norm()?;
        if x_hist.rank() != 2 || x_hist.shape()[0] != self.config.history {
            return Err(Error::Dimension(format!(
                "history has shape {:?}, expected {} steps",
                x_hist.shape(),
                self.config.history
            )));
        }
        let n = x_hist.cols();
        let gru = self.gru.bind(tape, &self.store);
        let mut h = tape.constant(Tensor::zeros(vec![n, self.config.gru_hidden]));
        for t in 0..self.config.history {
            let x: Vec<f64> = x_hist.row(t).iter().map(|v| norm.normalize(*v)).collect();
            let x = tape.constant(Tensor::matrix(n, 1, x)?);
            h = gru_step(&gru, &x, &h)?;
        }
        let hid = self.head_hidden.bind(tape, &self.store).apply(&h)?.tanh()?;
        let out = self.head_out.bind(tape, &self.store).apply(&hid)?;
        let d = self.config.latent_dim;
        Ok(Latent {
            mu: out.narrow_cols(0, d)?,
            sigma: out.narrow_cols(d, d)?.exp()?,
        })
    }

    /// Flow-field operator `M` from the last observed wind (N×2).
    pub fn flow_laplacian<'t>(&self, tape: &'t Tape, wind: &Tensor) -> Result<Var<'t>> {
        let w = flow_field_adjacency(&tape.constant(wind.clone()), &self.flow.bind(tape, &self.store))?;
        scaled_laplacian_var(&w, LaplacianSource::FlowField)
    }

    /// Latent trajectory `z(t_1) … z(t_τ)`.
    pub fn latent_trajectory<'t>(
        &self,
        tape: &'t Tape,
        sample: &WindowSample,
        mode: Mode,
        eps: Option<&Tensor>,
    ) -> Result<Vec<Var<'t>>> {
        self.check_sample(sample)?;
        let latent = self.encode(tape, &sample.x_hist)?;
        let z0 = reparameterize(&latent, eps, mode)?;
        let m = match self.config.gate {
            GateMode::DiffusionOnly => None,
            _ => Some(self.flow_laplacian(tape, &sample.wind_hist.slice_outer(self.config.history - 1))?),
        };
        let bound = self.de.bind(tape, &self.store, tape.constant(self.laplacian.clone()), m)?;
        let grid = TimeGrid::uniform(self.config.horizon)?;
        ode_solve(&bound, z0, &grid, &self.config.solver, mode, self.config.train_substeps)
    }

    /// Normalized forecasts, one N×1 value per horizon step.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        sample: &WindowSample,
        mode: Mode,
        eps: Option<&Tensor>,
    ) -> Result<Vec<Var<'t>>> {
        let dec: BoundAffine<'t> = self.decoder.bind(tape, &self.store);
        self.latent_trajectory(tape, sample, mode, eps)?
            .iter()
            .map(|z| dec.apply(z))
            .collect()
    }

    /// Deterministic forecast in µg/m³, shape τ×N.
    pub fn predict(&self, sample: &WindowSample) -> Result<Tensor> {
        let norm = self.require_norm()?;
        let tape = Tape::no_grad();
        let steps = self.forward(&tape, sample, Mode::Infer, None)?;
        let n = self.num_nodes();
        let mut data = Vec::with_capacity(steps.len() * n);
        for s in &steps {
            data.extend(s.value().data().iter().map(|v| norm.denormalize(*v)));
        }
        Tensor::matrix(steps.len(), n, data)
    }

    pub fn to_container(&self) -> Result<Container> {
        let meta = serde_json::json!({
            "config": self.config,
            "norm": self.require_norm()?,
            "stations": self.stations,
        });
        let mut c = Container::new(CHECKPOINT_KIND, meta);
        c.push("graph.laplacian", self.laplacian.clone());
        for (_, p) in self.store.iter() {
            c.push(p.name(), p.value().clone());
        }
        Ok(c)
    }

    /// Rebuilds a model from a checkpoint. When `graph` is given, its size
    /// must match the stored Laplacian.
    pub fn from_container(c: &Container, graph: Option<&SensorGraph>) -> Result<Self> {
        let field = |name: &str| {
            c.meta
                .get(name)
                .cloned()
                .ok_or_else(|| Error::Format(format!("checkpoint metadata lacks {name:?}")))
        };
        let parse = |e: serde_json::Error| Error::Format(format!("checkpoint metadata: {e}"));
        let config: ModelConfig = serde_json::from_value(field("config")?).map_err(parse)?;
        let norm: NormStats = serde_json::from_value(field("norm")?).map_err(parse)?;
        let stations: Vec<Station> = serde_json::from_value(field("stations")?).map_err(parse)?;
        let n = match graph {
            Some(g) => g.len(),
            None => stations.len(),
        };
        let laplacian = c.array_with_shape("graph.laplacian", &[n, n])?.clone();
        if let Some(g) = graph {
            let ids: Vec<&str> = g.stations().iter().map(|s| s.id.as_str()).collect();
            let stored: Vec<&str> = stations.iter().map(|s| s.id.as_str()).collect();
            if ids != stored {
                return Err(Error::Reference(format!(
                    "checkpoint stations {stored:?} differ from graph stations {ids:?}"
                )));
            }
        }
        let mut model = Model::build(config, stations, laplacian, Initializer::zeros())?;
        let ids: Vec<ParamId> = model.store.ids().collect();
        for id in ids {
            let name = model.store.name(id).to_string();
            let shape = model.store.get(id).shape().to_vec();
            let value = c.array_with_shape(&name, &shape)?.clone();
            model.store.set(id, value)?;
        }
        if c.arrays.len() != model.store.len() + 1 {
            return Err(Error::Format(format!(
                "checkpoint holds {} arrays, model expects {}",
                c.arrays.len(),
                model.store.len() + 1
            )));
        }
        model.norm = Some(norm);
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>, graph: Option<&SensorGraph>) -> Result<Self> {
        Model::from_container(&Container::load(path, CHECKPOINT_KIND)?, graph)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeZone, Utc};

    fn graph(n: usize) -> SensorGraph {
        let stations = (0..n)
            .map(|i| Station::new(format!("s{i}"), 40.0 + 0.05 * i as f64, 116.0 + 0.07 * (i * i) as f64).unwrap())
            .collect();
        crate::geo_graph::distance_adjacency(stations).unwrap()
    }

    fn small_config() -> ModelConfig {
        ModelConfig {
            history: 3,
            horizon: 3,
            latent_dim: 4,
            gru_hidden: 5,
            head_hidden: 6,
            flow_hidden: 4,
            ..Default::default()
        }
    }

    fn sample(n: usize, cfg: &ModelConfig) -> WindowSample {
        let t = cfg.history;
        let x: Vec<f64> = (0..t * n).map(|i| 30.0 + 7.0 * ((i as f64) * 0.9).sin()).collect();
        let w: Vec<f64> = (0..t * n * 2).map(|i| 2.0 * ((i as f64) * 0.4).cos()).collect();
        let f: Vec<f64> = (0..cfg.horizon * n).map(|i| 35.0 + (i as f64).cos()).collect();
        WindowSample {
            origin: Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap(),
            start: 0,
            x_hist: Tensor::matrix(t, n, x).unwrap(),
            wind_hist: Tensor::new(vec![t, n, 2], w).unwrap(),
            x_future: Tensor::matrix(cfg.horizon, n, f).unwrap(),
        }
    }

    #[test]
    fn zero_gru_halves_hidden_state() {
        let mut store = ParamStore::new();
        let gru = Gru::register(&mut store, 3, &mut Initializer::zeros()).unwrap();
        let tape = Tape::new();
        let h0 = Tensor::matrix(2, 3, vec![0.4, -0.8, 0.2, 1.0, 0.0, -0.6]).unwrap();
        let x = tape.constant(Tensor::matrix(2, 1, vec![3.0, -1.0]).unwrap());
        let h = gru_step(&gru.bind(&tape, &store), &x, &tape.constant(h0.clone())).unwrap();
        assert!(h.value().max_abs_diff(&h0.map(|v| 0.5 * v).unwrap()) < 1e-15);
    }

    #[test]
    fn closed_update_gate_keeps_state() {
        let mut store = ParamStore::new();
        let gru = Gru::register(&mut store, 3, &mut Initializer::uniform(2)).unwrap();
        let [_, _, bz] = gru.update_gate_ids();
        let [wx, wh, _] = gru.update_gate_ids();
        store.set(wx, Tensor::zeros(vec![1, 3])).unwrap();
        store.set(wh, Tensor::zeros(vec![3, 3])).unwrap();
        store.set(bz, Tensor::full(vec![1, 3], -20.0)).unwrap();
        for id in gru.candidate_ids() {
            let shape = store.get(id).shape().to_vec();
            store.set(id, Tensor::zeros(shape)).unwrap();
        }
        let tape = Tape::new();
        let h0 = Tensor::matrix(2, 3, vec![0.4, -0.8, 0.2, 1.0, 0.0, -0.6]).unwrap();
        let x = tape.constant(Tensor::matrix(2, 1, vec![5.0, -2.0]).unwrap());
        let h = gru_step(&gru.bind(&tape, &store), &x, &tape.constant(h0.clone())).unwrap();
        assert!(h.value().max_abs_diff(&h0) < 1e-8);
    }

    #[test]
    fn zero_model_predicts_mean() {
        let cfg = small_config();
        let mut m = Model::zeros(cfg.clone(), &graph(3)).unwrap();
        m.set_norm(NormStats::new(42.5, 3.0).unwrap());
        let tape = Tape::new();
        let lat = m.encode(&tape, &Tensor::zeros(vec![3, 3])).unwrap();
        assert!(lat.mu.value().data().iter().all(|v| *v == 0.0));
        assert!(lat.sigma.value().data().iter().all(|v| *v == 1.0));
        let pred = m.predict(&sample(3, &cfg)).unwrap();
        assert_eq!(pred.shape(), &[3, 3]);
        assert!(pred.data().iter().all(|v| *v == 42.5));
    }

    #[test]
    fn missing_norm_is_config_error() {
        let cfg = small_config();
        let m = Model::new(cfg.clone(), &graph(3)).unwrap();
        assert!(matches!(m.predict(&sample(3, &cfg)), Err(Error::Config(_))));
    }

    #[test]
    fn inference_is_deterministic_and_finite() {
        let cfg = small_config();
        let mut m = Model::new(cfg.clone(), &graph(4)).unwrap();
        m.set_norm(NormStats::new(30.0, 5.0).unwrap());
        let s = sample(4, &cfg);
        let a = m.predict(&s).unwrap();
        let b = m.predict(&s).unwrap();
        assert_eq!(a.shape(), &[3, 4]);
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn reparameterize_modes() {
        let tape = Tape::new();
        let mu = tape.constant(Tensor::matrix(1, 2, vec![1.0, -2.0]).unwrap());
        let sigma = tape.constant(Tensor::matrix(1, 2, vec![0.5, 2.0]).unwrap());
        let lat = Latent { mu, sigma };
        let eps = Tensor::matrix(1, 2, vec![2.0, -1.0]).unwrap();
        let z = reparameterize(&lat, Some(&eps), Mode::Train).unwrap().value();
        assert_eq!(z.data(), &[2.0, -4.0]);
        let z = reparameterize(&lat, Some(&eps), Mode::Infer).unwrap().value();
        assert_eq!(z.data(), &[1.0, -2.0]);
        let z = reparameterize(&lat, Some(&Tensor::zeros(vec![1, 2])), Mode::Train).unwrap().value();
        assert_eq!(z.data(), &[1.0, -2.0]);
    }

    #[test]
    fn checkpoint_round_trip_and_mismatch() {
        let cfg = small_config();
        let mut m = Model::new(cfg.clone(), &graph(5)).unwrap();
        m.set_norm(NormStats::new(30.0, 5.0).unwrap());
        let c = Container::decode(&m.to_container().unwrap().encode().unwrap(), CHECKPOINT_KIND).unwrap();
        let back = Model::from_container(&c, Some(&graph(5))).unwrap();
        let s = sample(5, &cfg);
        let (a, b) = (m.predict(&s).unwrap(), back.predict(&s).unwrap());
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        let err = Model::from_container(&c, Some(&graph(7))).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
        assert!(err.to_string().contains("graph.laplacian"), "{err}");
    }

    #[test]
    fn normalization_inverts() {
        let n = NormStats::fit(&[10.0, 20.0, 60.0]).unwrap();
        for x in [0.0, 12.5, 300.0] {
            assert!((n.denormalize(n.normalize(x)) - x).abs() < 1e-12);
        }
        assert!(NormStats::fit(&[5.0, 5.0]).is_err());
    }
}
