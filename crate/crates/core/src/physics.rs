//! The learned diffusion–advection derivative and its physical references.
//!
//! Diffusion acts through the fixed distance Laplacian `L`; advection acts
//! through a flow-field Laplacian `M` built per sample from wind. Each
//! process is a residual Chebyshev graph-convolution branch, and a sigmoid
//! gate blends them:
//!
//! ```text
//! dz/dt = −α ⊙ k ⊙ H_diff(L, z) − (1 − α) ⊙ H_adv(M, z)
//! α     = σ(H_diff·W₁ + H_adv·W₂ + b)
//! ```
//!
//! `k = softplus(k_raw)` stays positive and starts at 0.1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo_graph::LaplacianSource;
use crate::layers::{Affine, BoundAffine, Initializer};
use crate::numcore::{softplus, ParamId, ParamStore, Tape, Tensor, Var};
use crate::ode::{dopri5_integrate, SolverConfig, TimeGrid};

/// Diffusion coefficient at initialization.
pub const INITIAL_DIFFUSION_COEFFICIENT: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply<'t>(self, x: Var<'t>) -> Result<Var<'t>> {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => Ok(x),
        }
    }
}

/// How the two branches are combined.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    /// Learned sigmoid gate.
    Learned,
    /// α ≡ 1: diffusion only.
    DiffusionOnly,
    /// α ≡ 0: advection only.
    AdvectionOnly,
}

/// Maps wind `(u, v)` at each node to a scalar flow potential.
#[derive(Clone, Debug)]
pub struct FlowNet {
    pub hidden: Affine,
    pub out: Affine,
}

impl FlowNet {
    pub fn register(store: &mut ParamStore, hidden: usize, init: &mut Initializer) -> Result<Self> {
        Ok(FlowNet {
            hidden: Affine::register(store, "flow.hidden", 2, hidden, init)?,
            out: Affine::register(store, "flow.out", hidden, 1, init)?,
        })
    }

    pub fn bind<'t>(&self, tape: &'t Tape, store: &ParamStore) -> BoundFlowNet<'t> {
        BoundFlowNet {
            hidden: self.hidden.bind(tape, store),
            out: self.out.bind(tape, store),
        }
    }

    pub fn ids(&self) -> Vec<ParamId> {
        [self.hidden.ids(), self.out.ids()].concat()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundFlowNet<'t> {
    hidden: BoundAffine<'t>,
    out: BoundAffine<'t>,
}

impl<'t> BoundFlowNet<'t> {
    /// `p = out(tanh(hidden(P)))`, one value per node (N×1).
    pub fn potential(&self, wind: &Var<'t>) -> Result<Var<'t>> {
        self.out.apply(&self.hidden.apply(wind)?.tanh()?)
    }
}

/// `W_p[i][j] = p_i − p_j` from the wind of the last observed step (N×2).
pub fn flow_field_adjacency<'t>(wind: &Var<'t>, flow: &BoundFlowNet<'t>) -> Result<Var<'t>> {
    let shape = wind.shape();
    if shape.len() != 2 || shape[1] != 2 {
        return Err(Error::Dimension(format!("wind features must be N×2, got {shape:?}")));
    }
    let n = shape[0];
    let tape = wind.tape();
    let p = flow.potential(wind)?;
    let ones_row = tape.constant(Tensor::full(vec![1, n], 1.0));
    let ones_col = tape.constant(Tensor::full(vec![n, 1], 1.0));
    p.matmul(&ones_row)?.sub(&ones_col.matmul(&p.transpose()?)?)
}

/// Differentiable `2·(I − D^{-1/2} W D^{-1/2})/λ − I` with `D_ii = Σ_j |W_ij|`.
/// The flow-field operator uses `λ = 2`.
pub fn scaled_laplacian_var<'t>(w: &Var<'t>, source: LaplacianSource) -> Result<Var<'t>> {
    let shape = w.shape();
    if shape.len() != 2 || shape[0] != shape[1] {
        return Err(Error::Dimension(format!("expected square adjacency, got {shape:?}")));
    }
    let lambda = match source {
        LaplacianSource::FlowField => 2.0,
        LaplacianSource::Distance => {
            crate::geo_graph::scaled_laplacian(&w.value(), source)?.lambda_max
        }
    };
    let n = shape[0];
    let tape = w.tape();
    let r = w.abs()?.sum(Some(1))?.rsqrt_or_zero()?.reshape(vec![n, 1])?;
    let outer = r.matmul(&r.transpose()?)?;
    let normalized = w.mul(&outer)?;
    let eye = tape.constant(Tensor::identity(n));
    eye.sub(&normalized)?.scale(2.0 / lambda)?.sub(&eye)
}

/// One residual graph-convolution layer: `K` coefficient matrices and a bias.
#[derive(Clone, Debug)]
pub struct ChebLayer {
    pub thetas: Vec<ParamId>,
    pub bias: ParamId,
}

/// Residual Chebyshev graph-convolution stack:
/// `H⁽ˡ⁾ = σ(Σ_k Lapᵏ·H⁽ˡ⁻¹⁾·θ_k + b)`, output `Σ_{l=0}^{L'} H⁽ˡ⁾`.
#[derive(Clone, Debug)]
pub struct ChebBranch {
    pub layers: Vec<ChebLayer>,
    pub activation: Activation,
}

impl ChebBranch {
    pub fn register(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        order: usize,
        depth: usize,
        activation: Activation,
        init: &mut Initializer,
    ) -> Result<Self> {
        if order == 0 || depth == 0 {
            return Err(Error::Config(format!(
                "Chebyshev branch needs order ≥ 1 and depth ≥ 1 (got {order}, {depth})"
            )));
        }
        let fan_in = dim * order;
        let mut layers = Vec::with_capacity(depth);
        for l in 0..depth {
            let thetas = (0..order)
                .map(|k| {
                    store.register(format!("{name}.l{l}.theta{k}"), init.tensor(vec![dim, dim], fan_in))
                })
                .collect::<Result<Vec<_>>>()?;
            let bias = store.register(format!("{name}.l{l}.bias"), init.tensor(vec![1, dim], fan_in))?;
            layers.push(ChebLayer { thetas, bias });
        }
        Ok(ChebBranch { layers, activation })
    }

    pub fn bind<'t>(&self, tape: &'t Tape, store: &ParamStore) -> BoundChebBranch<'t> {
        BoundChebBranch {
            layers: self
                .layers
                .iter()
                .map(|l| {
                    (
                        l.thetas.iter().map(|&t| tape.param(store, t)).collect(),
                        tape.param(store, l.bias),
                    )
                })
                .collect(),
            activation: self.activation,
        }
    }

    pub fn ids(&self) -> Vec<ParamId> {
        self.layers
            .iter()
            .flat_map(|l| l.thetas.iter().copied().chain(std::iter::once(l.bias)))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct BoundChebBranch<'t> {
    layers: Vec<(Vec<Var<'t>>, Var<'t>)>,
    activation: Activation,
}

/// Residual sum of the branch applied to `h0` (N×d) over operator `lap`.
pub fn cheb_branch<'t>(lap: &Var<'t>, h0: &Var<'t>, branch: &BoundChebBranch<'t>) -> Result<Var<'t>> {
    let mut prev = *h0;
    let mut total = *h0;
    for (thetas, bias) in &branch.layers {
        let mut power = prev;
        let mut acc = power.matmul(&thetas[0])?;
        for theta in &thetas[1..] {
            power = lap.matmul(&power)?;
            acc = acc.add(&power.matmul(theta)?)?;
        }
        let h = branch.activation.apply(acc.add(bias)?)?;
        total = total.add(&h)?;
        prev = h;
    }
    Ok(total)
}

/// Gate parameters `W₁`, `W₂` (d×d) and `b` (1×d).
#[derive(Clone, Debug)]
pub struct Fusion {
    pub w_diff: ParamId,
    pub w_adv: ParamId,
    pub bias: ParamId,
}

impl Fusion {
    pub fn register(store: &mut ParamStore, dim: usize, init: &mut Initializer) -> Result<Self> {
        Ok(Fusion {
            w_diff: store.register("de.fusion.w_diff", init.tensor(vec![dim, dim], 2 * dim))?,
            w_adv: store.register("de.fusion.w_adv", init.tensor(vec![dim, dim], 2 * dim))?,
            bias: store.register("de.fusion.bias", init.tensor(vec![1, dim], 2 * dim))?,
        })
    }

    pub fn bind<'t>(&self, tape: &'t Tape, store: &ParamStore) -> BoundFusion<'t> {
        BoundFusion {
            w_diff: tape.param(store, self.w_diff),
            w_adv: tape.param(store, self.w_adv),
            bias: tape.param(store, self.bias),
        }
    }

    pub fn ids(&self) -> Vec<ParamId> {
        vec![self.w_diff, self.w_adv, self.bias]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundFusion<'t> {
    w_diff: Var<'t>,
    w_adv: Var<'t>,
    bias: Var<'t>,
}

/// Returns `(α, α ⊙ H_diff + (1 − α) ⊙ H_adv)`.
pub fn gated_fusion<'t>(
    h_diff: &Var<'t>,
    h_adv: &Var<'t>,
    fusion: &BoundFusion<'t>,
) -> Result<(Var<'t>, Var<'t>)> {
    let alpha = gate(h_diff, h_adv, fusion)?;
    let fused = alpha.mul(h_diff)?.add(&alpha.one_minus()?.mul(h_adv)?)?;
    Ok((alpha, fused))
}

fn gate<'t>(h_diff: &Var<'t>, h_adv: &Var<'t>, f: &BoundFusion<'t>) -> Result<Var<'t>> {
    if h_diff.shape() != h_adv.shape() {
        return Err(Error::Dimension(format!(
            "branch outputs differ in shape: {:?} vs {:?}",
            h_diff.shape(),
            h_adv.shape()
        )));
    }
    h_diff
        .matmul(&f.w_diff)?
        .add(&h_adv.matmul(&f.w_adv)?)?
        .add(&f.bias)?
        .sigmoid()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeConfig {
    pub latent_dim: usize,
    pub cheb_order: usize,
    pub cheb_layers: usize,
    pub activation: Activation,
    pub gate: GateMode,
}

impl Default for DeConfig {
    fn default() -> Self {
        DeConfig {
            latent_dim: 16,
            cheb_order: 3,
            cheb_layers: 2,
            activation: Activation::Tanh,
            gate: GateMode::Learned,
        }
    }
}

/// Trainable derivative `F(t, z)` of the latent state.
#[derive(Clone, Debug)]
pub struct DeFunction {
    pub k_raw: ParamId,
    pub diffusion: ChebBranch,
    pub advection: ChebBranch,
    pub fusion: Fusion,
    pub gate: GateMode,
}

/// `softplus⁻¹(k)`.
pub fn inverse_softplus(k: f64) -> f64 {
    k.exp_m1().ln()
}

impl DeFunction {
    pub fn register(store: &mut ParamStore, cfg: &DeConfig, init: &mut Initializer) -> Result<Self> {
        let k_raw = store.register(
            "de.k_raw",
            Tensor::scalar(inverse_softplus(INITIAL_DIFFUSION_COEFFICIENT))?,
        )?;
        let d = cfg.latent_dim;
        Ok(DeFunction {
            k_raw,
            diffusion: ChebBranch::register(store, "de.diff", d, cfg.cheb_order, cfg.cheb_layers, cfg.activation, init)?,
            advection: ChebBranch::register(store, "de.adv", d, cfg.cheb_order, cfg.cheb_layers, cfg.activation, init)?,
            fusion: Fusion::register(store, d, init)?,
            gate: cfg.gate,
        })
    }

    /// Effective diffusion coefficient `softplus(k_raw)`.
    pub fn diffusion_coefficient(&self, store: &ParamStore) -> f64 {
        softplus(store.get(self.k_raw).data()[0])
    }

    /// Binds parameters and operators to a tape for repeated evaluation.
    /// `flow_laplacian` may be `None` only when the advection branch is unused.
    pub fn bind<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        distance_laplacian: Var<'t>,
        flow_laplacian: Option<Var<'t>>,
    ) -> Result<BoundDe<'t>> {
        Ok(BoundDe {
            k: tape.param(store, self.k_raw).softplus()?,
            diffusion: self.diffusion.bind(tape, store),
            advection: self.advection.bind(tape, store),
            fusion: self.fusion.bind(tape, store),
            gate: self.gate,
            l: distance_laplacian,
            m: flow_laplacian,
        })
    }

    pub fn ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.k_raw];
        ids.extend(self.diffusion.ids());
        ids.extend(self.advection.ids());
        ids.extend(self.fusion.ids());
        ids
    }
}

/// A [`DeFunction`] with its parameters and operators placed on a tape.
#[derive(Clone, Debug)]
pub struct BoundDe<'t> {
    k: Var<'t>,
    diffusion: BoundChebBranch<'t>,
    advection: BoundChebBranch<'t>,
    fusion: BoundFusion<'t>,
    gate: GateMode,
    l: Var<'t>,
    m: Option<Var<'t>>,
}

impl<'t> BoundDe<'t> {
    fn flow_operator(&self) -> Result<&Var<'t>> {
        self.m.as_ref().ok_or_else(|| {
            Error::Config("flow-field Laplacian M was not set for this sample".into())
        })
    }

    /// `dz/dt` at state `z` (N×d). The field is autonomous; `t` is ignored.
    pub fn eval(&self, _t: f64, z: &Var<'t>) -> Result<Var<'t>> {
        match self.gate {
            GateMode::DiffusionOnly => {
                cheb_branch(&self.l, z, &self.diffusion)?.mul(&self.k)?.neg()
            }
            GateMode::AdvectionOnly => {
                cheb_branch(self.flow_operator()?, z, &self.advection)?.neg()
            }
            GateMode::Learned => {
                let m = self.flow_operator()?;
                let h_diff = cheb_branch(&self.l, z, &self.diffusion)?;
                let h_adv = cheb_branch(m, z, &self.advection)?;
                let alpha = gate(&h_diff, &h_adv, &self.fusion)?;
                let diff_term = alpha.mul(&h_diff)?.mul(&self.k)?;
                let adv_term = alpha.one_minus()?.mul(&h_adv)?;
                diff_term.add(&adv_term)?.neg()
            }
        }
    }

    /// Gate values at state `z`; constant for the forced modes.
    pub fn alpha(&self, z: &Var<'t>) -> Result<Var<'t>> {
        let tape = z.tape();
        match self.gate {
            GateMode::DiffusionOnly => Ok(tape.constant(Tensor::full(z.shape(), 1.0))),
            GateMode::AdvectionOnly => Ok(tape.constant(Tensor::zeros(z.shape()))),
            GateMode::Learned => {
                let h_diff = cheb_branch(&self.l, z, &self.diffusion)?;
                let h_adv = cheb_branch(self.flow_operator()?, z, &self.advection)?;
                gate(&h_diff, &h_adv, &self.fusion)
            }
        }
    }

    pub fn diffusion_coefficient(&self) -> Var<'t> {
        self.k
    }
}

/// Integration settings for the closed-form physics references.
fn reference_solver() -> SolverConfig {
    SolverConfig {
        rtol: 1e-11,
        atol: 1e-11,
        ..SolverConfig::default()
    }
}

fn check_square_nonneg(m: &Tensor, what: &str) -> Result<usize> {
    if m.rank() != 2 || m.rows() != m.cols() {
        return Err(Error::Dimension(format!("{what} must be square, got {:?}", m.shape())));
    }
    if let Some(v) = m.data().iter().find(|v| **v < 0.0) {
        return Err(Error::Contract(format!("{what} has negative entry {v}")));
    }
    Ok(m.rows())
}

fn linear_field(op: Tensor) -> impl FnMut(f64, &Vec<f64>) -> Result<Vec<f64>> {
    move |_, x: &Vec<f64>| {
        Ok((0..x.len())
            .map(|i| op.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect())
    }
}

fn solve_linear(op: Tensor, x0: &[f64], times: &[f64]) -> Result<Vec<Vec<f64>>> {
    if x0.len() != op.rows() {
        return Err(Error::Dimension(format!(
            "initial state has {} entries for a {}-node graph",
            x0.len(),
            op.rows()
        )));
    }
    let mut grid = vec![0.0];
    grid.extend_from_slice(times);
    let grid = TimeGrid::new(grid)?;
    let (out, _) = dopri5_integrate(linear_field(op), x0.to_vec(), &grid, &reference_solver())?;
    Ok(out)
}

/// `L_comb = D − W` for a symmetric nonnegative adjacency.
pub fn combinatorial_laplacian(w: &Tensor) -> Result<Tensor> {
    let n = check_square_nonneg(w, "adjacency")?;
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if w.get(i, j) != w.get(j, i) {
                return Err(Error::Contract(format!("adjacency not symmetric at ({i}, {j})")));
            }
            if i != j {
                out[i * n + j] = -w.get(i, j);
                out[i * n + i] += w.get(i, j);
            }
        }
    }
    Tensor::matrix(n, n, out)
}

/// Advection generator `Vᵀ − diag(Σ_k V_ik)`, so that
/// `dX_i/dt = Σ_j X_j v_{j→i} − X_i Σ_k v_{i→k}`.
pub fn advection_operator(v: &Tensor) -> Result<Tensor> {
    let n = check_square_nonneg(v, "edge velocities")?;
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        if v.get(i, i) != 0.0 {
            return Err(Error::Contract(format!("self-loop velocity at node {i}")));
        }
        for j in 0..n {
            out[i * n + j] += v.get(j, i);
            out[i * n + i] -= v.get(i, j);
        }
    }
    Tensor::matrix(n, n, out)
}

/// Graph diffusion `dX/dt = −k (D − W) X` integrated to time `t`.
pub fn simulate_diffusion_reference(w: &Tensor, x0: &[f64], k: f64, t: f64) -> Result<Vec<f64>> {
    Ok(diffusion_trajectory(w, x0, k, &[t])?.pop().expect("one output time"))
}

/// Graph diffusion sampled at each of `times` (strictly increasing, > 0).
pub fn diffusion_trajectory(w: &Tensor, x0: &[f64], k: f64, times: &[f64]) -> Result<Vec<Vec<f64>>> {
    if !(k > 0.0) {
        return Err(Error::Contract(format!("diffusion coefficient {k} must be positive")));
    }
    check_time(times)?;
    let l = combinatorial_laplacian(w)?;
    if times == [0.0] {
        return Ok(vec![x0.to_vec()]);
    }
    solve_linear(l.map(|v| -k * v)?, x0, times)
}

/// Advection along directed edges with velocities `V[i][j] = v_{i→j} ≥ 0`.
pub fn simulate_advection_reference(v: &Tensor, x0: &[f64], t: f64) -> Result<Vec<f64>> {
    let op = advection_operator(v)?;
    check_time(&[t])?;
    if t == 0.0 {
        return Ok(x0.to_vec());
    }
    Ok(solve_linear(op, x0, &[t])?.pop().expect("one output time"))
}

fn check_time(times: &[f64]) -> Result<()> {
    if times.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
        return Err(Error::Contract("simulation times must be finite and non-negative".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo_graph::scaled_laplacian;

    fn branch_with(
        store: &mut ParamStore,
        dim: usize,
        order: usize,
        depth: usize,
        act: Activation,
    ) -> ChebBranch {
        ChebBranch::register(store, "b", dim, order, depth, act, &mut Initializer::zeros()).unwrap()
    }

    fn lap2() -> Tensor {
        Tensor::from_rows(&[vec![0.0, -1.0], vec![-1.0, 0.0]]).unwrap()
    }

    #[test]
    fn single_identity_layer_doubles_input() {
        let mut store = ParamStore::new();
        let b = branch_with(&mut store, 2, 1, 1, Activation::Identity);
        store.set(b.layers[0].thetas[0], Tensor::identity(2)).unwrap();
        let tape = Tape::new();
        let h0 = Tensor::matrix(2, 2, vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let out = cheb_branch(&tape.constant(lap2()), &tape.constant(h0.clone()), &b.bind(&tape, &store))
            .unwrap()
            .value();
        assert_eq!(out.data(), h0.map(|v| 2.0 * v).unwrap().data());
    }

    #[test]
    fn first_order_term_recovers_tanh_lx() {
        let mut store = ParamStore::new();
        let b = branch_with(&mut store, 2, 2, 1, Activation::Tanh);
        store.set(b.layers[0].thetas[1], Tensor::identity(2)).unwrap();
        let tape = Tape::new();
        let h0 = Tensor::matrix(2, 2, vec![0.3, -0.2, 0.5, 0.9]).unwrap();
        let lap = lap2();
        let out = cheb_branch(&tape.constant(lap.clone()), &tape.constant(h0.clone()), &b.bind(&tape, &store))
            .unwrap()
            .value();
        let lx = lap.matmul(&h0).unwrap().map(f64::tanh).unwrap();
        let expected = h0.zip_map(&lx, |a, b| a + b).unwrap();
        assert!(out.max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn zero_input_stays_zero() {
        let mut store = ParamStore::new();
        let b = ChebBranch::register(&mut store, "b", 3, 3, 2, Activation::Tanh, &mut Initializer::uniform(3)).unwrap();
        for l in &b.layers {
            store.set(l.bias, Tensor::zeros(vec![1, 3])).unwrap();
        }
        let tape = Tape::new();
        let out = cheb_branch(
            &tape.constant(Tensor::identity(4)),
            &tape.constant(Tensor::zeros(vec![4, 3])),
            &b.bind(&tape, &store),
        )
        .unwrap()
        .value();
        assert!(out.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn cheb_dimension_mismatch() {
        let mut store = ParamStore::new();
        let b = branch_with(&mut store, 3, 2, 1, Activation::Tanh);
        let tape = Tape::new();
        let r = cheb_branch(
            &tape.constant(Tensor::identity(2)),
            &tape.constant(Tensor::zeros(vec![2, 4])),
            &b.bind(&tape, &store),
        );
        assert!(matches!(r, Err(Error::Dimension(_))));
    }

    #[test]
    fn neutral_gate_averages() {
        let mut store = ParamStore::new();
        let f = Fusion::register(&mut store, 2, &mut Initializer::zeros()).unwrap();
        let tape = Tape::new();
        let a = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::matrix(2, 2, vec![-1.0, 0.0, 5.0, 2.0]).unwrap();
        let (alpha, fused) =
            gated_fusion(&tape.constant(a.clone()), &tape.constant(b.clone()), &f.bind(&tape, &store)).unwrap();
        assert!(alpha.value().data().iter().all(|v| *v == 0.5));
        let mean = a.zip_map(&b, |x, y| (x + y) / 2.0).unwrap();
        assert!(fused.value().max_abs_diff(&mean) < 1e-15);
    }

    #[test]
    fn equal_branches_fuse_to_themselves() {
        let mut store = ParamStore::new();
        let f = Fusion::register(&mut store, 3, &mut Initializer::uniform(9)).unwrap();
        let tape = Tape::new();
        let h = Tensor::matrix(2, 3, vec![0.2, -0.7, 1.5, 3.0, 0.0, -2.5]).unwrap();
        let hv = tape.constant(h.clone());
        let (_, fused) = gated_fusion(&hv, &hv, &f.bind(&tape, &store)).unwrap();
        assert!(fused.value().max_abs_diff(&h) < 1e-15);
    }

    #[test]
    fn flow_adjacency_cases() {
        let mut store = ParamStore::new();
        let flow = FlowNet::register(&mut store, 16, &mut Initializer::uniform(4)).unwrap();
        let tape = Tape::new();
        let same = tape.constant(Tensor::matrix(3, 2, vec![1.0, -2.0, 1.0, -2.0, 1.0, -2.0]).unwrap());
        let w = flow_field_adjacency(&same, &flow.bind(&tape, &store)).unwrap().value();
        assert!(w.data().iter().all(|v| *v == 0.0));

        let mut zero_store = ParamStore::new();
        let zf = FlowNet::register(&mut zero_store, 16, &mut Initializer::zeros()).unwrap();
        let wind = tape.constant(Tensor::matrix(3, 2, vec![1.0, 0.0, -3.0, 2.0, 0.5, 0.5]).unwrap());
        let w = flow_field_adjacency(&wind, &zf.bind(&tape, &zero_store)).unwrap().value();
        assert!(w.data().iter().all(|v| *v == 0.0));

        let w = flow_field_adjacency(&wind, &flow.bind(&tape, &store)).unwrap().value();
        for i in 0..3 {
            assert_eq!(w.get(i, i), 0.0);
            for j in 0..3 {
                assert_eq!(w.get(i, j), -w.get(j, i));
            }
        }
    }

    #[test]
    fn flow_laplacian_matches_plain_route() {
        let mut store = ParamStore::new();
        let flow = FlowNet::register(&mut store, 16, &mut Initializer::uniform(11)).unwrap();
        let tape = Tape::new();
        let wind = tape.constant(
            Tensor::matrix(4, 2, vec![1.0, 0.3, -2.0, 1.0, 0.4, -0.4, 3.0, 2.5]).unwrap(),
        );
        let w = flow_field_adjacency(&wind, &flow.bind(&tape, &store)).unwrap();
        let m = scaled_laplacian_var(&w, LaplacianSource::FlowField).unwrap().value();
        let plain = scaled_laplacian(&w.value(), LaplacianSource::FlowField).unwrap().matrix;
        assert!(m.max_abs_diff(&plain) < 1e-14);
    }

    #[test]
    fn distance_laplacian_var_matches_plain_route() {
        let w = Tensor::from_rows(&[
            vec![0.0, 0.5, 0.2],
            vec![0.5, 0.0, 1.0],
            vec![0.2, 1.0, 0.0],
        ])
        .unwrap();
        let tape = Tape::new();
        let m = scaled_laplacian_var(&tape.constant(w.clone()), LaplacianSource::Distance)
            .unwrap()
            .value();
        let plain = scaled_laplacian(&w, LaplacianSource::Distance).unwrap().matrix;
        assert!(m.max_abs_diff(&plain) < 1e-14);
    }

    fn bound_de_setup(gate: GateMode, seed: u64) -> (ParamStore, DeFunction) {
        let mut store = ParamStore::new();
        let cfg = DeConfig {
            latent_dim: 3,
            gate,
            ..Default::default()
        };
        let de = DeFunction::register(&mut store, &cfg, &mut Initializer::uniform(seed)).unwrap();
        (store, de)
    }

    #[test]
    fn initial_k_is_point_one() {
        let (store, de) = bound_de_setup(GateMode::Learned, 1);
        assert!((de.diffusion_coefficient(&store) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn zero_state_zero_biases_is_fixed_point() {
        let (mut store, de) = bound_de_setup(GateMode::Learned, 2);
        for l in de.diffusion.layers.iter().chain(&de.advection.layers) {
            store.set(l.bias, Tensor::zeros(vec![1, 3])).unwrap();
        }
        let tape = Tape::new();
        let l = tape.constant(Tensor::identity(4));
        let bound = de.bind(&tape, &store, l, Some(l)).unwrap();
        let out = bound.eval(0.0, &tape.constant(Tensor::zeros(vec![4, 3]))).unwrap().value();
        assert!(out.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn saturated_gate_is_pure_diffusion() {
        let (mut store, de) = bound_de_setup(GateMode::Learned, 5);
        store.set(de.fusion.w_diff, Tensor::zeros(vec![3, 3])).unwrap();
        store.set(de.fusion.w_adv, Tensor::zeros(vec![3, 3])).unwrap();
        store.set(de.fusion.bias, Tensor::full(vec![1, 3], 20.0)).unwrap();
        let tape = Tape::new();
        let lap = tape.constant(scaled_laplacian(
            &Tensor::from_rows(&[vec![0.0, 1.0, 0.5], vec![1.0, 0.0, 2.0], vec![0.5, 2.0, 0.0]]).unwrap(),
            LaplacianSource::Distance,
        ).unwrap().matrix);
        let m = tape.constant(Tensor::from_rows(&[vec![0.0, 0.3, -0.2], vec![-0.3, 0.0, 0.1], vec![0.2, -0.1, 0.0]]).unwrap());
        let bound = de.bind(&tape, &store, lap, Some(m)).unwrap();
        let z = tape.constant(Tensor::matrix(3, 3, vec![0.3, -0.5, 0.9, 1.2, 0.0, -0.4, 0.7, 0.2, -1.1]).unwrap());
        let out = bound.eval(0.0, &z).unwrap().value();
        let h_diff = cheb_branch(&lap, &z, &de.diffusion.bind(&tape, &store)).unwrap().value();
        let expected = h_diff.map(|v| -0.1 * v).unwrap();
        assert!(out.max_abs_diff(&expected) < 1e-8);
    }

    #[test]
    fn missing_flow_operator_is_config_error() {
        let (store, de) = bound_de_setup(GateMode::Learned, 6);
        let tape = Tape::new();
        let l = tape.constant(Tensor::identity(2));
        let bound = de.bind(&tape, &store, l, None).unwrap();
        let r = bound.eval(0.0, &tape.constant(Tensor::zeros(vec![2, 3])));
        assert!(matches!(r, Err(Error::Config(_))));
        let (store, de) = bound_de_setup(GateMode::DiffusionOnly, 6);
        let bound = de.bind(&tape, &store, tape.constant(Tensor::identity(2)), None).unwrap();
        assert!(bound.eval(0.0, &tape.constant(Tensor::zeros(vec![2, 3]))).is_ok());
    }

    #[test]
    fn two_node_diffusion_closed_form() {
        let w = Tensor::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let k = 0.3;
        for t in [0.5, 1.0, 4.0] {
            let x = simulate_diffusion_reference(&w, &[1.0, 0.0], k, t).unwrap();
            let e = (-2.0 * k * t).exp();
            assert!((x[0] - (0.5 + 0.5 * e)).abs() < 1e-9);
            assert!((x[1] - (0.5 - 0.5 * e)).abs() < 1e-9);
        }
    }

    #[test]
    fn uniform_state_does_not_diffuse() {
        let w = Tensor::from_rows(&[vec![0.0, 1.0, 0.2], vec![1.0, 0.0, 0.7], vec![0.2, 0.7, 0.0]]).unwrap();
        let x = simulate_diffusion_reference(&w, &[4.0, 4.0, 4.0], 0.1, 3.0).unwrap();
        assert!(x.iter().all(|v| (v - 4.0).abs() < 1e-12));
    }

    #[test]
    fn one_way_advection_closed_form() {
        let v = Tensor::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        let x = simulate_advection_reference(&v, &[1.0, 0.0], 1.5).unwrap();
        assert!((x[0] - (-1.5f64).exp()).abs() < 1e-9);
        assert!((x[1] - (1.0 - (-1.5f64).exp())).abs() < 1e-9);
        let still = simulate_advection_reference(&Tensor::zeros(vec![2, 2]), &[3.0, 1.0], 2.0).unwrap();
        assert_eq!(still, vec![3.0, 1.0]);
    }

    #[test]
    fn negative_velocity_rejected() {
        let v = Tensor::from_rows(&[vec![0.0, -1.0], vec![0.0, 0.0]]).unwrap();
        assert!(matches!(simulate_advection_reference(&v, &[1.0, 0.0], 1.0), Err(Error::Contract(_))));
    }
}
