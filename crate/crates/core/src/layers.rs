//! Small building blocks shared by the learned components.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::numcore::{ParamId, ParamStore, Tape, Tensor, Var};

/// Source of initial parameter values.
///
/// `Uniform` draws from `U(−1/√fan_in, 1/√fan_in)` with a seeded stream;
/// `Zeros` fills everything with zero (useful for hand-traceable models).
pub enum Initializer {
    Uniform(ChaCha8Rng),
    Zeros,
}

impl Initializer {
    pub fn uniform(seed: u64) -> Self {
        Initializer::Uniform(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn zeros() -> Self {
        Initializer::Zeros
    }

    pub fn tensor(&mut self, shape: Vec<usize>, fan_in: usize) -> Tensor {
        match self {
            Initializer::Zeros => Tensor::zeros(shape),
            Initializer::Uniform(rng) => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                let n = shape.iter().product();
                let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
                Tensor::new(shape, data).expect("uniform draws are finite")
            }
        }
    }
}

/// `x·W + b` with `W: in×out`, `b: 1×out`.
#[derive(Clone, Debug)]
pub struct Affine {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Affine {
    pub fn register(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        init: &mut Initializer,
    ) -> Result<Self> {
        let weight = store.register(format!("{name}.w"), init.tensor(vec![fan_in, fan_out], fan_in))?;
        let bias = store.register(format!("{name}.b"), init.tensor(vec![1, fan_out], fan_in))?;
        Ok(Affine { weight, bias })
    }

    pub fn bind<'t>(&self, tape: &'t Tape, store: &ParamStore) -> BoundAffine<'t> {
        BoundAffine {
            weight: tape.param(store, self.weight),
            bias: tape.param(store, self.bias),
        }
    }

    pub fn ids(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundAffine<'t> {
    pub weight: Var<'t>,
    pub bias: Var<'t>,
}

impl<'t> BoundAffine<'t> {
    pub fn apply(&self, x: &Var<'t>) -> Result<Var<'t>> {
        x.matmul(&self.weight)?.add(&self.bias)
    }
}
