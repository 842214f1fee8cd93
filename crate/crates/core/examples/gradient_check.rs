//! Compares tape gradients with central finite differences for every
//! parameter array of a small forecaster.

use aqc::model::{Model, ModelConfig};
use aqc::numcore::{finite_diff_check, Tensor};
use aqc::ode::Mode;
use aqc::synthetic::{generate, SyntheticConfig};

fn main() -> aqc::Result<()> {
    let (ds, _) = generate(&SyntheticConfig { stations: 4, steps: 40, ..Default::default() })?;
    let split = ds.split(3, 3, (7, 1, 2))?;
    let config = ModelConfig { history: 3, horizon: 3, latent_dim: 4, gru_hidden: 6, head_hidden: 6, flow_hidden: 4, ..Default::default() };
    let mut model = Model::new(config, &ds.graph()?)?;
    model.set_norm(split.norm);
    let sample = split.train[0].clone();
    let eps = Tensor::full(&[4, 4], 0.5);

    let mut store = model.store.clone();
    let report = finite_diff_check(&mut store, 1e-6, None, |tape, s| {
        let mut m = model.clone();
        m.store = s.clone();
        let preds = m.forward(tape, &sample, Mode::Train, Some(&eps))?;
        let mut total = preds[0].square()?.sum(None)?;
        for p in &preds[1..] {
            total = total.add(&p.square()?.sum(None)?)?;
        }
        Ok(total)
    })?;
    for c in &report.per_param {
        println!("{:<28} rel {:9.2e}  |analytic| {:9.3e}", c.name, c.rel_error, c.analytic_norm);
    }
    Ok(())
}
