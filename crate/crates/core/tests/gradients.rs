mod common;

use std::collections::BTreeMap;

use aqc::model::Model;
use aqc::numcore::{finite_diff_check, ParamCheck, Tensor};
use aqc::ode::Mode;
use aqc::physics::GateMode;
use common::*;

const REL_TOL: f64 = 1e-4;
/// Gradient norms below this count as zero (central-difference round-off
/// at step 1e-6 is around 1e-10).
const ZERO_TOL: f64 = 1e-7;

/// Squared error of the training-path forecast against a fixed target,
/// with fixed reparameterization noise.
fn gradcheck_groups(gate: GateMode) -> BTreeMap<String, Vec<ParamCheck>> {
    let ds = synthetic(4, 40, 9);
    let split = ds.split(3, 3, (7, 1, 2)).unwrap();
    let mut config = toy_config(3, 3, 4);
    config.gate = gate;
    let (model, sample) = toy_model(config, &ds, &split);
    let mut r = rng(2);
    let eps = Tensor::matrix(4, 4, (0..16).map(|_| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut r)).collect()).unwrap();
    let target = Tensor::matrix(4, 1, vec![0.3, -0.2, 0.5, 0.1]).unwrap();
    let mut store = model.store.clone();
    let report = finite_diff_check(&mut store, 1e-6, None, |tape, s| {
        let mut m: Model = model.clone();
        m.store = s.clone();
        let preds = m.forward(tape, &sample, Mode::Train, Some(&eps))?;
        let t = tape.constant(target.clone());
        let mut total = None;
        for p in preds {
            let e = p.sub(&t)?.square()?.sum(None)?;
            total = Some(match total {
                None => e,
                Some(acc) => e.add(&acc)?,
            });
        }
        Ok(total.expect("non-empty horizon"))
    })
    .unwrap();
    let mut groups: BTreeMap<String, Vec<ParamCheck>> = BTreeMap::new();
    for c in report.per_param {
        let group = c.name.split('.').take(2).collect::<Vec<_>>().join(".");
        groups.entry(group).or_default().push(c);
    }
    groups
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let groups = gradcheck_groups(GateMode::Learned);
    for expected in ["de.k_raw", "flow.hidden", "flow.out", "de.diff", "de.adv", "de.fusion", "gru.update", "gru.reset", "gru.candidate", "head.hidden", "head.out", "decoder.w", "decoder.b"] {
        assert!(groups.contains_key(expected), "missing parameter group {expected}: {:?}", groups.keys());
    }
    for c in groups.values().flatten() {
        assert!(c.passes(REL_TOL, ZERO_TOL), "{c:?}");
    }
    // the output bias of the flow network cancels in p_i − p_j
    let bias = groups["flow.out"].iter().find(|c| c.name == "flow.out.b").unwrap();
    assert!(bias.analytic_norm < ZERO_TOL, "{bias:?}");
}

#[test]
fn diffusion_only_gradients_match_finite_differences() {
    for c in gradcheck_groups(GateMode::DiffusionOnly).values().flatten() {
        assert!(c.passes(REL_TOL, ZERO_TOL), "{c:?}");
    }
}
