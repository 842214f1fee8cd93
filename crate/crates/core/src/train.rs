//! Training: MAE objective, Adam, step-decay schedule and early stopping.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data_io::{DatasetSplit, WindowSample};
use crate::error::{Error, Result};
use crate::model::{Model, NormStats};
use crate::numcore::{ParamStore, Tape, Tensor, Var};
use crate::ode::Mode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr0: f64,
    pub decay_rate: f64,
    /// Epochs at which the learning rate is multiplied by `decay_rate`.
    pub decay_steps: Vec<usize>,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            lr0: 5e-4,
            decay_rate: 0.1,
            decay_steps: vec![30, 60],
            max_epochs: 100,
            patience: 20,
            seed: 0,
            grad_clip: Some(5.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config("batch_size, max_epochs and patience must be positive".into()));
        }
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) || !(self.decay_rate > 0.0) {
            return Err(Error::Config("lr0 must be non-negative and decay_rate positive".into()));
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("grad_clip must be positive".into()));
        }
        Ok(())
    }
}

/// Mean absolute error between two equally shaped arrays.
pub fn mae(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    if pred.shape() != truth.shape() {
        return Err(Error::Dimension(format!(
            "prediction {:?} and truth {:?} differ in shape",
            pred.shape(),
            truth.shape()
        )));
    }
    if pred.numel() == 0 {
        return Err(Error::Data("MAE of an empty array".into()));
    }
    Ok(pred.data().iter().zip(truth.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / pred.numel() as f64)
}

/// Differentiable MAE of per-step N×1 predictions against a τ×N truth.
pub fn mae_loss<'t>(pred: &[Var<'t>], truth: &Tensor) -> Result<Var<'t>> {
    let first = pred.first().ok_or_else(|| Error::Dimension("empty prediction".into()))?;
    let n = first.shape()[0];
    if truth.shape() != [pred.len(), n] {
        return Err(Error::Dimension(format!(
            "prediction of {} steps × {n} nodes against truth {:?}",
            pred.len(),
            truth.shape()
        )));
    }
    let tape = first.tape();
    let stacked = tape.concat_rows(pred)?;
    let target = tape.constant(Tensor::matrix(pred.len() * n, 1, truth.data().to_vec())?);
    stacked.sub(&target)?.abs()?.mean(None)
}

fn normalized(t: &Tensor, norm: &NormStats) -> Result<Tensor> {
    t.map(|v| norm.normalize(v))
}

/// Adam moments for every parameter of a store.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, p)| vec![0.0; p.value().numel()]).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update from the store's accumulated gradients,
/// which are zeroed afterwards.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState, lr: f64) -> Result<()> {
    if state.m.len() != store.len() {
        return Err(Error::Contract("Adam state was built for a different parameter set".into()));
    }
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let i = id.index();
        let p = store.param(id);
        if let Some(g) = p.grad().data().iter().find(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!("gradient of `{}` is {g}", p.name())));
        }
        let mut value = p.value().data().to_vec();
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (k, g) in p.grad().data().iter().enumerate() {
            m[k] = b1 * m[k] + (1.0 - b1) * g;
            v[k] = b2 * v[k] + (1.0 - b2) * g * g;
            value[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + state.eps);
        }
        let shape = p.value().shape().to_vec();
        let name = p.name().to_string();
        let t = Tensor::new(shape, value).map_err(|e| Error::Numeric(format!("update of `{name}`: {e}")))?;
        store.set(id, t)?;
    }
    store.zero_grads();
    Ok(())
}

/// `lr0 · decay_rate^(number of decay steps ≤ epoch)`.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    let n = cfg.decay_steps.iter().filter(|&&s| s <= epoch).count();
    cfg.lr0 * cfg.decay_rate.powi(n as i32)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EarlyStop {
    Continue,
    Stop { best_epoch: usize },
}

/// Index of the first minimum of `history`.
pub fn best_epoch(history: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in history.iter().enumerate() {
        if best.is_none_or(|b| *v < history[b]) {
            best = Some(i);
        }
    }
    best
}

/// Stops once `patience` epochs have passed without a strict improvement
/// on the best validation score.
pub fn early_stopping(history: &[f64], patience: usize) -> EarlyStop {
    match best_epoch(history) {
        Some(b) if history.len() - 1 - b >= patience => EarlyStop::Stop { best_epoch: b },
        _ => EarlyStop::Continue,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Mean training MAE in normalized units.
    pub train_mae: f64,
    /// Validation MAE in normalized units (deterministic inference).
    pub val_mae: f64,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_mae: f64,
    pub stopped_early: bool,
}

pub const LOG_HEADER: &str = "epoch,lr,train_mae,val_mae";

pub fn write_log_row(out: &mut dyn Write, e: &EpochLog) -> std::io::Result<()> {
    writeln!(out, "{},{:e},{},{}", e.epoch, e.lr, e.train_mae, e.val_mae)
}

/// MAE in normalized units of deterministic forecasts over `samples`.
pub fn evaluate_normalized_mae(model: &Model, samples: &[WindowSample]) -> Result<f64> {
    let norm = model
        .norm()
        .ok_or_else(|| Error::Config("model has no normalization statistics".into()))?;
    if samples.is_empty() {
        return Err(Error::Config("evaluation split is empty".into()));
    }
    let mut total = 0.0;
    for s in samples {
        let pred = model.predict(s)?;
        total += mae(&normalized(&pred, &norm)?, &normalized(&s.x_future, &norm)?)?;
    }
    Ok(total / samples.len() as f64)
}

/// One optimization step on `batch`; returns the mean batch loss.
pub fn train_batch(
    model: &mut Model,
    batch: &[&WindowSample],
    adam: &mut AdamState,
    lr: f64,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let norm = model
        .norm()
        .ok_or_else(|| Error::Config("model has no normalization statistics".into()))?;
    let (n, d) = (model.num_nodes(), model.config.latent_dim);
    model.store.zero_grads();
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for s in batch {
        let eps: Vec<f64> = (0..n * d).map(|_| StandardNormal.sample(rng)).collect();
        let eps = Tensor::matrix(n, d, eps)?;
        let tape = Tape::new();
        let pred = model.forward(&tape, s, Mode::Train, Some(&eps))?;
        let loss = mae_loss(&pred, &normalized(&s.x_future, &norm)?)?;
        total += loss.value().item()?;
        let grads = tape.gradients(loss)?;
        model.store.accumulate_scaled(&grads, scale)?;
    }
    if let Some(clip) = cfg.grad_clip {
        let g = model.store.grad_norm();
        if g > clip {
            model.store.scale_grads(clip / g);
        }
    }
    adam_step(&mut model.store, adam, lr)?;
    let k = model.diffusion_coefficient();
    if !(k > 0.0) {
        return Err(Error::Numeric(format!("diffusion coefficient became {k}")));
    }
    Ok(total * scale)
}

/// Trains `model` on `split` and leaves it holding the parameters of the
/// best validation epoch. Each epoch is appended to `log` when given.
pub fn train_loop(
    model: &mut Model,
    split: &DatasetSplit,
    cfg: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if split.train.is_empty() || split.val.is_empty() {
        return Err(Error::Config("training and validation splits must be non-empty".into()));
    }
    model.set_norm(split.norm);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(&model.store);
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    let mut epochs = Vec::new();
    let mut history = Vec::new();
    let mut best_store = model.store.clone();
    let mut stopped_early = false;
    for epoch in 0..cfg.max_epochs {
        let lr = lr_schedule(epoch, cfg);
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&WindowSample> = chunk.iter().map(|&i| &split.train[i]).collect();
            sum += train_batch(model, &batch, &mut adam, lr, cfg, &mut rng)? * batch.len() as f64;
        }
        let val_mae = evaluate_normalized_mae(model, &split.val)?;
        let entry = EpochLog {
            epoch,
            lr,
            train_mae: sum / order.len() as f64,
            val_mae,
        };
        if let Some(out) = log.as_deref_mut() {
            write_log_row(out, &entry).map_err(|e| Error::io("training log", e))?;
        }
        epochs.push(entry);
        history.push(val_mae);
        if best_epoch(&history) == Some(epoch) {
            best_store = model.store.clone();
        }
        if let EarlyStop::Stop { .. } = early_stopping(&history, cfg.patience) {
            stopped_early = true;
            break;
        }
    }
    let best = best_epoch(&history).expect("at least one epoch");
    model.store = best_store;
    model.store.zero_grads();
    Ok(TrainReport {
        best_val_mae: history[best],
        best_epoch: best,
        epochs,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mae_hand_cases() {
        let p = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let t = Tensor::new(vec![3], vec![2.0, 2.0, 5.0]).unwrap();
        assert_eq!(mae(&p, &t).unwrap(), 1.0);
        assert_eq!(mae(&p, &p).unwrap(), 0.0);
        let shifted = p.map(|v| v - 2.5).unwrap();
        assert_eq!(mae(&shifted, &p).unwrap(), 2.5);
        assert!(matches!(mae(&p, &Tensor::zeros(vec![2])), Err(Error::Dimension(_))));
    }

    #[test]
    fn differentiable_mae_matches_plain() {
        let tape = Tape::new();
        let pred = [
            tape.constant(Tensor::matrix(2, 1, vec![1.0, 4.0]).unwrap()),
            tape.constant(Tensor::matrix(2, 1, vec![-1.0, 0.5]).unwrap()),
        ];
        let truth = Tensor::matrix(2, 2, vec![2.0, 4.0, 1.0, 0.0]).unwrap();
        let l = mae_loss(&pred, &truth).unwrap().value().item().unwrap();
        assert_eq!(l, (1.0 + 0.0 + 2.0 + 0.5) / 4.0);
        assert!(matches!(mae_loss(&pred, &Tensor::zeros(vec![3, 2])), Err(Error::Dimension(_))));
    }

    #[test]
    fn schedule_values() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_schedule(0, &cfg), 5e-4);
        assert!((lr_schedule(30, &cfg) - 5e-5).abs() < 1e-20);
        assert!((lr_schedule(60, &cfg) - 5e-6).abs() < 1e-21);
        assert_eq!(lr_schedule(29, &cfg), 5e-4);
    }

    #[test]
    fn early_stopping_semantics() {
        assert_eq!(early_stopping(&[5.0, 4.0, 3.0, 2.0], 2), EarlyStop::Continue);
        assert_eq!(early_stopping(&[1.0; 4], 3), EarlyStop::Stop { best_epoch: 0 });
        assert_eq!(early_stopping(&[1.0, 1.0, 1.0, 0.5], 3), EarlyStop::Continue);
        assert_eq!(early_stopping(&[1.0, 1.0], 1), EarlyStop::Stop { best_epoch: 0 });
    }

    fn store_with_grad(g: Vec<f64>) -> ParamStore {
        let mut store = ParamStore::new();
        let n = g.len();
        let id = store.register("w", Tensor::new(vec![n], vec![1.0; n]).unwrap()).unwrap();
        let tape = Tape::new();
        let c = tape.constant(Tensor::new(vec![n], g).unwrap());
        let loss = tape.param(&store, id).mul(&c).unwrap().sum(None).unwrap();
        tape.backward(loss, &mut store).unwrap();
        store
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let mut store = store_with_grad(vec![3.0, -0.02, 0.0]);
        let mut st = AdamState::new(&store);
        adam_step(&mut store, &mut st, 0.01).unwrap();
        let v = store.get(store.id_of("w").unwrap()).data().to_vec();
        assert!((v[0] - 0.99).abs() < 1e-9);
        assert!((v[1] - 1.01).abs() < 1e-6);
        assert_eq!(v[2], 1.0);
        assert!(store.grad(store.id_of("w").unwrap()).data().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn zero_gradient_only_decays_moments() {
        let mut store = store_with_grad(vec![3.0, -0.02, 0.0]);
        let mut st = AdamState::new(&store);
        adam_step(&mut store, &mut st, 0.01).unwrap();
        let id = store.id_of("w").unwrap();
        let before = store.get(id).clone();
        let (m0, v0) = (st.m[0].clone(), st.v[0].clone());
        let mut fresh = AdamState::new(&store);
        let mut copy = store.clone();
        adam_step(&mut copy, &mut fresh, 0.01).unwrap();
        assert_eq!(copy.get(id), &before);
        adam_step(&mut store, &mut st, 0.0).unwrap();
        assert_eq!(store.get(id), &before);
        for k in 0..3 {
            assert_eq!(st.m[0][k], 0.9 * m0[k]);
            assert_eq!(st.v[0][k], 0.999 * v0[k]);
        }
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut store = ParamStore::new();
        let id = store.register("decoder.w", Tensor::zeros(vec![2])).unwrap();
        let mut g = crate::numcore::Gradients::default();
        g.add(id, &[f64::NAN, 0.0]);
        let err = store.accumulate(&g).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
        assert!(err.to_string().contains("decoder.w"), "{err}");
    }
}
