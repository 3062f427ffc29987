//! RMSprop optimisation, early stopping and evaluation.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::analysis::{mae, rmse};
use crate::data::{Dataset, Normalizer, SampleSet};
use crate::error::{Error, Result};
use crate::model::{Model, Param};
use crate::rng::{rng_for, stream};
use crate::tensor::{Tape, Tensor};

/// Optimiser and loop settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub rmsprop_alpha: f64,
    pub rmsprop_eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub seed: u64,
    /// Global L2 norm bound on the gradient; `None` disables clipping.
    pub gradient_clip_norm: Option<f64>,
    /// Writes wall-clock seconds into the history; off keeps logs
    /// reproducible byte for byte.
    pub record_timing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            rmsprop_alpha: 0.99,
            rmsprop_eps: 1e-8,
            batch_size: 64,
            max_epochs: 100,
            early_stop_patience: 10,
            seed: 0,
            gradient_clip_norm: None,
            record_timing: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(m.to_string()));
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be > 0");
        }
        if !(0.0..1.0).contains(&self.rmsprop_alpha) {
            return bad("rmsprop_alpha must lie in [0, 1)");
        }
        if !(self.rmsprop_eps > 0.0) {
            return bad("rmsprop_eps must be > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.early_stop_patience == 0 {
            return bad("early_stop_patience must be >= 1");
        }
        if let Some(c) = self.gradient_clip_norm {
            if !(c > 0.0) {
                return bad("gradient_clip_norm must be > 0");
            }
        }
        Ok(())
    }
}

/// Running mean of squared gradients, one tensor per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct RmsState {
    pub v: Vec<Tensor>,
}

impl RmsState {
    pub fn new(params: &[Param]) -> Self {
        RmsState { v: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect() }
    }
}

/// `v ← α v + (1−α) g²; θ ← θ − lr g / (√v + ε)`. A missing gradient counts
/// as zero. Nothing is written unless every updated value is finite.
pub fn rmsprop_step(params: &mut [Param], grads: &[Option<Tensor>], state: &mut RmsState, cfg: &TrainConfig) -> Result<()> {
    if grads.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::shape(format!(
            "{} params, {} gradients, {} state tensors",
            params.len(),
            grads.len(),
            state.v.len()
        )));
    }
    let (lr, a, eps) = (cfg.learning_rate, cfg.rmsprop_alpha, cfg.rmsprop_eps);
    let mut updates = Vec::with_capacity(params.len());
    for ((p, g), v) in params.iter().zip(grads).zip(&state.v) {
        if let Some(g) = g {
            if g.shape() != p.value.shape() {
                return Err(Error::shape(format!("gradient {:?} for `{}` {:?}", g.shape(), p.name, p.value.shape())));
            }
        }
        let n = p.value.numel();
        let mut new_v = Vec::with_capacity(n);
        let mut new_p = Vec::with_capacity(n);
        for i in 0..n {
            let gi = g.as_ref().map_or(0.0, |g| g.data()[i]);
            let vi = a * v.data()[i] + (1.0 - a) * gi * gi;
            let pi = p.value.data()[i] - lr * gi / (vi.sqrt() + eps);
            if !vi.is_finite() || !pi.is_finite() {
                return Err(Error::NonFinite(format!("rmsprop update of `{}`", p.name)));
            }
            new_v.push(vi);
            new_p.push(pi);
        }
        updates.push((new_p, new_v));
    }
    for ((p, v), (np, nv)) in params.iter_mut().zip(state.v.iter_mut()).zip(updates) {
        p.value.data_mut().copy_from_slice(&np);
        v.data_mut().copy_from_slice(&nv);
    }
    Ok(())
}

/// Rescales gradients so their joint L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Option<Tensor>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flatten()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|v| *v *= k);
        }
    }
    norm
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Mean absolute error in raw units.
    pub mae: f64,
    /// RMSE on the normalized scale.
    pub rmse_norm: f64,
    /// RMSE in raw units.
    pub rmse_denorm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 0 is the model before any update.
    pub epoch: usize,
    /// Mean per-sample training loss; for epoch 0 the evaluation-mode loss.
    pub train_loss: f64,
    pub val: Metrics,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub config: TrainConfig,
    /// Epoch 0 first, then one record per completed epoch.
    pub records: Vec<EpochRecord>,
    /// Epoch whose parameters were restored; 0 keeps the initial model.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

pub const HISTORY_HEADER: &str = "epoch,train_loss,val_mae,val_rmse_norm,val_rmse_denorm,seconds";

impl EpochRecord {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e},{:.3}",
            self.epoch, self.train_loss, self.val.mae, self.val.rmse_norm, self.val.rmse_denorm, self.seconds
        )
    }
}

impl TrainHistory {
    pub fn best(&self) -> &EpochRecord {
        &self.records[self.best_epoch]
    }

    pub fn initial(&self) -> &EpochRecord {
        &self.records[0]
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{HISTORY_HEADER}")?;
        for r in &self.records {
            writeln!(w, "{}", r.csv_line())?;
        }
        Ok(())
    }
}

/// Normalized-scale predictions `[S, T, N, C]`, evaluated `batch` samples
/// at a time.
pub fn predict(model: &Model, inputs: &Tensor, batch: usize) -> Result<Tensor> {
    if inputs.ndim() != 4 {
        return Err(Error::shape(format!("inputs {:?}, expected 4 axes", inputs.shape())));
    }
    let s = inputs.shape()[0];
    let per: usize = inputs.shape()[1..].iter().product();
    let batch = batch.max(1);
    let mut out = Vec::new();
    let mut shape = Vec::new();
    for start in (0..s).step_by(batch) {
        let end = (start + batch).min(s);
        let mut bs = inputs.shape().to_vec();
        bs[0] = end - start;
        let x = Tensor::from_parts(bs, inputs.data()[start * per..end * per].to_vec())?;
        let y = model.forward(&x)?;
        shape = y.shape().to_vec();
        out.extend_from_slice(y.data());
    }
    if s == 0 {
        let c = model.config();
        shape = vec![0, c.horizon, model.graph().n(), c.channels];
    } else {
        shape[0] = s;
    }
    Tensor::new(shape, out)
}

fn metrics_of(pred_norm: &Tensor, set: &SampleSet, norm: &Normalizer) -> Result<Metrics> {
    let raw = norm.invert_slice(pred_norm.data(), set.channels());
    Ok(Metrics {
        mae: mae(&raw, set.raw_targets.data())?,
        rmse_norm: rmse(pred_norm.data(), set.targets.data())?,
        rmse_denorm: rmse(&raw, set.raw_targets.data())?,
    })
}

/// Metrics of `model` on a normalized sample set.
pub fn evaluate(model: &Model, set: &SampleSet, norm: &Normalizer) -> Result<Metrics> {
    if set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let pred = predict(model, &set.inputs, TrainConfig::default().batch_size)?;
    metrics_of(&pred, set, norm)
}

/// Evaluation-mode MSE on the normalized scale.
fn eval_loss(model: &Model, set: &SampleSet, batch: usize) -> Result<f64> {
    let pred = predict(model, &set.inputs, batch)?;
    let r = rmse(pred.data(), set.targets.data())?;
    Ok(r * r)
}

/// Trains in place and restores the parameters of the best validation MAE.
pub fn train(model: &mut Model, data: &Dataset, cfg: &TrainConfig) -> Result<TrainHistory> {
    train_with(model, data, cfg, |_| Ok(()))
}

/// [`train`] with a callback after epoch 0 and every completed epoch.
pub fn train_with(
    model: &mut Model,
    data: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord) -> Result<()>,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let clock = Instant::now();
    let elapsed = |c: &Instant| if cfg.record_timing { c.elapsed().as_secs_f64() } else { 0.0 };

    let initial = EpochRecord {
        epoch: 0,
        train_loss: eval_loss(model, &data.train, cfg.batch_size)?,
        val: evaluate(model, &data.val, &data.normalizer)?,
        seconds: elapsed(&clock),
    };
    on_epoch(&initial)?;
    let mut history = TrainHistory {
        config: cfg.clone(),
        records: vec![initial],
        best_epoch: 0,
        stopped_early: false,
    };
    let mut best_params: Vec<Tensor> = model.params().iter().map(|p| p.value.clone()).collect();
    let mut best_mae = history.records[0].val.mae;
    let mut since_best = 0;

    let mut shuffle_rng = rng_for(cfg.seed, stream::SHUFFLE);
    let mut dropout_rng = rng_for(cfg.seed, stream::DROPOUT);
    let mut state = RmsState::new(model.params());
    let mut order: Vec<usize> = (0..data.train.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch = data.train.gather(idx);
            let mut tape = Tape::new();
            let vars = model.bind(&mut tape);
            let x = tape.constant(batch.inputs);
            let y = tape.constant(batch.targets);
            let pred = model.forward_on(&mut tape, &vars, x, Some(&mut dropout_rng))?;
            let loss = tape.mse_loss(pred, y).map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("{m} (epoch {epoch}, batch {bi})")),
                e => e,
            })?;
            let value = tape.value(loss).data()[0];
            let mut g = tape.backward(loss)?;
            let mut grads: Vec<Option<Tensor>> = vars.iter().map(|&v| g.take(v)).collect();
            if let Some(c) = cfg.gradient_clip_norm {
                clip_grad_norm(&mut grads, c);
            }
            rmsprop_step(model.params_mut(), &grads, &mut state, cfg)?;
            loss_sum += value * idx.len() as f64;
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / data.train.len() as f64,
            val: evaluate(model, &data.val, &data.normalizer)?,
            seconds: elapsed(&clock),
        };
        on_epoch(&record)?;
        if record.val.mae < best_mae {
            best_mae = record.val.mae;
            history.best_epoch = epoch;
            best_params = model.params().iter().map(|p| p.value.clone()).collect();
            since_best = 0;
        } else {
            since_best += 1;
        }
        history.records.push(record);
        if since_best >= cfg.early_stop_patience {
            history.stopped_early = epoch < cfg.max_epochs;
            break;
        }
    }
    model.set_params(best_params)?;
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f64) -> Vec<Param> {
        vec![Param { name: "w".into(), value: Tensor::from_vec(vec![v]) }]
    }

    #[test]
    fn first_step_matches_hand_evaluation() {
        let cfg = TrainConfig::default();
        let mut p = scalar_param(0.0);
        let mut st = RmsState::new(&p);
        rmsprop_step(&mut p, &[Some(Tensor::from_vec(vec![1.0]))], &mut st, &cfg).unwrap();
        assert!((st.v[0].data()[0] - 0.01).abs() < 1e-15);
        let expect = -0.001 / (0.1 + 1e-8);
        assert!((p[0].value.data()[0] - expect).abs() < 1e-15);
        assert!((p[0].value.data()[0] + 0.00999999).abs() < 1e-8);
    }

    #[test]
    fn repeated_gradient_shrinks_step() {
        let cfg = TrainConfig::default();
        let mut p = scalar_param(0.0);
        let mut st = RmsState::new(&p);
        let g = [Some(Tensor::from_vec(vec![1.0]))];
        rmsprop_step(&mut p, &g, &mut st, &cfg).unwrap();
        let d1 = p[0].value.data()[0];
        rmsprop_step(&mut p, &g, &mut st, &cfg).unwrap();
        let d2 = p[0].value.data()[0] - d1;
        assert!(d2.abs() < d1.abs());
    }

    #[test]
    fn zero_or_missing_gradient_only_decays_state() {
        let cfg = TrainConfig::default();
        for g in [Some(Tensor::from_vec(vec![0.0])), None] {
            let mut p = scalar_param(0.7);
            let mut st = RmsState { v: vec![Tensor::from_vec(vec![0.5])] };
            rmsprop_step(&mut p, &[g], &mut st, &cfg).unwrap();
            assert_eq!(p[0].value.data()[0], 0.7);
            assert_eq!(st.v[0].data()[0], 0.99 * 0.5);
        }
    }

    #[test]
    fn zero_learning_rate_is_rejected_by_validation_but_step_is_inert() {
        let cfg = TrainConfig { learning_rate: 0.0, ..Default::default() };
        assert!(cfg.validate().is_err());
        let mut p = scalar_param(0.3);
        let mut st = RmsState::new(&p);
        rmsprop_step(&mut p, &[Some(Tensor::from_vec(vec![5.0]))], &mut st, &cfg).unwrap();
        assert_eq!(p[0].value.data()[0].to_bits(), 0.3f64.to_bits());
    }

    #[test]
    fn non_finite_update_is_atomic_and_named() {
        let cfg = TrainConfig::default();
        let mut p = vec![
            Param { name: "a".into(), value: Tensor::from_vec(vec![1.0]) },
            Param { name: "b".into(), value: Tensor::from_vec(vec![1.0]) },
        ];
        let mut st = RmsState::new(&p);
        let huge = Tensor::from_vec(vec![1e300]);
        let err = rmsprop_step(&mut p, &[Some(Tensor::from_vec(vec![1.0])), Some(huge)], &mut st, &cfg).unwrap_err();
        assert!(matches!(&err, Error::NonFinite(m) if m.contains("`b`")), "{err}");
        assert_eq!(p[0].value.data()[0], 1.0);
        assert_eq!(st.v[0].data()[0], 0.0);
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut g = vec![Some(Tensor::from_vec(vec![3.0])), None, Some(Tensor::from_vec(vec![4.0]))];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        let a = g[0].as_ref().unwrap().data()[0];
        let b = g[2].as_ref().unwrap().data()[0];
        assert!(((a * a + b * b).sqrt() - 1.0).abs() < 1e-12);
        let mut h = vec![Some(Tensor::from_vec(vec![3.0]))];
        clip_grad_norm(&mut h, 1e300);
        assert_eq!(h[0].as_ref().unwrap().data()[0], 3.0);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { early_stop_patience: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { gradient_clip_norm: Some(0.0), ..Default::default() }.validate().is_err());
    }
}
