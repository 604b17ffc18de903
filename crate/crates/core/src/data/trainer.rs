//! Mini-batch training loop with per-epoch validation.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::model::{self, Mode};
use crate::nn::{AdamState, ModelParams, NetworkSpec};
use crate::rng::{derive_seed, source, stream_source, Stream};

use super::dataset::Dataset;

/// Multiplies the learning rate by `factor` every `every` epochs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepDecay {
    pub every: usize,
    pub factor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub l2: f64,
    /// Seeds shuffling, and also initialization and dropout.
    pub shuffle_seed: u64,
    /// Write an intermediate checkpoint every this many epochs (0 = never).
    pub checkpoint_every: usize,
    #[serde(default)]
    pub lr_decay: Option<StepDecay>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 40, batch: 100, lr: 1e-3, l2: 1e-4, shuffle_seed: 0, checkpoint_every: 0, lr_decay: None }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.epochs == 0 {
            errs.push("train.epochs: must be >= 1".to_string());
        }
        if self.batch == 0 {
            errs.push("train.batch: must be >= 1".to_string());
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            errs.push("train.lr: must be finite and >= 0".to_string());
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            errs.push("train.l2: must be finite and >= 0".to_string());
        }
        if let Some(d) = &self.lr_decay {
            if d.every == 0 || !(d.factor > 0.0) {
                errs.push("train.lr_decay: every >= 1 and factor > 0 required".to_string());
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        match &self.lr_decay {
            Some(d) => self.lr * d.factor.powi((epoch / d.every) as i32),
            None => self.lr,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_ce: f64,
    pub val_ce: f64,
    pub val_mse: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    /// Regularized loss of every mini-batch, in order.
    pub batch_losses: Vec<f64>,
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_ce,val_ce,val_mse\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{},{},{}\n", e.epoch, e.train_ce, e.val_ce, e.val_mse));
        }
        s
    }
}

pub struct TrainOutcome {
    pub params: ModelParams<f32>,
    pub adam: AdamState<f32>,
    pub best: ModelParams<f32>,
    pub best_epoch: usize,
    pub history: History,
}

/// Cross-entropy, count MSE and exact-count accuracy in eval mode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub ce: f64,
    pub mse: f64,
    pub accuracy: f64,
}

const EVAL_BATCH: usize = 100;

/// Eval-mode metrics of `params` on `data`. Never mutates the model.
pub fn metrics(spec: &NetworkSpec, params: &ModelParams<f32>, data: &Dataset, channels: &[usize]) -> Result<Metrics> {
    let (mut ce, mut se, mut hits) = (0.0, 0.0, 0usize);
    for chunk in data.samples.chunks(EVAL_BATCH) {
        let inputs: Vec<_> = chunk.iter().map(|s| &s.input).collect();
        let x = model::zscore_select::<f32>(&inputs, channels)?;
        let out = model::forward(spec, params, &x, Mode::Eval, &mut source(0))?;
        for (s, p) in chunk.iter().zip(out.probs.data().chunks(spec.h_t)) {
            let k = s.label as usize;
            ce -= (p[k - 1] as f64).max(1e-300).ln();
            let est = model::count_from_probs(p);
            se += (est as f64 - k as f64).powi(2);
            hits += (est == k) as usize;
        }
    }
    let n = data.samples.len() as f64;
    Ok(Metrics { ce: ce / n, mse: se / n, accuracy: hits as f64 / n })
}

fn check_inputs(data: &Dataset, channels: &[usize], spec: &NetworkSpec) -> Result<()> {
    if channels.len() != spec.in_channels {
        return Err(Error::domain(format!("network takes {} channels, {} selected", spec.in_channels, channels.len())));
    }
    if let Some(&c) = channels.iter().find(|&&c| c >= data.header.channels()) {
        return Err(Error::domain(format!("dataset has no channel {c}")));
    }
    if (data.header.crop_rows, data.header.crop_cols) != spec.input_hw {
        return Err(Error::domain("dataset crop size does not match network input"));
    }
    if let Some(s) = data.samples.iter().find(|s| !(1..=spec.h_t).contains(&(s.label as usize))) {
        return Err(Error::domain(format!("label {} outside 1..={}", s.label, spec.h_t)));
    }
    Ok(())
}

pub fn train(
    train_set: &Dataset,
    val_set: &Dataset,
    channels: &[usize],
    spec: &NetworkSpec,
    tcfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with(train_set, val_set, channels, spec, tcfg, |_, _, _| Ok(true))
}

/// [`train`] with a hook after every epoch; returning `false` stops early.
pub fn train_with<F>(
    train_set: &Dataset,
    val_set: &Dataset,
    channels: &[usize],
    spec: &NetworkSpec,
    tcfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&EpochRecord, &ModelParams<f32>, &AdamState<f32>) -> Result<bool>,
{
    tcfg.validate()?;
    spec.validate()?;
    check_inputs(train_set, channels, spec)?;
    check_inputs(val_set, channels, spec)?;

    let mut params = ModelParams::<f32>::init(spec, &mut stream_source(tcfg.shuffle_seed, Stream::Init, 0))?;
    let mut adam = AdamState::new(&params, tcfg.lr, tcfg.l2);
    let mut history = History::default();
    let mut best = params.clone();
    let mut best_key = (f64::INFINITY, f64::INFINITY);
    let mut best_epoch = 0;
    let mut order: Vec<usize> = (0..train_set.samples.len()).collect();

    for epoch in 0..tcfg.epochs {
        adam.lr = tcfg.lr_at(epoch);
        order.sort_unstable();
        order.shuffle(&mut stream_source(tcfg.shuffle_seed, Stream::Shuffle, epoch as u64));
        let (mut ce_sum, mut seen) = (0.0, 0usize);
        for (b, idx) in order.chunks(tcfg.batch).enumerate() {
            let inputs: Vec<_> = idx.iter().map(|&i| &train_set.samples[i].input).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| train_set.samples[i].label as usize).collect();
            let x = model::zscore_select::<f32>(&inputs, channels)?;
            let mut rng = source(derive_seed(tcfg.shuffle_seed, Stream::Dropout, ((epoch as u64) << 32) | b as u64));
            let step = model::loss_and_grad(spec, &params, &x, &labels, tcfg.l2, &mut rng)?;
            if !step.loss.is_finite() {
                return Err(Error::domain(format!("non-finite loss at epoch {} batch {b}", epoch + 1)));
            }
            adam.step(&mut params, &step.grads);
            params.update_running_stats(&step.batch_stats);
            history.batch_losses.push(step.loss);
            ce_sum += step.cross_entropy * idx.len() as f64;
            seen += idx.len();
        }
        let v = metrics(spec, &params, val_set, channels)?;
        let record = EpochRecord {
            epoch: epoch + 1,
            train_ce: ce_sum / seen as f64,
            val_ce: v.ce,
            val_mse: v.mse,
            val_accuracy: v.accuracy,
        };
        if (v.mse, v.ce) < best_key {
            best_key = (v.mse, v.ce);
            best = params.clone();
            best_epoch = epoch + 1;
        }
        history.epochs.push(record.clone());
        if !on_epoch(&record, &params, &adam)? {
            break;
        }
    }
    Ok(TrainOutcome { params, adam, best, best_epoch, history })
}
