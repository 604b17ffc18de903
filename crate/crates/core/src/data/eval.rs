//! Monte Carlo count evaluation on fresh scenes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::model::predict_counts_select;
use crate::nn::{ModelParams, NetworkSpec};
use crate::periodogram::Scale;
use crate::rng::{derive_seed, Stream};
use crate::scene::{OfdmConfig, SceneGenConfig};
use crate::window::WindowKind;

use super::dataset::{Sample, SampleFactory, SceneOverride};

/// One grid point of a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    /// K drawn uniformly from the generator range at a fixed SNR.
    Snr(f64),
    /// K fixed at a fixed SNR.
    Targets { k: usize, snr_db: f64 },
}

impl Condition {
    pub fn axis(&self) -> &'static str {
        match self {
            Condition::Snr(_) => "snr",
            Condition::Targets { .. } => "targets",
        }
    }

    pub fn value(&self) -> f64 {
        match *self {
            Condition::Snr(s) => s,
            Condition::Targets { k, .. } => k as f64,
        }
    }

    fn scene_override(&self) -> SceneOverride {
        match *self {
            Condition::Snr(s) => SceneOverride { k: None, snr_db: Some(s) },
            Condition::Targets { k, snr_db } => SceneOverride { k: Some(k), snr_db: Some(snr_db) },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSpec {
    pub cfg: OfdmConfig,
    pub gen: SceneGenConfig,
    pub windows: Vec<WindowKind>,
    pub scale: Scale,
    pub seed: u64,
    pub n_trials: usize,
    pub conditions: Vec<Condition>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionRecord {
    pub condition: Condition,
    pub mse: f64,
    pub accuracy: f64,
    pub n_trials: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub records: Vec<ConditionRecord>,
    /// Mean squared count error over every trial of every condition.
    pub overall_mse: f64,
}

/// Anything that maps rendered samples to target counts in `1..=h_t()`.
pub trait CountPredictor: Sync {
    fn h_t(&self) -> usize;
    fn predict(&self, samples: &[Sample]) -> Result<Vec<usize>>;
}

/// A trained network reading the listed channels of each sample.
pub struct ModelPredictor<'a> {
    pub spec: &'a NetworkSpec,
    pub params: &'a ModelParams<f32>,
    pub channels: Vec<usize>,
}

const PREDICT_BATCH: usize = 100;

impl CountPredictor for ModelPredictor<'_> {
    fn h_t(&self) -> usize {
        self.spec.h_t
    }

    fn predict(&self, samples: &[Sample]) -> Result<Vec<usize>> {
        let batches = samples.len().div_ceil(PREDICT_BATCH);
        let parts = crate::exec::map_range(batches, |b| {
            let chunk = &samples[b * PREDICT_BATCH..((b + 1) * PREDICT_BATCH).min(samples.len())];
            let inputs: Vec<_> = chunk.iter().map(|s| &s.input).collect();
            predict_counts_select(self.spec, self.params, &inputs, &self.channels)
        });
        let mut out = Vec::with_capacity(samples.len());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }
}

/// Returns the true label.
pub struct OraclePredictor {
    pub h_t: usize,
}

impl CountPredictor for OraclePredictor {
    fn h_t(&self) -> usize {
        self.h_t
    }

    fn predict(&self, samples: &[Sample]) -> Result<Vec<usize>> {
        Ok(samples.iter().map(|s| s.label as usize).collect())
    }
}

/// Always answers `count`.
pub struct ConstantPredictor {
    pub h_t: usize,
    pub count: usize,
}

impl CountPredictor for ConstantPredictor {
    fn h_t(&self) -> usize {
        self.h_t
    }

    fn predict(&self, samples: &[Sample]) -> Result<Vec<usize>> {
        Ok(vec![self.count; samples.len()])
    }
}

/// Samples rendered per chunk; bounds memory for large trial counts.
const RENDER_CHUNK: usize = 500;

/// Evaluates several predictors on one shared set of fresh scenes per
/// condition. Reports come back in predictor order.
pub fn evaluate_many(predictors: &[&dyn CountPredictor], spec: &EvalSpec) -> Result<Vec<EvalReport>> {
    if spec.n_trials == 0 {
        return Err(Error::config("eval.n_trials: must be >= 1"));
    }
    if spec.conditions.is_empty() {
        return Err(Error::config("eval: empty condition grid"));
    }
    for p in predictors {
        spec.gen.validate(&spec.cfg, p.h_t())?;
    }
    let factory = SampleFactory::new(&spec.cfg, &spec.gen, &spec.windows, spec.scale)?;
    let mut records: Vec<Vec<ConditionRecord>> = vec![Vec::new(); predictors.len()];
    for (ci, cond) in spec.conditions.iter().enumerate() {
        if let Condition::Targets { k, .. } = cond {
            if !(spec.gen.k_min..=spec.gen.k_max).contains(k) {
                return Err(Error::config(format!("eval.k_grid: {k} outside {}..={}", spec.gen.k_min, spec.gen.k_max)));
            }
        }
        let base = derive_seed(spec.seed, Stream::Evaluation, ci as u64);
        let mut sq = vec![0.0f64; predictors.len()];
        let mut hits = vec![0usize; predictors.len()];
        let mut first = 0;
        while first < spec.n_trials {
            let n = RENDER_CHUNK.min(spec.n_trials - first);
            let samples = factory.render_range(base, Stream::Evaluation, first as u64, n, cond.scene_override())?;
            for (pi, p) in predictors.iter().enumerate() {
                let est = p.predict(&samples)?;
                for (s, &e) in samples.iter().zip(&est) {
                    if !(1..=p.h_t()).contains(&e) {
                        return Err(Error::domain(format!("predicted count {e} outside 1..={}", p.h_t())));
                    }
                    let k = s.label as usize;
                    sq[pi] += (e as f64 - k as f64).powi(2);
                    hits[pi] += (e == k) as usize;
                }
            }
            first += n;
        }
        for (pi, p) in predictors.iter().enumerate() {
            let mse = sq[pi] / spec.n_trials as f64;
            let bound = ((p.h_t() - 1) as f64).powi(2);
            assert!(mse <= bound, "count mse {mse} exceeds bound {bound}");
            records[pi].push(ConditionRecord {
                condition: *cond,
                mse,
                accuracy: hits[pi] as f64 / spec.n_trials as f64,
                n_trials: spec.n_trials,
            });
        }
    }
    Ok(records
        .into_iter()
        .map(|records| {
            let overall_mse = records.iter().map(|r| r.mse).sum::<f64>() / records.len() as f64;
            EvalReport { records, overall_mse }
        })
        .collect())
}

pub fn evaluate(predictor: &dyn CountPredictor, spec: &EvalSpec) -> Result<EvalReport> {
    Ok(evaluate_many(&[predictor], spec)?.remove(0))
}
