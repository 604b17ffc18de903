//! Datasets, training and Monte Carlo evaluation.

pub mod dataset;
pub mod eval;
pub mod trainer;

pub use dataset::{build_dataset, Dataset, DatasetHeader, DatasetSpec, Datasets, Sample, SampleFactory, SceneOverride};
pub use eval::{
    evaluate, evaluate_many, Condition, ConditionRecord, ConstantPredictor, CountPredictor, EvalReport, EvalSpec,
    ModelPredictor, OraclePredictor,
};
pub use trainer::{metrics, train, train_with, EpochRecord, History, Metrics, TrainConfig, TrainOutcome};
