//! Dense tensors and the dual-window count classifier, forward and backward,
//! without an ML framework.

pub mod adam;
pub mod checkpoint;
pub mod layers;
pub mod model;
pub mod spec;
pub mod tensor;

pub use adam::AdamState;
pub use checkpoint::{read_checkpoint_header, Checkpoint, CheckpointHeader};
pub use model::{
    count_from_probs, forward, loss_and_grad, loss_and_grad_mode, predict_count, predict_counts, predict_counts_select,
    zscore, zscore_select, ForwardOutput, LossAndGrad, Mode, ModelParams,
};
pub use spec::NetworkSpec;
pub use tensor::{Precision, Real, Tensor};
