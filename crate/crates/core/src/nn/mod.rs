//! Initializer network, the differentiable solver replica and training.

mod analytic;
mod mlp;
mod tape;
mod train;
mod unrolled;

pub use analytic::{analytic_grad_step0, backward_jacobian_row, commutation_matrix, record_step0};
pub use mlp::{
    mlp_forward, pack_input, pack_output, param_count, unpack_input, unpack_output, Layer, MlpArch, MlpModel,
    MODEL_FORMAT_VERSION,
};
pub use tape::{DiffGraph, Gradients, ParamGrads, RealMatrix, Value, Var};
pub use train::{adam_step, parse_stages, train, AdamState, EpochRecord, Stage, TrainConfig, TrainOutcome};
pub use unrolled::{record_cpals, unrolled_loss, Replica, UnrolledLoss};
