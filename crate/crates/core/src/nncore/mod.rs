//! Deterministic dense-network core: forward passes, losses with analytic
//! gradients, SGD, finite-difference checking, and checkpoints.

mod checkpoint;
pub mod gradcheck;
mod layer;
pub mod loss;
mod matrix;
mod model;
mod sgd;

pub use checkpoint::{
    checkpoint_from_str, checkpoint_to_string, load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint,
    CHECKPOINT_HEADER,
};
pub(crate) use checkpoint::{fmt_f64, parse_f64};
pub use gradcheck::{finite_diff_check, GradCheckReport, Objective};
pub use layer::{Linear, LinearGrad};
pub use loss::{
    ce_loss_grad, ce_rows, kl_distill_loss_grad, kl_distill_loss_grad_weighted, mse_feature_loss_grad,
    mse_feature_loss_grad_weighted, softmax, LossGrad,
};
pub use matrix::Matrix;
pub use model::{Gradients, LayerRole, Mlp, MlpArch, Trace, Upstream};
pub use sgd::{sgd_step, SgdState};
