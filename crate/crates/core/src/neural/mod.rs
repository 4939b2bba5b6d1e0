//! Small f64 autograd engine with the dense encoder, depth decoder and
//! wrench head, their losses, Adam and a binary checkpoint format.

mod checkpoint;
mod gradcheck;
mod graph;
mod loss;
mod model;
mod optim;
mod tensor;

pub use checkpoint::{sidecar_path, Checkpoint, CheckpointSidecar, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, grad_check_fn, rel_error, GradCheckReport, GRAD_EPS, GRAD_FLOOR};
pub use graph::{sigmoid, BnStats, Graph, Var, BN_EPS};
pub use loss::{
    gaussian_window, mse, recip_ssim, recip_ssim_loss, silog, silog_loss, ssim, wrench_loss, SsimConfig,
    SILOG_LAMBDA, SILOG_SHIFT,
};
pub use model::{adapter_param_count, Forward, Mode, Model, ModelSpec, NamedTensor, StageSpec, Task, ADAPTER_CHANNELS};
pub use optim::{Adam, AdamState};
pub use tensor::{gemm, Tensor};
