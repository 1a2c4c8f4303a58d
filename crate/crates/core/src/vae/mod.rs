//! Encoder/decoder networks, VAE objectives, the finite-difference
//! generator Jacobian, and the checkpoint format.

mod arch;
mod checkpoint;
mod jacobian;
mod loss;
mod model;

pub use arch::{Architecture, Layer, Shape};
pub use checkpoint::{Checkpoint, CheckpointMeta, OptimizerMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use jacobian::{backprop_jacobian, fd_jacobian, JacobianMatrix};
pub use loss::{
    bernoulli_log_likelihood, fd_jacobian_on, jl1_loss, jl1_loss_and_grad, jl1_loss_on, kl_diag_gaussian,
    reparameterize, reparameterize_on, JacobianNorm, JacobianPoint, LossConfig, LossGraph, LossTerms,
    DEFAULT_FD_EPSILON,
};
pub use model::{ConvVae, EncoderOutput, LinearVae, VaeModel, LOG_VAR_LIMIT};
