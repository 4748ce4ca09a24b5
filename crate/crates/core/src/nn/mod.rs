//! Dense network engine: matrices, ReLU/linear layers, batched
//! forward/backward, MSE loss, ADAM and the `LPAN` model container.

mod adam;
pub mod container;
mod gradcheck;
mod loss;
mod matrix;
mod mlp;

pub use adam::{AdamConfig, AdamState, LayerMoments};
pub use gradcheck::{gradient_check, GradCheck};
pub use loss::{mse_loss, mse_loss_batch};
pub use matrix::Matrix;
pub use mlp::{Activation, ActivationTrace, DenseLayer, Gradients, LayerGradient, Mlp};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("network needs at least one layer")]
    EmptyLayers,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("model container: {0}")]
    Format(String),
}
