//! Minimal dense-network machinery: tanh MLPs, layer-wise backprop, Adam and
//! checkpoint files.

mod adam;
mod checkpoint;
mod mlp;
mod tensor;

pub use adam::AdamState;
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use mlp::{
    grad_mse, sinusoidal_features, Dense, FeatureConfig, ForwardTrace, Gradients, MlpModel,
    ModelRole,
};
pub(crate) use mlp::push_sinusoidal;
pub use tensor::TensorBuffer;
