//! Minimal dense/recurrent network stack with hand-written reverse mode.

mod adam;
mod gru;
mod head;
mod network;
mod schedule;
mod tensor;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use gru::{GruCache, GruLayer};
pub use head::{mish, mish_grad, softplus, BatchNorm, DenseLayer, NormCache};
pub use network::{
    ForwardPass, Gradients, InputScaler, Mode, Network, NetworkConfig, N_FEATURES,
};
pub use schedule::{lr_schedule, LrSchedule};
pub use tensor::Tensor;
