//! Layers, the fixed noise-prediction network with hand-written backprop,
//! and AdamW.

pub mod adamw;
pub mod frozen;
pub mod layers;
pub mod mlp;

pub use adamw::{adamw_step, LrSchedule, OptimizerState};
pub use frozen::FrozenDenoiser;
pub use layers::{
    batchnorm_forward, linear_forward, silu, silu_backward, BatchNormLayer, LinearLayer, Mode, Parameters,
};
pub use mlp::{sinusoidal_embedding, ModelConfig, ResidualBlock, TabularDiffusionMlp, TIME_FEATURES};
