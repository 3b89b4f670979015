//! Transformer encoder with a position head and a sleep-stage head.

mod config;
mod encoder;
mod grad;
mod heads;
mod params;
mod pe;

pub use config::{count_parameters, ModelConfig};
pub use encoder::{encode, KeyMask, Mode, PeVisibility, PositionalInput, LAYER_NORM_EPS};
pub use grad::{loss_and_gradients, Batch, GradOptions, StageExample, GRAD_CHUNK};
pub use heads::{argmax, cross_entropy, forward_pretext, forward_stage, softmax};
pub use params::{
    init_params, reset_heads, EncoderLayer, LayerNorm, Linear, ModelParams, TensorInfo,
};
pub use pe::sinusoidal_pe;
