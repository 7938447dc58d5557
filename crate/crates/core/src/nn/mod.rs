//! Float reference network: bias-free layers and the digit detector stack.

mod model;
mod ops;
mod tensor;

pub use model::{build_lwdd, random_small_model, LayerSpec, ModelConfig, WeightSet};
pub use ops::{
    apply_layer, argmax, conv3x3, conv3x3_same, dense, global_max_pool, infer_float, maxpool2,
    pre_activations, Activation, FloatOutcome,
};
pub use tensor::{Shape, Tensor};
