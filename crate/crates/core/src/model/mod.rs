//! The BERT/ALBERT encoder family.

pub mod checkpoint;
pub mod config;
pub mod forward;
pub mod params;
pub mod presets;
pub mod warm_start;

pub use checkpoint::Checkpoint;
pub use config::{resolve_layer_groups, LayerGroups, ModelConfig, Objective, SharingStrategy};
pub use forward::{
    compute_gradients, evaluate_loss, forward, pretraining_loss, ForwardOutput, Loss, LossValues,
    ParamVars,
};
pub use params::{build_model, count_parameters, paths, ParameterCount, ParameterStore};
pub use presets::{preset, PRESET_NAMES};
pub use warm_start::{unroll_shared, warm_start_expand};
