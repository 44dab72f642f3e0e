//! LAMB and its learning-rate schedule.

mod lamb;
mod schedule;

pub use lamb::{is_norm_or_bias, lamb_step, LambConfig, Moments, OptimizerState, StepStats};
pub use schedule::Schedule;
