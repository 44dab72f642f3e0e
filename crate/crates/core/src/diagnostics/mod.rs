//! Layer similarity traces, intrinsic evaluation and throughput.

mod eval;
mod similarity;
mod throughput;

pub use eval::{cross_objective_eval, intrinsic_eval, score_batch, EvalReport, Tally};
pub use similarity::{
    layer_io_similarity, vector_angle_degrees, write_trace_csv, LayerTrace, LayerTraceRow,
    TRACE_HEADER,
};
pub use throughput::{measure_throughput, ThroughputReport};
