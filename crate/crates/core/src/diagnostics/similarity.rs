use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::{forward, ModelConfig, ParameterStore};

pub const TRACE_HEADER: &str = "layer,l2_distance,cos_degrees";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LayerTraceRow {
    pub layer: usize,
    pub l2_distance: f64,
    pub cos_degrees: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    pub rows: Vec<LayerTraceRow>,
    /// Token vectors left out of the angle mean because a norm was zero.
    pub skipped: usize,
}

/// Angle between two vectors in degrees, `None` when either is zero.
///
/// Uses the half-angle form `2 atan2(|â - b̂|, |â + b̂|)`, which stays accurate
/// near 0 and 180 degrees where `acos` does not.
pub fn vector_angle_degrees(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    let (mut diff, mut sum) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (u, v) = (x / na, y / nb);
        diff += (u - v) * (u - v);
        sum += (u + v) * (u + v);
    }
    Some((2.0 * diff.sqrt().atan2(sum.sqrt())).to_degrees())
}

/// Mean L2 distance and mean angle between each layer's input and output,
/// over the non-padding tokens of `batch`. Runs in eval mode.
pub fn layer_io_similarity(
    store: &ParameterStore,
    cfg: &ModelConfig,
    batch: &Batch,
) -> Result<LayerTrace> {
    let mut graph = Graph::new();
    // eval mode never draws from the rng
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = forward(&mut graph, store, cfg, batch, false, true, &mut rng)?;
    let h = cfg.hidden_size;
    let tokens: Vec<usize> = (0..batch.batch_size * batch.seq_len)
        .filter(|&i| batch.padding_mask[i])
        .collect();
    if tokens.is_empty() {
        return Err(Error::Data("trace batch has no real tokens".into()));
    }
    let mut rows = Vec::with_capacity(cfg.num_layers);
    let mut skipped = 0;
    for (layer, (&xin, &xout)) in out.layer_inputs.iter().zip(&out.layer_outputs).enumerate() {
        let (xi, xo) = (graph.value(xin).data(), graph.value(xout).data());
        let mut dist = 0.0;
        let mut angle = 0.0;
        let mut counted = 0usize;
        for &t in &tokens {
            let a = &xi[t * h..(t + 1) * h];
            let b = &xo[t * h..(t + 1) * h];
            dist += a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            match vector_angle_degrees(a, b) {
                Some(d) => {
                    angle += d;
                    counted += 1;
                }
                None => skipped += 1,
            }
        }
        rows.push(LayerTraceRow {
            layer,
            l2_distance: dist / tokens.len() as f64,
            cos_degrees: if counted > 0 { angle / counted as f64 } else { 0.0 },
        });
    }
    if skipped > 0 {
        log::warn!("layer trace skipped {skipped} zero-norm token vectors");
    }
    Ok(LayerTrace { rows, skipped })
}

pub fn write_trace_csv<W: Write>(rows: &[LayerTraceRow], w: &mut W) -> std::io::Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    for r in rows {
        writeln!(w, "{},{},{}", r.layer, r.l2_distance, r.cos_degrees)?;
    }
    Ok(())
}
