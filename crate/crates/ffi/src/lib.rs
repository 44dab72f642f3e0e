//! C ABI over `albert-lab`: parameter counting, model construction,
//! checkpoint I/O and layer probing through an opaque handle.
//!
//! Every function returns an [`AlbertStatus`]; on failure the message is
//! available from [`albert_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use albert_lab::data::Batch;
use albert_lab::diagnostics::layer_io_similarity;
use albert_lab::model::{build_model, count_parameters, Checkpoint, ModelConfig, ParameterStore};
use albert_lab::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlbertStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidConfig = 3,
    Io = 4,
    Checkpoint = 5,
    InvalidInput = 6,
    BufferTooSmall = 7,
    Internal = 8,
}

/// Per-tensor-group parameter totals.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AlbertParameterCount {
    pub embeddings: u64,
    pub encoder: u64,
    pub heads: u64,
    pub total: u64,
}

/// Opaque model handle.
pub struct AlbertModel {
    config: ModelConfig,
    params: ParameterStore,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(e: &Error) -> AlbertStatus {
    match e {
        Error::Config(_) | Error::Json(_) => AlbertStatus::InvalidConfig,
        Error::Io { .. } => AlbertStatus::Io,
        Error::Checkpoint(_) => AlbertStatus::Checkpoint,
        _ => AlbertStatus::InvalidInput,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (AlbertStatus, String)>) -> AlbertStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AlbertStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            AlbertStatus::Internal
        }
    }
}

fn lib_err(e: Error) -> (AlbertStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (AlbertStatus, String) {
    (AlbertStatus::NullPointer, format!("{what} is null"))
}

/// # Safety
/// `s` must be null or a valid NUL-terminated string.
unsafe fn read_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, (AlbertStatus, String)> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| (AlbertStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

fn parse_config(json: &str) -> Result<ModelConfig, (AlbertStatus, String)> {
    let cfg: ModelConfig = serde_json::from_str(json)
        .map_err(|e| (AlbertStatus::InvalidConfig, e.to_string()))?;
    cfg.validate().map_err(lib_err)
}

fn to_count(c: albert_lab::model::ParameterCount) -> AlbertParameterCount {
    AlbertParameterCount {
        embeddings: c.embeddings as u64,
        encoder: c.encoder as u64,
        heads: c.heads as u64,
        total: c.total as u64,
    }
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len`) and returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn albert_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Closed-form parameter count of a model config given as JSON.
///
/// # Safety
/// `config_json` must be a valid NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn albert_count_parameters(
    config_json: *const c_char,
    out: *mut AlbertParameterCount,
) -> AlbertStatus {
    guard(|| {
        let json = read_str(config_json, "config_json")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = parse_config(json)?;
        *out = to_count(count_parameters(&cfg).map_err(lib_err)?);
        Ok(())
    })
}

/// Freshly initialized model. Free with [`albert_model_free`].
///
/// # Safety
/// `config_json` must be a valid NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn albert_model_new(
    config_json: *const c_char,
    seed: u64,
    out: *mut *mut AlbertModel,
) -> AlbertStatus {
    guard(|| {
        let json = read_str(config_json, "config_json")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let config = parse_config(json)?;
        let params = build_model(&config, seed).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(AlbertModel { config, params }));
        Ok(())
    })
}

/// Loads a checkpoint and its config sidecar.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn albert_model_load(
    path: *const c_char,
    out: *mut *mut AlbertModel,
) -> AlbertStatus {
    guard(|| {
        let path = read_str(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let ckpt = Checkpoint::load(Path::new(path)).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(AlbertModel {
            config: ckpt.config,
            params: ckpt.params,
        }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn albert_model_save(
    model: *const AlbertModel,
    path: *const c_char,
) -> AlbertStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let path = read_str(path, "path")?;
        Checkpoint::new(m.config.clone(), m.params.clone())
            .save(Path::new(path))
            .map_err(lib_err)
    })
}

/// # Safety
/// `model` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn albert_model_free(model: *mut AlbertModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of scalars actually allocated by the model.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn albert_model_num_parameters(
    model: *const AlbertModel,
    out: *mut u64,
) -> AlbertStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = m.params.num_scalars() as u64;
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn albert_model_num_layers(
    model: *const AlbertModel,
    out: *mut u32,
) -> AlbertStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = m.config.num_layers as u32;
        Ok(())
    })
}

/// Layer input/output trace over a `batch x seq_len` block of token ids
/// (no padding). Writes one mean L2 distance and one mean angle in degrees
/// per layer; `capacity` must be at least the number of layers.
///
/// # Safety
/// `token_ids` and `segment_ids` must hold `batch * seq_len` elements and
/// `l2_out`, `degrees_out` must each hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn albert_model_probe(
    model: *const AlbertModel,
    token_ids: *const u32,
    segment_ids: *const u8,
    batch: usize,
    seq_len: usize,
    l2_out: *mut f64,
    degrees_out: *mut f64,
    capacity: usize,
) -> AlbertStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if token_ids.is_null() || segment_ids.is_null() || l2_out.is_null() || degrees_out.is_null() {
            return Err(null("buffer"));
        }
        let layers = m.config.num_layers;
        if capacity < layers {
            return Err((
                AlbertStatus::BufferTooSmall,
                format!("need room for {layers} layers, got {capacity}"),
            ));
        }
        let n = batch
            .checked_mul(seq_len)
            .filter(|&n| n > 0)
            .ok_or_else(|| (AlbertStatus::InvalidInput, "empty batch".to_string()))?;
        let tokens = std::slice::from_raw_parts(token_ids, n);
        let segments = std::slice::from_raw_parts(segment_ids, n);
        let b = Batch {
            batch_size: batch,
            seq_len,
            token_ids: tokens.iter().map(|&t| t as usize).collect(),
            segment_ids: segments.iter().map(|&s| s as usize).collect(),
            padding_mask: vec![true; n],
            masked_positions: vec![Vec::new(); batch],
            masked_targets: vec![Vec::new(); batch],
            sp_labels: None,
        };
        let trace = layer_io_similarity(&m.params, &m.config, &b).map_err(lib_err)?;
        let l2 = std::slice::from_raw_parts_mut(l2_out, capacity);
        let deg = std::slice::from_raw_parts_mut(degrees_out, capacity);
        for (i, row) in trace.rows.iter().enumerate() {
            l2[i] = row.l2_distance;
            deg[i] = row.cos_degrees;
        }
        Ok(())
    })
}
