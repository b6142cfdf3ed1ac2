//! Binary weight files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic            8 bytes   "DKWEIGHT"
//! version          1 byte    currently 1
//! header_len       u32       byte length of the JSON header
//! header           bytes     {"spec": <model spec>, "extra_heads": [...]}
//! value_count      u64       total number of f64 parameter values
//! values           f64 * n   parameters in canonical name order
//! ```
//!
//! Round trips are bit-exact: every f64 is written and read verbatim.

use std::fs;
use std::path::Path;

use serde_json::json;

use super::{build_model, HeadSpec, Model, ModelError, ModelSpec};
use crate::json::{parse_document, to_sorted_string, ObjectReader};
use crate::rng::Rng;

pub const MAGIC: &[u8; 8] = b"DKWEIGHT";
pub const VERSION: u8 = 1;

/// Decoded contents of a weight file, before spec checking.
pub struct StoredWeights {
    pub spec: ModelSpec,
    pub extra_heads: Vec<HeadSpec>,
    pub values: Vec<f64>,
}

fn format_err(field: &str, message: impl Into<String>) -> ModelError {
    ModelError::Format { field: field.into(), message: message.into() }
}

/// Serialize a model's spec, extra heads, and parameters.
pub fn encode_weights(model: &Model) -> Vec<u8> {
    let extra: Vec<serde_json::Value> =
        model.heads()[1..].iter().map(|h| h.to_json()).collect();
    let header = to_sorted_string(&json!({
        "spec": model.spec().to_json(),
        "extra_heads": extra,
    }));
    let header_bytes = header.as_bytes();
    let value_count: usize = model.parameters().iter().map(|p| p.tensor.numel()).sum();

    let mut out = Vec::with_capacity(21 + header_bytes.len() + value_count * 8);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(header_bytes);
    out.extend_from_slice(&(value_count as u64).to_le_bytes());
    for p in model.parameters() {
        for v in p.tensor.data().iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Decode a weight file image. Never panics on malformed input; every
/// violation is reported as a format error naming the offending field.
pub fn decode_weights(bytes: &[u8]) -> Result<StoredWeights, ModelError> {
    let mut off = 0usize;
    let take = |off: &mut usize, n: usize, field: &str| -> Result<&[u8], ModelError> {
        let end = off.checked_add(n).ok_or_else(|| format_err(field, "length overflow"))?;
        if end > bytes.len() {
            return Err(format_err(field, format!("file truncated at byte {off}")));
        }
        let s = &bytes[*off..end];
        *off = end;
        Ok(s)
    };

    let magic = take(&mut off, 8, "magic")?;
    if magic != MAGIC {
        return Err(format_err("magic", format!("expected {MAGIC:?}, got {magic:?}")));
    }
    let version = take(&mut off, 1, "version")?[0];
    if version != VERSION {
        return Err(format_err("version", format!("unsupported version {version}")));
    }
    let header_len =
        u32::from_le_bytes(take(&mut off, 4, "header_len")?.try_into().unwrap()) as usize;
    let header_bytes = take(&mut off, header_len, "header")?;
    let header_text = std::str::from_utf8(header_bytes)
        .map_err(|_| format_err("header", "header is not valid UTF-8"))?;
    let header = parse_document(header_text).map_err(|e| format_err("header", e.to_string()))?;
    let reader = ObjectReader::new(&header, "header", &["spec", "extra_heads"])
        .map_err(|e| format_err("header", e.to_string()))?;
    let spec = ModelSpec::from_json(
        reader.require("spec").map_err(|e| format_err("header.spec", e.to_string()))?,
        "header.spec",
    )
    .map_err(|e| format_err("header.spec", e.to_string()))?;
    spec.validate(true).map_err(|e| format_err("header.spec", e.to_string()))?;
    let extra_heads = match reader.get("extra_heads") {
        None => Vec::new(),
        Some(v) => {
            let items = v.as_array().ok_or_else(|| {
                format_err("header.extra_heads", "expected an array of head specs")
            })?;
            let mut heads = Vec::with_capacity(items.len());
            for (i, item) in items.iter().enumerate() {
                heads.push(
                    HeadSpec::from_json(item, &format!("header.extra_heads[{i}]"))
                        .map_err(|e| format_err("header.extra_heads", e.to_string()))?,
                );
            }
            heads
        }
    };

    let value_count =
        u64::from_le_bytes(take(&mut off, 8, "value_count")?.try_into().unwrap());
    let remaining = bytes.len() - off;
    let expected_bytes = value_count
        .checked_mul(8)
        .ok_or_else(|| format_err("value_count", "value count overflow"))?;
    if expected_bytes != remaining as u64 {
        return Err(format_err(
            "value_count",
            format!("header declares {value_count} values but {remaining} bytes follow"),
        ));
    }
    let mut values = Vec::with_capacity(value_count as usize);
    for chunk in bytes[off..].chunks_exact(8) {
        values.push(f64::from_le_bytes(chunk.try_into().unwrap()));
    }
    Ok(StoredWeights { spec, extra_heads, values })
}

/// Write a model's weights to `path`.
pub fn save_weights(model: &Model, path: &Path) -> Result<(), ModelError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, encode_weights(model))?;
    Ok(())
}

/// Load weights saved by [`save_weights`], checking the stored spec against
/// the expected one field by field.
pub fn load_weights(spec: &ModelSpec, path: &Path) -> Result<Model, ModelError> {
    let bytes = fs::read(path)?;
    let stored = decode_weights(&bytes)?;
    if let Some(field) = spec.first_mismatch(&stored.spec) {
        return Err(format_err(
            field,
            format!("stored spec does not match the expected spec on \"{field}\""),
        ));
    }
    model_from_stored(stored)
}

/// Parameter-value count a spec implies, including task heads; computed in
/// closed form so hostile headers are rejected before any allocation.
fn expected_value_count(spec: &ModelSpec, extra_heads: &[HeadSpec]) -> Result<u128, ModelError> {
    let encoder = spec.count_parameters()?.total as u128;
    let head_in = match spec.kind {
        super::ModelKind::TransformerEncoder => spec.hidden_size,
        super::ModelKind::Bigru => 2 * spec.hidden_size,
    } as u128;
    let mut total = encoder;
    for head in std::iter::once(&spec.head).chain(extra_heads) {
        let out = head.output_size() as u128;
        total += head_in * out + out;
    }
    Ok(total)
}

/// Rebuild a model from decoded weights.
pub fn model_from_stored(stored: StoredWeights) -> Result<Model, ModelError> {
    let expected = expected_value_count(&stored.spec, &stored.extra_heads)?;
    if expected != stored.values.len() as u128 {
        return Err(format_err(
            "value_count",
            format!("spec implies {expected} values, file holds {}", stored.values.len()),
        ));
    }
    let mut model = build_model(&stored.spec, 0)?;
    for (i, head) in stored.extra_heads.iter().enumerate() {
        model.add_head(head.clone(), Rng::derive(0, i as u64 + 1))?;
    }
    let actual: usize = model.parameters().iter().map(|p| p.tensor.numel()).sum();
    debug_assert_eq!(actual as u128, expected);
    let mut cursor = 0;
    for p in model.parameters() {
        let n = p.tensor.numel();
        p.tensor.update_data(|data| {
            data.copy_from_slice(&stored.values[cursor..cursor + n]);
        });
        cursor += n;
    }
    Ok(model)
}
