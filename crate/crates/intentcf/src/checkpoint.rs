//! Parameter checkpoint container: a sectioned text format mapping
//! canonical parameter names to shapes and row-major values.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! save/load cycle reproduces every parameter bit for bit.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParameters};
use crate::tensor::Tensor2;

const MAGIC: &str = "intentcf-checkpoint";
const VERSION: u32 = 1;

/// Serializes every parameter in canonical order.
pub fn to_text(params: &ModelParameters) -> String {
    let named = params.named_tensors();
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC} v{VERSION}");
    let _ = writeln!(out, "num_users {}", params.num_users);
    let _ = writeln!(out, "num_items {}", params.num_items);
    let _ = writeln!(out, "tensors {}", named.len());
    for (name, t) in named {
        let _ = writeln!(out, "tensor {name} {} {}", t.rows(), t.cols());
        for r in 0..t.rows() {
            let row: Vec<String> = t.row(r).iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
    }
    out.push_str("end\n");
    out
}

pub fn save(params: &ModelParameters, path: &Path) -> Result<()> {
    std::fs::write(path, to_text(params)).map_err(|e| Error::io(path.display().to_string(), e))
}

fn bad(detail: impl Into<String>) -> Error {
    Error::Checkpoint(detail.into())
}

/// Parses a checkpoint and validates it against the expected
/// architecture; every shape must match what `config` would build for
/// the stored user/item counts.
pub fn from_text(text: &str, config: &ModelConfig) -> Result<ModelParameters> {
    let mut lines = text.lines().enumerate();
    let mut next_line = |what: &str| -> Result<(usize, &str)> {
        lines
            .next()
            .map(|(n, l)| (n + 1, l))
            .ok_or_else(|| bad(format!("unexpected end of file, expected {what}")))
    };

    let (_, header) = next_line("header")?;
    let expected_header = format!("{MAGIC} v{VERSION}");
    if header != expected_header {
        return Err(bad(format!(
            "bad header {header:?}, expected {expected_header:?}"
        )));
    }
    let parse_count = |line: &str, key: &str| -> Result<usize> {
        let rest = line
            .strip_prefix(key)
            .ok_or_else(|| bad(format!("expected \"{key} <count>\", got {line:?}")))?;
        rest.trim()
            .parse()
            .map_err(|_| bad(format!("bad count in {line:?}")))
    };
    let (_, line) = next_line("num_users")?;
    let num_users = parse_count(line, "num_users")?;
    let (_, line) = next_line("num_items")?;
    let num_items = parse_count(line, "num_items")?;
    let (_, line) = next_line("tensors")?;
    let tensor_count = parse_count(line, "tensors")?;

    let mut tensors: HashMap<String, Tensor2> = HashMap::with_capacity(tensor_count);
    for _ in 0..tensor_count {
        let (n, line) = next_line("tensor header")?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some("tensor") {
            return Err(bad(format!("line {n}: expected tensor header, got {line:?}")));
        }
        let name = parts
            .next()
            .ok_or_else(|| bad(format!("line {n}: tensor header missing name")))?
            .to_string();
        let dims: Vec<usize> = parts
            .map(|p| p.parse().map_err(|_| bad(format!("line {n}: bad shape in {line:?}"))))
            .collect::<Result<_>>()?;
        let [rows, cols] = dims[..] else {
            return Err(bad(format!("line {n}: tensor header needs rows and cols")));
        };
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (n, line) = next_line("tensor row")?;
            for field in line.split_whitespace() {
                let v: f64 = field
                    .parse()
                    .map_err(|_| bad(format!("line {n}: bad value {field:?}")))?;
                data.push(v);
            }
        }
        if data.len() != rows * cols {
            return Err(bad(format!(
                "tensor {name}: expected {} values, found {}",
                rows * cols,
                data.len()
            )));
        }
        if tensors
            .insert(name.clone(), Tensor2::from_vec(rows, cols, data)?)
            .is_some()
        {
            return Err(bad(format!("duplicate tensor {name}")));
        }
    }
    let (_, line) = next_line("end marker")?;
    if line != "end" {
        return Err(bad(format!("expected end marker, got {line:?}")));
    }

    // Build the expected skeleton, then fill it by name with shape
    // checks against the configured architecture.
    let mut params = ModelParameters::init(config.clone(), num_users, num_items, 0)?;
    for (name, slot) in params.named_tensors_mut() {
        let loaded = tensors.remove(&name).ok_or_else(|| {
            bad(format!(
                "checkpoint is missing tensor {name}; it may have been written \
                 under a different alignment or fusion configuration"
            ))
        })?;
        if loaded.shape() != slot.shape() {
            return Err(bad(format!(
                "tensor {name} has shape {}x{}, config expects {}x{}",
                loaded.rows(),
                loaded.cols(),
                slot.rows(),
                slot.cols()
            )));
        }
        *slot = loaded;
    }
    if let Some(extra) = tensors.keys().next() {
        return Err(bad(format!("checkpoint has unexpected tensor {extra}")));
    }
    Ok(params)
}

pub fn load(path: &Path, config: &ModelConfig) -> Result<ModelParameters> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::Usage(format!("checkpoint not found: {}", path.display()))
        } else {
            Error::io(path.display().to_string(), e)
        }
    })?;
    from_text(&text, config)
}
