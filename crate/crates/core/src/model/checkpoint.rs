//! Checkpoint files: a UTF-8 header followed by raw parameter data.
//!
//! ```text
//! EMGFORGE-CKPT 1
//! [config]
//! kernel_size = 3
//! ...
//! [meta]
//! train_seed = 42
//! [params]
//! input_scaler.scale 6 1
//! input_proj.weight 32 6
//! ...
//! [data]
//! <little-endian binary64 values, params in manifest order>
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{Activation, ModelConfig, ModelWeights, IMU_CHANNELS};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &str = "EMGFORGE-CKPT";
const VERSION: u32 = 1;
const DATA_MARKER: &[u8] = b"[data]\n";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub weights: ModelWeights,
    /// Free-form run metadata (seeds, split fraction, motion label...).
    pub meta: BTreeMap<String, String>,
}

pub fn save_weights(weights: &ModelWeights, path: &Path) -> Result<()> {
    save_checkpoint(
        &Checkpoint {
            weights: weights.clone(),
            meta: BTreeMap::new(),
        },
        path,
    )
}

pub fn load_weights(path: &Path) -> Result<ModelWeights> {
    Ok(load_checkpoint(path)?.weights)
}

/// Loads a checkpoint and rejects it unless its configuration equals `expected`.
pub fn load_weights_expecting(path: &Path, expected: &ModelConfig) -> Result<ModelWeights> {
    Ok(load_checkpoint_expecting(path, expected)?.weights)
}

/// As [`load_weights_expecting`], keeping the metadata.
pub fn load_checkpoint_expecting(path: &Path, expected: &ModelConfig) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    check_config(&ckpt.weights.config, expected)?;
    Ok(ckpt)
}

fn check_config(got: &ModelConfig, expected: &ModelConfig) -> Result<()> {
    let fields: [(&str, String, String); 6] = [
        (
            "kernel_size",
            got.kernel_size.to_string(),
            expected.kernel_size.to_string(),
        ),
        ("blocks", got.blocks.to_string(), expected.blocks.to_string()),
        (
            "residual_channels",
            got.residual_channels.to_string(),
            expected.residual_channels.to_string(),
        ),
        (
            "skip_channels",
            got.skip_channels.to_string(),
            expected.skip_channels.to_string(),
        ),
        ("window", got.window.to_string(), expected.window.to_string()),
        (
            "activation",
            got.activation.as_str().to_string(),
            expected.activation.as_str().to_string(),
        ),
    ];
    for (name, have, want) in fields {
        if have != want {
            return Err(Error::Checkpoint(format!(
                "config field `{name}`: checkpoint has {have}, runtime expects {want}"
            )));
        }
    }
    Ok(())
}

fn named_tensors(weights: &ModelWeights) -> Result<Vec<(String, Tensor)>> {
    let mut out = vec![
        (
            "input_scaler.scale".to_string(),
            Tensor::from_vec(IMU_CHANNELS, 1, weights.scaler.scale.clone())?,
        ),
        (
            "input_scaler.shift".to_string(),
            Tensor::from_vec(IMU_CHANNELS, 1, weights.scaler.shift.clone())?,
        ),
    ];
    out.extend(weights.params().into_iter().map(|(n, t)| (n, t.clone())));
    Ok(out)
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let w = &ckpt.weights;
    let cfg = &w.config;
    let mut header = format!("{MAGIC} {VERSION}\n[config]\n");
    header.push_str(&format!("kernel_size = {}\n", cfg.kernel_size));
    header.push_str(&format!("blocks = {}\n", cfg.blocks));
    header.push_str(&format!("residual_channels = {}\n", cfg.residual_channels));
    header.push_str(&format!("skip_channels = {}\n", cfg.skip_channels));
    header.push_str(&format!("window = {}\n", cfg.window));
    header.push_str(&format!("activation = {}\n", cfg.activation.as_str()));
    header.push_str("[meta]\n");
    for (k, v) in &ckpt.meta {
        if k.contains(['=', '\n']) || v.contains('\n') || k.trim() != k {
            return Err(Error::Checkpoint(format!("unencodable meta entry `{k}`")));
        }
        header.push_str(&format!("{k} = {v}\n"));
    }
    header.push_str("[params]\n");
    let tensors = named_tensors(w)?;
    for (name, t) in &tensors {
        header.push_str(&format!("{name} {} {}\n", t.channels(), t.len()));
    }

    let mut bytes = header.into_bytes();
    bytes.extend_from_slice(DATA_MARKER);
    for (_, t) in &tensors {
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let split = bytes
        .windows(DATA_MARKER.len())
        .position(|w| w == DATA_MARKER)
        .ok_or_else(|| Error::Checkpoint("missing data section (truncated header?)".into()))?;
    let header = std::str::from_utf8(&bytes[..split]).map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?;
    let data = &bytes[split + DATA_MARKER.len()..];

    let mut lines = header.lines();
    let first = lines.next().unwrap_or_default();
    match first.split_once(' ') {
        Some((MAGIC, v)) if v == VERSION.to_string() => {}
        Some((MAGIC, v)) => {
            return Err(Error::Checkpoint(format!(
                "unsupported version {v}, expected {VERSION}"
            )))
        }
        _ => return Err(Error::Checkpoint("not an emg-forge checkpoint".into())),
    }

    let mut section = "";
    let mut config: BTreeMap<&str, &str> = BTreeMap::new();
    let mut meta = BTreeMap::new();
    let mut manifest: Vec<(String, usize, usize)> = Vec::new();
    for line in lines {
        if line.starts_with('[') {
            section = line;
            continue;
        }
        match section {
            "[config]" | "[meta]" => {
                let (k, v) = line
                    .split_once(" = ")
                    .ok_or_else(|| Error::Checkpoint(format!("malformed line `{line}`")))?;
                if section == "[config]" {
                    config.insert(k, v);
                } else {
                    meta.insert(k.to_string(), v.to_string());
                }
            }
            "[params]" => {
                let parts: Vec<&str> = line.split(' ').collect();
                let [name, rows, cols] = parts[..] else {
                    return Err(Error::Checkpoint(format!("malformed manifest line `{line}`")));
                };
                let dim = |s: &str| {
                    s.parse::<usize>()
                        .map_err(|_| Error::Checkpoint(format!("bad dimension in `{line}`")))
                };
                manifest.push((name.to_string(), dim(rows)?, dim(cols)?));
            }
            other => return Err(Error::Checkpoint(format!("unknown section `{other}`"))),
        }
    }

    let field = |name: &str| -> Result<usize> {
        config
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("config field `{name}` missing")))?
            .parse()
            .map_err(|_| Error::Checkpoint(format!("config field `{name}` is not an integer")))
    };
    let activation = match config.get("activation").copied() {
        Some("gated") => Activation::Gated,
        Some("relu") => Activation::Relu,
        other => {
            return Err(Error::Checkpoint(format!(
                "config field `activation` invalid: {other:?}"
            )))
        }
    };
    let cfg = ModelConfig {
        kernel_size: field("kernel_size")?,
        blocks: field("blocks")?,
        residual_channels: field("residual_channels")?,
        skip_channels: field("skip_channels")?,
        window: field("window")?,
        activation,
    };
    let mut weights = ModelWeights::zeros(&cfg).map_err(|e| Error::Checkpoint(format!("invalid config: {e}")))?;

    let expected: Vec<(String, usize, usize)> = named_tensors(&weights)?
        .into_iter()
        .map(|(n, t)| (n, t.channels(), t.len()))
        .collect();
    if manifest != expected {
        return Err(Error::Checkpoint(
            "parameter manifest does not match the stored config".into(),
        ));
    }
    let total: usize = manifest.iter().map(|(_, r, c)| r * c).sum();
    if data.len() != total * 8 {
        return Err(Error::Checkpoint(format!(
            "data section holds {} bytes, manifest needs {}",
            data.len(),
            total * 8
        )));
    }

    let mut values = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")));
    let mut take = |n: usize| -> Vec<f64> { values.by_ref().take(n).collect() };
    weights.scaler.scale = take(IMU_CHANNELS);
    weights.scaler.shift = take(IMU_CHANNELS);
    for (_, t) in weights.params_mut() {
        let n = t.data().len();
        t.data_mut().copy_from_slice(&take(n));
    }
    Ok(Checkpoint { weights, meta })
}
