//! Binary checkpoints: `SCL1`, a little-endian u32 header length, a JSON
//! header, then every parameter tensor as little-endian f32 in header order.

use std::fs;
use std::path::Path;

use scorecl_autodiff::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{CheckpointError, Error, Result};
use crate::nn::{Architecture, ParamSet};
use crate::score::ScoreModel;

pub const MAGIC: &[u8; 4] = b"SCL1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub architecture: Architecture,
    pub tensors: Vec<TensorEntry>,
    /// σ ladder of a score model; absent for encoders.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigmas: Option<Vec<f64>>,
    pub step: u64,
    /// Echo of the resolved config that produced the parameters.
    #[serde(default)]
    pub config: serde_json::Value,
    /// Wall-clock seconds since the epoch at save time. The only field that
    /// differs between otherwise identical runs; omitted unless requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock: Option<f64>,
}

impl CheckpointHeader {
    pub fn new(params: &ParamSet<f32>, step: u64, config: serde_json::Value) -> Self {
        CheckpointHeader {
            architecture: params.architecture().clone(),
            tensors: params
                .iter()
                .map(|(name, t)| TensorEntry { name: name.to_string(), shape: t.shape().to_vec() })
                .collect(),
            sigmas: None,
            step,
            config,
            wall_clock: None,
        }
    }
}

pub fn encode_checkpoint(params: &ParamSet<f32>, header: &CheckpointHeader) -> Result<Vec<u8>> {
    let listed: Vec<(&str, &[usize])> = header.tensors.iter().map(|e| (e.name.as_str(), e.shape.as_slice())).collect();
    let actual: Vec<(&str, &[usize])> = params.iter().map(|(n, t)| (n, t.shape())).collect();
    if listed != actual || &header.architecture != params.architecture() {
        return Err(CheckpointError::Header("header does not describe these parameters".into()).into());
    }
    let json = serde_json::to_vec(header).map_err(|e| CheckpointError::Header(e.to_string()))?;
    let mut out = Vec::with_capacity(8 + json.len() + 4 * params.scalar_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for t in params.tensors() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ParamSet<f32>, CheckpointHeader)> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic { found: bytes.iter().take(4).copied().collect() }.into());
    }
    let len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let json = bytes
        .get(8..8 + len)
        .ok_or_else(|| CheckpointError::Header(format!("header of {len} bytes exceeds the file")))?;
    let header: CheckpointHeader =
        serde_json::from_slice(json).map_err(|e| CheckpointError::Header(e.to_string()))?;
    header.architecture.validate().map_err(|e| CheckpointError::Header(e.to_string()))?;

    let expected = header.architecture.parameter_shapes();
    if expected.len() != header.tensors.len() {
        return Err(CheckpointError::Header(format!(
            "{} tensors listed, architecture has {}",
            header.tensors.len(),
            expected.len()
        ))
        .into());
    }
    for (entry, (name, shape)) in header.tensors.iter().zip(&expected) {
        if &entry.name != name || &entry.shape != shape {
            return Err(CheckpointError::ShapeMismatch {
                name: entry.name.clone(),
                header: entry.shape.clone(),
                expected: shape.clone(),
            }
            .into());
        }
    }
    let mut rest = &bytes[8 + len..];
    let mut parts = Vec::with_capacity(expected.len());
    for (name, shape) in expected {
        let need = 4 * shape.iter().product::<usize>();
        if rest.len() < need {
            return Err(CheckpointError::Truncated { tensor: name, expected: need, available: rest.len() }.into());
        }
        let data = rest[..need]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        parts.push((name, Tensor::new(&shape, data)?));
        rest = &rest[need..];
    }
    if !rest.is_empty() {
        return Err(CheckpointError::TrailingBytes(rest.len()).into());
    }
    Ok((ParamSet::from_parts(&header.architecture, parts)?, header))
}

pub fn save_checkpoint(path: &Path, params: &ParamSet<f32>, header: &CheckpointHeader) -> Result<()> {
    fs::write(path, encode_checkpoint(params, header)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ParamSet<f32>, CheckpointHeader)> {
    decode_checkpoint(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn save_score_model(path: &Path, model: &ScoreModel<f32>, step: u64, config: serde_json::Value) -> Result<()> {
    let mut header = CheckpointHeader::new(model.params(), step, config);
    header.sigmas = Some(model.sigmas().to_vec());
    save_checkpoint(path, model.params(), &header)
}

pub fn load_score_model(path: &Path) -> Result<(ScoreModel<f32>, CheckpointHeader)> {
    let (params, header) = load_checkpoint(path)?;
    let sigmas = header
        .sigmas
        .clone()
        .ok_or_else(|| CheckpointError::Header(format!("{} holds no σ ladder", path.display())))?;
    Ok((ScoreModel::new(params, sigmas)?, header))
}
