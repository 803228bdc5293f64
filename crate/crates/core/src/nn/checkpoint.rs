use crate::error::{MlcsError, Result};
use crate::nn::DenseMatrix;
use serde::{Deserialize, Serialize};
use std::path::Path;

const CHECKPOINT_VERSION: u32 = 1;

/// Versioned container of named parameter matrices. JSON keeps the format
/// inspectable; f64 values round-trip exactly.
#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub entries: Vec<CheckpointEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

pub fn save_checkpoint(path: &Path, entries: &[(String, &DenseMatrix)]) -> Result<()> {
    let checkpoint = Checkpoint {
        version: CHECKPOINT_VERSION,
        entries: entries
            .iter()
            .map(|(name, m)| CheckpointEntry {
                name: name.clone(),
                rows: m.rows(),
                cols: m.cols(),
                data: m.data().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_string(&checkpoint)
        .map_err(|e| MlcsError::Checkpoint(format!("serialize: {e}")))?;
    std::fs::write(path, json).map_err(|e| MlcsError::io(path, e))
}

/// Load a checkpoint and validate names and shapes against the expected
/// skeleton (order-sensitive, matching the canonical parameter order).
pub fn load_checkpoint(
    path: &Path,
    expected: &[(String, (usize, usize))],
) -> Result<Vec<DenseMatrix>> {
    let text = std::fs::read_to_string(path).map_err(|e| MlcsError::io(path, e))?;
    let checkpoint: Checkpoint = serde_json::from_str(&text)
        .map_err(|e| MlcsError::Checkpoint(format!("parse {}: {e}", path.display())))?;
    if checkpoint.version != CHECKPOINT_VERSION {
        return Err(MlcsError::Checkpoint(format!(
            "unsupported checkpoint version {} (expected {})",
            checkpoint.version, CHECKPOINT_VERSION
        )));
    }
    if checkpoint.entries.len() != expected.len() {
        return Err(MlcsError::Checkpoint(format!(
            "checkpoint has {} entries, model expects {}",
            checkpoint.entries.len(),
            expected.len()
        )));
    }
    checkpoint
        .entries
        .into_iter()
        .zip(expected.iter())
        .map(|(entry, (name, shape))| {
            if &entry.name != name {
                return Err(MlcsError::Checkpoint(format!(
                    "entry '{}' where '{}' was expected",
                    entry.name, name
                )));
            }
            if (entry.rows, entry.cols) != *shape {
                return Err(MlcsError::Checkpoint(format!(
                    "entry '{}' has shape {}x{}, model expects {}x{}",
                    entry.name, entry.rows, entry.cols, shape.0, shape.1
                )));
            }
            DenseMatrix::from_vec(entry.rows, entry.cols, entry.data)
        })
        .collect()
}
