//! Parameter checkpoints: one NGT1 file per named tensor plus a JSON index.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::numerics::{ngt, ParamSet};
use crate::{Error, Result};

pub const CHECKPOINT_INDEX: &str = "index.json";

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    file: String,
    shape: Vec<usize>,
}

pub fn save_checkpoint<P: ParamSet<f32>>(params: &P, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut index = BTreeMap::new();
    for (name, t) in params.named_tensors() {
        let file = format!("{name}.ngt");
        ngt::save(&dir.join(&file), t)?;
        index.insert(name, IndexEntry { file, shape: t.shape().to_vec() });
    }
    ngt::write_atomic(&dir.join(CHECKPOINT_INDEX), &serde_json::to_vec_pretty(&index)?)
}

/// Fills `params` (whose structure fixes the expected names and shapes).
pub fn load_checkpoint<P: ParamSet<f32>>(params: &mut P, dir: &Path) -> Result<()> {
    let index_path = dir.join(CHECKPOINT_INDEX);
    let bytes = std::fs::read(&index_path).map_err(|e| Error::io(&index_path, e))?;
    let index: BTreeMap<String, IndexEntry> = serde_json::from_slice(&bytes)?;
    let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
    if index.len() != names.len() {
        return Err(Error::parse(
            index_path.display().to_string(),
            format!("{} tensors in checkpoint, model has {}", index.len(), names.len()),
        ));
    }
    for (name, slot) in names.iter().zip(params.tensors_mut()) {
        let entry = index
            .get(name)
            .ok_or_else(|| Error::parse(index_path.display().to_string(), format!("missing tensor {name}")))?;
        let t = ngt::load(&dir.join(&entry.file))?;
        if t.shape() != slot.shape() || entry.shape != slot.shape() {
            return Err(Error::Shape(format!(
                "checkpoint tensor {name} has shape {:?}, model expects {:?}",
                t.shape(),
                slot.shape()
            )));
        }
        *slot = t;
    }
    Ok(())
}
