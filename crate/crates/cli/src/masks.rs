//! Mask directories: either a dataset directory (masks are the majority
//! vote of its annotations) or a flat directory of `<id>.ten` files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use contrailseg::container;
use contrailseg::labels::aggregate_majority;
use contrailseg::synth::MANIFEST_FILE;
use contrailseg::{Dataset, HardMask, SoftMask, Tensor};

use crate::error::CliError;

pub const MASK_TENSOR: &str = "mask";

pub fn write_mask(dir: &Path, id: &str, probs: &Tensor) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    container::save(&dir.join(format!("{id}.ten")), &[(MASK_TENSOR, probs)])?;
    Ok(())
}

/// Reads every mask under `dir`, binarized strictly above `threshold`.
pub fn load_masks(dir: &Path, threshold: f32) -> Result<BTreeMap<String, HardMask>, CliError> {
    if dir.join(MANIFEST_FILE).is_file() {
        let data = Dataset::load(dir)?;
        let conv = data.scene.convention;
        return data
            .samples
            .iter()
            .map(|s| Ok((s.id.clone(), aggregate_majority(s.target_annotations(), conv)?)))
            .collect();
    }
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut out = BTreeMap::new();
    for e in entries {
        let path = e.map_err(|e| CliError::io(dir, e))?.path();
        if path.extension().is_none_or(|x| x != "ten") {
            continue;
        }
        let id = path.file_stem().expect("has extension").to_string_lossy().into_owned();
        let tensors = container::load(&path)?;
        let (_, t) =
            tensors.into_iter().next().ok_or_else(|| CliError::runtime(format!("{}: no tensors", path.display())))?;
        out.insert(id, SoftMask::from_tensor(&t)?.threshold(threshold));
    }
    if out.is_empty() {
        return Err(CliError::runtime(format!("{}: no masks found", dir.display())));
    }
    Ok(out)
}
