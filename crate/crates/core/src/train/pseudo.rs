use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::data::{TrainItem, UnlabeledItem};
use super::fit::{check_geometry, model_input};
use crate::error::{Error, Result};
use crate::labels::SoftMask;
use crate::model::Model;
use crate::tensor::Tensor;

/// Model predictions on unlabeled images, one per input, kept as probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabelSet {
    pub entries: Vec<(String, SoftMask)>,
}

#[derive(Serialize, Deserialize)]
struct Summary {
    sample_id: String,
    mean: f64,
}

impl PseudoLabelSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Pairs each pseudo-mask with its image as a truth-less training item.
    /// With `threshold` set the masks are binarized (strict `>`).
    pub fn to_items(&self, images: &[UnlabeledItem], threshold: Option<f32>) -> Result<Vec<TrainItem>> {
        self.entries
            .iter()
            .map(|(id, mask)| {
                let img = images
                    .iter()
                    .find(|u| &u.id == id)
                    .ok_or_else(|| Error::Usage(format!("no image for pseudo-label {id}")))?;
                let soft = match threshold {
                    Some(t) => mask.threshold(t).to_soft(),
                    None => mask.clone(),
                };
                Ok(TrainItem { id: id.clone(), image: img.image.clone(), soft, truth: None })
            })
            .collect()
    }

    /// Per-entry mean probability, a compact record for run reports.
    pub fn summary_json(&self) -> serde_json::Value {
        let rows: Vec<Summary> = self
            .entries
            .iter()
            .map(|(id, m)| Summary {
                sample_id: id.clone(),
                mean: m.values().iter().map(|&v| v as f64).sum::<f64>() / m.values().len() as f64,
            })
            .collect();
        serde_json::to_value(rows).expect("summary serializes")
    }
}

/// Runs inference over `unlabeled`, applying the correction iff `use_mc`.
pub fn generate_pseudo_labels(model: &Model, unlabeled: &[UnlabeledItem], cfg: &TrainConfig) -> Result<PseudoLabelSet> {
    if unlabeled.is_empty() {
        return Err(Error::Usage("no unlabeled samples to pseudo-label".into()));
    }
    let spec = model.spec();
    let s = cfg.image_size;
    let mut entries = Vec::with_capacity(unlabeled.len());
    for u in unlabeled {
        check_geometry(spec, cfg, &u.image)?;
        let x = model_input(&u.image, cfg)?;
        let batch = Tensor::new(&[1, spec.in_channels, s, s], x.into_data())?;
        let probs = model.predict(&batch)?;
        entries.push((u.id.clone(), SoftMask::from_tensor(&probs)?));
    }
    Ok(PseudoLabelSet { entries })
}
