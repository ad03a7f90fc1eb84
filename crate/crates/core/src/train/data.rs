use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{aggregate_majority, aggregate_soft, HardMask, RasterConvention, SoftMask};
use crate::synth::{Dataset, Sample};
use crate::tensor::Tensor;

/// A training or evaluation example. `image` is raw (uncorrected) `C×H×W`;
/// `truth` is the hard evaluation mask, absent for pseudo-labeled items.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainItem {
    pub id: String,
    pub image: Tensor,
    pub soft: SoftMask,
    pub truth: Option<HardMask>,
}

impl TrainItem {
    /// Labels the target frame: soft = annotator mean, truth = strict majority.
    pub fn from_sample(s: &Sample, convention: RasterConvention) -> Result<Self> {
        let set = s.target_annotations();
        Ok(Self {
            id: s.id.clone(),
            image: s.target_frame().clone(),
            soft: aggregate_soft(set, convention)?,
            truth: Some(aggregate_majority(set, convention)?),
        })
    }

    /// The mask the loss is computed against.
    pub fn target(&self, use_soft_labels: bool) -> SoftMask {
        match (&self.truth, use_soft_labels) {
            (Some(t), false) => t.to_soft(),
            _ => self.soft.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnlabeledItem {
    pub id: String,
    pub image: Tensor,
}

impl From<&Sample> for UnlabeledItem {
    fn from(s: &Sample) -> Self {
        Self { id: s.id.clone(), image: s.target_frame().clone() }
    }
}

/// Sizes of the consecutive labeled / unlabeled / held-out partitions of a corpus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSplit {
    pub labeled: usize,
    pub unlabeled: usize,
    pub holdout: usize,
}

impl Default for DataSplit {
    fn default() -> Self {
        Self { labeled: 40, unlabeled: 40, holdout: 40 }
    }
}

#[derive(Clone, Debug)]
pub struct SplitItems {
    pub labeled: Vec<TrainItem>,
    pub unlabeled: Vec<UnlabeledItem>,
    pub holdout: Vec<TrainItem>,
}

impl DataSplit {
    pub fn total(&self) -> usize {
        self.labeled + self.unlabeled + self.holdout
    }

    pub fn validate(&self) -> Result<()> {
        if self.labeled == 0 {
            return Err(Error::config("split.labeled", "must be >= 1"));
        }
        Ok(())
    }

    pub fn apply(&self, data: &Dataset) -> Result<SplitItems> {
        self.validate()?;
        if data.samples.len() < self.total() {
            return Err(Error::Usage(format!(
                "split needs {} samples, dataset has {}",
                self.total(),
                data.samples.len()
            )));
        }
        let conv = data.scene.convention;
        let (lab, rest) = data.samples.split_at(self.labeled);
        let (unl, rest) = rest.split_at(self.unlabeled);
        Ok(SplitItems {
            labeled: lab.iter().map(|s| TrainItem::from_sample(s, conv)).collect::<Result<_>>()?,
            unlabeled: unl.iter().map(UnlabeledItem::from).collect(),
            holdout: rest[..self.holdout].iter().map(|s| TrainItem::from_sample(s, conv)).collect::<Result<_>>()?,
        })
    }
}
