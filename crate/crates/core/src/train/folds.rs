use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::data::TrainItem;
use super::fit::{train_fold, FoldOutcome};
use crate::error::{Error, Result};
use crate::model::NetworkSpec;

/// Partitions `ids` into `k` validation folds, each paired with the
/// remaining ids as its training set. Fold sizes differ by at most one.
pub fn kfold_split<T: Clone>(ids: &[T], k: usize, seed: u64) -> Result<Vec<(Vec<T>, Vec<T>)>> {
    if k < 2 {
        return Err(Error::Usage(format!("k-fold needs k >= 2, got {k}")));
    }
    if k > ids.len() {
        return Err(Error::Usage(format!("k = {k} exceeds the {} available samples", ids.len())));
    }
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_of = vec![0; ids.len()];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % k;
    }
    Ok((0..k)
        .map(|f| {
            let (mut train, mut val) = (Vec::new(), Vec::new());
            for (i, id) in ids.iter().enumerate() {
                if fold_of[i] == f { &mut val } else { &mut train }.push(id.clone());
            }
            (train, val)
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossValReport {
    pub fold_errors: Vec<f64>,
    pub e_cv: f64,
}

impl CrossValReport {
    /// Sums in fold order, so `e_cv` is reproducible bit for bit.
    pub fn from_errors(fold_errors: Vec<f64>) -> Self {
        let e_cv = fold_errors.iter().sum::<f64>() / fold_errors.len() as f64;
        Self { fold_errors, e_cv }
    }

    pub fn best_fold(&self) -> usize {
        // First minimum wins ties.
        self.fold_errors
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |best, (i, &e)| if e < best.1 { (i, e) } else { best })
            .0
    }
}

pub struct CrossValidation {
    pub report: CrossValReport,
    pub folds: Vec<FoldOutcome>,
    /// `(train ids, validation ids)` per fold.
    pub splits: Vec<(Vec<String>, Vec<String>)>,
}

/// Trains one model per fold (folds run in parallel; results are in fold order).
pub fn cross_validate(items: &[TrainItem], spec: &NetworkSpec, cfg: &TrainConfig) -> Result<CrossValidation> {
    cfg.validate()?;
    let idx: Vec<usize> = (0..items.len()).collect();
    let parts = kfold_split(&idx, cfg.folds, cfg.seed)?;
    let folds = parts
        .par_iter()
        .map(|(tr, va)| {
            let train: Vec<TrainItem> = tr.iter().map(|&i| items[i].clone()).collect();
            let val: Vec<TrainItem> = va.iter().map(|&i| items[i].clone()).collect();
            train_fold(&train, &val, spec, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let report = CrossValReport::from_errors(folds.iter().map(|f| f.error).collect());
    let ids = |v: &[usize]| v.iter().map(|&i| items[i].id.clone()).collect::<Vec<_>>();
    let splits = parts.iter().map(|(tr, va)| (ids(tr), ids(va))).collect();
    Ok(CrossValidation { report, folds, splits })
}
