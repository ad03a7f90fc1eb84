use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::data::{TrainItem, UnlabeledItem};
use super::fit::{evaluate, fit, fit_from, EvalReport};
use super::folds::{cross_validate, CrossValReport};
use super::pseudo::{generate_pseudo_labels, PseudoLabelSet};
use crate::error::Result;
use crate::model::{Model, NetworkSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoPhaseReport {
    pub cross_validation: CrossValReport,
    pub best_fold: usize,
    pub pseudo_labels: usize,
    /// Best fold model scored on the held-out set.
    pub phase1_holdout: Option<EvalReport>,
    pub phase2_holdout: Option<EvalReport>,
    pub phase2_epoch_losses: Vec<f64>,
}

pub struct TwoPhaseOutcome {
    pub model: Model,
    pub pseudo: PseudoLabelSet,
    pub report: TwoPhaseReport,
}

/// Phase one cross-validates on `labeled`; the best fold labels
/// `unlabeled`; phase two retrains on the union. An empty `unlabeled`
/// makes phase two plain training on `labeled`.
pub fn two_phase_train(
    labeled: &[TrainItem],
    unlabeled: &[UnlabeledItem],
    holdout: &[TrainItem],
    spec: &NetworkSpec,
    cfg: &TrainConfig,
) -> Result<TwoPhaseOutcome> {
    let cv = cross_validate(labeled, spec, cfg)?;
    let best = cv.report.best_fold();
    let best_model = &cv.folds[best].model;
    let pseudo = if unlabeled.is_empty() {
        PseudoLabelSet { entries: Vec::new() }
    } else {
        generate_pseudo_labels(best_model, unlabeled, cfg)?
    };
    let phase1_holdout = if holdout.is_empty() { None } else { Some(evaluate(best_model, holdout, cfg)?) };

    let mut merged = labeled.to_vec();
    merged.extend(pseudo.to_items(unlabeled, cfg.pseudo_threshold)?);
    let phase2 = if cfg.phase2_fresh_init {
        fit(&merged, spec, cfg)?
    } else {
        let start = cv.folds.into_iter().nth(best).expect("best fold exists").model;
        fit_from(start, &merged, cfg)?
    };
    let phase2_holdout = if holdout.is_empty() { None } else { Some(evaluate(&phase2.model, holdout, cfg)?) };
    Ok(TwoPhaseOutcome {
        model: phase2.model,
        report: TwoPhaseReport {
            cross_validation: cv.report,
            best_fold: best,
            pseudo_labels: pseudo.len(),
            phase1_holdout,
            phase2_holdout,
            phase2_epoch_losses: phase2.epoch_losses,
        },
        pseudo,
    })
}

/// `(name, use_mc, use_soft_labels, use_pseudo_labels)` in reporting order.
pub const ABLATION_ROWS: [(&str, bool, bool, bool); 4] = [
    ("Baseline", false, false, false),
    ("Baseline + MC", true, false, false),
    ("Baseline + MC + SL", true, true, false),
    ("Baseline + MC + SL + PL", true, true, true),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub use_mc: bool,
    pub use_soft_labels: bool,
    pub use_pseudo_labels: bool,
    /// Pooled held-out Dice.
    pub dice: f64,
    pub mean_dice: f64,
}

/// Trains the four incremental configurations and scores each on `holdout`.
/// The flags in `cfg` are overridden per row; everything else is shared.
pub fn ablation(
    labeled: &[TrainItem],
    unlabeled: &[UnlabeledItem],
    holdout: &[TrainItem],
    spec: &NetworkSpec,
    cfg: &TrainConfig,
) -> Result<Vec<AblationRow>> {
    if holdout.is_empty() {
        return Err(crate::error::Error::Usage("ablation needs a held-out set".into()));
    }
    ABLATION_ROWS
        .iter()
        .map(|&(name, mc, sl, pl)| {
            let row_cfg = TrainConfig { use_mc: mc, use_soft_labels: sl, use_pseudo_labels: pl, ..cfg.clone() };
            let eval = if pl {
                let out = two_phase_train(labeled, unlabeled, holdout, spec, &row_cfg)?;
                out.report.phase2_holdout.expect("holdout is non-empty")
            } else {
                let model = fit(labeled, spec, &row_cfg)?.model;
                evaluate(&model, holdout, &row_cfg)?
            };
            Ok(AblationRow {
                name: name.to_string(),
                use_mc: mc,
                use_soft_labels: sl,
                use_pseudo_labels: pl,
                dice: eval.dice,
                mean_dice: eval.mean_dice,
            })
        })
        .collect()
}
