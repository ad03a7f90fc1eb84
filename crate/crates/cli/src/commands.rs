use std::path::{Path, PathBuf};

use contrailseg::checks::{gradcheck_suite, SuiteOptions};
use contrailseg::metrics::{threshold, DiceCounts};
use contrailseg::synth::generate;
use contrailseg::train::{
    ablation, cross_validate, evaluate, fit, generate_pseudo_labels, two_phase_train, PseudoLabelSet, SplitItems,
    TrainItem, TwoPhaseOutcome, ABLATION_ROWS,
};
use contrailseg::{Dataset, Model, Tensor};
use serde::Serialize;
use serde_json::json;

use crate::config::{write_file, RunConfig};
use crate::error::CliError;
use crate::masks::{load_masks, write_mask};
use crate::overlay;

type Res<T = ()> = Result<T, CliError>;

/// A command's view of the resolved config and its output directory.
pub struct Ctx {
    pub cfg: RunConfig,
}

impl Ctx {
    fn out(&self) -> &Path {
        &self.cfg.out
    }

    fn begin(&self) -> Res {
        self.cfg.write_into(self.out())
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Res {
        let text = serde_json::to_string_pretty(value).expect("report serializes") + "\n";
        write_file(&self.out().join(name), text.as_bytes())
    }

    /// Loads `data`, or generates the configured corpus when absent.
    fn corpus(&self, data: Option<&Path>) -> Res<Dataset> {
        match data {
            Some(dir) => Ok(Dataset::load(dir)?),
            None => Ok(generate(&self.cfg.scene, self.cfg.split.total())?),
        }
    }

    fn split(&self, data: Option<&Path>) -> Res<SplitItems> {
        Ok(self.cfg.split.apply(&self.corpus(data)?)?)
    }
}

fn predict_one(model: &Model, image: &Tensor, ctx: &Ctx) -> Res<Tensor> {
    let cfg = &ctx.cfg.train;
    let x = if cfg.use_mc { contrailseg::labels::misalignment_correct(image, &cfg.correction)? } else { image.clone() };
    let shape = [1, x.shape()[0], x.shape()[1], x.shape()[2]];
    let probs = model.predict(&x.reshape(&shape)?)?;
    let (h, w) = (shape[2], shape[3]);
    Ok(probs.reshape(&[h, w])?)
}

fn write_predictions(ctx: &Ctx, model: &Model, items: &[TrainItem], dir: &str) -> Res {
    let dir = ctx.out().join(dir);
    for it in items {
        write_mask(&dir, &it.id, &predict_one(model, &it.image, ctx)?)?;
    }
    Ok(())
}

fn write_pseudo(ctx: &Ctx, pseudo: &PseudoLabelSet) -> Res {
    let dir = ctx.out().join("pseudo");
    for (id, m) in &pseudo.entries {
        write_mask(&dir, id, &m.to_tensor())?;
    }
    ctx.write_json("pseudo.json", &json!({"config_hash": ctx.cfg.hash(), "labels": pseudo.summary_json()}))
}

pub fn synth(ctx: &Ctx, count: Option<usize>) -> Res {
    let n = count.unwrap_or(ctx.cfg.split.total());
    let data = generate(&ctx.cfg.scene, n)?;
    data.save(ctx.out())?;
    ctx.begin()?;
    println!("wrote {n} samples to {}", ctx.out().display());
    Ok(())
}

fn two_phase_outputs(ctx: &Ctx, split: &SplitItems) -> Res<TwoPhaseOutcome> {
    let out = two_phase_train(&split.labeled, &split.unlabeled, &split.holdout, &ctx.cfg.network, &ctx.cfg.train)?;
    out.model.save(&ctx.out().join("model.ten"))?;
    write_pseudo(ctx, &out.pseudo)?;
    ctx.write_json("two_phase.json", &json!({"config_hash": ctx.cfg.hash(), "report": out.report}))?;
    write_predictions(ctx, &out.model, &split.holdout, "predictions")?;
    Ok(out)
}

pub fn train(ctx: &Ctx, data: Option<&Path>) -> Res {
    ctx.begin()?;
    let split = ctx.split(data)?;
    if ctx.cfg.train.use_pseudo_labels {
        let out = two_phase_outputs(ctx, &split)?;
        if let Some(h) = &out.report.phase2_holdout {
            println!("holdout dice {:.4}", h.dice);
        }
        return Ok(());
    }
    let fitted = fit(&split.labeled, &ctx.cfg.network, &ctx.cfg.train)?;
    fitted.model.save(&ctx.out().join("model.ten"))?;
    let holdout =
        if split.holdout.is_empty() { None } else { Some(evaluate(&fitted.model, &split.holdout, &ctx.cfg.train)?) };
    ctx.write_json(
        "metrics.json",
        &json!({"config_hash": ctx.cfg.hash(), "epoch_losses": fitted.epoch_losses, "holdout": holdout}),
    )?;
    write_predictions(ctx, &fitted.model, &split.holdout, "predictions")?;
    if let Some(h) = holdout {
        println!("holdout dice {:.4}", h.dice);
    }
    Ok(())
}

pub fn crossval(ctx: &Ctx, data: Option<&Path>) -> Res {
    ctx.begin()?;
    let split = ctx.split(data)?;
    let cv = cross_validate(&split.labeled, &ctx.cfg.network, &ctx.cfg.train)?;
    let best = cv.report.best_fold();
    cv.folds[best].model.save(&ctx.out().join("best_fold.ten"))?;
    let folds: Vec<_> = cv
        .folds
        .iter()
        .zip(&cv.splits)
        .map(|(f, (tr, va))| {
            json!({"train_ids": tr, "validation_ids": va, "error": f.error, "validation": f.validation, "epoch_losses": f.epoch_losses})
        })
        .collect();
    ctx.write_json(
        "crossval.json",
        &json!({"config_hash": ctx.cfg.hash(), "fold_errors": cv.report.fold_errors, "e_cv": cv.report.e_cv, "best_fold": best, "folds": folds}),
    )?;
    println!("e_cv {:.4} best fold {best}", cv.report.e_cv);
    Ok(())
}

pub fn pseudolabel(ctx: &Ctx, model: &Path, data: Option<&Path>) -> Res {
    ctx.begin()?;
    let split = ctx.split(data)?;
    let model = Model::load(model, &ctx.cfg.network)?;
    let pseudo = generate_pseudo_labels(&model, &split.unlabeled, &ctx.cfg.train)?;
    write_pseudo(ctx, &pseudo)?;
    println!("wrote {} pseudo-labels", pseudo.len());
    Ok(())
}

pub fn two_phase(ctx: &Ctx, data: Option<&Path>) -> Res {
    ctx.begin()?;
    let split = ctx.split(data)?;
    let out = two_phase_outputs(ctx, &split)?;
    println!(
        "e_cv {:.4} best fold {} pseudo-labels {}",
        out.report.cross_validation.e_cv, out.report.best_fold, out.report.pseudo_labels
    );
    if let Some(h) = &out.report.phase2_holdout {
        println!("holdout dice {:.4}", h.dice);
    }
    Ok(())
}

pub fn eval(ctx: &Ctx, pred: &Path, truth: &Path) -> Res {
    ctx.begin()?;
    let t = ctx.cfg.train.eval_threshold;
    let preds = load_masks(pred, t)?;
    let truths = load_masks(truth, t)?;
    let mut pooled = DiceCounts::default();
    let mut rows = Vec::with_capacity(preds.len());
    // Every prediction is scored; truth may cover more samples than were predicted.
    for (id, p) in &preds {
        let gt = truths.get(id).ok_or_else(|| CliError::runtime(format!("no truth mask for {id}")))?;
        if !p.same_shape(gt) {
            return Err(CliError::runtime(format!("{id}: prediction and truth shapes differ")));
        }
        let c = DiceCounts::of(p, gt);
        pooled.add(c);
        rows.push(json!({"sample_id": id, "dice": c.dice()}));
    }
    let mean = rows.iter().map(|r| r["dice"].as_f64().expect("number")).sum::<f64>() / rows.len() as f64;
    ctx.write_json(
        "eval.json",
        &json!({"config_hash": ctx.cfg.hash(), "dice": pooled.dice(), "mean_dice": mean, "per_sample": rows}),
    )?;
    println!("dice {:.6} mean {:.6} over {} masks", pooled.dice(), mean, rows.len());
    Ok(())
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn ablate(ctx: &Ctx, data: Option<&Path>) -> Res {
    ctx.begin()?;
    let seeds = &ctx.cfg.ablation.seeds;
    let loaded = data.map(Dataset::load).transpose()?;
    let mut per_seed: Vec<Vec<f64>> = vec![Vec::new(); ABLATION_ROWS.len()];
    for &seed in seeds {
        let corpus = match &loaded {
            Some(d) => d.clone(),
            None => generate(&contrailseg::SceneConfig { seed, ..ctx.cfg.scene.clone() }, ctx.cfg.split.total())?,
        };
        let split = ctx.cfg.split.apply(&corpus)?;
        let train = contrailseg::TrainConfig { seed, ..ctx.cfg.train.clone() };
        let rows = ablation(&split.labeled, &split.unlabeled, &split.holdout, &ctx.cfg.network, &train)?;
        for (acc, r) in per_seed.iter_mut().zip(rows) {
            acc.push(r.dice);
        }
    }
    let rows: Vec<_> = ABLATION_ROWS
        .iter()
        .zip(&per_seed)
        .map(|(&(name, mc, sl, pl), d)| {
            json!({"name": name, "use_mc": mc, "use_soft_labels": sl, "use_pseudo_labels": pl, "dice": d, "median_dice": median(d)})
        })
        .collect();
    ctx.write_json("ablation.json", &json!({"config_hash": ctx.cfg.hash(), "seeds": seeds, "rows": rows}))?;

    let mut table = String::from("| Configuration | Median Dice |");
    for s in seeds {
        table.push_str(&format!(" seed {s} |"));
    }
    table.push_str("\n|---|---|");
    table.push_str(&"---|".repeat(seeds.len()));
    table.push('\n');
    for (&(name, ..), d) in ABLATION_ROWS.iter().zip(&per_seed) {
        table.push_str(&format!("| {name} | {:.5} |", median(d)));
        for v in d {
            table.push_str(&format!(" {v:.5} |"));
        }
        table.push('\n');
    }
    write_file(&ctx.out().join("ablation.md"), table.as_bytes())?;
    print!("{table}");
    Ok(())
}

pub fn gradcheck(ctx: &Ctx, seeds: u64, coordinates: usize) -> Res {
    ctx.begin()?;
    let results = gradcheck_suite(&SuiteOptions { seeds, end_to_end_coordinates: coordinates })?;
    ctx.write_json("gradcheck.json", &json!({"config_hash": ctx.cfg.hash(), "checks": results}))?;
    for r in &results {
        let verdict = if r.passed { "ok" } else { "FAIL" };
        println!("{verdict:<4} {:<22} max rel error {:.3e} (tolerance {:.0e})", r.name, r.max_rel_error, r.tolerance);
    }
    let failed: Vec<_> = results.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime { kind: "gradcheck", message: format!("failed: {}", failed.join(", ")) })
    }
}

pub fn report(ctx: &Ctx, model: &Path, data: Option<&Path>) -> Res {
    ctx.begin()?;
    let split = ctx.split(data)?;
    let model = Model::load(model, &ctx.cfg.network)?;
    let items = if split.holdout.is_empty() { &split.labeled } else { &split.holdout };
    let metrics = evaluate(&model, items, &ctx.cfg.train)?;
    let dir: PathBuf = ctx.out().join("overlays");
    for it in items {
        let probs = predict_one(&model, &it.image, ctx)?;
        let (h, w) = (probs.shape()[0], probs.shape()[1]);
        let pred = threshold(&probs.reshape(&[1, 1, h, w])?, ctx.cfg.train.eval_threshold)?;
        let img = overlay::render(&it.image, &pred, it.truth.as_ref());
        overlay::save(&dir.join(format!("{}.png", it.id)), &img)?;
    }
    ctx.write_json("report.json", &json!({"config_hash": ctx.cfg.hash(), "metrics": metrics}))?;
    println!("dice {:.4} over {} images; overlays in {}", metrics.dice, items.len(), dir.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::median;

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
