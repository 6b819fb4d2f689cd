use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde_json::json;

use pfml_core::data::{load_json, write_canonical_json, write_dataset, Manifest};
use pfml_core::finetune::{
    aggregate, cross_validate, evaluate, finetune as run_finetune, grouped_split, linear_probe, uaf1, uar,
    ConfusionMatrix, FitReport, LabeledDataset,
};
use pfml_core::functionals::{precompute_dataset_functionals, FunctionalOptions};
use pfml_core::masking::MaskLocation;
use pfml_core::nn::{Checkpoint, Model, ModelConfig};
use pfml_core::pretrain::{collapse_report as rerun_collapse, pretrain as run_pretrain, read_log, CollapseConfig, Objective, RunOptions};

use crate::configs::*;

fn create(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn labeled(manifest: &Path) -> Result<LabeledDataset> {
    let (m, base) = Manifest::load(manifest)?;
    Ok(LabeledDataset::from_manifest(&m, &base)?)
}

pub fn synth(config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg: SynthConfig = load_json(config)?;
    if let Some(s) = seed {
        cfg.spec.seed = s;
    }
    let m = write_dataset(&cfg.spec, cfg.frame, out)?;
    println!("wrote {} sequences to {}", m.sequences.len(), out.display());
    Ok(())
}

pub fn extract_functionals(config: &Path, out: &Path) -> Result<()> {
    let cfg: ExtractConfig = load_json(config)?;
    let (m, base) = Manifest::load(&resolve(&base_dir(config), &cfg.manifest))?;
    let frames = m.load_frames(&base)?;
    let opts = FunctionalOptions {
        include_lag0: cfg.include_lag0,
    };
    let store = precompute_dataset_functionals(&frames, &cfg.functionals, opts, cfg.normalize)?;
    create(out)?;
    store.write(&out.join("functionals.pffn"))?;
    println!("{} frames x {} values", store.total_rows(), store.width());
    Ok(())
}

pub fn pretrain(
    config: &Path,
    out: &Path,
    seed: Option<u64>,
    objective: Option<Objective>,
    location: Option<MaskLocation>,
    resume: bool,
) -> Result<()> {
    let mut run: PretrainRun = load_json(config)?;
    let cfg = &mut run.pretrain;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = objective {
        cfg.objective = o;
    }
    if let Some(l) = location {
        cfg.mask.mask_location = l;
    }
    let (m, base) = Manifest::load(&resolve(&base_dir(config), &run.manifest))?;
    let frames = m.load_frames(&base)?;
    create(out)?;
    write_canonical_json(&out.join("config.json"), cfg)?;
    let outcome = run_pretrain(
        &frames,
        cfg,
        &RunOptions {
            out_dir: Some(out.to_path_buf()),
            resume,
        },
    )?;
    println!(
        "best epoch {} val loss {:.6} masked output variance {:.4} collapse epochs {} config {}",
        outcome.best_epoch, outcome.best_val_loss, outcome.masked_out_var, outcome.collapse_events, outcome.config_digest
    );
    Ok(())
}

fn write_history(path: &Path, reports: &[(String, &FitReport)]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["fold", "stage", "epoch", "train_loss", "val_loss", "val_metric", "lr"])?;
    for (fold, r) in reports {
        for h in &r.history {
            w.write_record([
                fold.clone(),
                h.stage.to_string(),
                h.epoch.to_string(),
                h.train_loss.to_string(),
                h.val_loss.to_string(),
                h.val_metric.to_string(),
                h.lr.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

/// Per-fold and aggregate scores.
fn write_metrics(out: &Path, task: &str, folds: &[ConfusionMatrix]) -> Result<ConfusionMatrix> {
    let total = aggregate(folds)?;
    let mut w = csv_writer(&out.join("metrics.csv"))?;
    w.write_record(["fold", "task", "uaf1", "uar", "n_test"])?;
    for (f, cm) in folds.iter().enumerate() {
        w.write_record([
            f.to_string(),
            task.to_string(),
            uaf1(cm)?.to_string(),
            uar(cm)?.to_string(),
            cm.total().to_string(),
        ])?;
    }
    w.write_record([
        "aggregate".to_string(),
        task.to_string(),
        uaf1(&total)?.to_string(),
        uar(&total)?.to_string(),
        total.total().to_string(),
    ])?;
    w.flush()?;
    total.write_csv(&out.join("confusion.csv"))?;
    println!("{task}: UAF1 {:.4} UAR {:.4} over {} test items", uaf1(&total)?, uar(&total)?, total.total());
    Ok(total)
}

fn backbone(checkpoint: Option<&Path>, model: Option<&ModelConfig>, seed: u64) -> Result<Model> {
    match (checkpoint, model) {
        (Some(c), _) => Ok(Checkpoint::read(c)?.model()?),
        (None, Some(m)) => Ok(Model::new(m.clone(), seed)?),
        (None, None) => bail!("either `checkpoint` or `model` is required"),
    }
}

pub fn finetune(config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut run: FinetuneRun = load_json(config)?;
    if let Some(s) = seed {
        run.finetune.seed = s;
    }
    let base = base_dir(config);
    let cfg = &run.finetune;
    cfg.validate()?;
    let ds = labeled(&resolve(&base, &run.manifest))?;
    let pretrained = run.checkpoint.as_ref().map(|c| Checkpoint::read(&resolve(&base, c))).transpose()?;
    let pre_model = pretrained.as_ref().map(|c| c.model()).transpose()?;
    let model_cfg = match (&pre_model, &run.model) {
        (Some(m), _) => m.config().clone(),
        (None, Some(m)) => m.clone(),
        (None, None) => bail!("either `checkpoint` or `model` is required"),
    };
    create(out)?;
    let task = if pre_model.is_some() { "finetune" } else { "scratch" };
    match cfg.cv_folds {
        Some(k) => {
            let mut reports = Vec::new();
            let cms = cross_validate(&ds, k, cfg.split, cfg.seed, |f, tr, va, te| {
                let (m, r) = run_finetune(pre_model.as_ref(), &model_cfg, tr, va, cfg)?;
                reports.extend(r.into_iter().map(|r| (f.to_string(), r)));
                evaluate(&m, te, cfg.pooling)
            })?;
            let refs: Vec<(String, &FitReport)> = reports.iter().map(|(f, r)| (f.clone(), r)).collect();
            write_history(&out.join("history.csv"), &refs)?;
            write_metrics(out, task, &cms)?;
        }
        None => {
            let (tr, va) = grouped_split(&ds.groups, cfg.split, cfg.seed)?;
            let (m, reports) = run_finetune(pre_model.as_ref(), &model_cfg, &ds.subset(&tr), &ds.subset(&va), cfg)?;
            let refs: Vec<(String, &FitReport)> = reports.iter().map(|r| ("all".to_string(), r)).collect();
            write_history(&out.join("history.csv"), &refs)?;
            Checkpoint::new(&m, json!({ "finetune": cfg }), None)?.write(&out.join("model.pfck"))?;
            let best = reports.last().map_or(f64::NAN, |r| r.best_metric);
            println!("{task}: best validation score {best:.4}");
        }
    }
    Ok(())
}

pub fn probe(config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut run: ProbeRun = load_json(config)?;
    if let Some(s) = seed {
        run.probe.seed = s;
    }
    let base = base_dir(config);
    let cfg = &run.probe;
    let mut ds = labeled(&resolve(&base, &run.manifest))?;
    if run.shuffle_labels {
        ds = ds.shuffled_labels(cfg.seed);
    }
    let ck = run.checkpoint.as_ref().map(|c| resolve(&base, c));
    let bb = backbone(ck.as_deref(), run.model.as_ref(), cfg.seed)?;
    create(out)?;
    let task = match (ck.is_some(), run.shuffle_labels) {
        (true, false) => "probe",
        (true, true) => "probe-shuffled",
        (false, false) => "probe-random",
        (false, true) => "probe-random-shuffled",
    };
    match cfg.cv_folds {
        Some(k) => {
            let mut reports = Vec::new();
            let cms = cross_validate(&ds, k, cfg.split, cfg.seed, |f, tr, va, te| {
                let (m, r) = linear_probe(&bb, tr, va, cfg)?;
                reports.push((f.to_string(), r));
                evaluate(&m, te, cfg.pooling)
            })?;
            let refs: Vec<(String, &FitReport)> = reports.iter().map(|(f, r)| (f.clone(), r)).collect();
            write_history(&out.join("history.csv"), &refs)?;
            write_metrics(out, task, &cms)?;
        }
        None => {
            let (tr, va) = grouped_split(&ds.groups, cfg.split, cfg.seed)?;
            let (m, r) = linear_probe(&bb, &ds.subset(&tr), &ds.subset(&va), cfg)?;
            write_history(&out.join("history.csv"), &[("all".to_string(), &r)])?;
            Checkpoint::new(&m, json!({ "probe": cfg }), None)?.write(&out.join("model.pfck"))?;
            println!("{task}: best validation score {:.4}", r.best_metric);
        }
    }
    Ok(())
}

pub fn eval(config: &Path, out: &Path) -> Result<()> {
    let run: EvalRun = load_json(config)?;
    let base = base_dir(config);
    let ds = labeled(&resolve(&base, &run.manifest))?;
    let model = Checkpoint::read(&resolve(&base, &run.checkpoint))?.model()?;
    if model.classifier_head().is_none() {
        bail!("checkpoint has no classifier head; run finetune or probe first");
    }
    create(out)?;
    let cm = evaluate(&model, &ds, run.pooling)?;
    write_metrics(out, "eval", &[cm])?;
    Ok(())
}

pub fn collapse_report(log: &Path, config: Option<&Path>, out: &Path) -> Result<()> {
    let cfg: CollapseConfig = match config {
        Some(p) => load_json(p)?,
        None => CollapseConfig::default(),
    };
    let rows = read_log(log)?;
    let verdicts = rerun_collapse(&rows, cfg);
    create(out)?;
    let mut w = csv_writer(&out.join("collapse_report.csv"))?;
    w.write_record(["epoch", "emb_var", "out_var", "val_loss", "run", "collapsed", "logged_flag"])?;
    let mut collapsed = 0;
    let mut mismatches = 0;
    for (r, v) in rows.iter().zip(&verdicts) {
        let flag = v.is_collapsed() as u8;
        collapsed += flag as usize;
        mismatches += (flag != r.collapse_flag) as usize;
        w.write_record([
            r.epoch.to_string(),
            r.emb_var.to_string(),
            r.out_var.to_string(),
            r.val_loss.to_string(),
            v.run().to_string(),
            flag.to_string(),
            r.collapse_flag.to_string(),
        ])?;
    }
    w.flush()?;
    println!("{} epochs, {collapsed} collapsed, {mismatches} differ from the logged flag", rows.len());
    Ok(())
}
