//! Masked-prediction pre-training (PFML and the MAE baseline), validation,
//! collapse monitoring and checkpointing.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::{precompute_dataset_functionals, FunctionalOptions, FunctionalSet, FunctionalStore};
use crate::masking::{fill_rows, sample_masks, MaskConfig, MaskSet, MaskType};
use crate::nn::checkpoint::{canonical_json, Checkpoint};
use crate::nn::graph::masked_loss_value;
use crate::nn::params::hex;
use crate::nn::{LossKind, LrSchedule, MaskSpec, Model, ModelConfig, Optimizer, OptimizerKind};
use crate::rng::{stream_rng, Stream};
use crate::signal::FrameSequence;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Predict the functionals of masked frames.
    #[default]
    Pfml,
    /// Reconstruct the raw samples of masked frames.
    Mae,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollapseConfig {
    pub threshold: f64,
    pub window: usize,
}

impl Default for CollapseConfig {
    fn default() -> Self {
        Self {
            threshold: 0.01,
            window: 10,
        }
    }
}

fn default_split() -> f64 {
    0.8
}
fn default_patience() -> usize {
    5
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    #[serde(default)]
    pub objective: Objective,
    #[serde(default)]
    pub loss: LossKind,
    #[serde(default)]
    pub mask: MaskConfig,
    #[serde(default)]
    pub functionals: FunctionalSet,
    #[serde(default)]
    pub include_lag0: bool,
    /// z-score functional targets with statistics of the whole dataset.
    #[serde(default = "default_true")]
    pub normalize_targets: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default = "default_split")]
    pub split: f64,
    pub seed: u64,
    #[serde(default = "default_patience")]
    pub patience: usize,
    /// Learning-rate floor; `lr / 64` when absent.
    #[serde(default)]
    pub min_lr: Option<f64>,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub collapse: CollapseConfig,
    pub model: ModelConfig,
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.mask.validate()?;
        self.model.validate()?;
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(Error::InvalidConfig(format!("split must be in (0, 1), got {}", self.split)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("epochs and batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("lr must be positive, got {}", self.lr)));
        }
        if self.collapse.window == 0 {
            return Err(Error::InvalidConfig("collapse window must be positive".into()));
        }
        Ok(())
    }

    pub fn min_lr(&self) -> f64 {
        self.min_lr.unwrap_or(self.lr / 64.0)
    }

    /// Width of a prediction row.
    pub fn target_dim(&self) -> usize {
        let c = self.model.encoder.in_channels;
        match self.objective {
            Objective::Pfml => self.functionals.len() * c,
            Objective::Mae => c * self.model.frame_len,
        }
    }

    pub fn canonical(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(self)?)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> Result<String> {
        let v = self.canonical()?;
        Ok(hex(&crate::nn::checkpoint::config_digest(&v)))
    }
}

/// Mean over masked rows and coordinates of the squared (MSE) or absolute
/// (L1) residual. Unmasked rows are never read.
pub fn masked_prediction_loss(pred: &Tensor, targets: &Tensor, masked: &[bool], kind: LossKind) -> Result<f64> {
    masked_loss_value(pred, targets, masked, kind)
}

/// Reconstruction targets: each frame flattened to `C*N` values.
pub fn mae_targets(seq: &FrameSequence) -> Tensor {
    Tensor::from_parts(vec![seq.len(), seq.channels() * seq.frame_len()], seq.as_slice().to_vec())
}

/// Inverse of [`mae_targets`].
pub fn mae_unflatten(targets: &Tensor, like: &FrameSequence) -> Result<FrameSequence> {
    FrameSequence::from_raw(targets.data().to_vec(), targets.rows(), like.channels(), like.config())
}

/// Per-epoch statistics fed to the collapse rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub emb_var: f64,
    pub out_var: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CollapseStatus {
    /// `margin` is the smaller variance minus the threshold.
    Healthy { run: usize, margin: f64 },
    Collapsed { run: usize },
}

impl CollapseStatus {
    pub fn is_collapsed(&self) -> bool {
        matches!(self, CollapseStatus::Collapsed { .. })
    }

    pub fn run(&self) -> usize {
        match *self {
            CollapseStatus::Healthy { run, .. } | CollapseStatus::Collapsed { run } => run,
        }
    }
}

/// Counts consecutive epochs in which the embedding or output variance is
/// below the threshold while the validation loss keeps decreasing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollapseMonitor {
    pub config: CollapseConfig,
    pub run: usize,
    pub prev_val: Option<f64>,
}

impl CollapseMonitor {
    pub fn new(config: CollapseConfig) -> Self {
        Self {
            config,
            run: 0,
            prev_val: None,
        }
    }
}

pub fn collapse_check(monitor: &mut CollapseMonitor, stats: EpochStats) -> CollapseStatus {
    let low_var = stats.emb_var.min(stats.out_var);
    let low = low_var < monitor.config.threshold;
    let decreasing = monitor.prev_val.is_some_and(|p| stats.val_loss < p);
    monitor.run = match (low, monitor.run, decreasing) {
        (false, _, _) => 0,
        (true, 0, _) => 1,
        (true, r, true) => r + 1,
        (true, _, false) => 1,
    };
    monitor.prev_val = Some(stats.val_loss);
    if monitor.run >= monitor.config.window {
        CollapseStatus::Collapsed { run: monitor.run }
    } else {
        CollapseStatus::Healthy {
            run: monitor.run,
            margin: low_var - monitor.config.threshold,
        }
    }
}

/// Replay the collapse rule over a training log.
pub fn collapse_report(log: &[EpochLog], config: CollapseConfig) -> Vec<CollapseStatus> {
    let mut m = CollapseMonitor::new(config);
    log.iter()
        .map(|r| {
            collapse_check(
                &mut m,
                EpochStats {
                    emb_var: r.emb_var,
                    out_var: r.out_var,
                    val_loss: r.val_loss,
                },
            )
        })
        .collect()
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub emb_var: f64,
    pub out_var: f64,
    pub lr: f64,
    pub collapse_flag: u8,
}

pub fn write_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in log {
        w.serialize(row)?;
    }
    if log.is_empty() {
        w.write_record(["epoch", "train_loss", "val_loss", "emb_var", "out_var", "lr", "collapse_flag"])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_log(path: &Path) -> Result<Vec<EpochLog>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Where a run writes its artifacts.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    /// Continue from `out_dir/last.pfck` if present.
    pub resume: bool,
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Model with the lowest validation loss.
    pub best: Model,
    /// Across-frame variance of predictions at masked validation positions,
    /// for the best model.
    pub masked_out_var: f64,
    pub config_digest: String,
    pub collapse_events: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub objective: Objective,
    pub config_digest: String,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub masked_out_var: f64,
    pub collapse_events: usize,
    /// SHA-256 over every training mask drawn; equal for both objectives
    /// under the same seed and mask settings.
    pub mask_digest: String,
    pub min_lr: f64,
    pub patience: usize,
}

struct Prepared<'a> {
    data: &'a [FrameSequence],
    targets: Vec<Tensor>,
    train: Vec<usize>,
    val: Vec<usize>,
    val_masks: Vec<(MaskSet, Option<Tensor>)>,
}

/// Seeded 80:20 (or `split`) partition of sequence indices.
pub fn split_indices(n: usize, split: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 sequences to split, got {n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream_rng(seed, Stream::Split, 0, 0));
    let n_train = ((n as f64 * split).round() as usize).clamp(1, n - 1);
    let val = idx.split_off(n_train);
    Ok((idx, val))
}

fn mask_for(cfg: &PretrainConfig, len: usize, dim: usize, stream: Stream, epoch: u64, seq: usize) -> Result<(MaskSet, Option<Tensor>)> {
    let mut rng = stream_rng(cfg.seed, stream, epoch, seq as u64);
    let mask = sample_masks(len, &cfg.mask, &mut rng)?;
    let fill = fill_rows(cfg.mask.mask_type, mask.masked(), dim, &mut rng);
    Ok((mask, fill))
}

/// Row width of the masked tensor for the configured location.
fn fill_dim(cfg: &PretrainConfig) -> usize {
    match cfg.mask.mask_location {
        crate::masking::MaskLocation::Embeddings => cfg.model.transformer.model_dim,
        crate::masking::MaskLocation::Inputs => cfg.model.encoder.in_channels * cfg.model.frame_len,
    }
}

fn mask_digest(cfg: &PretrainConfig, p: &Prepared, epochs: usize) -> Result<String> {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for epoch in 0..epochs as u64 {
        for &i in &p.train {
            let m = training_mask(cfg, p.data[i].len(), epoch, i)?;
            h.update(epoch.to_le_bytes());
            h.update((i as u64).to_le_bytes());
            h.update(m.masked().iter().map(|&b| b as u8).collect::<Vec<u8>>());
        }
    }
    Ok(hex(&h.finalize()))
}

/// Regression targets for every sequence.
pub fn build_targets(data: &[FrameSequence], cfg: &PretrainConfig) -> Result<(Vec<Tensor>, Option<FunctionalStore>)> {
    match cfg.objective {
        Objective::Mae => Ok((data.iter().map(mae_targets).collect(), None)),
        Objective::Pfml => {
            let opts = FunctionalOptions {
                include_lag0: cfg.include_lag0,
            };
            let store = precompute_dataset_functionals(data, &cfg.functionals, opts, cfg.normalize_targets)?;
            let targets = (0..data.len())
                .map(|i| Tensor::new(vec![data[i].len(), store.width()], store.sequence(i).to_vec()))
                .collect::<Result<_>>()?;
            Ok((targets, Some(store)))
        }
    }
}

fn prepare<'a>(data: &'a [FrameSequence], cfg: &PretrainConfig, targets: Vec<Tensor>) -> Result<Prepared<'a>> {
    let (train, val) = split_indices(data.len(), cfg.split, cfg.seed)?;
    let dim = fill_dim(cfg);
    let val_masks = val
        .iter()
        .map(|&i| mask_for(cfg, data[i].len(), dim, Stream::ValMask, 0, i))
        .collect::<Result<_>>()?;
    Ok(Prepared {
        data,
        targets,
        train,
        val,
        val_masks,
    })
}

fn init_model(cfg: &PretrainConfig) -> Result<Model> {
    let mut model = Model::new(cfg.model.clone(), cfg.seed)?;
    model.add_projection_head(cfg.target_dim(), &mut stream_rng(cfg.seed, Stream::Init, 1, 0));
    if cfg.mask.mask_type == MaskType::LearnableToken {
        model.add_mask_token(cfg.mask.mask_location, &mut stream_rng(cfg.seed, Stream::Init, 2, 0));
    }
    Ok(model)
}

struct BatchResult {
    loss: f64,
    emb_var: f64,
    out_var: f64,
}

fn spec(cfg: &PretrainConfig, mask: &MaskSet, fill: Option<Tensor>) -> MaskSpec {
    MaskSpec {
        masked: mask.masked().to_vec(),
        location: cfg.mask.mask_location,
        fill,
    }
}

fn train_batch(
    model: &mut Model,
    opt: &mut Optimizer,
    cfg: &PretrainConfig,
    p: &Prepared,
    batch: &[usize],
    epoch: u64,
    batch_idx: u64,
    lr: f64,
) -> Result<BatchResult> {
    let all = |_: &str| true;
    let dropout = stream_rng(cfg.seed, Stream::Dropout, epoch, batch_idx);
    let dim = fill_dim(cfg);
    let (grads, result) = {
        let mut s = model.session(&all, Some(dropout));
        let mut preds = Vec::with_capacity(batch.len());
        let mut embs = Vec::with_capacity(batch.len());
        let mut masked = Vec::new();
        let mut targets = Vec::new();
        for &i in batch {
            let seq = &p.data[i];
            let (mask, fill) = mask_for(cfg, seq.len(), dim, Stream::Mask, epoch, i)?;
            let x = s.frames(seq)?;
            let out = s.backbone(x, Some(&spec(cfg, &mask, fill)))?;
            preds.push(s.projection(out.outputs)?);
            embs.push(out.embeddings);
            masked.extend_from_slice(mask.masked());
            targets.extend_from_slice(p.targets[i].data());
        }
        let pred = s.graph.concat_rows(&preds)?;
        let emb = s.graph.concat_rows(&embs)?;
        let target = Tensor::new(vec![masked.len(), cfg.target_dim()], targets)?;
        let loss = s.graph.masked_loss(pred, target, &masked, cfg.loss)?;
        let value = s.graph.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
        }
        let result = BatchResult {
            loss: value,
            emb_var: s.graph.value(emb).mean_row_variance(),
            out_var: s.graph.value(pred).mean_row_variance(),
        };
        (s.gradients(loss)?, result)
    };
    opt.step(model.params_mut(), &grads, lr)?;
    Ok(result)
}

struct ValResult {
    loss: f64,
    masked_out_var: f64,
}

fn validate(model: &Model, cfg: &PretrainConfig, p: &Prepared) -> Result<ValResult> {
    let none = |_: &str| false;
    let mut preds = Vec::new();
    let mut targets = Vec::new();
    let mut masked = Vec::new();
    let mut masked_rows = Vec::new();
    for (k, &i) in p.val.iter().enumerate() {
        let (mask, fill) = &p.val_masks[k];
        let mut s = model.session(&none, None);
        let x = s.frames(&p.data[i])?;
        let out = s.backbone(x, Some(&spec(cfg, mask, fill.clone())))?;
        let pred = s.projection(out.outputs)?;
        let pv = s.graph.value(pred);
        for (r, &m) in mask.masked().iter().enumerate() {
            if m {
                masked_rows.extend_from_slice(pv.row(r));
            }
        }
        preds.extend_from_slice(pv.data());
        targets.extend_from_slice(p.targets[i].data());
        masked.extend_from_slice(mask.masked());
    }
    let w = cfg.target_dim();
    let pred = Tensor::new(vec![masked.len(), w], preds)?;
    let target = Tensor::new(vec![masked.len(), w], targets)?;
    let loss = masked_prediction_loss(&pred, &target, &masked, cfg.loss)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("validation loss".into()));
    }
    let n = masked_rows.len() / w;
    let masked_out_var = Tensor::new(vec![n, w], masked_rows)?.mean_row_variance();
    Ok(ValResult { loss, masked_out_var })
}

/// Runs may be resumed with a different epoch budget only.
fn resumable(saved: &serde_json::Value, current: &serde_json::Value) -> bool {
    let strip = |v: &serde_json::Value| {
        let mut v = v.clone();
        if let Some(p) = v.get_mut("pretrain").and_then(|p| p.as_object_mut()) {
            p.remove("epochs");
        }
        v
    };
    strip(saved) == strip(current)
}

/// Meta keys of the resumable state.
const META_EPOCH: &str = "epoch";
const META_BEST_EPOCH: &str = "best_epoch";
const META_BEST_VAL: &str = "best_val_loss";
const META_SEED: &str = "seed";

fn schedule_meta(ck: &mut Checkpoint, sched: &LrSchedule, monitor: &CollapseMonitor) {
    let m = &mut ck.meta;
    m.insert("sched.plateau_lr".into(), sched.plateau.lr);
    m.insert("sched.plateau_best".into(), sched.plateau.best);
    m.insert("sched.bad_epochs".into(), sched.plateau.bad_epochs as f64);
    m.insert("sched.epoch".into(), sched.epoch as f64);
    m.insert("collapse.run".into(), monitor.run as f64);
    m.insert("collapse.prev_val".into(), monitor.prev_val.unwrap_or(f64::NAN));
}

fn restore_schedule(ck: &Checkpoint, sched: &mut LrSchedule, monitor: &mut CollapseMonitor) -> Result<()> {
    let get = |k: &str| ck.meta(k).ok_or_else(|| Error::Format(format!("checkpoint lacks {k}")));
    sched.plateau.lr = get("sched.plateau_lr")?;
    sched.plateau.best = get("sched.plateau_best")?;
    sched.plateau.bad_epochs = get("sched.bad_epochs")? as usize;
    sched.epoch = get("sched.epoch")? as usize;
    monitor.run = get("collapse.run")? as usize;
    let pv = get("collapse.prev_val")?;
    monitor.prev_val = (!pv.is_nan()).then_some(pv);
    Ok(())
}

/// Pre-train a backbone on `data`. Every epoch samples fresh masks per
/// training sequence, takes one optimizer step per batch, evaluates the
/// validation split with fixed masks, updates the plateau schedule and the
/// collapse monitor, and keeps the model with the lowest validation loss
/// (earliest epoch on ties).
pub fn pretrain(data: &[FrameSequence], cfg: &PretrainConfig, run: &RunOptions) -> Result<PretrainOutcome> {
    cfg.validate()?;
    for (i, s) in data.iter().enumerate() {
        if s.channels() != cfg.model.encoder.in_channels || s.frame_len() != cfg.model.frame_len {
            return Err(Error::shape(
                "pretrain input",
                format!(
                    "sequence {i} has {}x{} frames, model expects {}x{}",
                    s.channels(),
                    s.frame_len(),
                    cfg.model.encoder.in_channels,
                    cfg.model.frame_len
                ),
            ));
        }
    }
    let digest = cfg.digest()?;
    let run_json = serde_json::json!({ "pretrain": cfg.canonical()? });
    let (targets, _) = build_targets(data, cfg)?;
    let p = prepare(data, cfg, targets)?;

    let mut model = init_model(cfg)?;
    let mut opt = Optimizer::new(cfg.optimizer);
    let mut sched = LrSchedule::plateau(cfg.lr, cfg.patience, cfg.min_lr());
    let mut monitor = CollapseMonitor::new(cfg.collapse);
    let mut log: Vec<EpochLog> = Vec::new();
    let mut best: Option<(usize, f64, Model)> = None;
    let mut start = 0;

    let paths = run.out_dir.as_ref().map(|d| (d.join("last.pfck"), d.join("best.pfck"), d.join("log.csv")));
    if let Some(dir) = &run.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    if let (true, Some((last, best_path, log_path))) = (run.resume, &paths) {
        if last.exists() {
            let ck = Checkpoint::read(last)?;
            if !resumable(ck.run_config(), &run_json) {
                return Err(Error::InvalidConfig("cannot resume: configuration differs from the checkpoint".into()));
            }
            model = ck.model()?;
            opt = ck.optimizer()?;
            restore_schedule(&ck, &mut sched, &mut monitor)?;
            start = ck.meta(META_EPOCH).unwrap_or(0.0) as usize;
            log = read_log(log_path)?;
            log.truncate(start);
            let b = Checkpoint::read(best_path)?;
            best = Some((
                b.meta(META_BEST_EPOCH).unwrap_or(0.0) as usize,
                b.meta(META_BEST_VAL).unwrap_or(f64::INFINITY),
                b.model()?,
            ));
        }
    }

    for epoch in start..cfg.epochs {
        let lr = sched.lr();
        let mut order = p.train.clone();
        order.shuffle(&mut stream_rng(cfg.seed, Stream::Order, epoch as u64, 0));
        let (mut loss_sum, mut emb_sum, mut out_sum, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let r = train_batch(&mut model, &mut opt, cfg, &p, batch, epoch as u64, b as u64, lr)?;
            loss_sum += r.loss;
            emb_sum += r.emb_var;
            out_sum += r.out_var;
            batches += 1;
        }
        let val = validate(&model, cfg, &p)?;
        let stats = EpochStats {
            emb_var: emb_sum / batches as f64,
            out_var: out_sum / batches as f64,
            val_loss: val.loss,
        };
        let status = collapse_check(&mut monitor, stats);
        log.push(EpochLog {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_loss: val.loss,
            emb_var: stats.emb_var,
            out_var: stats.out_var,
            lr,
            collapse_flag: status.is_collapsed() as u8,
        });
        let improved = best.as_ref().is_none_or(|(_, v, _)| val.loss < *v);
        if improved {
            best = Some((epoch, val.loss, model.clone()));
        }
        sched.end_epoch(val.loss);

        if let Some((last, best_path, log_path)) = &paths {
            let (be, bv, bm) = best.as_ref().expect("set after first epoch");
            if improved {
                let mut ck = Checkpoint::new(bm, run_json.clone(), None)?;
                ck.meta.insert(META_BEST_EPOCH.into(), *be as f64);
                ck.meta.insert(META_BEST_VAL.into(), *bv);
                ck.meta.insert(META_SEED.into(), cfg.seed as f64);
                ck.write(best_path)?;
            }
            let mut ck = Checkpoint::new(&model, run_json.clone(), Some(&opt))?;
            ck.meta.insert(META_EPOCH.into(), (epoch + 1) as f64);
            ck.meta.insert(META_SEED.into(), cfg.seed as f64);
            schedule_meta(&mut ck, &sched, &monitor);
            ck.write(last)?;
            write_log(log_path, &log)?;
        }
    }

    let (best_epoch, best_val_loss, best_model) =
        best.ok_or_else(|| Error::InvalidConfig("no epochs to run".into()))?;
    let masked_out_var = validate(&best_model, cfg, &p)?.masked_out_var;
    let collapse_events = log.iter().filter(|r| r.collapse_flag == 1).count();
    let outcome = PretrainOutcome {
        log,
        best_epoch,
        best_val_loss,
        best: best_model,
        masked_out_var,
        config_digest: digest,
        collapse_events,
    };
    if let Some(dir) = &run.out_dir {
        let summary = RunSummary {
            objective: cfg.objective,
            config_digest: outcome.config_digest.clone(),
            epochs_run: outcome.log.len(),
            best_epoch,
            best_val_loss,
            masked_out_var,
            collapse_events,
            mask_digest: mask_digest(cfg, &p, outcome.log.len())?,
            min_lr: cfg.min_lr(),
            patience: cfg.patience,
        };
        let path = dir.join("summary.json");
        let text = canonical_json(&serde_json::to_value(&summary)?);
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    }
    Ok(outcome)
}

/// Mask starts drawn for training sequence `seq` at `epoch`; identical for
/// both objectives under the same seed.
pub fn training_mask(cfg: &PretrainConfig, len: usize, epoch: u64, seq: usize) -> Result<MaskSet> {
    Ok(mask_for(cfg, len, fill_dim(cfg), Stream::Mask, epoch, seq)?.0)
}
