use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dataset::LabeledDataset;
use super::metrics::{uaf1, uar, ConfusionMatrix};
use crate::error::{Error, Result};
use crate::nn::graph::softmax_rows;
use crate::nn::{is_backbone, ClassifierHead, LrSchedule, Model, ModelConfig, Optimizer, OptimizerKind, Pooling};
use crate::rng::{stream_rng, Stream};
use crate::signal::FrameSequence;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    #[default]
    Uaf1,
    Uar,
}

impl Criterion {
    pub fn score(self, cm: &ConfusionMatrix) -> Result<f64> {
        match self {
            Criterion::Uaf1 => uaf1(cm),
            Criterion::Uar => uar(cm),
        }
    }
}

fn five() -> usize {
    5
}
fn twenty() -> usize {
    20
}
fn warm_start() -> f64 {
    0.001
}
fn adam() -> OptimizerKind {
    OptimizerKind::Adam
}
fn eighty() -> f64 {
    0.8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneConfig {
    #[serde(default)]
    pub head: ClassifierHead,
    /// Derived from the labels when absent.
    #[serde(default)]
    pub pooling: Option<Pooling>,
    pub epochs: usize,
    /// Head-only epochs; `epochs` when absent.
    #[serde(default)]
    pub stage1_epochs: Option<usize>,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default = "five")]
    pub patience: usize,
    #[serde(default)]
    pub min_lr: Option<f64>,
    #[serde(default = "twenty")]
    pub warmup_epochs: usize,
    #[serde(default = "warm_start")]
    pub warmup_start: f64,
    #[serde(default)]
    pub criterion: Criterion,
    /// Probability of zeroing each sensor's channels per training sequence.
    #[serde(default)]
    pub sensor_dropout: f64,
    #[serde(default = "adam")]
    pub optimizer: OptimizerKind,
    /// Train share of the non-test groups; the rest validates.
    #[serde(default = "eighty")]
    pub split: f64,
    #[serde(default)]
    pub cv_folds: Option<usize>,
    pub seed: u64,
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("epochs and batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..=1.0).contains(&self.sensor_dropout) {
            return Err(Error::InvalidConfig("sensor_dropout must be in [0, 1]".into()));
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(Error::InvalidConfig("split must be in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn min_lr(&self) -> f64 {
        self.min_lr.unwrap_or(self.lr / 64.0)
    }
}

/// A single linear layer on frozen backbone outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default = "five")]
    pub patience: usize,
    #[serde(default)]
    pub criterion: Criterion,
    #[serde(default)]
    pub pooling: Option<Pooling>,
    #[serde(default = "eighty")]
    pub split: f64,
    #[serde(default)]
    pub cv_folds: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitEpoch {
    pub stage: u8,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_metric: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub history: Vec<FitEpoch>,
    pub best_epoch: usize,
    pub best_metric: f64,
}

/// Inverse-frequency class weights `1 / count`.
pub fn class_weights(counts: &[usize]) -> Result<Vec<f64>> {
    counts
        .iter()
        .enumerate()
        .map(|(c, &n)| if n == 0 { Err(Error::ZeroCountClass(c)) } else { Ok(1.0 / n as f64) })
        .collect()
}

/// `sum_i w(y_i) * -ln p_i[y_i] / sum_i w(y_i)` with `w = 1 / count`.
pub fn weighted_ce(probs: &Tensor, labels: &[usize], class_counts: &[usize]) -> Result<f64> {
    let w = class_weights(class_counts)?;
    if probs.rows() != labels.len() || probs.cols() != w.len() {
        return Err(Error::shape(
            "weighted_ce",
            format!("{:?} probabilities, {} labels, {} classes", probs.shape(), labels.len(), w.len()),
        ));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &y) in labels.iter().enumerate() {
        if y >= w.len() {
            return Err(Error::LabelOutOfRange { label: y, classes: w.len() });
        }
        num -= w[y] * probs.row(i)[y].ln();
        den += w[y];
    }
    Ok(num / den)
}

/// Zero all channels of each sensor independently with probability `p`.
/// Without a sensor map every channel is its own sensor.
pub fn channel_dropout<R: Rng + ?Sized>(
    seq: &FrameSequence,
    sensors: Option<&[Vec<usize>]>,
    p: f64,
    rng: &mut R,
) -> FrameSequence {
    let singles: Vec<Vec<usize>>;
    let sensors = match sensors {
        Some(s) => s,
        None => {
            singles = (0..seq.channels()).map(|c| vec![c]).collect();
            &singles
        }
    };
    let mut out = seq.clone();
    let dropped: Vec<usize> = sensors
        .iter()
        .filter(|_| rng.random::<f64>() < p)
        .flatten()
        .copied()
        .collect();
    if dropped.is_empty() {
        return out;
    }
    let (c, n) = (seq.channels(), seq.frame_len());
    let data = out.as_mut_slice();
    for f in 0..seq.len() {
        for &ch in &dropped {
            let start = (f * c + ch) * n;
            data[start..start + n].iter_mut().for_each(|v| *v = 0.0);
        }
    }
    out
}

struct Fit<'a> {
    trainable: &'a dyn Fn(&str) -> bool,
    /// Backbone frozen: train the head on precomputed outputs.
    frozen: bool,
    schedule: LrSchedule,
    epochs: usize,
    batch_size: usize,
    criterion: Criterion,
    pooling: Pooling,
    sensor_dropout: f64,
    optimizer: OptimizerKind,
    seed: u64,
    stage: u8,
}

fn outputs(model: &Model, ds: &LabeledDataset) -> Result<Vec<Tensor>> {
    ds.sequences.iter().map(|s| model.embed(s)).collect()
}

/// Logits of every item, with the loss under `weights`.
fn predict_all(
    model: &Model,
    ds: &LabeledDataset,
    feats: Option<&[Tensor]>,
    pooling: Pooling,
) -> Result<Vec<Tensor>> {
    let none = |_: &str| false;
    (0..ds.len())
        .map(|i| {
            let mut s = model.session(&none, None);
            let y = match feats {
                Some(f) => s.graph.constant(f[i].clone()),
                None => {
                    let x = s.frames(&ds.sequences[i])?;
                    s.backbone(x, None)?.outputs
                }
            };
            let logits = s.classify(y, pooling)?;
            Ok(s.graph.value(logits).clone())
        })
        .collect()
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn score(ds: &LabeledDataset, logits: &[Tensor], weights: &[f64]) -> Result<(ConfusionMatrix, f64)> {
    let mut cm = ConfusionMatrix::new(ds.classes);
    let (mut num, mut den) = (0.0, 0.0);
    for (i, l) in logits.iter().enumerate() {
        let probs = softmax_rows(l);
        for (r, y) in ds.item_labels(i).into_iter().enumerate() {
            cm.add(y, argmax(l.row(r)))?;
            num -= weights[y] * probs.row(r)[y].max(f64::MIN_POSITIVE).ln();
            den += weights[y];
        }
    }
    Ok((cm, num / den))
}

fn fit(model: &mut Model, train: &LabeledDataset, val: &LabeledDataset, mut spec: Fit) -> Result<FitReport> {
    let weights = class_weights(&train.class_counts())?;
    let (train_feats, val_feats) = if spec.frozen {
        (Some(outputs(model, train)?), Some(outputs(model, val)?))
    } else {
        (None, None)
    };
    let mut opt = Optimizer::new(spec.optimizer);
    let mut report = FitReport {
        best_metric: f64::NEG_INFINITY,
        ..Default::default()
    };
    let mut best_params = model.params().clone();
    let stage = spec.stage as u64;
    for epoch in 0..spec.epochs {
        let lr = spec.schedule.lr();
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut stream_rng(spec.seed, Stream::Order, epoch as u64, stage));
        let (mut loss_sum, mut batches) = (0.0, 0);
        for (b, batch) in order.chunks(spec.batch_size).enumerate() {
            let dropout = (!spec.frozen).then(|| stream_rng(spec.seed, Stream::Dropout, epoch as u64, (stage << 32) | b as u64));
            let grads = {
                let mut s = model.session(spec.trainable, dropout);
                let mut logits = Vec::with_capacity(batch.len());
                let mut labels = Vec::new();
                for &i in batch {
                    let y = match &train_feats {
                        Some(f) => s.graph.constant(f[i].clone()),
                        None => {
                            let x = if spec.sensor_dropout > 0.0 {
                                let mut rng = stream_rng(spec.seed, Stream::Augment, epoch as u64, (stage << 32) | i as u64);
                                let seq = channel_dropout(&train.sequences[i], train.sensors.as_deref(), spec.sensor_dropout, &mut rng);
                                s.frames(&seq)?
                            } else {
                                s.frames(&train.sequences[i])?
                            };
                            s.backbone(x, None)?.outputs
                        }
                    };
                    logits.push(s.classify(y, spec.pooling)?);
                    labels.extend(train.item_labels(i));
                }
                let logits = s.graph.concat_rows(&logits)?;
                let w: Vec<f64> = labels.iter().map(|&y| weights[y]).collect();
                let loss = s.graph.cross_entropy(logits, &labels, &w)?;
                let v = s.graph.value(loss).item();
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("fine-tuning loss at epoch {epoch}")));
                }
                loss_sum += v;
                batches += 1;
                s.gradients(loss)?
            };
            opt.step(model.params_mut(), &grads, lr)?;
        }
        let logits = predict_all(model, val, val_feats.as_deref(), spec.pooling)?;
        let (cm, val_loss) = score(val, &logits, &weights)?;
        let metric = spec.criterion.score(&cm)?;
        report.history.push(FitEpoch {
            stage: spec.stage,
            epoch,
            train_loss: loss_sum / batches as f64,
            val_loss,
            val_metric: metric,
            lr,
        });
        if metric > report.best_metric {
            report.best_metric = metric;
            report.best_epoch = epoch;
            best_params = model.params().clone();
        }
        spec.schedule.end_epoch(val_loss);
    }
    *model.params_mut() = best_params;
    Ok(report)
}

fn pooling_for(cfg: Option<Pooling>, ds: &LabeledDataset) -> Pooling {
    cfg.unwrap_or_else(|| ds.pooling())
}

/// Train only the classifier head; the backbone stays bit-identical.
pub fn finetune_stage1(model: &mut Model, train: &LabeledDataset, val: &LabeledDataset, cfg: &FinetuneConfig) -> Result<FitReport> {
    cfg.validate()?;
    let heads = |n: &str| !is_backbone(n);
    fit(
        model,
        train,
        val,
        Fit {
            trainable: &heads,
            frozen: true,
            schedule: LrSchedule::plateau(cfg.lr, cfg.patience, cfg.min_lr()),
            epochs: cfg.stage1_epochs.unwrap_or(cfg.epochs),
            batch_size: cfg.batch_size,
            criterion: cfg.criterion,
            pooling: pooling_for(cfg.pooling, train),
            sensor_dropout: 0.0,
            optimizer: cfg.optimizer,
            seed: cfg.seed,
            stage: 1,
        },
    )
}

/// Train every parameter, optionally after a linear learning-rate warm-up.
pub fn finetune_stage2(
    model: &mut Model,
    train: &LabeledDataset,
    val: &LabeledDataset,
    cfg: &FinetuneConfig,
    warmup: bool,
) -> Result<FitReport> {
    cfg.validate()?;
    let all = |_: &str| true;
    let mut schedule = LrSchedule::plateau(cfg.lr, cfg.patience, cfg.min_lr());
    if warmup {
        schedule = schedule.with_warmup(cfg.warmup_epochs, cfg.warmup_start);
    }
    fit(
        model,
        train,
        val,
        Fit {
            trainable: &all,
            frozen: false,
            schedule,
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            criterion: cfg.criterion,
            pooling: pooling_for(cfg.pooling, train),
            sensor_dropout: cfg.sensor_dropout,
            optimizer: cfg.optimizer,
            seed: cfg.seed,
            stage: 2,
        },
    )
}

/// Fine-tune a pre-trained backbone (head-only stage, then all parameters
/// with warm-up), or, without one, train a randomly initialized model
/// directly with no warm-up.
pub fn finetune(
    backbone: Option<&Model>,
    model_config: &ModelConfig,
    train: &LabeledDataset,
    val: &LabeledDataset,
    cfg: &FinetuneConfig,
) -> Result<(Model, Vec<FitReport>)> {
    cfg.validate()?;
    let mut head_rng = stream_rng(cfg.seed, Stream::Init, 3, 0);
    match backbone {
        Some(b) => {
            let mut model = b.clone();
            model.strip_heads();
            model.add_classifier(cfg.head, train.classes, &mut head_rng);
            let r1 = finetune_stage1(&mut model, train, val, cfg)?;
            let r2 = finetune_stage2(&mut model, train, val, cfg, true)?;
            Ok((model, vec![r1, r2]))
        }
        None => {
            let mut model = Model::new(model_config.clone(), cfg.seed)?;
            model.add_classifier(cfg.head, train.classes, &mut head_rng);
            let r = finetune_stage2(&mut model, train, val, cfg, false)?;
            Ok((model, vec![r]))
        }
    }
}

/// Train a linear classifier on the frozen outputs of `backbone`.
pub fn linear_probe(backbone: &Model, train: &LabeledDataset, val: &LabeledDataset, cfg: &ProbeConfig) -> Result<(Model, FitReport)> {
    let mut model = backbone.clone();
    model.strip_heads();
    model.add_classifier(ClassifierHead::Linear, train.classes, &mut stream_rng(cfg.seed, Stream::Init, 4, 0));
    let heads = |n: &str| !is_backbone(n);
    let report = fit(
        &mut model,
        train,
        val,
        Fit {
            trainable: &heads,
            frozen: true,
            schedule: LrSchedule::plateau(cfg.lr, cfg.patience, cfg.lr / 64.0),
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            criterion: cfg.criterion,
            pooling: pooling_for(cfg.pooling, train),
            sensor_dropout: 0.0,
            optimizer: OptimizerKind::Adam,
            seed: cfg.seed,
            stage: 3,
        },
    )?;
    Ok((model, report))
}

/// Confusion matrix of `model`'s predictions on `ds`.
pub fn evaluate(model: &Model, ds: &LabeledDataset, pooling: Option<Pooling>) -> Result<ConfusionMatrix> {
    let logits = predict_all(model, ds, None, pooling_for(pooling, ds))?;
    Ok(score(ds, &logits, &vec![1.0; ds.classes])?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::finetune::dataset::Labels;
    use crate::signal::FrameConfig;

    #[test]
    fn weighted_ce_hand_cases() {
        let probs = Tensor::new(vec![2, 2], vec![0.5, 0.5, 0.5, 0.5]).unwrap();
        let l = weighted_ce(&probs, &[0, 1], &[3, 1]).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-15);
        let onehot = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(weighted_ce(&onehot, &[0, 1], &[5, 5]).unwrap(), 0.0);
        // balanced counts reduce to the plain mean
        let p = Tensor::new(vec![2, 2], vec![0.9, 0.1, 0.3, 0.7]).unwrap();
        let plain = -(0.9f64.ln() + 0.7f64.ln()) / 2.0;
        assert!((weighted_ce(&p, &[0, 1], &[4, 4]).unwrap() - plain).abs() < 1e-15);
        // unbalanced: weights 1/90 and 1/10
        let w = class_weights(&[90, 10]).unwrap();
        assert_eq!(w, vec![1.0 / 90.0, 1.0 / 10.0]);
        let expect = -(w[0] * 0.9f64.ln() + w[1] * 0.7f64.ln()) / (w[0] + w[1]);
        assert!((weighted_ce(&p, &[0, 1], &[90, 10]).unwrap() - expect).abs() < 1e-15);
        assert!(matches!(weighted_ce(&p, &[0, 1], &[0, 10]), Err(Error::ZeroCountClass(0))));
    }

    fn seq(channels: usize) -> FrameSequence {
        let n = 4;
        let data = (0..3 * channels * n).map(|v| v as f64 + 1.0).collect();
        FrameSequence::from_raw(data, 3, channels, FrameConfig::new(n, n).unwrap()).unwrap()
    }

    #[test]
    fn channel_dropout_extremes_and_rate() {
        let s = seq(6);
        let mut rng = stream_rng(0, Stream::Augment, 0, 0);
        assert_eq!(channel_dropout(&s, None, 0.0, &mut rng), s);
        assert!(channel_dropout(&s, None, 1.0, &mut rng).as_slice().iter().all(|&v| v == 0.0));
        let sensors = vec![vec![0, 1, 2], vec![3, 4, 5]];
        let trials = 20_000;
        let mut dropped = 0;
        for t in 0..trials {
            let mut rng = stream_rng(1, Stream::Augment, t, 0);
            let out = channel_dropout(&s, Some(&sensors), 0.3, &mut rng);
            for sensor in &sensors {
                let zero = sensor.iter().all(|&c| out.frame_channel(0, c).iter().all(|&v| v == 0.0));
                let kept = sensor.iter().all(|&c| out.frame_channel(2, c) == s.frame_channel(2, c));
                assert!(zero || kept);
                dropped += zero as usize;
            }
        }
        let n = (2 * trials) as f64;
        let rate = dropped as f64 / n;
        assert!((rate - 0.3).abs() < 3.0 * (0.3 * 0.7 / n).sqrt(), "rate {rate}");
    }

    #[test]
    fn criterion_scores() {
        let cm = ConfusionMatrix::from_rows(&[vec![8, 2], vec![4, 6]]).unwrap();
        assert!((Criterion::Uar.score(&cm).unwrap() - 0.7).abs() < 1e-15);
        assert!(Criterion::Uaf1.score(&cm).unwrap() < 0.7);
    }

    #[test]
    fn shuffled_labels_keep_counts() {
        let seqs = vec![seq(1); 6];
        let ds = LabeledDataset::new(seqs, Labels::Sequence(vec![0, 0, 1, 1, 2, 2]), (0..6).map(|i| i.to_string()).collect(), 3).unwrap();
        let sh = ds.shuffled_labels(1);
        assert_eq!(sh.class_counts(), ds.class_counts());
    }
}
