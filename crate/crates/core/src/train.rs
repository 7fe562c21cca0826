//! Mini-batch training with Adam and early stopping on validation loss, and
//! evaluation of a trained checkpoint.

use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Manifest, Split};
use crate::error::{FstError, Result};
use crate::metrics::MetricsReport;
use crate::model::{Checkpoint, FstConfig, FstModel, GateTrace, ModelInput};
use crate::numerics::nn::ParamStore;
use crate::numerics::optim::{adam_step, AdamConfig, AdamState};
use crate::numerics::{bce_with_logits, sigmoid, Tensor};
use crate::segmentation::{pad_or_crop, CropMode};
use crate::ssm::SegmentEmbeddingSequence;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Epochs without a validation-loss improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            lr: 1e-4,
            weight_decay: 1e-2,
            batch_size: 8,
            patience: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(FstError::Config(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        // Zero is accepted so that a run can reproduce its initialization.
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be a finite non-negative number");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be a finite non-negative number");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    EarlyStopping,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::MaxEpochs => "max_epochs",
            StopReason::EarlyStopping => "early_stopping",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stop_reason: StopReason,
}

impl TrainHistory {
    /// `epoch,train_loss,val_loss,val_acc` with a header row. Floats use
    /// the shortest representation that parses back to the same value.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let fail = |e: csv::Error| FstError::Contract(e.to_string());
        w.write_record(["epoch", "train_loss", "val_loss", "val_acc"])
            .map_err(fail)?;
        for r in &self.epochs {
            w.write_record([
                r.epoch.to_string(),
                r.train_loss.to_string(),
                r.val_loss.to_string(),
                r.val_acc.to_string(),
            ])
            .map_err(fail)?;
        }
        let bytes = w.into_inner().map_err(|e| FstError::Contract(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn from_csv(text: &str) -> Result<Vec<EpochRecord>> {
        csv::Reader::from_reader(text.as_bytes())
            .deserialize()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| FstError::format(Path::new("history.csv"), e.to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?).map_err(|e| FstError::io(path, e))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("history serializes") + "\n";
        std::fs::write(path, text).map_err(|e| FstError::io(path, e))
    }
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: TrainHistory,
}

/// Head-cropped or padded model input, as used for validation and inference.
pub fn eval_input(seq: &SegmentEmbeddingSequence, max_segments: usize) -> Result<ModelInput<f32>> {
    let (fixed, _) = pad_or_crop(seq, max_segments, CropMode::Head)?;
    ModelInput::from_sequence(&fixed)
}

fn check_split(name: &str, set: &[SegmentEmbeddingSequence], d_in: usize) -> Result<()> {
    if set.is_empty() {
        return Err(FstError::Config(format!("{name} split is empty")));
    }
    for s in set {
        if s.label.is_none() {
            return Err(FstError::Config(format!(
                "{name} track {} has no label",
                s.track_id
            )));
        }
        if s.dim() != d_in {
            return Err(FstError::Config(format!(
                "{name} track {} has dimension {}, model expects {d_in}",
                s.track_id,
                s.dim()
            )));
        }
    }
    Ok(())
}

fn label(seq: &SegmentEmbeddingSequence) -> u8 {
    seq.label.expect("checked by check_split")
}

/// Mean loss and accuracy over prepared inputs, computed in parallel.
fn validation_scores(
    model: &FstModel,
    params: &ParamStore<f32>,
    inputs: &[(ModelInput<f32>, u8)],
) -> Result<(f64, f64)> {
    let logits: Vec<f64> = inputs
        .par_iter()
        .map(|(x, _)| model.forward_input(params, x).map(|(l, _)| l))
        .collect::<Result<_>>()?;
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (&z, (_, y)) in logits.iter().zip(inputs) {
        loss += bce_with_logits(z, *y as f64);
        correct += usize::from(u8::from(sigmoid(z) >= 0.5) == *y);
    }
    let n = inputs.len() as f64;
    let loss = loss / n;
    if !loss.is_finite() {
        return Err(FstError::NonFinite("validation loss".into()));
    }
    Ok((loss, correct as f64 / n))
}

/// Trains from a fresh initialization. Tracks are processed in track-id
/// order before the seeded shuffle, so input order never matters.
pub fn train(
    config: &FstConfig,
    train_cfg: &TrainConfig,
    train_set: &[SegmentEmbeddingSequence],
    val_set: &[SegmentEmbeddingSequence],
) -> Result<TrainOutcome> {
    train_with_observer(config, train_cfg, train_set, val_set, |_| {})
}

/// As [`train`], calling `observe` after every epoch.
pub fn train_with_observer(
    config: &FstConfig,
    train_cfg: &TrainConfig,
    train_set: &[SegmentEmbeddingSequence],
    val_set: &[SegmentEmbeddingSequence],
    mut observe: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    train_cfg.validate()?;
    check_split("train", train_set, config.d_in)?;
    check_split("val", val_set, config.d_in)?;
    let model = FstModel::new(config.clone())?;

    let mut train_sorted: Vec<&SegmentEmbeddingSequence> = train_set.iter().collect();
    train_sorted.sort_by(|a, b| a.track_id.cmp(&b.track_id));
    let mut val_sorted: Vec<&SegmentEmbeddingSequence> = val_set.iter().collect();
    val_sorted.sort_by(|a, b| a.track_id.cmp(&b.track_id));
    let val_inputs: Vec<(ModelInput<f32>, u8)> = val_sorted
        .iter()
        .map(|s| Ok((eval_input(s, config.max_segments)?, label(s))))
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    let mut params: ParamStore<f32> = model.init_params(&mut rng);
    let mut adam = AdamState::new(params.tensors());
    let adam_cfg = AdamConfig::new(train_cfg.lr, train_cfg.weight_decay);

    let mut best = params.clone();
    let mut best_epoch = 0;
    let mut best_val_loss = f64::INFINITY;
    let mut records = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;
    let mut order: Vec<usize> = (0..train_sorted.len()).collect();

    for epoch in 1..=train_cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(train_cfg.batch_size) {
            let mut acc: Vec<Tensor<f32>> = params
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect();
            for &i in batch {
                let seq = train_sorted[i];
                let (fixed, _) = pad_or_crop(seq, config.max_segments, CropMode::Random(&mut rng))?;
                let input = ModelInput::from_sequence(&fixed)?;
                let out = model.loss_and_grads(&params, &input, label(seq), Some(&mut rng))?;
                epoch_loss += out.loss;
                for (a, g) in acc.iter_mut().zip(&out.grads) {
                    a.data_mut().iter_mut().zip(g.data()).for_each(|(a, g)| *a += g);
                }
            }
            let inv = 1.0 / batch.len() as f32;
            for a in &mut acc {
                a.data_mut().iter_mut().for_each(|v| *v *= inv);
            }
            adam_step(params.tensors_mut(), &acc, &mut adam, &adam_cfg)?;
            if !params.is_finite() {
                return Err(FstError::NonFinite(format!("parameters after epoch {epoch}")));
            }
        }
        let train_loss = epoch_loss / train_sorted.len() as f64;
        let (val_loss, val_acc) = validation_scores(&model, &params, &val_inputs)?;
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_acc,
        };
        observe(&record);
        records.push(record);
        if val_loss < best_val_loss {
            best_val_loss = val_loss;
            best_epoch = epoch;
            best = params.clone();
        } else if epoch - best_epoch >= train_cfg.patience {
            stop_reason = StopReason::EarlyStopping;
            break;
        }
    }

    Ok(TrainOutcome {
        checkpoint: Checkpoint::new(config.clone(), best)?,
        history: TrainHistory {
            epochs: records,
            best_epoch,
            best_val_loss,
            stop_reason,
        },
    })
}

/// Loads the train and validation splits of a manifest and trains on them.
pub fn train_manifest(
    manifest: &Manifest,
    config: &FstConfig,
    train_cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let train_set = manifest.load_split(Split::Train)?;
    let val_set = manifest.load_split(Split::Val)?;
    train(config, train_cfg, &train_set, &val_set)
}

/// Model output for one track.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Prediction {
    pub track_id: String,
    pub logit: f64,
    pub prob_fake: f64,
    pub label: u8,
    pub n_segments_valid: usize,
    #[serde(skip)]
    pub gate: Option<GateTrace>,
}

/// Inference with frozen weights, one task per track. Output order follows
/// `tracks`.
pub fn predict(checkpoint: &Checkpoint, tracks: &[SegmentEmbeddingSequence]) -> Result<Vec<Prediction>> {
    let model = checkpoint.model()?;
    let max = checkpoint.config.max_segments;
    tracks
        .par_iter()
        .map(|seq| {
            if seq.dim() != checkpoint.config.d_in {
                return Err(FstError::Config(format!(
                    "track {} has dimension {}, checkpoint expects {}",
                    seq.track_id,
                    seq.dim(),
                    checkpoint.config.d_in
                )));
            }
            let input = eval_input(seq, max)?;
            let (logit, gate) = model.forward_input(&checkpoint.params, &input)?;
            if !logit.is_finite() {
                return Err(FstError::NonFinite(format!("logit of track {}", seq.track_id)));
            }
            let prob_fake = sigmoid(logit);
            Ok(Prediction {
                track_id: seq.track_id.clone(),
                logit,
                prob_fake,
                label: u8::from(prob_fake >= 0.5),
                n_segments_valid: input.mask.iter().filter(|&&m| m).count(),
                gate,
            })
        })
        .collect()
}

/// Metrics at threshold 0.5, AUC from the probabilities, and mean BCE.
pub fn evaluate(checkpoint: &Checkpoint, split: &[SegmentEmbeddingSequence]) -> Result<MetricsReport> {
    if split.is_empty() {
        return Err(FstError::Config("evaluation split is empty".into()));
    }
    let mut sorted: Vec<SegmentEmbeddingSequence> = split.to_vec();
    sorted.sort_by(|a, b| a.track_id.cmp(&b.track_id));
    let labels: Vec<u8> = sorted
        .iter()
        .map(|s| {
            s.label
                .ok_or_else(|| FstError::Config(format!("track {} has no label", s.track_id)))
        })
        .collect::<Result<_>>()?;
    let preds = predict(checkpoint, &sorted)?;
    let probs: Vec<f64> = preds.iter().map(|p| p.prob_fake).collect();
    let mut report = MetricsReport::from_scores(&probs, &labels)?;
    let loss = preds
        .iter()
        .zip(&labels)
        .map(|(p, &y)| bce_with_logits(p.logit, y as f64))
        .sum::<f64>()
        / preds.len() as f64;
    report.loss = Some(loss);
    Ok(report)
}

pub fn evaluate_manifest(
    checkpoint: &Checkpoint,
    manifest: &Manifest,
    split: Split,
) -> Result<MetricsReport> {
    evaluate(checkpoint, &manifest.load_split(split)?)
}
