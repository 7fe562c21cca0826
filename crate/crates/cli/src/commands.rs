use std::path::{Path, PathBuf};

use fst_core::data::{read_embeddings, Manifest, Split};
use fst_core::model::Checkpoint;
use fst_core::segmentation::{DownbeatAnnotation, Segmenter};
use fst_core::synthgen::{gen_dataset, raw_downbeats_path, raw_frames_path, SynthSpec, RAW_DIR};
use fst_core::train::{evaluate, predict, train_with_observer, EpochRecord, TrainConfig};
use fst_core::{FstConfig, FstError, FusionMode, Result, SegmentEmbeddingSequence};
use serde::Serialize;

use crate::config::RunConfig;
use crate::{AblateArgs, EvalArgs, ExportGatesArgs, GenDataArgs, InferArgs, SegmentationArg, TrainArgs};

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("output types serialize")
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| FstError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn gen_data(a: &GenDataArgs) -> Result<String> {
    let spec = SynthSpec {
        tracks_per_class: a.tracks,
        dim: a.dim,
        min_segments: a.min_segments,
        max_segments: a.max_segments,
        n_sections: a.n_sections,
        form: a.form.clone(),
        noise_sigma: a.noise_sigma,
        drift_sigma: a.drift_sigma,
        seed: a.seed,
        ..Default::default()
    };
    let summary = gen_dataset(&spec, &a.out, a.raw.then_some(a.frame_rate))?;
    for w in &summary.warnings {
        eprintln!("warning: {w}");
    }
    Ok(to_json(&summary))
}

fn progress(quiet: bool, label: &str) -> impl FnMut(&EpochRecord) + '_ {
    move |r| {
        if !quiet {
            eprintln!(
                "{label}epoch {:>3}  train_loss {:.5}  val_loss {:.5}  val_acc {:.4}",
                r.epoch, r.train_loss, r.val_loss, r.val_acc
            );
        }
    }
}

fn data_dim(tracks: &[SegmentEmbeddingSequence]) -> Result<usize> {
    tracks
        .first()
        .map(|t| t.dim())
        .ok_or_else(|| FstError::Config("train split is empty".into()))
}

#[derive(Serialize)]
struct TrainSummary {
    checkpoint: String,
    history_csv: String,
    history_json: String,
    epochs_run: usize,
    best_epoch: usize,
    best_val_loss: f64,
    stop_reason: String,
    param_count: usize,
}

pub fn train(a: &TrainArgs) -> Result<String> {
    let mut run = RunConfig::load(a.config.as_deref())?;
    if let Some(e) = a.epochs {
        run.epochs = e;
    }
    if let Some(s) = a.seed {
        run.seed = s;
    }
    if let Some(m) = a.fusion_mode {
        run.fusion_mode = m;
    }
    let manifest = Manifest::load(&a.data)?;
    let train_set = manifest.load_split(Split::Train)?;
    let val_set = manifest.load_split(Split::Val)?;
    let (model_cfg, train_cfg) = run.resolve(data_dim(&train_set)?)?;
    let out = train_with_observer(
        &model_cfg,
        &train_cfg,
        &train_set,
        &val_set,
        progress(a.quiet, ""),
    )?;
    out.checkpoint.save(&a.out)?;
    let prefix = a.history.clone().unwrap_or_else(|| a.out.clone());
    let csv_path = with_suffix(&prefix, ".history.csv");
    let json_path = with_suffix(&prefix, ".history.json");
    out.history.write_csv(&csv_path)?;
    out.history.write_json(&json_path)?;
    Ok(to_json(&TrainSummary {
        checkpoint: a.out.display().to_string(),
        history_csv: csv_path.display().to_string(),
        history_json: json_path.display().to_string(),
        epochs_run: out.history.epochs.len(),
        best_epoch: out.history.best_epoch,
        best_val_loss: out.history.best_val_loss,
        stop_reason: out.history.stop_reason.to_string(),
        param_count: out.checkpoint.params.numel(),
    }))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.is_file() {
        return Err(FstError::Config(format!(
            "checkpoint {} not found",
            path.display()
        )));
    }
    Checkpoint::load(path)
}

pub fn eval(a: &EvalArgs) -> Result<String> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let manifest = Manifest::load(&a.data)?;
    let split: Split = a.split.into();
    let tracks = manifest.load_split(split)?;
    if tracks.is_empty() {
        return Err(FstError::Config(format!("split {split} is empty")));
    }
    let report = evaluate(&ckpt, &tracks)?;
    let text = to_json(&report);
    if let Some(p) = &a.out {
        write_text(p, &(text.clone() + "\n"))?;
    }
    Ok(text)
}

/// `name.segemb` and `name.frames.segemb` both give `name`.
fn track_id_of(path: &Path) -> String {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    for suffix in [".frames.segemb", ".segemb"] {
        if let Some(stem) = name.strip_suffix(suffix) {
            return stem.to_string();
        }
    }
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or(name)
}

fn segmenter(choice: SegmentationArg, window: f64, hop: f64) -> Segmenter {
    match choice {
        SegmentationArg::Fourbar => Segmenter::FourBar,
        SegmentationArg::Fixed => Segmenter::Fixed { window, hop },
    }
}

#[derive(Serialize)]
struct Verdict {
    track_id: String,
    prob_fake: f64,
    label: u8,
    n_segments_valid: usize,
}

pub fn infer(a: &InferArgs) -> Result<String> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let track_id = track_id_of(&a.input);
    let emb = read_embeddings(&a.input)?;
    let seq = if a.from_raw {
        let choice = a.segmentation.unwrap_or(SegmentationArg::Fourbar);
        let n_frames = emb.rows() as f64;
        let ann = match (&a.downbeats, choice) {
            (Some(p), _) => DownbeatAnnotation::read(p, &track_id, None)?,
            (None, SegmentationArg::Fixed) => {
                DownbeatAnnotation::new(&*track_id, Vec::new(), n_frames / a.frame_rate)?
            }
            (None, SegmentationArg::Fourbar) => {
                return Err(FstError::Config("four-bar segmentation needs --downbeats".into()))
            }
        };
        segmenter(choice, a.window, a.hop).segment(&track_id, &emb, a.frame_rate, &ann, None)?
    } else {
        if a.downbeats.is_some() || a.segmentation.is_some() {
            return Err(FstError::Config(
                "--downbeats and --segmentation apply to frame-level input; add --from-raw".into(),
            ));
        }
        SegmentEmbeddingSequence::new(track_id, emb, None)?
    };
    let p = predict(&ckpt, std::slice::from_ref(&seq))?.remove(0);
    Ok(to_json(&Verdict {
        track_id: p.track_id,
        prob_fake: p.prob_fake,
        label: p.label,
        n_segments_valid: p.n_segments_valid,
    }))
}

#[derive(Serialize)]
struct GateRow<'a> {
    track_id: &'a str,
    label: u8,
    segment_index: usize,
    mean_gate: f64,
}

#[derive(Serialize)]
struct GateSummary {
    csv: String,
    tracks: usize,
    rows: usize,
    mean_gate_real: Option<f64>,
    mean_gate_fake: Option<f64>,
    /// Which class leans more on the content stream (higher gate).
    higher_gate_class: Option<String>,
}

pub fn export_gates(a: &ExportGatesArgs) -> Result<String> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    if ckpt.config.fusion_mode != FusionMode::Gated {
        return Err(FstError::Config(format!(
            "no gate in this fusion mode ({})",
            ckpt.config.fusion_mode
        )));
    }
    let manifest = Manifest::load(&a.data)?;
    let tracks = manifest.load_split(a.split.into())?;
    let preds = predict(&ckpt, &tracks)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut sums = [(0.0, 0usize); 2];
    let mut rows = 0;
    for (seq, p) in tracks.iter().zip(&preds) {
        let label = seq.label.expect("manifest tracks are labeled");
        let trace = p.gate.as_ref().expect("gated checkpoints produce traces");
        for (segment_index, mean_gate) in trace.valid() {
            w.serialize(GateRow {
                track_id: &seq.track_id,
                label,
                segment_index,
                mean_gate,
            })
            .map_err(|e| FstError::Contract(e.to_string()))?;
            sums[label as usize].0 += mean_gate;
            sums[label as usize].1 += 1;
            rows += 1;
        }
    }
    let bytes = w.into_inner().map_err(|e| FstError::Contract(e.to_string()))?;
    std::fs::write(&a.out, bytes).map_err(|e| FstError::Io {
        path: a.out.clone(),
        source: e,
    })?;
    let mean = |(s, n): (f64, usize)| (n > 0).then(|| s / n as f64);
    let (real, fake) = (mean(sums[0]), mean(sums[1]));
    let higher = match (real, fake) {
        (Some(r), Some(f)) if f > r => Some("fake".to_string()),
        (Some(r), Some(f)) if r > f => Some("real".to_string()),
        (Some(_), Some(_)) => Some("equal".to_string()),
        _ => None,
    };
    Ok(to_json(&GateSummary {
        csv: a.out.display().to_string(),
        tracks: tracks.len(),
        rows,
        mean_gate_real: real,
        mean_gate_fake: fake,
        higher_gate_class: higher,
    }))
}

/// Re-segments every track of a split from its frame-level file and
/// downbeat annotation.
pub fn load_raw_split(
    manifest: &Manifest,
    raw_dir: &Path,
    split: Split,
    segmenter: Segmenter,
    frame_rate: f64,
) -> Result<Vec<SegmentEmbeddingSequence>> {
    let mut entries: Vec<_> = manifest.split(split).collect();
    entries.sort_by(|a, b| a.track_id.cmp(&b.track_id));
    entries
        .into_iter()
        .map(|e| {
            let frames = read_embeddings(&raw_frames_path(raw_dir, &e.track_id))?;
            let ann = DownbeatAnnotation::read(&raw_downbeats_path(raw_dir, &e.track_id), &e.track_id, None)?;
            segmenter.segment(&e.track_id, &frames, frame_rate, &ann, Some(e.label))
        })
        .collect()
}

#[derive(Serialize)]
struct AblationRow {
    variant: String,
    fusion_mode: FusionMode,
    segmentation: String,
    epochs_run: usize,
    best_epoch: usize,
    metrics: fst_core::metrics::MetricsReport,
}

#[derive(Serialize)]
struct AblationTable {
    seed: u64,
    split: String,
    rows: Vec<AblationRow>,
    best_variant_by_accuracy: String,
    /// Whether the gated variant reached the top accuracy (ties included).
    gated_best: Option<bool>,
}

struct Datasets {
    name: String,
    train: Vec<SegmentEmbeddingSequence>,
    val: Vec<SegmentEmbeddingSequence>,
    eval: Vec<SegmentEmbeddingSequence>,
}

pub fn ablate(a: &AblateArgs) -> Result<String> {
    if a.modes.is_empty() {
        return Err(FstError::Config(
            "--modes must list at least one fusion mode".into(),
        ));
    }
    let mut run = RunConfig::load(a.config.as_deref())?;
    if let Some(e) = a.epochs {
        run.epochs = e;
    }
    if let Some(s) = a.seed {
        run.seed = s;
    }
    let manifest = Manifest::load(&a.data)?;
    let split: Split = a.split.into();
    let mut datasets = Vec::new();
    if a.segmentation.is_empty() {
        datasets.push(Datasets {
            name: "manifest".into(),
            train: manifest.load_split(Split::Train)?,
            val: manifest.load_split(Split::Val)?,
            eval: manifest.load_split(split)?,
        });
    } else {
        let raw_dir = a.raw_dir.clone().unwrap_or_else(|| manifest.root.join(RAW_DIR));
        for &choice in &a.segmentation {
            let seg = segmenter(choice, a.window, a.hop);
            let load = |s| load_raw_split(&manifest, &raw_dir, s, seg, a.frame_rate);
            datasets.push(Datasets {
                name: seg.name().into(),
                train: load(Split::Train)?,
                val: load(Split::Val)?,
                eval: load(split)?,
            });
        }
    }

    let mut rows = Vec::new();
    for ds in &datasets {
        for &mode in &a.modes {
            let run = RunConfig {
                fusion_mode: mode,
                ..run.clone()
            };
            let (model_cfg, train_cfg): (FstConfig, TrainConfig) = run.resolve(data_dim(&ds.train)?)?;
            let variant = if datasets.len() > 1 || ds.name != "manifest" {
                format!("{}+{}", mode, ds.name)
            } else {
                mode.to_string()
            };
            let label = format!("[{variant}] ");
            let out = train_with_observer(
                &model_cfg,
                &train_cfg,
                &ds.train,
                &ds.val,
                progress(a.quiet, &label),
            )?;
            let metrics = evaluate(&out.checkpoint, &ds.eval)?;
            rows.push(AblationRow {
                variant,
                fusion_mode: mode,
                segmentation: ds.name.clone(),
                epochs_run: out.history.epochs.len(),
                best_epoch: out.history.best_epoch,
                metrics,
            });
        }
    }
    let best = rows
        .iter()
        .fold(None::<&AblationRow>, |best, r| match best {
            Some(b) if b.metrics.accuracy >= r.metrics.accuracy => Some(b),
            _ => Some(r),
        })
        .expect("at least one row");
    let top = best.metrics.accuracy;
    let gated_best = rows.iter().any(|r| r.fusion_mode == FusionMode::Gated).then(|| {
        rows.iter()
            .filter(|r| r.fusion_mode == FusionMode::Gated)
            .any(|r| r.metrics.accuracy >= top)
    });
    let table = AblationTable {
        seed: run.seed,
        split: split.to_string(),
        best_variant_by_accuracy: best.variant.clone(),
        rows,
        gated_best,
    };
    let text = to_json(&table);
    if let Some(p) = &a.out {
        write_text(p, &(text.clone() + "\n"))?;
    }
    Ok(text)
}
