//! Synthetic labeled segment-embedding datasets.
//!
//! Real tracks (label 0) cycle through a small set of section prototypes
//! following a repetition form, so their SSM shows off-diagonal blocks.
//! Fake tracks (label 1) follow a normalized random walk: locally smooth,
//! drifting globally, with similarity decaying in `|i - j|`. Both classes
//! have matched per-segment marginals, so only structure separates them.

use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{split_manifest, write_embeddings, Manifest, ManifestEntry, Split};
use crate::error::{FstError, Result};
use crate::numerics::Tensor;
use crate::segmentation::DownbeatAnnotation;
use crate::ssm::SegmentEmbeddingSequence;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub tracks_per_class: usize,
    pub dim: usize,
    pub min_segments: usize,
    pub max_segments: usize,
    pub n_sections: usize,
    /// Section letters, `A` for prototype 0 and so on, repeated cyclically.
    pub form: String,
    /// Segments per form letter, drawn uniformly from this inclusive range.
    pub section_len: (usize, usize),
    pub noise_sigma: f64,
    pub drift_sigma: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            tracks_per_class: 300,
            dim: 32,
            min_segments: 20,
            max_segments: 70,
            n_sections: 3,
            form: "AABACA".into(),
            section_len: (2, 4),
            noise_sigma: 0.1,
            drift_sigma: 0.3,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FstError::Config(m));
        if self.dim == 0 {
            return bad("dim must be at least 1".into());
        }
        if self.min_segments < 4 || self.max_segments < self.min_segments {
            return bad(format!(
                "segment range [{}, {}] needs 4 <= min <= max",
                self.min_segments, self.max_segments
            ));
        }
        if self.n_sections < 2 {
            return bad("n_sections must be at least 2".into());
        }
        if !(self.noise_sigma > 0.0 && self.drift_sigma > 0.0) {
            return bad("noise_sigma and drift_sigma must be positive".into());
        }
        if self.section_len.0 == 0 || self.section_len.1 < self.section_len.0 {
            return bad(format!("invalid section_len {:?}", self.section_len));
        }
        self.form_indices()?;
        Ok(())
    }

    fn form_indices(&self) -> Result<Vec<usize>> {
        if self.form.is_empty() {
            return Err(FstError::Config("form must not be empty".into()));
        }
        self.form
            .chars()
            .map(|c| {
                let k = (c as u32).wrapping_sub('A' as u32) as usize;
                if c.is_ascii_uppercase() && k < self.n_sections {
                    Ok(k)
                } else {
                    Err(FstError::Config(format!(
                        "form letter {c:?} is outside the {} sections",
                        self.n_sections
                    )))
                }
            })
            .collect()
    }
}

fn gaussian(rng: &mut dyn RngCore, d: usize, sigma: f64) -> Vec<f64> {
    (0..d)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut *rng);
            sigma * z
        })
        .collect()
}

/// Rescales to root-mean-square 1 (Euclidean norm `sqrt(d)`).
fn normalize_rms(v: &mut [f64]) {
    let rms = (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
    if rms > 0.0 {
        v.iter_mut().for_each(|x| *x /= rms);
    }
}

fn to_tensor(rows: &[Vec<f64>]) -> Tensor<f32> {
    let d = rows[0].len();
    let data = rows.iter().flatten().map(|&v| v as f32).collect();
    Tensor::new(vec![rows.len(), d], data).expect("rows share a length")
}

/// A real track together with the section index of every segment.
pub fn gen_real_with_sections(
    rng: &mut dyn RngCore,
    spec: &SynthSpec,
    track_id: &str,
) -> Result<(SegmentEmbeddingSequence, Vec<usize>)> {
    spec.validate()?;
    let form = spec.form_indices()?;
    let n = rng.random_range(spec.min_segments..=spec.max_segments);
    let prototypes: Vec<Vec<f64>> = (0..spec.n_sections)
        .map(|_| {
            let mut p = gaussian(rng, spec.dim, 1.0);
            normalize_rms(&mut p);
            p
        })
        .collect();
    let mut sections = Vec::with_capacity(n);
    let mut step = 0;
    while sections.len() < n {
        let len = rng.random_range(spec.section_len.0..=spec.section_len.1);
        let k = form[step % form.len()];
        sections.extend(std::iter::repeat_n(k, len.min(n - sections.len())));
        step += 1;
    }
    let rows: Vec<Vec<f64>> = sections
        .iter()
        .map(|&k| {
            let noise = gaussian(rng, spec.dim, spec.noise_sigma);
            prototypes[k].iter().zip(noise).map(|(p, e)| p + e).collect()
        })
        .collect();
    let seq = SegmentEmbeddingSequence::new(track_id, to_tensor(&rows), Some(0))?;
    Ok((seq, sections))
}

pub fn gen_real(rng: &mut dyn RngCore, spec: &SynthSpec, track_id: &str) -> Result<SegmentEmbeddingSequence> {
    gen_real_with_sections(rng, spec, track_id).map(|(s, _)| s)
}

pub fn gen_fake(rng: &mut dyn RngCore, spec: &SynthSpec, track_id: &str) -> Result<SegmentEmbeddingSequence> {
    spec.validate()?;
    let n = rng.random_range(spec.min_segments..=spec.max_segments);
    let mut current = gaussian(rng, spec.dim, 1.0);
    normalize_rms(&mut current);
    let mut rows = Vec::with_capacity(n);
    rows.push(current.clone());
    for _ in 1..n {
        let step = gaussian(rng, spec.dim, spec.drift_sigma);
        current.iter_mut().zip(step).for_each(|(c, s)| *c += s);
        normalize_rms(&mut current);
        rows.push(current.clone());
    }
    SegmentEmbeddingSequence::new(track_id, to_tensor(&rows), Some(1))
}

/// Per-track seed: `seed` mixed with label and index (splitmix64 finalizer).
pub fn track_seed(seed: u64, label: u8, index: usize) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(1 + index as u64))
        .wrapping_add((label as u64) << 56);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn track_id(label: u8, index: usize) -> String {
    format!("{}_{index:04}", if label == 0 { "real" } else { "fake" })
}

/// Generates one track of the dataset from its derived seed.
pub fn gen_track(spec: &SynthSpec, label: u8, index: usize) -> Result<SegmentEmbeddingSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(track_seed(spec.seed, label, index));
    let id = track_id(label, index);
    if label == 0 {
        gen_real(&mut rng, spec, &id)
    } else {
        gen_fake(&mut rng, spec, &id)
    }
}

/// All tracks of the dataset, real ones first, generated in parallel.
pub fn gen_tracks(spec: &SynthSpec) -> Result<Vec<SegmentEmbeddingSequence>> {
    spec.validate()?;
    (0..2 * spec.tracks_per_class)
        .into_par_iter()
        .map(|i| {
            let label = (i / spec.tracks_per_class) as u8;
            gen_track(spec, label, i % spec.tracks_per_class)
        })
        .collect()
}

/// Expands a segment-level track into frame-level embeddings plus downbeat
/// annotations. Each segment spans four bars of 1.8 to 2.4 s; frames at
/// `frame_rate` Hz copy the embedding of the segment containing their center,
/// plus jitter of `noise_sigma`.
pub fn gen_raw(
    rng: &mut dyn RngCore,
    seq: &SegmentEmbeddingSequence,
    frame_rate: f64,
    noise_sigma: f64,
) -> Result<(Tensor<f32>, DownbeatAnnotation)> {
    if frame_rate <= 0.0 {
        return Err(FstError::Config("frame rate must be positive".into()));
    }
    let mut downbeats = vec![0.0];
    for _ in 0..seq.n_valid * 4 {
        let bar = rng.random_range(1.8..2.4);
        downbeats.push(downbeats.last().unwrap() + bar);
    }
    let duration = *downbeats.last().unwrap();
    let n_frames = (duration * frame_rate).floor() as usize;
    let d = seq.dim();
    let mut data = Vec::with_capacity(n_frames * d);
    let mut segment = 0;
    for f in 0..n_frames {
        let center = (f as f64 + 0.5) / frame_rate;
        while segment + 1 < seq.n_valid && center >= downbeats[4 * (segment + 1)] {
            segment += 1;
        }
        let noise = gaussian(rng, d, noise_sigma);
        data.extend(
            seq.embeddings
                .row(segment)
                .iter()
                .zip(noise)
                .map(|(&v, e)| (v as f64 + e) as f32),
        );
    }
    let frames = Tensor::new(vec![n_frames, d], data)?;
    let ann = DownbeatAnnotation::new(seq.track_id.clone(), downbeats, duration)?;
    Ok((frames, ann))
}

pub const MANIFEST_NAME: &str = "manifest.jsonl";
pub const RAW_DIR: &str = "raw";

pub fn raw_frames_path(raw_dir: &Path, track_id: &str) -> PathBuf {
    raw_dir.join(format!("{track_id}.frames.segemb"))
}

pub fn raw_downbeats_path(raw_dir: &Path, track_id: &str) -> PathBuf {
    raw_dir.join(format!("{track_id}.downbeats.txt"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub out_dir: String,
    pub manifest: String,
    pub tracks: usize,
    pub dim: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub raw: bool,
    pub seed: u64,
    pub warnings: Vec<String>,
}

/// Writes `tracks/<id>.segemb` for every track and `manifest.jsonl` with a
/// stratified 8:1:1 split. With `raw_frame_rate`, also writes frame-level
/// files and downbeat annotations under `raw/`.
pub fn gen_dataset(spec: &SynthSpec, out_dir: &Path, raw_frame_rate: Option<f64>) -> Result<DatasetSummary> {
    let tracks = gen_tracks(spec)?;
    let tracks_dir = out_dir.join("tracks");
    std::fs::create_dir_all(&tracks_dir).map_err(|e| FstError::io(&tracks_dir, e))?;
    let mut entries = Vec::with_capacity(tracks.len());
    for t in &tracks {
        let rel = format!("tracks/{}.segemb", t.track_id);
        write_embeddings(&out_dir.join(&rel), &t.embeddings)?;
        entries.push(ManifestEntry {
            path: rel,
            track_id: t.track_id.clone(),
            label: t.label.expect("generated tracks are labeled"),
            split: Split::Train,
        });
    }
    let warnings = split_manifest(&mut entries, [8.0, 1.0, 1.0], spec.seed)?;
    let manifest = Manifest::new(out_dir, entries)?;
    let manifest_path = out_dir.join(MANIFEST_NAME);
    manifest.save(&manifest_path)?;

    if let Some(rate) = raw_frame_rate {
        let raw_dir = out_dir.join(RAW_DIR);
        std::fs::create_dir_all(&raw_dir).map_err(|e| FstError::io(&raw_dir, e))?;
        let raw: Vec<(Tensor<f32>, DownbeatAnnotation)> = tracks
            .par_iter()
            .enumerate()
            .map(|(i, t)| {
                let mut rng = ChaCha8Rng::seed_from_u64(track_seed(!spec.seed, 2, i));
                gen_raw(&mut rng, t, rate, spec.noise_sigma)
            })
            .collect::<Result<_>>()?;
        for (t, (frames, ann)) in tracks.iter().zip(raw) {
            write_embeddings(&raw_frames_path(&raw_dir, &t.track_id), &frames)?;
            let p = raw_downbeats_path(&raw_dir, &t.track_id);
            std::fs::write(&p, ann.to_text()).map_err(|e| FstError::io(&p, e))?;
        }
    }

    let count = |s: Split| manifest.split(s).count();
    Ok(DatasetSummary {
        out_dir: out_dir.display().to_string(),
        manifest: manifest_path.display().to_string(),
        tracks: tracks.len(),
        dim: spec.dim,
        train: count(Split::Train),
        val: count(Split::Val),
        test: count(Split::Test),
        raw: raw_frame_rate.is_some(),
        seed: spec.seed,
        warnings,
    })
}

/// Mean SSM entry over valid pairs with `|i - j| > min_lag`.
pub fn long_range_similarity(seq: &SegmentEmbeddingSequence, min_lag: usize) -> Result<Option<f64>> {
    let ssm = seq.self_similarity()?;
    let n = seq.n_valid;
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..n {
        for j in (i + min_lag + 1)..n {
            sum += ssm.get(i, j) as f64;
            count += 1;
        }
    }
    Ok((count > 0).then(|| sum / count as f64))
}
