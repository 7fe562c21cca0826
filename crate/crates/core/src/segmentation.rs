//! Segment spans from downbeats or fixed windows, frame pooling, and
//! fixed-length normalization of segment sequences.

use std::path::Path;

use rand::{Rng, RngCore};

use crate::error::{FstError, Result};
use crate::numerics::Tensor;
use crate::ssm::SegmentEmbeddingSequence;

/// Default number of segments the model consumes.
pub const DEFAULT_SEGMENTS: usize = 48;

#[derive(Clone, Debug, PartialEq)]
pub struct DownbeatAnnotation {
    pub track_id: String,
    /// Strictly increasing, in seconds.
    pub downbeats: Vec<f64>,
    pub track_duration: f64,
}

impl DownbeatAnnotation {
    pub fn new(track_id: impl Into<String>, downbeats: Vec<f64>, track_duration: f64) -> Result<Self> {
        let ann = DownbeatAnnotation {
            track_id: track_id.into(),
            downbeats,
            track_duration,
        };
        ann.validate()?;
        Ok(ann)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.track_duration.is_finite() || self.track_duration <= 0.0 {
            return Err(FstError::Contract(format!(
                "track duration must be positive, got {}",
                self.track_duration
            )));
        }
        for w in self.downbeats.windows(2) {
            if w[1] <= w[0] {
                return Err(FstError::Contract(format!(
                    "downbeats not strictly increasing at {} -> {}",
                    w[0], w[1]
                )));
            }
        }
        if self
            .downbeats
            .iter()
            .any(|&t| !t.is_finite() || t < 0.0 || t > self.track_duration)
        {
            return Err(FstError::Contract("downbeat outside [0, track_duration]".into()));
        }
        Ok(())
    }

    /// Parses one decimal timestamp per line. Blank lines and `#` comments
    /// are skipped. The duration defaults to the last downbeat.
    pub fn parse(track_id: &str, text: &str, track_duration: Option<f64>) -> Result<Self> {
        let mut downbeats = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let t: f64 = line
                .parse()
                .map_err(|_| FstError::Contract(format!("line {}: not a timestamp: {line:?}", lineno + 1)))?;
            downbeats.push(t);
        }
        let duration = track_duration
            .or_else(|| downbeats.last().copied())
            .unwrap_or(0.0);
        DownbeatAnnotation::new(track_id, downbeats, duration)
    }

    pub fn read(path: &Path, track_id: &str, track_duration: Option<f64>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FstError::io(path, e))?;
        Self::parse(track_id, &text, track_duration).map_err(|e| FstError::format(path, e.to_string()))
    }

    pub fn to_text(&self) -> String {
        self.downbeats.iter().map(|t| format!("{t}\n")).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegmentSpan {
    pub start: f64,
    pub end: f64,
}

impl SegmentSpan {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// Non-overlapping groups of `bars_per_segment` bars:
/// span `k` is `[downbeat[k*B], downbeat[(k+1)*B]]`. A trailing partial
/// group is dropped. Too few downbeats yields an empty list.
pub fn four_bar_spans(ann: &DownbeatAnnotation, bars_per_segment: usize) -> Result<Vec<SegmentSpan>> {
    if bars_per_segment == 0 {
        return Err(FstError::Contract("bars_per_segment must be at least 1".into()));
    }
    let db = &ann.downbeats;
    let n_groups = db.len().saturating_sub(1) / bars_per_segment;
    Ok((0..n_groups)
        .map(|k| SegmentSpan {
            start: db[k * bars_per_segment],
            end: db[(k + 1) * bars_per_segment],
        })
        .collect())
}

/// Windows `[k*hop, k*hop + window]` for `k = 0, 1, ...` while the window
/// ends inside the track.
pub fn fixed_window_spans(track_duration: f64, window: f64, hop: f64) -> Result<Vec<SegmentSpan>> {
    if !(window > 0.0 && hop > 0.0) {
        return Err(FstError::Contract(format!(
            "window ({window}) and hop ({hop}) must be positive"
        )));
    }
    // Absorbs accumulated rounding in k * hop.
    const SLACK: f64 = 1e-9;
    let mut spans = Vec::new();
    let mut k = 0usize;
    loop {
        let start = k as f64 * hop;
        let end = start + window;
        if end > track_duration + SLACK {
            break;
        }
        spans.push(SegmentSpan { start, end });
        k += 1;
    }
    Ok(spans)
}

/// Averages frame-level embeddings (rows of `frames`, sampled at
/// `frame_rate` Hz) over each span. A frame belongs to a span when its
/// center time falls in `[start, end)`; a span that contains no frame center
/// takes the frame nearest to its midpoint.
pub fn pool_frames(frames: &Tensor<f32>, frame_rate: f64, spans: &[SegmentSpan]) -> Result<Tensor<f32>> {
    if frame_rate <= 0.0 {
        return Err(FstError::Contract("frame rate must be positive".into()));
    }
    let (n, d) = (frames.rows(), frames.cols());
    if n == 0 {
        return Err(FstError::Contract("no frames to pool".into()));
    }
    let center = |i: usize| (i as f64 + 0.5) / frame_rate;
    let mut out = Vec::with_capacity(spans.len() * d);
    for span in spans {
        let members: Vec<usize> = (0..n)
            .filter(|&i| center(i) >= span.start && center(i) < span.end)
            .collect();
        let members = if members.is_empty() {
            let mid = 0.5 * (span.start + span.end);
            let nearest = ((mid * frame_rate - 0.5).round().max(0.0) as usize).min(n - 1);
            vec![nearest]
        } else {
            members
        };
        let mut acc = vec![0.0f64; d];
        for &i in &members {
            for (a, &v) in acc.iter_mut().zip(frames.row(i)) {
                *a += v as f64;
            }
        }
        out.extend(acc.iter().map(|a| (a / members.len() as f64) as f32));
    }
    Tensor::new(vec![spans.len(), d], out)
}

/// Segmentation strategy for frame-level input.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Segmenter {
    /// Groups of four bars delimited by downbeats.
    FourBar,
    /// Fixed windows in seconds, independent of the musical grid.
    Fixed { window: f64, hop: f64 },
}

impl Segmenter {
    pub const FIXED_DEFAULT: Segmenter = Segmenter::Fixed {
        window: 10.0,
        hop: 2.5,
    };

    pub fn name(&self) -> &'static str {
        match self {
            Segmenter::FourBar => "fourbar",
            Segmenter::Fixed { .. } => "fixed",
        }
    }

    pub fn spans(&self, ann: &DownbeatAnnotation) -> Result<Vec<SegmentSpan>> {
        match *self {
            Segmenter::FourBar => four_bar_spans(ann, 4),
            Segmenter::Fixed { window, hop } => fixed_window_spans(ann.track_duration, window, hop),
        }
    }

    /// Pools frame-level embeddings into one row per span.
    pub fn segment(
        &self,
        track_id: &str,
        frames: &Tensor<f32>,
        frame_rate: f64,
        ann: &DownbeatAnnotation,
        label: Option<u8>,
    ) -> Result<SegmentEmbeddingSequence> {
        let spans = self.spans(ann)?;
        if spans.is_empty() {
            return Err(FstError::Contract(format!(
                "track {track_id}: {} segmentation produced no segments",
                self.name()
            )));
        }
        let pooled = pool_frames(frames, frame_rate, &spans)?;
        SegmentEmbeddingSequence::new(track_id, pooled, label)
    }
}

/// How to pick the window when a sequence is longer than the target.
pub enum CropMode<'a> {
    /// Keep the first `target` segments.
    Head,
    /// Keep a window starting at a uniformly random offset.
    Random(&'a mut dyn RngCore),
}

/// Zero-pads (at the tail) or crops a sequence to exactly `target` rows.
/// Returns the new sequence and its validity mask.
pub fn pad_or_crop(
    seq: &SegmentEmbeddingSequence,
    target: usize,
    mode: CropMode<'_>,
) -> Result<(SegmentEmbeddingSequence, Vec<bool>)> {
    if target == 0 {
        return Err(FstError::Contract("target length must be at least 1".into()));
    }
    if seq.n_valid == 0 {
        return Err(FstError::Contract(format!(
            "track {} has no valid segments",
            seq.track_id
        )));
    }
    let d = seq.dim();
    let n_valid = seq.n_valid;
    let (offset, keep) = if n_valid > target {
        let offset = match mode {
            CropMode::Head => 0,
            CropMode::Random(rng) => rng.random_range(0..=n_valid - target),
        };
        (offset, target)
    } else {
        (0, n_valid)
    };
    let mut data = vec![0.0f32; target * d];
    data[..keep * d].copy_from_slice(&seq.embeddings.data()[offset * d..(offset + keep) * d]);
    let out = SegmentEmbeddingSequence {
        track_id: seq.track_id.clone(),
        embeddings: Tensor::new(vec![target, d], data)?,
        label: seq.label,
        n_valid: keep,
    };
    let mask = out.mask();
    Ok((out, mask))
}
