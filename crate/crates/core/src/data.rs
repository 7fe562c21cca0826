//! On-disk formats: `SEGEMB01` embedding files and the JSON Lines manifest.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FstError, Result};
use crate::numerics::Tensor;
use crate::ssm::SegmentEmbeddingSequence;

pub const EMBEDDING_MAGIC: &[u8; 8] = b"SEGEMB01";

/// Serializes an `N x d` matrix: magic, `u32` N, `u32` d (little-endian),
/// then `N*d` little-endian `f32` values, row-major.
pub fn encode_embeddings(embeddings: &Tensor<f32>) -> Result<Vec<u8>> {
    if embeddings.shape().len() != 2 {
        return Err(FstError::Shape(format!(
            "embedding file holds a matrix, got {:?}",
            embeddings.shape()
        )));
    }
    if !embeddings.is_finite() {
        return Err(FstError::NonFinite("embedding values".into()));
    }
    let mut out = Vec::with_capacity(16 + 4 * embeddings.numel());
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.extend_from_slice(&(embeddings.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(embeddings.cols() as u32).to_le_bytes());
    for v in embeddings.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_embeddings(bytes: &[u8], origin: &Path) -> Result<Tensor<f32>> {
    if bytes.len() < 16 || &bytes[..8] != EMBEDDING_MAGIC {
        return Err(FstError::format(origin, "bad magic"));
    }
    let n = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let d = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let expected = 16 + 4 * n * d;
    if bytes.len() != expected {
        return Err(FstError::format(
            origin,
            format!(
                "size {} does not match header ({n} x {d} needs {expected})",
                bytes.len()
            ),
        ));
    }
    let data: Vec<f32> = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(FstError::format(origin, "non-finite value"));
    }
    Tensor::new(vec![n, d], data)
}

pub fn write_embeddings(path: &Path, embeddings: &Tensor<f32>) -> Result<()> {
    let bytes = encode_embeddings(embeddings)?;
    std::fs::write(path, bytes).map_err(|e| FstError::io(path, e))
}

pub fn read_embeddings(path: &Path) -> Result<Tensor<f32>> {
    let bytes = std::fs::read(path).map_err(|e| FstError::io(path, e))?;
    decode_embeddings(&bytes, path)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = FstError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(FstError::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// One manifest line.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory.
    pub path: String,
    pub track_id: String,
    pub label: u8,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    /// Directory that entry paths are relative to.
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(root: impl Into<PathBuf>, entries: Vec<ManifestEntry>) -> Result<Self> {
        let m = Manifest {
            root: root.into(),
            entries,
        };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        let mut paths = HashSet::new();
        for e in &self.entries {
            if e.label > 1 {
                return Err(FstError::Config(format!("{}: label must be 0 or 1", e.track_id)));
            }
            if !paths.insert(&e.path) {
                return Err(FstError::Config(format!("duplicate manifest path {}", e.path)));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str, root: impl Into<PathBuf>, origin: &Path) -> Result<Self> {
        let entries = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| FstError::format(origin, format!("line {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<ManifestEntry>>>()?;
        Manifest::new(root, entries)
    }

    /// Loads a manifest and checks that every referenced file exists.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FstError::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let m = Manifest::parse(&text, root, path)?;
        for e in &m.entries {
            let p = m.resolve(e);
            if !p.is_file() {
                return Err(FstError::format(path, format!("missing file {}", p.display())));
            }
        }
        Ok(m)
    }

    pub fn to_jsonl(&self) -> String {
        self.entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("manifest entry serializes") + "\n")
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| FstError::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes())
            .map_err(|e| FstError::io(path, e))
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Reads the embedding files of one split, sorted by track id so that
    /// results never depend on manifest line order.
    pub fn load_split(&self, split: Split) -> Result<Vec<SegmentEmbeddingSequence>> {
        let mut entries: Vec<&ManifestEntry> = self.split(split).collect();
        entries.sort_by(|a, b| (&a.track_id, &a.path).cmp(&(&b.track_id, &b.path)));
        entries
            .into_iter()
            .map(|e| {
                let emb = read_embeddings(&self.resolve(e))?;
                SegmentEmbeddingSequence::new(e.track_id.clone(), emb, Some(e.label))
            })
            .collect()
    }

    /// Count of `(split, label)` pairs.
    pub fn counts(&self) -> BTreeMap<(Split, u8), usize> {
        let mut out = BTreeMap::new();
        for e in &self.entries {
            *out.entry((e.split, e.label)).or_insert(0) += 1;
        }
        out
    }
}

/// Per-class counts for an `8:1:1`-style split of `n` items: validation and
/// test each get `round(n * ratio)`, at least one when `n >= 3`.
fn split_sizes(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let total: f64 = ratios.iter().sum();
    let portion = |r: f64| ((n as f64) * r / total).round() as usize;
    let mut val = portion(ratios[1]);
    let mut test = portion(ratios[2]);
    if n >= 3 {
        val = val.max(1);
        test = test.max(1);
    }
    while val + test > n {
        if test >= val && test > 0 {
            test -= 1;
        } else {
            val -= 1;
        }
    }
    [n - val - test, val, test]
}

/// Class-stratified shuffled split. Assignment depends only on `seed` and
/// the set of track ids, not on entry order.
///
/// Returns warnings for classes too small to populate every split.
pub fn split_manifest(entries: &mut [ManifestEntry], ratios: [f64; 3], seed: u64) -> Result<Vec<String>> {
    if entries.len() < 10 {
        return Err(FstError::Config(format!(
            "need at least 10 tracks to split, got {}",
            entries.len()
        )));
    }
    if ratios.iter().any(|&r| r < 0.0) || ratios.iter().sum::<f64>() <= 0.0 {
        return Err(FstError::Config(format!("invalid split ratios {ratios:?}")));
    }
    let mut warnings = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for label in [0u8, 1] {
        let mut idx: Vec<usize> = (0..entries.len())
            .filter(|&i| entries[i].label == label)
            .collect();
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 3 {
            warnings.push(format!(
                "class {label} has only {} tracks; some splits will lack it",
                idx.len()
            ));
        }
        idx.sort_by(|&a, &b| entries[a].track_id.cmp(&entries[b].track_id));
        idx.shuffle(&mut rng);
        let [train, val, _] = split_sizes(idx.len(), ratios);
        for (k, &i) in idx.iter().enumerate() {
            entries[i].split = if k < train {
                Split::Train
            } else if k < train + val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    Ok(warnings)
}
