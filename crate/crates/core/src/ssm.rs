//! Gaussian-kernel self-similarity of a segment-embedding sequence:
//! `S[i][j] = exp(-||e_i - e_j||^2 / d)` with `d` the embedding dimension.

use crate::error::{FstError, Result};
use crate::numerics::{Real, Tensor};

/// One track as an `N x d` matrix of segment embeddings. Rows at and beyond
/// `n_valid` are padding.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentEmbeddingSequence {
    pub track_id: String,
    pub embeddings: Tensor<f32>,
    /// 0 = human-made, 1 = AI-generated.
    pub label: Option<u8>,
    pub n_valid: usize,
}

impl SegmentEmbeddingSequence {
    pub fn new(track_id: impl Into<String>, embeddings: Tensor<f32>, label: Option<u8>) -> Result<Self> {
        let n = embeddings.rows();
        let seq = SegmentEmbeddingSequence {
            track_id: track_id.into(),
            embeddings,
            label,
            n_valid: n,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<()> {
        if self.embeddings.shape().len() != 2 {
            return Err(FstError::Shape(format!(
                "segment embeddings must be a matrix, got {:?}",
                self.embeddings.shape()
            )));
        }
        if self.is_empty() || self.dim() == 0 {
            return Err(FstError::Contract("empty segment sequence".into()));
        }
        if self.n_valid > self.len() {
            return Err(FstError::Contract(format!(
                "n_valid {} exceeds {} segments",
                self.n_valid,
                self.len()
            )));
        }
        if matches!(self.label, Some(l) if l > 1) {
            return Err(FstError::Contract("label must be 0 or 1".into()));
        }
        if !self.embeddings.is_finite() {
            return Err(FstError::NonFinite(format!("embeddings of {}", self.track_id)));
        }
        Ok(())
    }

    /// Number of rows, including padding.
    pub fn len(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    /// Validity mask over all rows.
    pub fn mask(&self) -> Vec<bool> {
        (0..self.len()).map(|i| i < self.n_valid).collect()
    }

    pub fn self_similarity(&self) -> Result<SelfSimilarityMatrix<f32>> {
        self_similarity(&self.embeddings, self.n_valid)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelfSimilarityMatrix<T> {
    pub values: Tensor<T>,
    pub n_valid: usize,
}

impl<T: Real> SelfSimilarityMatrix<T> {
    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.values.at(i, j)
    }
}

/// Self-similarity of the first `n_valid` rows of `embeddings`. Entries that
/// involve a padding row are 0.
///
/// Squared distances use `|a|^2 + |b|^2 - 2 a.b`, clamped at zero; the
/// diagonal is exactly 1.
pub fn self_similarity<T: Real>(embeddings: &Tensor<T>, n_valid: usize) -> Result<SelfSimilarityMatrix<T>> {
    if embeddings.shape().len() != 2 {
        return Err(FstError::Shape(format!(
            "self_similarity expects a matrix, got {:?}",
            embeddings.shape()
        )));
    }
    let (n, d) = (embeddings.rows(), embeddings.cols());
    if d == 0 {
        return Err(FstError::Contract("embedding dimension must be positive".into()));
    }
    if n_valid > n {
        return Err(FstError::Contract(format!("n_valid {n_valid} exceeds {n} rows")));
    }
    let norms: Vec<T> = (0..n_valid)
        .map(|i| embeddings.row(i).iter().map(|&v| v * v).sum())
        .collect();
    let inv_d = T::of(1.0 / d as f64);
    let two = T::of(2.0);
    let mut values = Tensor::zeros(&[n, n]);
    for i in 0..n_valid {
        values.data_mut()[i * n + i] = T::one();
        for j in (i + 1)..n_valid {
            let dot: T = embeddings
                .row(i)
                .iter()
                .zip(embeddings.row(j))
                .map(|(&a, &b)| a * b)
                .sum();
            let dist = (norms[i] + norms[j] - two * dot).max(T::zero());
            let s = (-dist * inv_d).exp();
            values.data_mut()[i * n + j] = s;
            values.data_mut()[j * n + i] = s;
        }
    }
    Ok(SelfSimilarityMatrix { values, n_valid })
}

/// Checks permutation equivariance, `S(P E) == P S(E) P^T`, within 1e-6.
pub fn permute_check<T: Real>(embeddings: &Tensor<T>, perm: &[usize]) -> Result<bool> {
    let n = embeddings.rows();
    let mut seen = vec![false; n];
    if perm.len() != n
        || perm
            .iter()
            .any(|&p| p >= n || std::mem::replace(&mut seen[p], true))
    {
        return Err(FstError::Contract(format!(
            "not a permutation of 0..{n}: {perm:?}"
        )));
    }
    let base = self_similarity(embeddings, n)?;
    let rows: Vec<Vec<T>> = perm.iter().map(|&p| embeddings.row(p).to_vec()).collect();
    let permuted = self_similarity(&Tensor::from_rows(&rows)?, n)?;
    let tol = T::of(1e-6);
    for i in 0..n {
        for j in 0..n {
            if (permuted.get(i, j) - base.get(perm[i], perm[j])).abs() > tol {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut impl Rng, n: usize, d: usize) -> Tensor<f64> {
        Tensor::new(
            vec![n, d],
            (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    /// Elementwise oracle: explicit difference vector per pair.
    fn loop_oracle(e: &Tensor<f64>) -> Vec<Vec<f64>> {
        let (n, d) = (e.rows(), e.cols());
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let sq: f64 = (0..d).map(|k| (e.at(i, k) - e.at(j, k)).powi(2)).sum();
                        (-sq / d as f64).exp()
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn identical_rows_give_all_ones() {
        let e = Tensor::<f64>::from_rows(&vec![vec![0.3, -2.0, 5.0]; 4]).unwrap();
        let s = self_similarity(&e, 4).unwrap();
        assert!(s.values.data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn squared_distance_equal_to_dim_gives_exp_minus_one() {
        // d = 4, difference (1,1,1,1) has squared norm 4.
        let e = Tensor::<f64>::from_rows(&[vec![0.0; 4], vec![1.0; 4]]).unwrap();
        let s = self_similarity(&e, 2).unwrap();
        assert!((s.get(0, 1) - (-1f64).exp()).abs() < 1e-12);
        assert!((s.get(0, 1) - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let e = random(&mut rng, 6, 8);
        let s = self_similarity(&e, 6).unwrap();
        let o = loop_oracle(&e);
        for i in 0..6 {
            for j in 0..6 {
                assert!((s.get(i, j) - o[i][j]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn padding_entries_are_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let e = random(&mut rng, 5, 3);
        let s = self_similarity(&e, 3).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                if i >= 3 || j >= 3 {
                    assert_eq!(s.get(i, j), 0.0);
                }
            }
        }
        assert_eq!(s.get(2, 2), 1.0);
    }

    #[test]
    fn kernel_is_not_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let e = random(&mut rng, 5, 4);
        let mut e2 = e.clone();
        e2.data_mut().iter_mut().for_each(|v| *v *= 2.0);
        let (a, b) = (self_similarity(&e, 5).unwrap(), self_similarity(&e2, 5).unwrap());
        assert!((a.get(0, 1) - b.get(0, 1)).abs() > 1e-6);
    }

    #[test]
    fn permute_check_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let e = random(&mut rng, 6, 5);
        assert!(permute_check(&e, &[0, 1, 2, 3, 4, 5]).unwrap());
        assert!(permute_check(&e, &[0, 4, 2, 3, 1, 5]).unwrap());
        assert!(permute_check(&e, &[5, 4, 3, 2, 1, 0]).unwrap());
        assert!(permute_check(&e, &[0, 0, 1, 2, 3, 4]).is_err());
        assert!(permute_check(&e, &[0, 1, 2]).is_err());
    }

    #[test]
    fn sequence_validation() {
        let t = Tensor::<f32>::zeros(&[0, 4]);
        assert!(SegmentEmbeddingSequence::new("x", t, None).is_err());
        let t = Tensor::<f32>::zeros(&[3, 4]);
        let mut seq = SegmentEmbeddingSequence::new("x", t, Some(1)).unwrap();
        seq.n_valid = 4;
        assert!(seq.validate().is_err());
        seq.n_valid = 2;
        assert_eq!(seq.mask(), vec![true, true, false]);
    }

    proptest! {
        #[test]
        fn invariants_hold(n in 1usize..12, d in 1usize..10, seed in any::<u64>(), scale in 0.1f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut e = random(&mut rng, n, d);
            e.data_mut().iter_mut().for_each(|v| *v *= scale);
            let s = self_similarity(&e, n).unwrap();
            for i in 0..n {
                prop_assert!((s.get(i, i) - 1.0).abs() < 1e-7);
                for j in 0..n {
                    prop_assert!((s.get(i, j) - s.get(j, i)).abs() < 1e-6);
                    prop_assert!(s.get(i, j) > 0.0 && s.get(i, j) <= 1.0);
                }
            }
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            prop_assert!(permute_check(&e, &perm).unwrap());
        }
    }
}
