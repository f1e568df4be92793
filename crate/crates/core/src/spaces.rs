//! Discrete output spaces and their dense encodings.
//!
//! Every space is the vertex set of a polytope: the unit cube for label sets,
//! the permutahedron for rank vectors and the Birkhoff polytope for
//! permutation matrices. The reference distribution `q` used throughout the
//! crate is the uniform *probability* distribution over the vertex set, so
//! exact log-partitions computed here differ from counting-measure closed
//! forms by `-log |Y|`.

use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Which family of structured outputs a space contains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceKind {
    /// `{0,1}^k` label indicator vectors.
    BinaryVectors,
    /// Rank vectors: permutations of `(1, ..., k)`.
    PermutationVectors,
    /// `k x k` permutation matrices, flattened row-major. Row `i` is item `i`,
    /// column `r - 1` holds its rank `r`.
    PermutationMatrices,
}

/// Number of elements of a space; `Huge` when it does not fit in 63 bits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cardinality {
    Finite(u64),
    Huge,
}

impl Cardinality {
    pub fn finite(self) -> Option<u64> {
        match self {
            Cardinality::Finite(n) => Some(n),
            Cardinality::Huge => None,
        }
    }
}

impl fmt::Display for Cardinality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cardinality::Finite(n) => write!(f, "{n}"),
            Cardinality::Huge => f.write_str("huge"),
        }
    }
}

/// A dense encoding of one element of an [`OutputSpace`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructuredOutput(pub Vec<f64>);

impl StructuredOutput {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl From<Vec<f64>> for StructuredOutput {
    fn from(v: Vec<f64>) -> Self {
        StructuredOutput(v)
    }
}

impl AsRef<[f64]> for StructuredOutput {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// A finite structured output set `Y`. Immutable and cheap to copy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OutputSpace {
    pub kind: SpaceKind,
    pub k: usize,
}

impl OutputSpace {
    pub fn new(kind: SpaceKind, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("output space needs k >= 1".into()));
        }
        Ok(OutputSpace { kind, k })
    }

    pub fn binary(k: usize) -> Self {
        Self::new(SpaceKind::BinaryVectors, k).expect("k >= 1")
    }

    pub fn permutations(k: usize) -> Self {
        Self::new(SpaceKind::PermutationVectors, k).expect("k >= 1")
    }

    pub fn permutation_matrices(k: usize) -> Self {
        Self::new(SpaceKind::PermutationMatrices, k).expect("k >= 1")
    }

    /// Length of the dense encoding: `k`, or `k²` for permutation matrices.
    pub fn encoding_dim(&self) -> usize {
        match self.kind {
            SpaceKind::BinaryVectors | SpaceKind::PermutationVectors => self.k,
            SpaceKind::PermutationMatrices => self.k * self.k,
        }
    }

    pub fn cardinality(&self) -> Cardinality {
        match self.kind {
            SpaceKind::BinaryVectors => {
                if self.k <= 62 {
                    Cardinality::Finite(1u64 << self.k)
                } else {
                    Cardinality::Huge
                }
            }
            SpaceKind::PermutationVectors | SpaceKind::PermutationMatrices => {
                let mut acc: u64 = 1;
                for i in 2..=self.k as u64 {
                    match acc.checked_mul(i) {
                        Some(v) if v <= i64::MAX as u64 => acc = v,
                        _ => return Cardinality::Huge,
                    }
                }
                Cardinality::Finite(acc)
            }
        }
    }

    /// `log |Y|`, exact for every size.
    pub fn log_cardinality(&self) -> f64 {
        match self.kind {
            SpaceKind::BinaryVectors => self.k as f64 * std::f64::consts::LN_2,
            _ => (2..=self.k).map(|i| (i as f64).ln()).sum(),
        }
    }

    /// `1 / |Y|`, the per-point mass of the uniform reference distribution.
    pub fn uniform_mass(&self) -> f64 {
        match self.cardinality() {
            Cardinality::Finite(n) => 1.0 / n as f64,
            Cardinality::Huge => (-self.log_cardinality()).exp(),
        }
    }

    /// Draw one element uniformly at random.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> StructuredOutput {
        let mut out = vec![0.0; self.encoding_dim()];
        let mut scratch = Vec::new();
        self.sample_into(&mut out, &mut scratch, rng);
        StructuredOutput(out)
    }

    /// Allocation-free variant of [`sample_uniform`](Self::sample_uniform).
    /// `scratch` is reused across calls for permutation spaces.
    pub fn sample_into<R: Rng + ?Sized>(&self, out: &mut [f64], scratch: &mut Vec<usize>, rng: &mut R) {
        debug_assert_eq!(out.len(), self.encoding_dim());
        match self.kind {
            SpaceKind::BinaryVectors => {
                for chunk in out.chunks_mut(64) {
                    let bits: u64 = rng.gen();
                    for (j, slot) in chunk.iter_mut().enumerate() {
                        *slot = ((bits >> j) & 1) as f64;
                    }
                }
            }
            SpaceKind::PermutationVectors => {
                scratch.clear();
                scratch.extend(1..=self.k);
                scratch.shuffle(rng);
                for (slot, &r) in out.iter_mut().zip(scratch.iter()) {
                    *slot = r as f64;
                }
            }
            SpaceKind::PermutationMatrices => {
                scratch.clear();
                scratch.extend(0..self.k);
                scratch.shuffle(rng);
                out.fill(0.0);
                for (item, &col) in scratch.iter().enumerate() {
                    out[item * self.k + col] = 1.0;
                }
            }
        }
    }

    /// All elements of the space, each exactly once.
    ///
    /// Binary vectors are listed with the first coordinate most significant;
    /// permutations in lexicographic order of their rank vectors.
    pub fn enumerate(&self, cap: u64) -> Result<Vec<StructuredOutput>> {
        let n = match self.cardinality() {
            Cardinality::Finite(n) if n <= cap => n,
            c => {
                return Err(Error::CapExceeded {
                    cardinality: c.to_string(),
                    cap,
                })
            }
        };
        let k = self.k;
        let mut out = Vec::with_capacity(n as usize);
        match self.kind {
            SpaceKind::BinaryVectors => {
                for code in 0..n {
                    let v = (0..k).map(|j| ((code >> (k - 1 - j)) & 1) as f64).collect();
                    out.push(StructuredOutput(v));
                }
            }
            SpaceKind::PermutationVectors | SpaceKind::PermutationMatrices => {
                let mut perm: Vec<usize> = (1..=k).collect();
                loop {
                    let y = match self.kind {
                        SpaceKind::PermutationVectors => perm.iter().map(|&r| r as f64).collect(),
                        _ => ranks_to_matrix_usize(&perm),
                    };
                    out.push(StructuredOutput(y));
                    if !next_permutation(&mut perm) {
                        break;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Whether `y` is a valid encoding of an element of this space.
    pub fn contains(&self, y: &[f64]) -> bool {
        if y.len() != self.encoding_dim() {
            return false;
        }
        match self.kind {
            SpaceKind::BinaryVectors => y.iter().all(|&v| v == 0.0 || v == 1.0),
            SpaceKind::PermutationVectors => is_rank_vector(y),
            SpaceKind::PermutationMatrices => {
                let k = self.k;
                if !y.iter().all(|&v| v == 0.0 || v == 1.0) {
                    return false;
                }
                (0..k).all(|i| y[i * k..(i + 1) * k].iter().sum::<f64>() == 1.0)
                    && (0..k).all(|j| (0..k).map(|i| y[i * k + j]).sum::<f64>() == 1.0)
            }
        }
    }

    pub fn validate(&self, y: &[f64], context: &str) -> Result<()> {
        if y.len() != self.encoding_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.encoding_dim(),
                got: y.len(),
            });
        }
        if self.contains(y) {
            Ok(())
        } else if self.kind == SpaceKind::BinaryVectors {
            Err(Error::ShapeMismatch(format!("{context}: entries must be 0 or 1")))
        } else {
            Err(Error::NotAPermutation {
                context: context.to_string(),
                k: self.k,
            })
        }
    }
}

/// Whether `y` is a permutation of `1..=y.len()`.
pub fn is_rank_vector(y: &[f64]) -> bool {
    let k = y.len();
    let mut seen = vec![false; k];
    for &v in y {
        if v.fract() != 0.0 || v < 1.0 || v > k as f64 {
            return false;
        }
        let idx = v as usize - 1;
        if seen[idx] {
            return false;
        }
        seen[idx] = true;
    }
    true
}

/// Rank vector `(r_1, ..., r_k)` to a row-major permutation matrix with
/// `P[i, r_i - 1] = 1`.
pub fn ranks_to_matrix(ranks: &[f64]) -> Result<Vec<f64>> {
    if !is_rank_vector(ranks) {
        return Err(Error::NotAPermutation {
            context: "rank vector".into(),
            k: ranks.len(),
        });
    }
    let perm: Vec<usize> = ranks.iter().map(|&r| r as usize).collect();
    Ok(ranks_to_matrix_usize(&perm))
}

fn ranks_to_matrix_usize(perm: &[usize]) -> Vec<f64> {
    let k = perm.len();
    let mut m = vec![0.0; k * k];
    for (i, &r) in perm.iter().enumerate() {
        m[i * k + r - 1] = 1.0;
    }
    m
}

/// Inverse of [`ranks_to_matrix`].
pub fn matrix_to_ranks(m: &[f64], k: usize) -> Result<Vec<f64>> {
    let space = OutputSpace::permutation_matrices(k);
    space.validate(m, "permutation matrix")?;
    Ok((0..k)
        .map(|i| {
            let col = (0..k).find(|&j| m[i * k + j] == 1.0).expect("validated row");
            (col + 1) as f64
        })
        .collect())
}

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::{HashMap, HashSet};

    fn key(y: &[f64]) -> Vec<i64> {
        y.iter().map(|&v| v as i64).collect()
    }

    #[test]
    fn binary_k1_samples_are_bits() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = OutputSpace::binary(1);
        for _ in 0..50 {
            let y = s.sample_uniform(&mut rng);
            assert!(y.0 == vec![0.0] || y.0 == vec![1.0]);
        }
    }

    #[test]
    fn permutation_k2_frequency_is_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = OutputSpace::permutations(2);
        let n = 100_000;
        let hits = (0..n).filter(|_| s.sample_uniform(&mut rng).0 == vec![1.0, 2.0]).count();
        let freq = hits as f64 / n as f64;
        assert!((0.49..=0.51).contains(&freq), "{freq}");
    }

    #[test]
    fn permutation_matrix_samples_are_doubly_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = OutputSpace::permutation_matrices(3);
        for _ in 0..200 {
            let y = s.sample_uniform(&mut rng);
            assert!(s.contains(&y.0));
        }
    }

    #[test]
    fn enumerate_examples() {
        let b = OutputSpace::binary(2).enumerate(100).unwrap();
        let got: Vec<_> = b.iter().map(|y| y.0.clone()).collect();
        assert_eq!(got, vec![vec![0., 0.], vec![0., 1.], vec![1., 0.], vec![1., 1.]]);
        assert_eq!(OutputSpace::permutations(3).enumerate(100).unwrap().len(), 6);
        assert!(matches!(
            OutputSpace::permutation_matrices(3).enumerate(5),
            Err(Error::CapExceeded { .. })
        ));
    }

    #[test]
    fn uniform_mass_examples() {
        assert_eq!(OutputSpace::binary(3).uniform_mass(), 1.0 / 8.0);
        assert_eq!(OutputSpace::permutations(4).uniform_mass(), 1.0 / 24.0);
        assert_eq!(OutputSpace::binary(1).uniform_mass(), 0.5);
    }

    #[test]
    fn cardinality_overflow_is_huge() {
        assert_eq!(OutputSpace::binary(62).cardinality(), Cardinality::Finite(1 << 62));
        assert_eq!(OutputSpace::binary(63).cardinality(), Cardinality::Huge);
        assert_eq!(OutputSpace::permutations(20).cardinality(), Cardinality::Finite(2432902008176640000));
        assert_eq!(OutputSpace::permutations(21).cardinality(), Cardinality::Huge);
        assert!(OutputSpace::permutations(21).enumerate(u64::MAX).is_err());
        assert!(OutputSpace::binary(100).log_cardinality() > 69.0);
    }

    #[test]
    fn enumerate_is_complete_and_distinct() {
        for s in [
            OutputSpace::binary(4),
            OutputSpace::permutations(4),
            OutputSpace::permutation_matrices(4),
        ] {
            let all = s.enumerate(1000).unwrap();
            assert_eq!(all.len() as u64, s.cardinality().finite().unwrap());
            let set: HashSet<_> = all.iter().map(|y| key(&y.0)).collect();
            assert_eq!(set.len(), all.len());
            assert!(all.iter().all(|y| s.contains(&y.0)));
        }
    }

    // Chi-square goodness of fit at significance 1e-3 with 1e6 draws.
    fn chi_square_uniform(space: OutputSpace, critical: f64) {
        let all = space.enumerate(1000).unwrap();
        let index: HashMap<_, _> = all.iter().enumerate().map(|(i, y)| (key(&y.0), i)).collect();
        let mut counts = vec![0u64; all.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 1_000_000u64;
        for _ in 0..draws {
            let y = space.sample_uniform(&mut rng);
            counts[index[&key(&y.0)]] += 1;
        }
        let expected = draws as f64 / all.len() as f64;
        let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert!(stat < critical, "{stat} >= {critical}");
    }

    #[test]
    fn sampler_passes_chi_square() {
        // Upper 1e-3 quantiles of chi-square with 15 and 23 degrees of freedom.
        chi_square_uniform(OutputSpace::binary(4), 37.697);
        chi_square_uniform(OutputSpace::permutations(4), 49.728);
        chi_square_uniform(OutputSpace::permutation_matrices(4), 49.728);
    }

    #[test]
    fn rank_matrix_conversion() {
        let m = ranks_to_matrix(&[2.0, 1.0]).unwrap();
        assert_eq!(m, vec![0.0, 1.0, 1.0, 0.0]);
        assert_eq!(matrix_to_ranks(&m, 2).unwrap(), vec![2.0, 1.0]);
        assert!(ranks_to_matrix(&[1.0, 1.0]).is_err());
    }
}
