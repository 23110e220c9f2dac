//! Permutations of `{0, ..., n-1}` and a counter-addressable permutation stream.
//!
//! Row permutation uses the gather convention everywhere: applying `p` to a
//! vector `v` yields `w[i] = v[p[i]]`. With `compose(a, b)[i] = a[b[i]]`,
//! `apply(compose(a, b), v) = apply(b, apply(a, v))`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest `n` accepted by [`enumerate_all`].
pub const MAX_ENUMERATION_N: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Permutation {
    map: Vec<usize>,
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Self { map: (0..n).collect() }
    }

    pub fn from_map(map: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; map.len()];
        for &i in &map {
            if i >= map.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::invalid(format!("{map:?} is not a permutation")));
            }
        }
        Ok(Self { map })
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.map
    }

    pub fn is_identity(&self) -> bool {
        self.map.iter().enumerate().all(|(i, &j)| i == j)
    }

    /// `self ∘ other`, i.e. `i ↦ self[other[i]]`.
    pub fn compose(&self, other: &Permutation) -> Result<Permutation> {
        self.check_same_len(other.len())?;
        Ok(Permutation {
            map: other.map.iter().map(|&i| self.map[i]).collect(),
        })
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.map.len()];
        for (i, &j) in self.map.iter().enumerate() {
            inv[j] = i;
        }
        Permutation { map: inv }
    }

    /// Gathers rows: `out[i] = v[self[i]]`.
    pub fn apply<T: Copy>(&self, v: &[T]) -> Result<Vec<T>> {
        self.check_same_len(v.len())?;
        Ok(self.apply_unchecked(v))
    }

    pub(crate) fn apply_unchecked<T: Copy>(&self, v: &[T]) -> Vec<T> {
        self.map.iter().map(|&i| v[i]).collect()
    }

    /// Row-permutes a column-major matrix given as a list of columns.
    pub fn apply_rows<C: AsRef<[f64]>>(&self, columns: &[C]) -> Result<Vec<Vec<f64>>> {
        columns.iter().map(|c| self.apply(c.as_ref())).collect()
    }

    fn check_same_len(&self, found: usize) -> Result<()> {
        if found != self.map.len() {
            return Err(Error::DimensionMismatch {
                context: "permutation length",
                expected: self.map.len(),
                found,
            });
        }
        Ok(())
    }
}

impl TryFrom<Vec<usize>> for Permutation {
    type Error = Error;

    fn try_from(map: Vec<usize>) -> Result<Self> {
        Permutation::from_map(map)
    }
}

impl From<Permutation> for Vec<usize> {
    fn from(p: Permutation) -> Self {
        p.map
    }
}

/// SplitMix64 finalizer; decorrelates structured seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for the `index`-th item of a labelled sub-stream.
pub fn derive_seed(seed: u64, label: u64, index: u64) -> u64 {
    mix64(mix64(mix64(seed) ^ label) ^ index)
}

/// ChaCha8 generator addressed by `(seed, stream)`.
pub fn counter_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed));
    rng.set_stream(stream);
    rng
}

/// Uniform random permutations where the `b`-th draw depends only on
/// `(seed, n, b)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermStream {
    pub seed: u64,
    pub n: usize,
}

impl PermStream {
    pub fn new(seed: u64, n: usize) -> Self {
        Self { seed, n }
    }

    pub fn draw(&self, b: u64) -> Permutation {
        let mut map: Vec<usize> = (0..self.n).collect();
        map.shuffle(&mut counter_rng(self.seed, b));
        Permutation { map }
    }

    /// Draws `0..count`.
    pub fn take(&self, count: usize) -> Vec<Permutation> {
        (0..count as u64).map(|b| self.draw(b)).collect()
    }
}

/// Every permutation of `{0, ..., n-1}` in lexicographic order.
pub fn enumerate_all(n: usize) -> Result<Vec<Permutation>> {
    if n > MAX_ENUMERATION_N {
        return Err(Error::invalid(format!(
            "refusing to enumerate {n}! permutations (limit n <= {MAX_ENUMERATION_N})"
        )));
    }
    let mut out = Vec::new();
    let mut current: Vec<usize> = (0..n).collect();
    loop {
        out.push(Permutation { map: current.clone() });
        if !next_lexicographic(&mut current) {
            break;
        }
    }
    Ok(out)
}

fn next_lexicographic(a: &mut [usize]) -> bool {
    if a.len() < 2 {
        return false;
    }
    let Some(i) = (0..a.len() - 1).rev().find(|&i| a[i] < a[i + 1]) else {
        return false;
    };
    let j = (i + 1..a.len()).rev().find(|&j| a[j] > a[i]).unwrap();
    a.swap(i, j);
    a[i + 1..].reverse();
    true
}
