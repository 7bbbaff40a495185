//! Flat parameter vectors and the deterministic random source every run draws from.
//!
//! Randomness comes from ChaCha8 (`rand_chacha::ChaCha8Rng`), a counter-based
//! stream cipher generator whose output is fixed across platforms. Child
//! streams are keyed by a label: the child seed is
//! `splitmix64(parent_seed ^ fnv1a64(label))`, so a child never depends on how
//! far the parent stream has advanced.

use std::ops::Index;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Real-valued parameter or gradient vector with a fixed length `d >= 1`.
///
/// Every element is finite. Checked constructors reject NaN/Inf; results of
/// library arithmetic are checked with `debug_assert!` only.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl<'de> Deserialize<'de> for ParamVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let values = Vec::<f64>::deserialize(d)?;
        ParamVector::new(values).map_err(serde::de::Error::custom)
    }
}

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("parameter vector must have length >= 1"));
        }
        if let Some(i) = values.iter().position(|x| !x.is_finite()) {
            return Err(Error::invalid(format!("non-finite element at index {i}")));
        }
        Ok(ParamVector(values))
    }

    /// All-zeros vector. Panics if `dim == 0`.
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "parameter vector must have length >= 1");
        ParamVector(vec![0.0; dim])
    }

    pub fn filled(dim: usize, value: f64) -> Result<Self> {
        ParamVector::new(vec![value; dim])
    }

    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        debug_assert!(!values.is_empty());
        debug_assert!(values.iter().all(|x| x.is_finite()), "non-finite element");
        ParamVector(values)
    }

    /// Wrap a freshly computed vector, reporting non-finite entries as a numeric error.
    pub(crate) fn from_computed(values: Vec<f64>, step: u64, what: &str) -> Result<Self> {
        if values.iter().all(|x| x.is_finite()) {
            Ok(ParamVector(values))
        } else {
            Err(Error::Numeric { step, what: what.to_string() })
        }
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        check_len(self.len(), other.len())?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        scaled_norm(self.0.iter().copied())
    }

    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        check_len(self.len(), other.len())?;
        Ok(ParamVector::from_vec_unchecked(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }

    pub fn scale(&self, alpha: f64) -> ParamVector {
        ParamVector::from_vec_unchecked(self.0.iter().map(|x| alpha * x).collect())
    }

    /// First `n` coordinates.
    pub fn prefix(&self, n: usize) -> Result<ParamVector> {
        if n == 0 || n > self.len() {
            return Err(Error::Dimension { expected: n, found: self.len() });
        }
        Ok(ParamVector(self.0[..n].to_vec()))
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl<'a> IntoIterator for &'a ParamVector {
    type Item = &'a f64;
    type IntoIter = std::slice::Iter<'a, f64>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

impl TryFrom<Vec<f64>> for ParamVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        ParamVector::new(v)
    }
}

// Overflow-safe Euclidean norm: scale by the largest magnitude first.
fn scaled_norm(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(0.0_f64, |m, x| m.max(x.abs()));
    if max == 0.0 {
        return 0.0;
    }
    let sum: f64 = values.map(|x| (x / max) * (x / max)).sum();
    max * sum.sqrt()
}

/// Euclidean distance `sqrt(sum_i (a_i - b_i)^2)`.
pub fn l2_distance(a: &ParamVector, b: &ParamVector) -> Result<f64> {
    check_len(a.len(), b.len())?;
    Ok(scaled_norm(a.0.iter().zip(&b.0).map(|(x, y)| (x - y).abs())))
}

/// Elementwise `alpha * x + y`.
pub fn axpy(alpha: f64, x: &ParamVector, y: &ParamVector) -> Result<ParamVector> {
    if !alpha.is_finite() {
        return Err(Error::invalid("axpy: alpha must be finite"));
    }
    check_len(x.len(), y.len())?;
    let out: Vec<f64> = x.0.iter().zip(&y.0).map(|(xi, yi)| alpha * xi + yi).collect();
    ParamVector::new(out)
}

/// Largest `|a_i - b_i| / max(|a_i|, |b_i|, floor)` over all coordinates.
///
/// `floor` converts the check into an absolute one for tiny entries: with
/// `floor = 1e-3` and tolerance `1e-5`, entries below `1e-3` must agree to `1e-8`.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

fn fnv1a64(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seeded ChaCha8 stream. Same seed, same samples, on every platform.
#[derive(Clone, Debug)]
pub struct RandomSource {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        RandomSource { seed, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Position in the underlying stream, in 32-bit words.
    pub fn position(&self) -> u128 {
        self.rng.get_word_pos()
    }

    /// Independent stream keyed by `label`; does not advance `self`.
    pub fn child(&self, label: &str) -> RandomSource {
        RandomSource::new(splitmix64(self.seed ^ fnv1a64(label)))
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn normal_vec(&mut self, len: usize, std: f64) -> Vec<f64> {
        (0..len).map(|_| std * self.standard_normal()).collect()
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    /// Uniformly random permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        use rand::seq::SliceRandom;
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut self.rng);
        idx
    }
}

impl RngCore for RandomSource {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}
