//! Reproducible randomness.
//!
//! Every stochastic draw in the toolkit comes from a stream keyed by
//! `(master seed, purpose, entity, replicate)`. Streams are ChaCha8 generators
//! whose 256-bit key is a SplitMix64 expansion of the key tuple, so the stream
//! for a patient or a design row never depends on which thread asked for it or
//! in what order.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamSpace;

pub type Stream = ChaCha8Rng;

/// What a stream is used for. Distinct purposes never share a stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u64)]
pub enum Purpose {
    Patient = 1,
    Replicate = 2,
    Evaluation = 3,
    Design = 4,
    Arrivals = 5,
    KrigingFit = 6,
    ForestFit = 7,
    Infill = 8,
    Study = 9,
    Optimizer = 10,
    Noise = 11,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamKey {
    pub purpose: Purpose,
    pub entity: u64,
    pub replicate: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master: u64,
    pub key: StreamKey,
}

impl SeedSpec {
    pub fn new(master: u64, purpose: Purpose, entity: u64, replicate: u64) -> Self {
        SeedSpec {
            master,
            key: StreamKey {
                purpose,
                entity,
                replicate,
            },
        }
    }

    /// A 64-bit seed for a child computation that derives its own streams.
    pub fn child_seed(&self) -> u64 {
        let mut s = self.state();
        splitmix64(&mut s)
    }

    fn state(&self) -> u64 {
        let mut s = self.master ^ 0x6a09_e667_f3bc_c908;
        for word in [self.key.purpose as u64, self.key.entity, self.key.replicate] {
            s = splitmix64(&mut s) ^ word;
        }
        s
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic generator for `(master, key)`.
pub fn derive_stream(seed: &SeedSpec) -> Stream {
    let mut s = seed.state();
    let mut bytes = [0u8; 32];
    for chunk in bytes.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut s).to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}

/// Shorthand for `derive_stream(&SeedSpec::new(..))`.
pub fn stream(master: u64, purpose: Purpose, entity: u64, replicate: u64) -> Stream {
    derive_stream(&SeedSpec::new(master, purpose, entity, replicate))
}

/// Shorthand for a derived child seed.
pub fn child_seed(master: u64, purpose: Purpose, entity: u64, replicate: u64) -> u64 {
    SeedSpec::new(master, purpose, entity, replicate).child_seed()
}

/// Truncated, translated gamma duration.
///
/// The sample is `translation + G` with `G ~ Gamma(shape, (mean - translation) / shape)`,
/// redrawn until it lands in `(translation, cap]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DurationSpec {
    pub mean: f64,
    pub shape: f64,
    pub translation: f64,
    pub cap: f64,
}

/// Default truncation: cap = this factor times the mean.
pub const DEFAULT_CAP_FACTOR: f64 = 10.0;

impl DurationSpec {
    pub fn new(mean: f64, shape: f64, translation: f64, cap: f64) -> Result<Self> {
        if !(mean > translation) {
            return Err(Error::Simulation(format!(
                "mean must exceed translation (mean {mean}, translation {translation})"
            )));
        }
        if !(shape > 0.0) || !shape.is_finite() {
            return Err(Error::Simulation(format!("gamma shape must be > 0, got {shape}")));
        }
        if translation < 0.0 {
            return Err(Error::Simulation(format!(
                "translation must be >= 0, got {translation}"
            )));
        }
        if !(cap > translation) {
            return Err(Error::Simulation(format!(
                "cap {cap} must exceed translation {translation}"
            )));
        }
        Ok(DurationSpec {
            mean,
            shape,
            translation,
            cap,
        })
    }

    pub fn with_cap_factor(mean: f64, shape: f64, translation: f64, factor: f64) -> Result<Self> {
        Self::new(mean, shape, translation, factor * mean)
    }

    pub fn scale(&self) -> f64 {
        (self.mean - self.translation) / self.shape
    }
}

pub fn sample_duration<R: Rng + ?Sized>(spec: &DurationSpec, rng: &mut R) -> f64 {
    let gamma = Gamma::new(spec.shape, spec.scale()).expect("validated gamma parameters");
    loop {
        let g: f64 = gamma.sample(rng);
        let v = spec.translation + g;
        if v > spec.translation && v <= spec.cap {
            return v;
        }
    }
}

/// Jittered Latin hypercube over the box `[lower, upper]`; one row per point.
pub fn lhs<R: Rng + ?Sized>(n: usize, lower: &[f64], upper: &[f64], rng: &mut R) -> Result<Vec<Vec<f64>>> {
    if n < 2 {
        return Err(Error::Config(format!("latin hypercube needs n >= 2, got {n}")));
    }
    assert_eq!(lower.len(), upper.len());
    let d = lower.len();
    let mut rows = vec![vec![0.0; d]; n];
    let mut perm: Vec<usize> = (0..n).collect();
    for j in 0..d {
        perm.shuffle(rng);
        let width = upper[j] - lower[j];
        for (row, &stratum) in rows.iter_mut().zip(&perm) {
            let u: f64 = rng.random();
            let v = lower[j] + (stratum as f64 + u) / n as f64 * width;
            row[j] = v.min(upper[j]);
        }
    }
    Ok(rows)
}

/// Latin hypercube over a parameter space.
pub fn lhs_space<R: Rng + ?Sized>(n: usize, space: &ParamSpace, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    lhs(n, &space.lower(), &space.upper(), rng)
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Draws an index with probability `probs[i]`.
pub fn categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> Result<usize> {
    check_distribution(probs)?;
    Ok(categorical_unchecked(probs, rng))
}

pub(crate) fn check_distribution(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::Simulation("empty distribution".into()));
    }
    if probs.iter().any(|p| !(*p >= 0.0) || *p > 1.0 + 1e-9) {
        return Err(Error::Simulation(format!("invalid probabilities {probs:?}")));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Simulation(format!("probabilities sum to {sum}, expected 1")));
    }
    Ok(())
}

pub(crate) fn categorical_unchecked<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

#[cfg(test)]
mod tests {
    use super::*;

    fn draws(mut s: Stream, n: usize) -> Vec<u64> {
        (0..n).map(|_| s.random::<u64>()).collect()
    }

    #[test]
    fn same_key_same_stream() {
        let a = draws(stream(7, Purpose::Patient, 3, 0), 100);
        let b = draws(stream(7, Purpose::Patient, 3, 0), 100);
        assert_eq!(a, b);
    }

    #[test]
    fn replicates_differ() {
        let a = draws(stream(7, Purpose::Patient, 3, 0), 10);
        let b = draws(stream(7, Purpose::Patient, 3, 1), 10);
        assert_ne!(a, b);
        let c = draws(stream(7, Purpose::Replicate, 3, 0), 10);
        assert_ne!(a, c);
    }

    #[test]
    fn streams_independent_of_call_order() {
        let keys: Vec<u64> = (0..20).collect();
        let forward: Vec<_> = keys
            .iter()
            .map(|&k| (k, draws(stream(99, Purpose::Design, k, 2), 5)))
            .collect();
        let mut backward: Vec<_> = keys
            .iter()
            .rev()
            .map(|&k| (k, draws(stream(99, Purpose::Design, k, 2), 5)))
            .collect();
        backward.sort_by_key(|(k, _)| *k);
        assert_eq!(forward, backward);
    }

    #[test]
    fn duration_spec_errors() {
        assert!(DurationSpec::new(1.0, 2.0, 1.0, 10.0).is_err());
        assert!(DurationSpec::new(1.0, 0.0, 0.0, 10.0).is_err());
        assert!(DurationSpec::new(5.0, 2.0, 0.0, 0.0).is_err());
        let err = DurationSpec::new(0.5, 2.0, 1.0, 10.0).unwrap_err().to_string();
        assert!(err.contains("mean must exceed translation"));
    }

    #[test]
    fn degenerate_shape_concentrates() {
        let spec = DurationSpec::new(5.0, 1e6, 0.0, 50.0).unwrap();
        let mut rng = stream(1, Purpose::Noise, 0, 0);
        let xs: Vec<f64> = (0..10_000).map(|_| sample_duration(&spec, &mut rng)).collect();
        assert!(xs.iter().all(|v| (v - 5.0).abs() < 0.1));
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let sd = (xs.iter().map(|v| (v - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt();
        assert!(sd < 0.02 * 5.0);
    }

    #[test]
    fn duration_support() {
        let spec = DurationSpec::new(3.0, 0.7, 1.0, 6.0).unwrap();
        let mut rng = stream(2, Purpose::Noise, 0, 0);
        for _ in 0..20_000 {
            let v = sample_duration(&spec, &mut rng);
            assert!(v > 1.0 && v <= 6.0);
        }
    }

    #[test]
    fn duration_replay_bit_exact() {
        let spec = DurationSpec::new(4.0, 2.0, 0.5, 40.0).unwrap();
        let a: Vec<f64> = {
            let mut r = stream(5, Purpose::Noise, 1, 0);
            (0..50).map(|_| sample_duration(&spec, &mut r)).collect()
        };
        let b: Vec<f64> = {
            let mut r = stream(5, Purpose::Noise, 1, 0);
            (0..50).map(|_| sample_duration(&spec, &mut r)).collect()
        };
        assert_eq!(a, b);
    }

    fn strata_ok(rows: &[Vec<f64>], lower: &[f64], upper: &[f64]) -> bool {
        let n = rows.len();
        (0..lower.len()).all(|j| {
            let mut counts = vec![0usize; n];
            for r in rows {
                let t = (r[j] - lower[j]) / (upper[j] - lower[j]);
                let k = ((t * n as f64).floor() as usize).min(n - 1);
                counts[k] += 1;
            }
            counts.iter().all(|&c| c == 1)
        })
    }

    #[test]
    fn lhs_strata_small() {
        let mut rng = stream(3, Purpose::Design, 0, 0);
        let rows = lhs(4, &[0.0], &[4.0], &mut rng).unwrap();
        let mut cells: Vec<usize> = rows.iter().map(|r| r[0].floor() as usize).collect();
        cells.sort();
        assert_eq!(cells, vec![0, 1, 2, 3]);
    }

    #[test]
    fn lhs_canonical_space() {
        let space = crate::params::canonical_space();
        let (lo, hi) = (space.lower(), space.upper());
        let a = lhs_space(10, &space, &mut stream(1, Purpose::Design, 0, 0)).unwrap();
        let b = lhs_space(10, &space, &mut stream(2, Purpose::Design, 0, 0)).unwrap();
        assert_eq!(a.iter().flatten().count(), 290);
        for r in a.iter().chain(&b) {
            for j in 0..29 {
                assert!(r[j] >= lo[j] && r[j] <= hi[j]);
            }
        }
        assert_ne!(a, b);
        assert!(strata_ok(&a, &lo, &hi));
        assert!(strata_ok(&b, &lo, &hi));
    }

    #[test]
    fn lhs_rejects_tiny_n() {
        assert!(lhs(1, &[0.0], &[1.0], &mut stream(1, Purpose::Design, 0, 0)).is_err());
    }

    #[test]
    fn categorical_examples() {
        let mut rng = stream(4, Purpose::Noise, 0, 0);
        for _ in 0..1000 {
            assert_eq!(categorical(&[1.0, 0.0, 0.0], &mut rng).unwrap(), 0);
        }
        let n = 100_000;
        let zeros = (0..n)
            .filter(|_| categorical(&[0.5, 0.5], &mut rng).unwrap() == 0)
            .count();
        let f = zeros as f64 / n as f64;
        assert!((0.49..=0.51).contains(&f), "{f}");
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[categorical(&[0.2, 0.3, 0.5], &mut rng).unwrap()] += 1;
        }
        for (c, p) in counts.iter().zip([0.2, 0.3, 0.5]) {
            assert!((*c as f64 / n as f64 - p).abs() < 0.01);
        }
        assert!(categorical(&[0.5, 0.6], &mut rng).is_err());
        assert!(categorical(&[-0.1, 1.1], &mut rng).is_err());
    }
}
