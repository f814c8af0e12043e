//! Paired Wilcoxon signed-rank test and small summary helpers.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Largest number of nonzero pairs for which the null distribution is
/// enumerated exactly; beyond it a normal approximation is used.
const EXACT_LIMIT: usize = 60;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alternative {
    TwoSided,
    /// `a` tends to exceed `b`.
    Greater,
    /// `a` tends to fall below `b`.
    Less,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Pairs with a nonzero difference.
    pub n: usize,
    /// Sum of the ranks of positive differences `a - b`.
    pub statistic: f64,
    pub p_value: f64,
    pub exact: bool,
}

/// Average ranks (1-based) of `v`, ties sharing the mean rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64], alt: Alternative) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::Model(format!(
            "paired test needs equal lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::Model("paired test needs finite values".into()));
    }
    let n = diffs.len();
    if n == 0 {
        return Ok(WilcoxonResult {
            n: 0,
            statistic: 0.0,
            p_value: 1.0,
            exact: true,
        });
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let w: f64 = ranks
        .iter()
        .zip(&diffs)
        .filter(|(_, d)| **d > 0.0)
        .map(|(r, _)| r)
        .sum();

    if n <= EXACT_LIMIT {
        // doubled ranks are integers even with ties
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let total: usize = doubled.iter().sum();
        let mut counts = vec![0f64; total + 1];
        counts[0] = 1.0;
        let mut reach = 0;
        for &r in &doubled {
            for s in (0..=reach).rev() {
                let c = counts[s];
                if c != 0.0 {
                    counts[s + r] += c;
                }
            }
            reach += r;
        }
        let all = 2f64.powi(n as i32);
        let w2 = (2.0 * w).round() as usize;
        let upper: f64 = counts[w2..].iter().sum::<f64>() / all;
        let lower: f64 = counts[..=w2].iter().sum::<f64>() / all;
        let p = match alt {
            Alternative::Greater => upper,
            Alternative::Less => lower,
            Alternative::TwoSided => (2.0 * upper.min(lower)).min(1.0),
        };
        return Ok(WilcoxonResult {
            n,
            statistic: w,
            p_value: p,
            exact: true,
        });
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut sorted = ranks.clone();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let sd = var.sqrt();
    let cdf = crate::surrogate::normal_cdf;
    // continuity correction of one half
    let p = match alt {
        Alternative::Greater => 1.0 - cdf((w - mean - 0.5) / sd),
        Alternative::Less => cdf((w - mean + 0.5) / sd),
        Alternative::TwoSided => {
            let z = ((w - mean).abs() - 0.5).max(0.0) / sd;
            (2.0 * (1.0 - cdf(z))).min(1.0)
        }
    };
    Ok(WilcoxonResult {
        n,
        statistic: w,
        p_value: p,
        exact: false,
    })
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Enumerates every sign assignment of the ranks.
    fn brute_force(a: &[f64], b: &[f64], alt: Alternative) -> f64 {
        let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
        let n = diffs.len();
        let ranks = average_ranks(&diffs.iter().map(|d| d.abs()).collect::<Vec<_>>());
        let w: f64 = ranks
            .iter()
            .zip(&diffs)
            .filter(|(_, d)| **d > 0.0)
            .map(|(r, _)| r)
            .sum();
        let (mut ge, mut le) = (0u64, 0u64);
        for mask in 0u64..(1 << n) {
            let s: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            if s >= w - 1e-9 {
                ge += 1;
            }
            if s <= w + 1e-9 {
                le += 1;
            }
        }
        let all = (1u64 << n) as f64;
        match alt {
            Alternative::Greater => ge as f64 / all,
            Alternative::Less => le as f64 / all,
            Alternative::TwoSided => (2.0 * (ge.min(le) as f64) / all).min(1.0),
        }
    }

    #[test]
    fn ranks_with_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn all_positive_ten_pairs() {
        let a: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        let b = vec![0.0; 10];
        let r = wilcoxon_signed_rank(&a, &b, Alternative::Greater).unwrap();
        assert_eq!(r.statistic, 55.0);
        assert!((r.p_value - 1.0 / 1024.0).abs() < 1e-15);
        let r = wilcoxon_signed_rank(&a, &b, Alternative::TwoSided).unwrap();
        assert!((r.p_value - 2.0 / 1024.0).abs() < 1e-15);
    }

    #[test]
    fn zero_differences_dropped() {
        let r = wilcoxon_signed_rank(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], Alternative::TwoSided).unwrap();
        assert_eq!(r.n, 0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn length_mismatch() {
        assert!(wilcoxon_signed_rank(&[1.0], &[1.0, 2.0], Alternative::Less).is_err());
    }

    #[test]
    fn normal_approximation_agrees_roughly() {
        let a: Vec<f64> = (0..80).map(|i| ((i * 37) % 11) as f64 + 0.3).collect();
        let b: Vec<f64> = (0..80).map(|i| ((i * 17) % 13) as f64).collect();
        let r = wilcoxon_signed_rank(&a, &b, Alternative::TwoSided).unwrap();
        assert!(!r.exact);
        assert!(r.p_value > 0.0 && r.p_value <= 1.0);
    }

    #[test]
    fn median_and_mean() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(mean(&[1.0, 2.0, 6.0]), 3.0);
    }

    proptest! {
        #[test]
        fn exact_matches_enumeration(
            pairs in proptest::collection::vec((0i32..6, 0i32..6), 1..12),
        ) {
            let a: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
            let b: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
            for alt in [Alternative::Greater, Alternative::Less, Alternative::TwoSided] {
                let r = wilcoxon_signed_rank(&a, &b, alt).unwrap();
                prop_assert!((r.p_value - brute_force(&a, &b, alt)).abs() < 1e-12);
            }
        }
    }
}
