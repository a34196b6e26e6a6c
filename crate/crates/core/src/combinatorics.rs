//! Multi-indices over `{1, …, n}` in which no value appears exactly once.
//!
//! The exact count groups tuples by the set partition of their positions:
//! a tuple with `k` distinct values corresponds to a partition of the `p`
//! positions into `k` blocks of size at least two, labelled injectively by
//! values, so
//!
//! `count(n, p) = Σ_k n(n−1)⋯(n−k+1) · S₂(p, k)`
//!
//! where `S₂` counts partitions without singleton blocks.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

pub const MAX_P: usize = 10;
/// Largest `n^p` accepted by [`enumerate_no_unique`].
pub const ENUMERATION_LIMIT: u128 = 10_000_000;
/// Set sizes used by [`growth_exponent`].
pub const GROWTH_SET_SIZES: [u64; 3] = [16, 32, 64];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoUniqueCount {
    pub set_size: u64,
    pub tuple_len: usize,
    pub count: u128,
}

fn check_p(p: usize, max: usize) -> Result<()> {
    if !(2..=max).contains(&p) {
        return Err(Error::Domain(format!("p must be in 2..={max}, got {p}")));
    }
    Ok(())
}

fn check_n(n: u64) -> Result<()> {
    if n == 0 {
        return Err(Error::Domain("set_size must be at least 1".into()));
    }
    Ok(())
}

/// Partitions of `p` labelled items into `k` blocks of size ≥ 2, for
/// `0 ≤ k ≤ p/2`.
pub fn partitions_without_singletons(p: usize) -> Vec<u128> {
    // s[m][k] via s(m, k) = k s(m−1, k) + (m−1) s(m−2, k−1)
    let mut s = vec![vec![0u128; p / 2 + 2]; p + 1];
    s[0][0] = 1;
    for m in 1..=p {
        for k in 1..=m / 2 {
            let keep = k as u128 * s[m - 1][k];
            let pair = if m >= 2 { (m as u128 - 1) * s[m - 2][k - 1] } else { 0 };
            s[m][k] = keep + pair;
        }
    }
    s[p][..=p / 2].to_vec()
}

pub fn count_no_unique(set_size: u64, p: usize) -> Result<u128> {
    check_n(set_size)?;
    check_p(p, MAX_P)?;
    let overflow = || Error::Overflow(format!("count_no_unique({set_size}, {p})"));
    let n = set_size as u128;
    let mut total: u128 = 0;
    let mut falling: u128 = 1;
    for (k, &s) in partitions_without_singletons(p).iter().enumerate() {
        if k > 0 {
            if k as u128 > n {
                break;
            }
            falling = falling.checked_mul(n - (k as u128 - 1)).ok_or_else(overflow)?;
        }
        let term = falling.checked_mul(s).ok_or_else(overflow)?;
        total = total.checked_add(term).ok_or_else(overflow)?;
    }
    Ok(total)
}

pub fn no_unique_count(set_size: u64, p: usize) -> Result<NoUniqueCount> {
    Ok(NoUniqueCount {
        set_size,
        tuple_len: p,
        count: count_no_unique(set_size, p)?,
    })
}

/// Whether every value in `tuple` occurs at least twice.
pub fn has_no_unique(tuple: &[u32]) -> bool {
    tuple
        .iter()
        .all(|v| tuple.iter().filter(|w| *w == v).count() >= 2)
}

/// All qualifying tuples with 1-based values, in lexicographic order.
pub fn enumerate_no_unique(set_size: u64, p: usize) -> Result<Vec<Vec<u32>>> {
    check_n(set_size)?;
    if p == 0 {
        return Err(Error::Domain("p must be at least 1".into()));
    }
    let size = (set_size as u128)
        .checked_pow(p as u32)
        .filter(|&s| s <= ENUMERATION_LIMIT)
        .ok_or(Error::TooLarge {
            size: (set_size as u128).saturating_pow(p as u32),
            limit: ENUMERATION_LIMIT,
        })?;
    let n = set_size as u32;
    let mut out = Vec::new();
    let mut tuple = vec![1u32; p];
    for _ in 0..size {
        if has_no_unique(&tuple) {
            out.push(tuple.clone());
        }
        for slot in tuple.iter_mut().rev() {
            if *slot < n {
                *slot += 1;
                break;
            }
            *slot = 1;
        }
    }
    Ok(out)
}

fn binomial(n: usize, k: usize) -> u128 {
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i as u128 + 1))
}

/// Constants `c_p` with `count(n, p) ≤ c_p n^{⌊p/2⌋}` for every `n`.
///
/// Split a tuple of length `q` by the value `v` of its first entry. Either
/// all `q` entries equal `v`, or `v` fills `t` positions with
/// `2 ≤ t ≤ q − 2` and the remaining `q − t` entries form a shorter tuple
/// with no unique values. The second case contributes at most
/// `n · C(q−1, t−1) · c_{q−t} n^{⌊(q−t)/2⌋} ≤ C(q−1, t−1) c_{q−t} n^{⌊q/2⌋}`,
/// giving `c_q = 1 + Σ_t C(q−1, t−1) c_{q−t}`.
pub fn bound_constant(p: usize) -> Result<u128> {
    check_p(p, MAX_P)?;
    let mut c = vec![0u128; p + 1];
    for q in 2..=p {
        c[q] = 1 + (2..=q.saturating_sub(2))
            .map(|t| binomial(q - 1, t - 1) * c[q - t])
            .sum::<u128>();
    }
    Ok(c[p])
}

pub fn bound(set_size: u64, p: usize) -> Result<u128> {
    check_n(set_size)?;
    let c = bound_constant(p)?;
    (set_size as u128)
        .checked_pow((p / 2) as u32)
        .and_then(|v| v.checked_mul(c))
        .ok_or_else(|| Error::Overflow(format!("bound({set_size}, {p})")))
}

/// Least-squares slope of `ln count` against `ln n` over
/// [`GROWTH_SET_SIZES`].
pub fn growth_exponent(p: usize) -> Result<f64> {
    check_p(p, 8)?;
    let pts: Vec<(f64, f64)> = GROWTH_SET_SIZES
        .iter()
        .map(|&n| Ok(((n as f64).ln(), (count_no_unique(n, p)? as f64).ln())))
        .collect::<Result<_>>()?;
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_examples() {
        assert_eq!(count_no_unique(3, 4).unwrap(), 21);
        assert_eq!(enumerate_no_unique(3, 4).unwrap().len(), 21);
        assert_eq!(
            enumerate_no_unique(2, 2).unwrap(),
            vec![vec![1, 1], vec![2, 2]]
        );
        assert_eq!(
            enumerate_no_unique(3, 3).unwrap(),
            vec![vec![1, 1, 1], vec![2, 2, 2], vec![3, 3, 3]]
        );
        for p in 2..=MAX_P {
            assert_eq!(count_no_unique(1, p).unwrap(), 1);
        }
    }

    #[test]
    fn pairs_and_triples_count_n() {
        for n in 1..=200 {
            assert_eq!(count_no_unique(n, 2).unwrap(), n as u128);
            assert_eq!(count_no_unique(n, 3).unwrap(), n as u128);
        }
    }

    #[test]
    fn quadruples_closed_form() {
        for n in 1..=100u128 {
            assert_eq!(count_no_unique(n as u64, 4).unwrap(), 3 * n * n - 2 * n);
        }
    }

    #[test]
    fn matches_enumeration() {
        for n in 1..=6 {
            for p in 2..=6 {
                let listed = enumerate_no_unique(n, p).unwrap();
                assert_eq!(count_no_unique(n, p).unwrap(), listed.len() as u128, "n={n} p={p}");
                assert!(listed.iter().all(|t| has_no_unique(t)));
                assert!(listed.iter().flatten().all(|&v| (1..=n as u32).contains(&v)));
            }
        }
    }

    #[test]
    fn partition_numbers() {
        // associated Stirling numbers for p = 6: k = 1, 2, 3 give 1, 25, 15
        assert_eq!(partitions_without_singletons(6), vec![0, 1, 25, 15]);
    }

    #[test]
    fn monotone_in_n() {
        for p in 2..=MAX_P {
            for n in 1..64 {
                assert!(count_no_unique(n + 1, p).unwrap() > count_no_unique(n, p).unwrap());
            }
        }
    }

    #[test]
    fn bounded_by_recursive_constant() {
        for p in 2..=8 {
            for n in 1..=64 {
                let c = count_no_unique(n, p).unwrap();
                let b = bound(n, p).unwrap();
                assert!(c <= b, "n={n} p={p}: {c} > {b}");
                assert!(c <= (n as u128).pow(p as u32));
            }
        }
        assert_eq!(bound_constant(2).unwrap(), 1);
        assert_eq!(bound_constant(3).unwrap(), 1);
        assert_eq!(bound_constant(4).unwrap(), 4);
    }

    #[test]
    fn growth_matches_half_length() {
        for p in 2..=8 {
            let e = growth_exponent(p).unwrap();
            assert!((e - (p / 2) as f64).abs() < 0.1, "p={p}: {e}");
        }
    }

    #[test]
    fn domain_errors() {
        assert!(count_no_unique(0, 2).is_err());
        assert!(count_no_unique(3, 1).is_err());
        assert!(count_no_unique(3, 11).is_err());
        assert!(growth_exponent(9).is_err());
        assert!(matches!(enumerate_no_unique(10, 8), Err(Error::TooLarge { .. })));
    }

    proptest! {
        #[test]
        fn count_never_exceeds_all_tuples(n in 1u64..5000, p in 2usize..=10) {
            let c = count_no_unique(n, p).unwrap();
            prop_assert!(c <= (n as u128).pow(p as u32));
        }
    }
}
