use itertools::Itertools;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ENUMERATION_CAP: u64 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PermutationMode {
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PermutationTestResult {
    pub p_value: f64,
    pub observed: f64,
    pub mode: PermutationMode,
    /// Assignments enumerated (exact) or sampled (Monte Carlo).
    pub draws: u64,
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// |mean(A) - mean(B)| from the sum of group A.
fn statistic(sum_a: f64, total: f64, na: usize, nb: usize) -> f64 {
    (sum_a / na as f64 - (total - sum_a) / nb as f64).abs()
}

/// Pitman permutation test on the absolute difference of group means.
///
/// Exact mode enumerates every split of the pooled values into groups of the
/// original sizes. Monte Carlo mode samples `draws` splits and reports
/// (1 + hits) / (1 + draws). A split counts as a hit when its statistic
/// reaches the observed one up to a relative rounding allowance of 1e-12, so
/// splits that tie mathematically are not lost to summation order.
pub fn pitman_test(a: &[f64], b: &[f64], mode: PermutationMode, seed: u64, draws: u64) -> Result<PermutationTestResult> {
    pitman_test_with_cap(a, b, mode, seed, draws, DEFAULT_ENUMERATION_CAP)
}

pub fn pitman_test_with_cap(
    a: &[f64],
    b: &[f64],
    mode: PermutationMode,
    seed: u64,
    draws: u64,
    cap: u64,
) -> Result<PermutationTestResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyGroup);
    }
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (na, nb, n) = (a.len(), b.len(), pooled.len());
    let total: f64 = pooled.iter().sum();
    let subset_sum = |idx: &[usize]| idx.iter().map(|&i| pooled[i]).sum::<f64>();
    let observed_idx: Vec<usize> = (0..na).collect();
    let observed = statistic(subset_sum(&observed_idx), total, na, nb);
    let threshold = observed - 1e-12 * observed.abs().max(1.0);

    match mode {
        PermutationMode::Exact => {
            let assignments = binomial(n, na);
            if assignments > u128::from(cap) {
                return Err(Error::TooManyAssignments { assignments, cap });
            }
            let hits = (0..n)
                .combinations(na)
                .filter(|idx| statistic(subset_sum(idx), total, na, nb) >= threshold)
                .count();
            Ok(PermutationTestResult {
                p_value: hits as f64 / assignments as f64,
                observed,
                mode,
                draws: assignments as u64,
            })
        }
        PermutationMode::MonteCarlo => {
            if draws == 0 {
                return Err(Error::InvalidConfig("Monte Carlo mode needs at least one draw".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut hits = 0u64;
            for _ in 0..draws {
                let idx = index::sample(&mut rng, n, na).into_vec();
                if statistic(subset_sum(&idx), total, na, nb) >= threshold {
                    hits += 1;
                }
            }
            Ok(PermutationTestResult {
                p_value: (1 + hits) as f64 / (1 + draws) as f64,
                observed,
                mode,
                draws,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn exact_small_example() {
        let r = pitman_test(&[1.0, 2.0], &[3.0, 4.0], PermutationMode::Exact, 0, 0).unwrap();
        assert_abs_diff_eq!(r.p_value, 2.0 / 6.0, epsilon = 1e-15);
        assert_eq!(r.observed, 2.0);
        assert_eq!(r.draws, 6);
    }

    #[test]
    fn identical_values_give_one() {
        let r = pitman_test(&[0.7; 3], &[0.7; 4], PermutationMode::Exact, 0, 0).unwrap();
        assert_eq!(r.p_value, 1.0);
        let r = pitman_test(&[0.7; 3], &[0.7; 4], PermutationMode::MonteCarlo, 5, 500).unwrap();
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn exact_p_values_are_multiples_of_one_over_total() {
        let a = [0.3, 1.9, -0.4, 2.2];
        let b = [1.1, 0.0, 5.0];
        let r = pitman_test(&a, &b, PermutationMode::Exact, 0, 0).unwrap();
        let m = r.p_value * r.draws as f64;
        assert_abs_diff_eq!(m, m.round(), epsilon = 1e-9);
        assert!(m.round() >= 1.0);
    }

    #[test]
    fn monte_carlo_tracks_exact() {
        let a = [0.5, 1.2, 2.8, 0.1];
        let b = [2.0, 3.1, 1.7, 2.9];
        let exact = pitman_test(&a, &b, PermutationMode::Exact, 0, 0).unwrap().p_value;
        let mc = pitman_test(&a, &b, PermutationMode::MonteCarlo, 42, 100_000).unwrap().p_value;
        assert!((exact - mc).abs() <= 0.01, "{exact} vs {mc}");
    }

    #[test]
    fn errors() {
        assert!(matches!(
            pitman_test(&[], &[1.0], PermutationMode::Exact, 0, 0),
            Err(Error::EmptyGroup)
        ));
        let big: Vec<f64> = (0..30).map(f64::from).collect();
        assert!(matches!(
            pitman_test(&big[..15], &big[15..], PermutationMode::Exact, 0, 0),
            Err(Error::TooManyAssignments { .. })
        ));
        assert!(matches!(
            pitman_test_with_cap(&[1.0, 2.0], &[3.0, 4.0], PermutationMode::Exact, 0, 0, 5),
            Err(Error::TooManyAssignments { assignments: 6, cap: 5 })
        ));
    }

    #[test]
    fn monte_carlo_is_seeded() {
        let a = [0.5, 1.2, 2.8];
        let b = [2.0, 3.1, 1.7, 2.9, 0.3];
        let x = pitman_test(&a, &b, PermutationMode::MonteCarlo, 9, 2000).unwrap();
        let y = pitman_test(&a, &b, PermutationMode::MonteCarlo, 9, 2000).unwrap();
        assert_eq!(x, y);
    }
}
