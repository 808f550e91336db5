//! Adjusted Rand index between two flat clusterings.

use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};
use crate::ids::SentenceId;

fn choose2(n: usize) -> f64 {
    let n = n as f64;
    n * (n - 1.0) / 2.0
}

/// ARI of two label sequences over the same items, from the contingency
/// table. Two clusterings that are both all-singletons or both all-in-one
/// score 1.
pub fn adjusted_rand_index<A, B>(a: &[A], b: &[B]) -> Result<f64>
where
    A: Eq + Hash,
    B: Eq + Hash,
{
    if a.len() != b.len() {
        return Err(Error::Precondition(format!("label sequences of length {} and {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::Precondition("ARI needs at least two items".into()));
    }
    let mut cells: HashMap<(&A, &B), usize> = HashMap::new();
    let mut rows: HashMap<&A, usize> = HashMap::new();
    let mut cols: HashMap<&B, usize> = HashMap::new();
    for (x, y) in a.iter().zip(b) {
        *cells.entry((x, y)).or_insert(0) += 1;
        *rows.entry(x).or_insert(0) += 1;
        *cols.entry(y).or_insert(0) += 1;
    }
    let index: f64 = cells.values().map(|&n| choose2(n)).sum();
    let sum_a: f64 = rows.values().map(|&n| choose2(n)).sum();
    let sum_b: f64 = cols.values().map(|&n| choose2(n)).sum();
    let expected = sum_a * sum_b / choose2(a.len());
    let max = (sum_a + sum_b) / 2.0;
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// ARI between two sets of sentence clusters. Each sentence takes the label
/// of the first cluster listing it; sentences missing from either side are
/// ignored.
pub fn cluster_ari(a: &[Vec<SentenceId>], b: &[Vec<SentenceId>]) -> Result<f64> {
    fn labels(clusters: &[Vec<SentenceId>]) -> HashMap<&SentenceId, usize> {
        let mut m = HashMap::new();
        for (i, c) in clusters.iter().enumerate() {
            for s in c {
                m.entry(s).or_insert(i);
            }
        }
        m
    }
    let (la, lb) = (labels(a), labels(b));
    let mut shared: Vec<&SentenceId> = la.keys().filter(|s| lb.contains_key(*s)).copied().collect();
    shared.sort();
    let xa: Vec<usize> = shared.iter().map(|s| la[s]).collect();
    let xb: Vec<usize> = shared.iter().map(|s| lb[s]).collect();
    adjusted_rand_index(&xa, &xb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use proptest::prelude::*;
    use rand::Rng;

    /// Pair-counting oracle: loop over all item pairs.
    fn brute_force_ari(a: &[usize], b: &[usize]) -> f64 {
        let n = a.len();
        let (mut both, mut only_a, mut only_b, mut total) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            for j in (i + 1)..n {
                let sa = a[i] == a[j];
                let sb = b[i] == b[j];
                total += 1.0;
                if sa && sb {
                    both += 1.0;
                }
                if sa {
                    only_a += 1.0;
                }
                if sb {
                    only_b += 1.0;
                }
            }
        }
        let expected = only_a * only_b / total;
        let max = (only_a + only_b) / 2.0;
        if max == expected {
            1.0
        } else {
            (both - expected) / (max - expected)
        }
    }

    #[test]
    fn examples() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[5, 5, 7, 7]).unwrap(), 1.0);
        assert_eq!(adjusted_rand_index(&[0, 0, 0, 0], &[0, 1, 2, 3]).unwrap(), 0.0);
        assert!(adjusted_rand_index(&[0], &[0]).is_err());
        assert!(adjusted_rand_index(&[0, 1], &[0]).is_err());
        // Contingency [[2,0],[1,1]] for a=[0,0,1,1], b=[0,0,0,1]:
        // index 1, sums 2 and 3, expected 1, max 2.5.
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[0, 0, 0, 1]).unwrap(), 0.0);
        let v = adjusted_rand_index(&[0, 0, 0, 1, 1, 1], &[0, 0, 1, 1, 2, 2]).unwrap();
        assert!((v - brute_force_ari(&[0, 0, 0, 1, 1, 1], &[0, 0, 1, 1, 2, 2])).abs() < 1e-12);
    }

    #[test]
    fn cluster_ari_ignores_missing_sentences() {
        let ids = |xs: &[&str]| xs.iter().map(|&x| SentenceId::from(x)).collect::<Vec<_>>();
        let a = vec![ids(&["s1", "s2"]), ids(&["s3", "s4", "x"])];
        let b = vec![ids(&["s2", "s1", "y"]), ids(&["s4", "s3"]), ids(&["s1"])];
        assert_eq!(cluster_ari(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn random_cases_match_oracle_and_are_invariant() {
        let mut rng = substream(11, "ari");
        for _ in 0..100 {
            let n = rng.random_range(2..40);
            let ka = rng.random_range(1..6);
            let kb = rng.random_range(1..6);
            let a: Vec<usize> = (0..n).map(|_| rng.random_range(0..ka)).collect();
            let b: Vec<usize> = (0..n).map(|_| rng.random_range(0..kb)).collect();
            let got = adjusted_rand_index(&a, &b).unwrap();
            assert!((got - brute_force_ari(&a, &b)).abs() < 1e-9);
            assert!((got - adjusted_rand_index(&b, &a).unwrap()).abs() < 1e-12);
            let renamed: Vec<usize> = a.iter().map(|&x| (x * 7 + 3) % 11 + 100).collect();
            assert!((got - adjusted_rand_index(&renamed, &b).unwrap()).abs() < 1e-12);
            assert!(got <= 1.0 + 1e-12);
        }
    }

    fn canonical(labels: &[usize]) -> Vec<usize> {
        let mut map = HashMap::new();
        labels
            .iter()
            .map(|l| {
                let next = map.len();
                *map.entry(*l).or_insert(next)
            })
            .collect()
    }

    proptest! {
        #[test]
        fn one_iff_same_partition(a in proptest::collection::vec(0usize..4, 2..12), b in proptest::collection::vec(0usize..4, 12)) {
            let b = &b[..a.len()];
            let ari = adjusted_rand_index(&a, b).unwrap();
            let same = canonical(&a) == canonical(b);
            prop_assert_eq!((ari - 1.0).abs() < 1e-12, same);
        }
    }
}
