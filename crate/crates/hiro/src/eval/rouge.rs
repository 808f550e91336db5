//! ROUGE-2 and ROUGE-L F1 over [`tokenize`](crate::tokenize) tokens, with no
//! stemming and no stop-word removal.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RougeVariant {
    R2F1,
    RlF1,
}

fn f1(overlap: f64, cand: usize, refn: usize) -> f64 {
    if overlap == 0.0 {
        return 0.0;
    }
    let p = overlap / cand as f64;
    let r = overlap / refn as f64;
    2.0 * p * r / (p + r)
}

fn bigrams(tokens: &[String]) -> HashMap<(&str, &str), usize> {
    let mut out = HashMap::new();
    for w in tokens.windows(2) {
        *out.entry((w[0].as_str(), w[1].as_str())).or_insert(0) += 1;
    }
    out
}

/// Bigram F1 with clipped counts. Texts too short to have a bigram score 1
/// when their token sequences are equal and non-empty, else 0.
pub fn rouge2_tokens(cand: &[String], refr: &[String]) -> f64 {
    if cand.len() < 2 || refr.len() < 2 {
        return if !cand.is_empty() && cand == refr { 1.0 } else { 0.0 };
    }
    let (c, r) = (bigrams(cand), bigrams(refr));
    let overlap: usize = c.iter().map(|(b, &n)| n.min(r.get(b).copied().unwrap_or(0))).sum();
    f1(overlap as f64, cand.len() - 1, refr.len() - 1)
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l_tokens(cand: &[String], refr: &[String]) -> f64 {
    if cand.is_empty() || refr.is_empty() {
        return 0.0;
    }
    f1(lcs_len(cand, refr) as f64, cand.len(), refr.len())
}

/// ROUGE F1 of `candidate` against a single reference.
///
/// ```
/// use hiro::eval::{rouge, RougeVariant};
/// assert_eq!(rouge("the cat sat", "the cat ran", RougeVariant::R2F1), 0.5);
/// ```
pub fn rouge(candidate: &str, reference: &str, variant: RougeVariant) -> f64 {
    let (c, r) = (tokenize(candidate), tokenize(reference));
    match variant {
        RougeVariant::R2F1 => rouge2_tokens(&c, &r),
        RougeVariant::RlF1 => rouge_l_tokens(&c, &r),
    }
}

/// Best score over several references (0 when there are none).
pub fn rouge_multi<S: AsRef<str>>(candidate: &str, references: &[S], variant: RougeVariant) -> f64 {
    references
        .iter()
        .map(|r| rouge(candidate, r.as_ref(), variant))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        for v in [RougeVariant::R2F1, RougeVariant::RlF1] {
            assert_eq!(rouge("The pool was warm.", "the pool was warm", v), 1.0);
            assert_eq!(rouge("great pool", "rude staff", v), 0.0);
            assert_eq!(rouge("", "", v), 0.0);
        }
        assert_eq!(rouge("the cat sat", "the cat ran", RougeVariant::R2F1), 0.5);
        // LCS "the cat" = 2 of 3 tokens on both sides.
        assert!((rouge("the cat sat", "the cat ran", RougeVariant::RlF1) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(rouge("wow", "Wow!", RougeVariant::R2F1), 1.0);
        assert_eq!(rouge("wow", "nice", RougeVariant::R2F1), 0.0);
        assert_eq!(rouge_multi("the cat sat", &["dog", "the cat sat"], RougeVariant::R2F1), 1.0);
    }

    #[test]
    fn clipped_counts() {
        // Candidate bigrams: a·a x3; reference: a·a x1, a·b x1.
        // Overlap 1, P = 1/3, R = 1/2.
        let got = rouge("a a a a", "a a b", RougeVariant::R2F1);
        assert!((got - 0.4).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn identity_symmetry_bounds(a in "[a-d ]{0,30}", b in "[a-d ]{0,30}") {
            let r2 = rouge(&a, &b, RougeVariant::R2F1);
            prop_assert!((0.0..=1.0).contains(&r2));
            prop_assert!((r2 - rouge(&b, &a, RougeVariant::R2F1)).abs() < 1e-12);
            let rl = rouge(&a, &b, RougeVariant::RlF1);
            prop_assert!((0.0..=1.0).contains(&rl));
            if !tokenize(&a).is_empty() {
                prop_assert_eq!(rouge(&a, &a, RougeVariant::R2F1), 1.0);
                prop_assert_eq!(rouge(&a, &a, RougeVariant::RlF1), 1.0);
            }
        }
    }
}
