use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

/// Multiset of the length-`n` windows of `tokens`.
pub fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    if n == 0 || tokens.len() < n {
        return m;
    }
    for w in tokens.windows(n) {
        *m.entry(w).or_insert(0) += 1;
    }
    m
}

/// (clipped matches, candidate n-gram total): every candidate n-gram
/// counts at most as often as it occurs in any single reference.
pub fn clipped_counts<T: Eq + Hash>(candidate: &[T], references: &[Vec<T>], n: usize) -> (usize, usize) {
    let cand = ngram_counts(candidate, n);
    let refs: Vec<_> = references.iter().map(|r| ngram_counts(r, n)).collect();
    let mut clipped = 0;
    let mut total = 0;
    for (g, &c) in &cand {
        total += c;
        let max_ref = refs.iter().map(|r| r.get(g).copied().unwrap_or(0)).max().unwrap_or(0);
        clipped += c.min(max_ref);
    }
    (clipped, total)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BleuScore {
    pub score: f64,
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
    /// Set when the candidate is empty; the score is then 0.
    pub degenerate: bool,
}

/// Sentence BLEU with clipped precisions, brevity penalty against the
/// closest reference length (shorter on ties), and zero whenever some
/// precision is zero.
pub fn bleu<T: Eq + Hash>(candidate: &[T], references: &[Vec<T>], n: usize, weights: &[f64]) -> Result<BleuScore> {
    if n == 0 || weights.len() != n {
        return Err(Error::contract(format!("BLEU needs {n} ≥ 1 weights, got {}", weights.len())));
    }
    if (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 || weights.iter().any(|&w| w < 0.0) {
        return Err(Error::contract("BLEU weights must be non-negative and sum to 1"));
    }
    if references.is_empty() {
        return Err(Error::contract("BLEU needs at least one reference"));
    }
    if candidate.is_empty() {
        return Ok(BleuScore {
            score: 0.0,
            precisions: vec![0.0; n],
            brevity_penalty: 0.0,
            degenerate: true,
        });
    }
    let precisions: Vec<f64> = (1..=n)
        .map(|k| {
            let (m, t) = clipped_counts(candidate, references, k);
            if t == 0 {
                0.0
            } else {
                m as f64 / t as f64
            }
        })
        .collect();
    let c = candidate.len();
    let r = references
        .iter()
        .map(Vec::len)
        .min_by_key(|&len| (len.abs_diff(c), len))
        .expect("non-empty references");
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    let score = if precisions.iter().zip(weights).any(|(&p, &w)| p == 0.0 && w > 0.0) {
        0.0
    } else {
        let log_sum: f64 = precisions
            .iter()
            .zip(weights)
            .filter(|(_, &w)| w > 0.0)
            .map(|(&p, &w)| w * p.ln())
            .sum();
        bp * log_sum.exp()
    };
    Ok(BleuScore {
        score,
        precisions,
        brevity_penalty: bp,
        degenerate: false,
    })
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
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

#[derive(Clone, Debug, PartialEq)]
pub struct RougeScore {
    pub score: f64,
    pub precision: f64,
    pub recall: f64,
    pub degenerate: bool,
}

/// LCS-based F-measure; recall is relative to the reference length,
/// precision to the candidate length.
pub fn rouge_l<T: PartialEq>(candidate: &[T], reference: &[T], beta: f64) -> Result<RougeScore> {
    if !(beta > 0.0) {
        return Err(Error::contract("ROUGE-L needs β > 0"));
    }
    if candidate.is_empty() || reference.is_empty() {
        return Ok(RougeScore {
            score: 0.0,
            precision: 0.0,
            recall: 0.0,
            degenerate: true,
        });
    }
    let l = lcs_len(candidate, reference) as f64;
    let recall = l / reference.len() as f64;
    let precision = l / candidate.len() as f64;
    let b2 = beta * beta;
    let score = if l == 0.0 {
        0.0
    } else {
        (1.0 + b2) * recall * precision / (recall + b2 * precision)
    };
    Ok(RougeScore {
        score,
        precision,
        recall,
        degenerate: false,
    })
}

/// 1 when the trimmed, case-folded strings are equal. No numeric
/// coercion: "4.0" and "4" differ.
pub fn exact_match(candidate: &str, gold: &str) -> u8 {
    u8::from(candidate.trim().to_lowercase() == gold.trim().to_lowercase())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn bleu_anchors() {
        let r = vec![t("the cat sat on the mat")];
        assert_eq!(bleu(&t("the cat sat on the mat"), &r, 4, &[0.25; 4]).unwrap().score, 1.0);
        let s = bleu(&t("the cat sat"), &r, 1, &[1.0]).unwrap();
        assert_eq!(s.precisions, [1.0]);
        assert!((s.score - (-1f64).exp()).abs() < 1e-12);
        assert_eq!(bleu(&t("mat the on sat"), &r, 4, &[0.25; 4]).unwrap().score, 0.0);
        let e = bleu(&Vec::<&str>::new(), &r, 1, &[1.0]).unwrap();
        assert!(e.degenerate);
        assert!(bleu(&t("a"), &r, 2, &[0.5, 0.6]).is_err());
    }

    #[test]
    fn closest_reference_length_prefers_shorter() {
        // c = 3, references of length 2 and 4 are equally close → r = 2
        let refs = vec![t("a b c d"), t("a b")];
        let s = bleu(&t("a b c"), &refs, 1, &[1.0]).unwrap();
        assert_eq!(s.brevity_penalty, 1.0);
    }

    #[test]
    fn rouge_anchors() {
        let s = rouge_l(&t("a b c d"), &t("a c d"), 1.0).unwrap();
        assert_eq!(s.recall, 1.0);
        assert_eq!(s.precision, 0.75);
        assert!((s.score - 6.0 / 7.0).abs() < 1e-12);
        assert_eq!(rouge_l(&t("w x y z"), &t("w x y z"), 3.0).unwrap().score, 1.0);
        assert_eq!(lcs_len(&t("A B C B D A B"), &t("B D C A B A")), 4);
        assert!(rouge_l(&t(""), &t("a"), 1.0).unwrap().degenerate);
    }

    #[test]
    fn exact_match_rules() {
        assert_eq!(exact_match("4", "4"), 1);
        assert_eq!(exact_match(" 4 ", "4"), 1);
        assert_eq!(exact_match("Kinase", "kinase"), 1);
        assert_eq!(exact_match("4.0", "4"), 0);
    }
}
