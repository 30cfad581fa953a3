use std::collections::{BTreeMap, HashMap, HashSet};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use super::ngram::ngram_counts;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdfMode {
    /// `ln(N / (1 + df))`
    Smoothed,
    /// `ln(N / max(1, df))`
    Plain,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CiderConfig {
    pub max_n: usize,
    pub idf: IdfMode,
}

impl Default for CiderConfig {
    fn default() -> Self {
        CiderConfig {
            max_n: 4,
            idf: IdfMode::Smoothed,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CiderScores {
    /// One score per example.
    pub per_example: Vec<f64>,
    pub mean: f64,
}

/// TF-IDF weighted n-gram vector of one sentence. Ordered, so that every
/// sum over it runs in the same order.
fn tfidf<'a, T: Ord + Hash>(
    tokens: &'a [T],
    n: usize,
    df: &HashMap<&'a [T], usize>,
    corpus: f64,
    mode: IdfMode,
) -> BTreeMap<&'a [T], f64> {
    let counts = ngram_counts(tokens, n);
    let total: usize = counts.values().sum();
    counts
        .into_iter()
        .map(|(g, c)| {
            let d = df.get(g).copied().unwrap_or(0) as f64;
            let idf = match mode {
                IdfMode::Smoothed => (corpus / (1.0 + d)).ln(),
                IdfMode::Plain => (corpus / d.max(1.0)).ln(),
            };
            (g, c as f64 / total as f64 * idf)
        })
        .collect()
}

fn cosine<K: Ord>(a: &BTreeMap<K, f64>, b: &BTreeMap<K, f64>) -> f64 {
    let dot: f64 = a.iter().map(|(k, x)| x * b.get(k).copied().unwrap_or(0.0)).sum();
    let na = a.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.values().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Corpus-level consensus score: per example, the mean over n of the mean
/// cosine between the candidate's and each reference's TF-IDF vectors.
/// Document frequency counts the examples whose reference set contains an
/// n-gram. Needs at least two examples.
pub fn cider<T: Ord + Hash>(examples: &[(Vec<T>, Vec<Vec<T>>)], config: &CiderConfig) -> Result<CiderScores> {
    if examples.len() < 2 {
        return Err(Error::contract(format!(
            "CIDEr needs a corpus of at least 2 examples, got {}",
            examples.len()
        )));
    }
    if config.max_n == 0 {
        return Err(Error::contract("CIDEr needs max_n ≥ 1"));
    }
    if let Some(i) = examples.iter().position(|(_, refs)| refs.is_empty()) {
        return Err(Error::contract(format!("CIDEr example {i} has no references")));
    }
    let corpus = examples.len() as f64;
    let mut per_example = vec![0.0; examples.len()];
    for n in 1..=config.max_n {
        let mut df: HashMap<&[T], usize> = HashMap::new();
        for (_, refs) in examples {
            let set: HashSet<&[T]> = refs.iter().flat_map(|r| ngram_counts(r, n).into_keys()).collect();
            for g in set {
                *df.entry(g).or_default() += 1;
            }
        }
        for (score, (cand, refs)) in per_example.iter_mut().zip(examples) {
            let c = tfidf(cand, n, &df, corpus, config.idf);
            let s: f64 = refs
                .iter()
                .map(|r| cosine(&c, &tfidf(r, n, &df, corpus, config.idf)))
                .sum();
            *score += s / refs.len() as f64 / config.max_n as f64;
        }
    }
    let mean = per_example.iter().sum::<f64>() / per_example.len() as f64;
    Ok(CiderScores { per_example, mean })
}
