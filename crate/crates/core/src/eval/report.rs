use serde::{Deserialize, Serialize};

use super::cider::{cider, CiderConfig};
use super::meteor::{meteor_like, MeteorConfig};
use super::ngram::{bleu, exact_match, rouge_l};
use super::retrieval::RetrievalMetrics;
use crate::corpus::normalize_tokens;
use crate::error::Result;

/// One generated answer with its gold reference.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredExample {
    pub id: String,
    pub question: String,
    pub candidate: String,
    pub reference: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleMetrics {
    pub id: String,
    pub question: String,
    pub candidate: String,
    pub reference: String,
    pub bleu1: f64,
    pub bleu4: f64,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
    pub meteor: f64,
    pub cider: f64,
    pub exact_match: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub bleu1: f64,
    pub bleu4: f64,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
    pub meteor: f64,
    pub cider: f64,
    pub exact_match: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalSummary {
    pub queries: usize,
    pub k_rank: usize,
    pub protein_to_text: RetrievalMetrics,
    pub text_to_protein: RetrievalMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub examples: Vec<ExampleMetrics>,
    pub aggregate: AggregateMetrics,
    /// Protein↔text retrieval through the pretrained query-token model.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub retrieval: Option<RetrievalSummary>,
    /// Aligned embedding → projected tertiary embedding retrieval.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub cross_level: Option<RetrievalMetrics>,
}

impl MetricsReport {
    /// Scores each example with the shared text normalization. CIDEr is 0
    /// for corpora smaller than two examples.
    pub fn score(examples: &[ScoredExample], meteor: &MeteorConfig, cider_cfg: &CiderConfig) -> Result<MetricsReport> {
        let toks: Vec<(Vec<String>, Vec<Vec<String>>)> = examples
            .iter()
            .map(|e| (normalize_tokens(&e.candidate), vec![normalize_tokens(&e.reference)]))
            .collect();
        let ciders = if toks.len() >= 2 {
            cider(&toks, cider_cfg)?.per_example
        } else {
            vec![0.0; toks.len()]
        };
        let mut rows = Vec::with_capacity(examples.len());
        for ((e, (c, r)), ci) in examples.iter().zip(&toks).zip(ciders) {
            rows.push(ExampleMetrics {
                id: e.id.clone(),
                question: e.question.clone(),
                candidate: e.candidate.clone(),
                reference: e.reference.clone(),
                bleu1: bleu(c, r, 1, &[1.0])?.score,
                bleu4: bleu(c, r, 4, &[0.25; 4])?.score,
                rouge_l: rouge_l(c, &r[0], 1.0)?.score,
                meteor: meteor_like(c, &r[0], meteor)?.score,
                cider: ci,
                exact_match: exact_match(&e.candidate, &e.reference),
            });
        }
        let n = rows.len().max(1) as f64;
        let mean = |f: fn(&ExampleMetrics) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let aggregate = AggregateMetrics {
            bleu1: mean(|r| r.bleu1),
            bleu4: mean(|r| r.bleu4),
            rouge_l: mean(|r| r.rouge_l),
            meteor: mean(|r| r.meteor),
            cider: mean(|r| r.cider),
            exact_match: mean(|r| f64::from(r.exact_match)),
        };
        Ok(MetricsReport {
            examples: rows,
            aggregate,
            retrieval: None,
            cross_level: None,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}
