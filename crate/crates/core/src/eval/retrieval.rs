use plp_tensor::{Precision, Tape, Tensor};

use crate::corpus::Tokenizer;
use crate::error::{Error, Result};
use crate::plp::{ptm_logit, AttentionMaskMode, PlpFormer, TextBatch};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    ProteinToText,
    TextToProtein,
}

/// Matching logit for a (protein, text) pair of index items.
pub trait MatchScorer {
    fn match_score(&self, protein: usize, text: usize) -> Result<f64>;
}

impl<F: Fn(usize, usize) -> Result<f64>> MatchScorer for F {
    fn match_score(&self, protein: usize, text: usize) -> Result<f64> {
        self(protein, text)
    }
}

/// Per item: query-token embeddings `[nq × d]` and the text [CLS] vector.
#[derive(Clone, Debug)]
pub struct RetrievalIndex {
    ids: Vec<String>,
    queries: Vec<Vec<Vec<f64>>>,
    texts: Vec<Vec<f64>>,
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        v.to_vec()
    } else {
        v.iter().map(|x| x / n).collect()
    }
}

impl RetrievalIndex {
    pub fn new(ids: Vec<String>, queries: &[Tensor], texts: &[Vec<f64>]) -> Result<RetrievalIndex> {
        if ids.len() != queries.len() || ids.len() != texts.len() {
            return Err(Error::contract(format!(
                "retrieval index lengths differ: {} ids, {} query sets, {} texts",
                ids.len(),
                queries.len(),
                texts.len()
            )));
        }
        let mut q_units = Vec::with_capacity(queries.len());
        for (i, (q, t)) in queries.iter().zip(texts).enumerate() {
            let dims = q.shape();
            if dims.len() != 2 || dims[1] != t.len() {
                return Err(Error::contract(format!(
                    "item {i}: query shape {:?} does not match text width {}",
                    dims,
                    t.len()
                )));
            }
            if !q.data().iter().chain(t).all(|x| x.is_finite()) {
                return Err(Error::contract(format!("item {i} has non-finite values")));
            }
            q_units.push(q.data().chunks(dims[1]).map(unit).collect());
        }
        Ok(RetrievalIndex {
            ids,
            queries: q_units,
            texts: texts.iter().map(|t| unit(t)).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Max over query tokens of the cosine with the text vector.
    pub fn similarity(&self, protein: usize, text: usize) -> f64 {
        let t = &self.texts[text];
        self.queries[protein]
            .iter()
            .map(|q| q.iter().zip(t).map(|(a, b)| a * b).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Ranks every index item against `query`: the `k_rank` best by
/// similarity are re-ordered by matching score (ties by similarity, then
/// id) and the rest follow in similarity order.
pub fn retrieve(
    index: &RetrievalIndex,
    query: usize,
    direction: Direction,
    k_rank: usize,
    scorer: &dyn MatchScorer,
) -> Result<Vec<usize>> {
    if index.is_empty() {
        return Err(Error::contract("retrieval over an empty index"));
    }
    if query >= index.len() || k_rank > index.len() {
        return Err(Error::contract(format!(
            "query {query} / k_rank {k_rank} out of range for index of {}",
            index.len()
        )));
    }
    let pair = |c: usize| match direction {
        Direction::ProteinToText => (query, c),
        Direction::TextToProtein => (c, query),
    };
    let sims: Vec<f64> = (0..index.len())
        .map(|c| {
            let (p, t) = pair(c);
            index.similarity(p, t)
        })
        .collect();
    let by_id = |a: usize, b: usize| index.ids[a].cmp(&index.ids[b]).then(a.cmp(&b));
    let mut order: Vec<usize> = (0..index.len()).collect();
    order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then_with(|| by_id(a, b)));
    let mut head: Vec<(usize, f64)> = order[..k_rank]
        .iter()
        .map(|&c| {
            let (p, t) = pair(c);
            scorer.match_score(p, t).map(|s| (c, s))
        })
        .collect::<Result<_>>()?;
    head.sort_by(|&(a, sa), &(b, sb)| {
        sb.total_cmp(&sa)
            .then_with(|| sims[b].total_cmp(&sims[a]))
            .then_with(|| by_id(a, b))
    });
    Ok(head.into_iter().map(|(c, _)| c).chain(order[k_rank..].iter().copied()).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RetrievalMetrics {
    /// Fraction of queries whose gold item is ranked first.
    pub acc: f64,
    /// Fraction of queries whose gold item is in the top 20.
    pub r_at_20: f64,
}

pub fn retrieval_metrics<T: PartialEq>(ranked: &[Vec<T>], gold: &[T]) -> Result<RetrievalMetrics> {
    if ranked.len() != gold.len() {
        return Err(Error::contract(format!(
            "{} ranked lists for {} gold items",
            ranked.len(),
            gold.len()
        )));
    }
    if ranked.is_empty() {
        return Ok(RetrievalMetrics { acc: 0.0, r_at_20: 0.0 });
    }
    let n = ranked.len() as f64;
    let hit = |k: usize| ranked.iter().zip(gold).filter(|(r, g)| r.iter().take(k).any(|x| x == *g)).count() as f64 / n;
    Ok(RetrievalMetrics {
        acc: hit(1),
        r_at_20: hit(20),
    })
}


/// Matching scores from the bidirectional pass and the binary head.
pub struct PlpMatcher<'a> {
    model: &'a PlpFormer,
    e_seq: &'a [Tensor],
    texts: Vec<Vec<usize>>,
    precision: Precision,
}

impl<'a> PlpMatcher<'a> {
    /// `words` are description token ids without reserved tokens.
    pub fn new(model: &'a PlpFormer, e_seq: &'a [Tensor], words: &[Vec<usize>], precision: Precision) -> Self {
        let max = model.config().max_text_len;
        PlpMatcher {
            model,
            e_seq,
            texts: words.iter().map(|w| TextBatch::row(Tokenizer::CLS, w, max)).collect(),
            precision,
        }
    }

    /// Index of query-token outputs (no text present) and text [CLS]
    /// outputs from the unimodal pass.
    pub fn index(&self, ids: Vec<String>) -> Result<RetrievalIndex> {
        let mut queries = Vec::with_capacity(self.e_seq.len());
        for e in self.e_seq {
            queries.push(self.model.select(e, self.precision)?);
        }
        let mut cls = Vec::with_capacity(self.texts.len());
        for t in &self.texts {
            let mut tape = Tape::new(self.precision);
            let out = self.model.text_output(&mut tape, t)?;
            cls.push(tape.tensor(out).row(0).to_vec());
        }
        RetrievalIndex::new(ids, &queries, &cls)
    }
}

impl MatchScorer for PlpMatcher<'_> {
    fn match_score(&self, protein: usize, text: usize) -> Result<f64> {
        let mut tape = Tape::new(self.precision);
        let ctx = self.model.encode_protein(&mut tape, &self.e_seq[protein])?;
        let (q, _) = self
            .model
            .forward_pair(&mut tape, &ctx, &self.texts[text], AttentionMaskMode::Bidirectional)?;
        let logit = ptm_logit(&mut tape, self.model, q)?;
        Ok(tape.data(logit)[0])
    }
}

/// Ranks every item in both directions and scores the gold diagonal.
pub fn evaluate_retrieval(
    index: &RetrievalIndex,
    k_rank: usize,
    scorer: &dyn MatchScorer,
) -> Result<(RetrievalMetrics, RetrievalMetrics)> {
    let gold: Vec<usize> = (0..index.len()).collect();
    let mut p2t = Vec::with_capacity(index.len());
    let mut t2p = Vec::with_capacity(index.len());
    for q in 0..index.len() {
        p2t.push(retrieve(index, q, Direction::ProteinToText, k_rank, scorer)?);
        t2p.push(retrieve(index, q, Direction::TextToProtein, k_rank, scorer)?);
    }
    Ok((retrieval_metrics(&p2t, &gold)?, retrieval_metrics(&t2p, &gold)?))
}

/// Ranks the columns of `scores[query][candidate]` (descending, ties by
/// index) and scores the diagonal as gold.
pub fn rank_by_scores(scores: &[Vec<f64>]) -> Result<RetrievalMetrics> {
    let ranked: Vec<Vec<usize>> = scores
        .iter()
        .map(|row| {
            let mut order: Vec<usize> = (0..row.len()).collect();
            order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            order
        })
        .collect();
    let gold: Vec<usize> = (0..scores.len()).collect();
    retrieval_metrics(&ranked, &gold)
}
