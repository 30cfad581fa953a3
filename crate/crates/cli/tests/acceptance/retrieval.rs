use plp_tensor::{Precision, Tensor};
use protchat_core::eval::{retrieve, Direction, MatchScorer, PlpMatcher};
use protchat_core::plp::{PlpConfig, PlpFormer};
use rand::Rng;

use crate::util::{ensure, fail, randn, rng, Outcome};

const INDEXES: u64 = 50;

/// Order of `scores`, descending. Exact ties only arise from identical
/// inputs (equal similarity too), so they fall back to index order.
fn exhaustive_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

pub fn run() -> Outcome {
    let (mut queries, mut reordered) = (0, 0);
    for seed in 0..INDEXES {
        let mut r = rng(700 + seed);
        let cfg = PlpConfig {
            n_queries: 4,
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            ffn_mult: 2,
            vocab_size: 40,
            c_seq: 6,
            max_text_len: 10,
            ..PlpConfig::default()
        };
        let model = PlpFormer::new(&cfg, seed).map_err(fail)?;
        let n = r.gen_range(3..=12);
        let e_seq: Vec<Tensor> = (0..n).map(|_| randn(r.gen_range(2..12), 6, &mut r)).collect();
        let words: Vec<Vec<usize>> = (0..n)
            .map(|_| (0..r.gen_range(1..8)).map(|_| r.gen_range(9..40)).collect())
            .collect();
        let matcher = PlpMatcher::new(&model, &e_seq, &words, Precision::F64);
        let index = matcher.index((0..n).map(|i| format!("s{seed}p{i:02}")).collect()).map_err(fail)?;
        let ptm: Vec<Vec<f64>> = (0..n)
            .map(|p| (0..n).map(|t| matcher.match_score(p, t)).collect::<Result<_, _>>())
            .collect::<Result<_, _>>()
            .map_err(fail)?;

        for q in 0..n {
            for dir in [Direction::ProteinToText, Direction::TextToProtein] {
                let scores: Vec<f64> = match dir {
                    Direction::ProteinToText => ptm[q].clone(),
                    Direction::TextToProtein => (0..n).map(|p| ptm[p][q]).collect(),
                };
                let want = exhaustive_order(&scores);
                let got = retrieve(&index, q, dir, n, &matcher).map_err(fail)?;
                ensure!(got == want, "index {seed}, query {q}, {dir:?}: {got:?} vs exhaustive {want:?}");
                let first_stage = retrieve(&index, q, dir, 0, &matcher).map_err(fail)?;
                queries += 1;
                reordered += usize::from(first_stage != got);
            }
        }
    }
    ensure!(reordered > 0, "re-ranking never changed the first-stage order");
    Ok(format!(
        "{INDEXES} indexes, {queries} queries identical to exhaustive matching ({reordered} re-ordered by the matcher)"
    ))
}
