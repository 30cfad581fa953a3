use protchat_core::eval::{bleu, cider, clipped_counts, lcs_len, rank_by_scores, rouge_l, CiderConfig};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::util::{ensure, fail, rng, Outcome};

const CASES: usize = 1000;

fn tokens(r: &mut ChaCha8Rng, max_len: usize) -> Vec<u8> {
    let len = r.gen_range(0..=max_len);
    (0..len).map(|_| r.gen_range(0..4)).collect()
}

/// Longest common subsequence by trying every subsequence of `a`.
fn exhaustive_lcs(a: &[u8], b: &[u8]) -> usize {
    let is_subsequence = |s: &[u8]| {
        let mut it = b.iter();
        s.iter().all(|x| it.any(|y| y == x))
    };
    (0u32..1 << a.len())
        .filter_map(|mask| {
            let s: Vec<u8> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| a[i]).collect();
            is_subsequence(&s).then_some(s.len())
        })
        .max()
        .unwrap_or(0)
}

fn occurrences(hay: &[u8], gram: &[u8]) -> usize {
    if hay.len() < gram.len() {
        return 0;
    }
    (0..=hay.len() - gram.len()).filter(|&i| &hay[i..i + gram.len()] == gram).count()
}

/// Clipped n-gram matches by rescanning every sequence for every window.
fn brute_clipped(cand: &[u8], refs: &[Vec<u8>], n: usize) -> (usize, usize) {
    if cand.len() < n {
        return (0, 0);
    }
    let windows: Vec<&[u8]> = cand.windows(n).collect();
    let mut clipped = 0;
    for (i, w) in windows.iter().enumerate() {
        if windows[..i].contains(w) {
            continue;
        }
        let max_ref = refs.iter().map(|r| occurrences(r, w)).max().unwrap_or(0);
        clipped += occurrences(cand, w).min(max_ref);
    }
    (clipped, windows.len())
}

fn words(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

pub fn run() -> Outcome {
    let mut r = rng(6);
    for i in 0..CASES {
        let (a, b) = (tokens(&mut r, 8), tokens(&mut r, 8));
        let (dp, oracle) = (lcs_len(&a, &b), exhaustive_lcs(&a, &b));
        ensure!(dp == oracle, "case {i}: LCS {dp} vs exhaustive {oracle} for {a:?} / {b:?}");
        if !a.is_empty() && !b.is_empty() {
            let s = rouge_l(&a, &b, 1.2).map_err(fail)?;
            let want_r = oracle as f64 / b.len() as f64;
            ensure!((s.recall - want_r).abs() < 1e-12, "case {i}: ROUGE-L recall {} vs {want_r}", s.recall);
        }
    }
    for i in 0..CASES {
        let cand = tokens(&mut r, 10);
        let refs: Vec<Vec<u8>> = (0..r.gen_range(1..4)).map(|_| tokens(&mut r, 10)).collect();
        let n = r.gen_range(1..=4);
        let (got, want) = (clipped_counts(&cand, &refs, n), brute_clipped(&cand, &refs, n));
        ensure!(got == want, "case {i}: clipped {got:?} vs brute force {want:?} (n={n})");
    }

    let b1 = bleu(&words("the cat sat"), &[words("the cat sat on the mat")], 1, &[1.0]).map_err(fail)?;
    ensure!((b1.score - (-1f64).exp()).abs() < 1e-6, "BLEU-1 anchor {}", b1.score);
    let rl = rouge_l(&words("a b c d"), &words("a c d"), 1.0).map_err(fail)?;
    ensure!((rl.score - 6.0 / 7.0).abs() < 1e-6, "ROUGE-L anchor {}", rl.score);
    let docs: Vec<(Vec<&str>, Vec<Vec<&str>>)> = [
        "a kinase that binds atp",
        "a transporter in the membrane",
        "an enzyme of the golgi",
        "binds zinc in the nucleus",
    ]
    .iter()
    .map(|s| (words(s), vec![words(s)]))
    .collect();
    let c = cider(&docs, &CiderConfig::default()).map_err(fail)?;
    ensure!((c.per_example[0] - 1.0).abs() < 1e-6, "CIDEr identity {}", c.per_example[0]);

    let trials = 1000;
    let items = 100;
    let mut r = rng(0);
    let mut hits = 0.0;
    for _ in 0..trials {
        let scores: Vec<Vec<f64>> = (0..items).map(|_| (0..items).map(|_| r.gen()).collect()).collect();
        hits += rank_by_scores(&scores).map_err(fail)?.acc;
    }
    let acc = hits / trials as f64;
    let sigma = (0.01 * 0.99 / (trials * items) as f64).sqrt();
    ensure!((acc - 0.01).abs() <= 3.0 * sigma, "random-ranking Acc {acc} outside 0.01 ± 3σ ({sigma:.1e})");

    Ok(format!(
        "{CASES} LCS and {CASES} clipping cases agree; BLEU-1 {:.4}, ROUGE-L {:.4}, CIDEr identity {:.4}; random Acc {acc:.4} (σ {sigma:.1e})",
        b1.score, rl.score, c.per_example[0]
    ))
}
