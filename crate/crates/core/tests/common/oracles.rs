//! Independent reference implementations used as test oracles.

use std::collections::BTreeMap;

/// Longest common subsequence by enumerating every subsequence of `a`.
pub fn exhaustive_lcs<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    assert!(a.len() <= 16);
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let sub: Vec<&T> = (0..a.len()).filter(|i| mask & (1 << i) != 0).map(|i| &a[i]).collect();
        if sub.len() > best && is_subsequence(&sub, b) {
            best = sub.len();
        }
    }
    best
}

fn is_subsequence<T: PartialEq>(sub: &[&T], of: &[T]) -> bool {
    let mut it = of.iter();
    sub.iter().all(|x| it.any(|y| y == *x))
}

fn count_occurrences<T: PartialEq>(hay: &[T], needle: &[T]) -> usize {
    if hay.len() < needle.len() {
        return 0;
    }
    (0..=hay.len() - needle.len()).filter(|&s| hay[s..s + needle.len()] == *needle).count()
}

/// Clipped n-gram matches and total by rescanning the token lists.
pub fn brute_clipped<T: PartialEq + Clone>(cand: &[T], refs: &[Vec<T>], n: usize) -> (usize, usize) {
    if cand.len() < n {
        return (0, 0);
    }
    let mut distinct: Vec<Vec<T>> = Vec::new();
    for s in 0..=cand.len() - n {
        let g = cand[s..s + n].to_vec();
        if !distinct.contains(&g) {
            distinct.push(g);
        }
    }
    let mut clipped = 0;
    for g in &distinct {
        let c = count_occurrences(cand, g);
        let r = refs.iter().map(|r| count_occurrences(r, g)).max().unwrap_or(0);
        clipped += c.min(r);
    }
    (clipped, cand.len() - n + 1)
}

/// (max matches, min chunks among max-match alignments) by enumerating
/// every one-to-one exact alignment.
pub fn exhaustive_alignment<T: PartialEq>(cand: &[T], reference: &[T]) -> (usize, usize) {
    fn go<T: PartialEq>(
        i: usize,
        cand: &[T],
        reference: &[T],
        used: &mut Vec<bool>,
        pairs: &mut Vec<(usize, usize)>,
        best: &mut (usize, usize),
    ) {
        if i == cand.len() {
            let m = pairs.len();
            let chunks = pairs
                .iter()
                .enumerate()
                .filter(|(k, &(ci, rj))| *k == 0 || pairs[k - 1] != (ci - 1, rj.wrapping_sub(1)))
                .count();
            if m > best.0 || (m == best.0 && chunks < best.1) {
                *best = (m, chunks);
            }
            return;
        }
        go(i + 1, cand, reference, used, pairs, best);
        for j in 0..reference.len() {
            if !used[j] && reference[j] == cand[i] {
                used[j] = true;
                pairs.push((i, j));
                go(i + 1, cand, reference, used, pairs, best);
                pairs.pop();
                used[j] = false;
            }
        }
    }
    let mut best = (0, 0);
    go(0, cand, reference, &mut vec![false; reference.len()], &mut Vec::new(), &mut best);
    best
}

/// Corpus consensus score laid out like a spreadsheet: one vocabulary
/// column per n-gram string, dense TF-IDF rows, explicit cosines.
pub fn spreadsheet_cider(examples: &[(Vec<String>, Vec<Vec<String>>)], max_n: usize, smoothed: bool) -> Vec<f64> {
    let big_n = examples.len() as f64;
    let grams = |toks: &[String], n: usize| -> Vec<String> {
        if toks.len() < n {
            return vec![];
        }
        (0..=toks.len() - n).map(|s| toks[s..s + n].join("\u{1}")).collect()
    };
    let mut scores = vec![0.0; examples.len()];
    for n in 1..=max_n {
        let mut vocab: BTreeMap<String, usize> = BTreeMap::new();
        for (c, refs) in examples {
            for g in grams(c, n).into_iter().chain(refs.iter().flat_map(|r| grams(r, n))) {
                let next = vocab.len();
                vocab.entry(g).or_insert(next);
            }
        }
        let mut df = vec![0usize; vocab.len()];
        for (_, refs) in examples {
            for (g, &col) in &vocab {
                if refs.iter().any(|r| grams(r, n).contains(g)) {
                    df[col] += 1;
                }
            }
        }
        let row = |toks: &[String]| -> Vec<f64> {
            let gs = grams(toks, n);
            let mut v = vec![0.0; vocab.len()];
            for (g, &col) in &vocab {
                let tf = gs.iter().filter(|x| *x == g).count() as f64 / gs.len().max(1) as f64;
                let idf = if smoothed {
                    (big_n / (1.0 + df[col] as f64)).ln()
                } else {
                    (big_n / (df[col].max(1) as f64)).ln()
                };
                v[col] = tf * idf;
            }
            v
        };
        for (k, (c, refs)) in examples.iter().enumerate() {
            let vc = row(c);
            let mut acc = 0.0;
            for r in refs {
                let vr = row(r);
                let dot: f64 = vc.iter().zip(&vr).map(|(a, b)| a * b).sum();
                let na: f64 = vc.iter().map(|a| a * a).sum::<f64>().sqrt();
                let nb: f64 = vr.iter().map(|a| a * a).sum::<f64>().sqrt();
                acc += if na > 0.0 && nb > 0.0 { dot / (na * nb) } else { 0.0 };
            }
            scores[k] += acc / refs.len() as f64 / max_n as f64;
        }
    }
    scores
}
