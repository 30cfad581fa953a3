use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How precision and recall combine.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FMean {
    /// `(α²+1)·P / (R + α·P)`. At P = R = 1 this is `(α²+1)/(1+α)`, and it
    /// exceeds 1 when recall is much lower than precision.
    Printed,
    /// `P·R / (α·P + (1−α)·R)`, which lies in [0, 1].
    Harmonic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeteorConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub theta: f64,
    pub f_mean: FMean,
    /// Cap on alignment search nodes; past it the best alignment found so
    /// far is used.
    pub search_budget: usize,
}

impl Default for MeteorConfig {
    fn default() -> Self {
        MeteorConfig {
            alpha: 0.9,
            gamma: 0.5,
            theta: 3.0,
            f_mean: FMean::Printed,
            search_budget: 200_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeteorScore {
    pub score: f64,
    pub matches: usize,
    pub chunks: usize,
    pub precision: f64,
    pub recall: f64,
    pub penalty: f64,
}

/// Exact unigram alignment with the most matches and, among those, the
/// fewest chunks (runs contiguous in both strings). Returns
/// (matches, chunks).
pub fn meteor_alignment<T: Eq + Hash>(candidate: &[T], reference: &[T], budget: usize) -> (usize, usize) {
    let mut rc: HashMap<&T, usize> = HashMap::new();
    for t in reference {
        *rc.entry(t).or_default() += 1;
    }
    let mut cc: HashMap<&T, usize> = HashMap::new();
    for t in candidate {
        *cc.entry(t).or_default() += 1;
    }
    let target: HashMap<&T, usize> = cc.iter().map(|(k, &c)| (*k, c.min(rc.get(k).copied().unwrap_or(0)))).collect();
    let max_matches: usize = target.values().sum();
    if max_matches == 0 {
        return (0, 0);
    }
    // remaining[i][word] = occurrences of candidate[i]'s word at positions ≥ i
    let mut remaining = vec![0usize; candidate.len()];
    let mut seen: HashMap<&T, usize> = HashMap::new();
    for i in (0..candidate.len()).rev() {
        let e = seen.entry(&candidate[i]).or_default();
        *e += 1;
        remaining[i] = *e;
    }
    let positions: Vec<Vec<usize>> = candidate
        .iter()
        .map(|t| (0..reference.len()).filter(|&j| reference[j] == *t).collect())
        .collect();

    struct Search<'a, T> {
        candidate: &'a [T],
        positions: Vec<Vec<usize>>,
        remaining: Vec<usize>,
        target: HashMap<&'a T, usize>,
        used: Vec<bool>,
        matched: HashMap<&'a T, usize>,
        best: usize,
        nodes: usize,
        budget: usize,
    }

    impl<'a, T: Eq + Hash> Search<'a, T> {
        fn run(&mut self, i: usize, last: Option<(usize, usize)>, chunks: usize) {
            self.nodes += 1;
            if chunks >= self.best || (self.nodes > self.budget && self.best != usize::MAX) {
                return;
            }
            if i == self.candidate.len() {
                self.best = chunks;
                return;
            }
            let w = &self.candidate[i];
            let m = self.matched.get(w).copied().unwrap_or(0);
            let t = self.target.get(w).copied().unwrap_or(0);
            let unused = self.positions[i].iter().filter(|&&j| !self.used[j]).count();
            if m < t && unused > 0 {
                // try the continuation of the current chunk first
                let mut order: Vec<usize> = self.positions[i].iter().copied().filter(|&j| !self.used[j]).collect();
                if let Some((pi, pj)) = last {
                    if pi + 1 == i {
                        if let Some(k) = order.iter().position(|&j| j == pj + 1) {
                            order[..=k].rotate_right(1);
                        }
                    }
                }
                for j in order {
                    let extends = matches!(last, Some((pi, pj)) if pi + 1 == i && pj + 1 == j);
                    self.used[j] = true;
                    *self.matched.entry(w).or_default() += 1;
                    self.run(i + 1, Some((i, j)), chunks + usize::from(!extends));
                    *self.matched.get_mut(w).expect("inserted") -= 1;
                    self.used[j] = false;
                }
            }
            // skipping keeps the maximum reachable only if later copies can
            // still fill this word's quota
            let later = self.remaining[i] - 1;
            if m + later >= t {
                self.run(i + 1, last, chunks);
            }
        }
    }

    let mut s = Search {
        candidate,
        positions,
        remaining,
        target,
        used: vec![false; reference.len()],
        matched: HashMap::new(),
        best: usize::MAX,
        nodes: 0,
        budget,
    };
    s.run(0, None, 0);
    (max_matches, s.best)
}

/// `(1 − γ·(chunks/matches)^θ) · F`, zero without matches.
pub fn meteor_like<T: Eq + Hash>(candidate: &[T], reference: &[T], config: &MeteorConfig) -> Result<MeteorScore> {
    if !(config.alpha > 0.0) || config.gamma < 0.0 || config.theta < 0.0 {
        return Err(Error::contract("METEOR parameters must satisfy α > 0, γ ≥ 0, θ ≥ 0"));
    }
    let (matches, chunks) = meteor_alignment(candidate, reference, config.search_budget);
    if matches == 0 {
        return Ok(MeteorScore {
            score: 0.0,
            matches: 0,
            chunks: 0,
            precision: 0.0,
            recall: 0.0,
            penalty: 0.0,
        });
    }
    let p = matches as f64 / candidate.len() as f64;
    let r = matches as f64 / reference.len() as f64;
    let a = config.alpha;
    let f = match config.f_mean {
        FMean::Printed => (a * a + 1.0) * p / (r + a * p),
        FMean::Harmonic => p * r / (a * p + (1.0 - a) * r),
    };
    let penalty = config.gamma * (chunks as f64 / matches as f64).powf(config.theta);
    Ok(MeteorScore {
        score: (1.0 - penalty) * f,
        matches,
        chunks,
        precision: p,
        recall: r,
        penalty,
    })
}
