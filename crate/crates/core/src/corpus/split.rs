use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub eval: Vec<String>,
    pub seed: u64,
}

/// Seeded shuffle, then the first `eval_count` ids go to eval. Both parts
/// keep corpus order so downstream iteration does not depend on the shuffle.
pub fn split_dataset(ids: &[String], eval_count: usize, seed: u64) -> Result<DatasetSplit> {
    if eval_count > 0 && eval_count >= ids.len() {
        return Err(Error::contract(format!(
            "eval_count {eval_count} must be smaller than the corpus ({} items)",
            ids.len()
        )));
    }
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.shuffle(&mut crate::rng::rng(seed, crate::rng::tag("split")));
    let mut is_eval = vec![false; ids.len()];
    for &i in &order[..eval_count] {
        is_eval[i] = true;
    }
    let (mut train, mut eval) = (Vec::new(), Vec::new());
    for (id, e) in ids.iter().zip(is_eval) {
        if e {
            eval.push(id.clone());
        } else {
            train.push(id.clone());
        }
    }
    Ok(DatasetSplit { train, eval, seed })
}
