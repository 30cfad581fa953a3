use std::path::{Path, PathBuf};

use plp_tensor::{Tensor, TensorError};
use protchat_core::config::RunConfig;
use protchat_core::corpus::serialize_instruction_lines;
use protchat_core::corpus::synthetic::{toy_corpus, ToyCorpusConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Outcome = Result<String, String>;

/// Returns early from a criterion with a formatted failure.
macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}
pub(crate) use ensure;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rows: usize, cols: usize, r: &mut ChaCha8Rng) -> Tensor {
    Tensor::randn([rows, cols], 1.0, r)
}

pub fn tensor_err(e: protchat_core::Error) -> TensorError {
    TensorError::Contract(e.to_string())
}

pub fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

pub fn toy_config_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy.toml")
}

/// Writes a toy instruction file into `dir` and loads the shipped toy
/// config against it, with `sets` applied on top. The resolved config is
/// saved as `dir/run.toml` for the binary.
pub fn toy_run(dir: &Path, n: usize, qa: usize, sets: &[&str]) -> Result<RunConfig, String> {
    let recs = toy_corpus(&ToyCorpusConfig {
        n,
        seed: 5,
        qa_per_protein: qa,
        ..Default::default()
    })
    .map_err(fail)?;
    let data = dir.join("toy.jsonl");
    std::fs::write(&data, serialize_instruction_lines(&recs)).map_err(fail)?;
    let text = std::fs::read_to_string(toy_config_path()).map_err(fail)?;
    let cfg_path = dir.join("run.toml");
    std::fs::write(&cfg_path, text).map_err(fail)?;
    let mut overrides = vec!["data.instructions=\"toy.jsonl\"".to_string(), "output_dir=\"out\"".to_string()];
    overrides.extend(sets.iter().map(|s| s.to_string()));
    let cfg = RunConfig::load(&cfg_path, &overrides).map_err(fail)?;
    std::fs::write(&cfg_path, cfg.to_toml()).map_err(fail)?;
    Ok(cfg)
}

/// Every regular file below `root`, as sorted relative paths.
pub fn files_below(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        let Ok(entries) = std::fs::read_dir(&d) else { continue };
        for e in entries.flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}
