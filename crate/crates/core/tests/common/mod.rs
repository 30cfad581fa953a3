#![allow(dead_code)]

pub mod oracles;

use plp_tensor::Tensor;
use protchat_core::corpus::synthetic::{toy_corpus, ToyCorpusConfig};
use protchat_core::corpus::{ProteinRecord, Tokenizer};
use protchat_core::encoders::{encode_stub, AminoAcidSequence, EncoderSpec, MultiLevelEmbeddings};
use protchat_core::plp::PlpConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn tiny_plp(vocab: usize, c_seq: usize) -> PlpConfig {
    PlpConfig {
        n_queries: 4,
        d_model: 8,
        n_heads: 2,
        n_layers: 2,
        ffn_mult: 2,
        vocab_size: vocab,
        c_seq,
        max_text_len: 8,
        ..PlpConfig::default()
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::randn([rows, cols], 1.0, rng)
}

pub fn random_words(len: usize, vocab: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..len).map(|_| rng.gen_range(9..vocab)).collect()
}

pub fn stub(seq: &str, c_seq: usize, c_ter: usize) -> MultiLevelEmbeddings {
    let s = AminoAcidSequence::new("x", seq).unwrap();
    encode_stub(&s, &EncoderSpec::stub(11, c_seq, c_ter)).unwrap()
}

pub fn corpus(n: usize, seed: u64) -> (Vec<ProteinRecord>, Tokenizer) {
    let recs = toy_corpus(&ToyCorpusConfig {
        n,
        seed,
        qa_per_protein: 1,
        ..Default::default()
    })
    .unwrap();
    let texts: Vec<String> = recs
        .iter()
        .flat_map(|r| {
            let mut v = vec![r.description.clone().unwrap()];
            v.extend(r.qa.iter().flat_map(|p| [p.question.clone(), p.answer.clone()]));
            v
        })
        .collect();
    let tok = Tokenizer::build(texts.iter().map(String::as_str), 500).unwrap();
    (recs, tok)
}

/// Writes a toy instruction file and a small run config into `dir`.
pub fn toy_run(dir: &std::path::Path, n: usize) -> std::path::PathBuf {
    use protchat_core::corpus::serialize_instruction_lines;
    let recs = toy_corpus(&ToyCorpusConfig {
        n,
        seed: 5,
        qa_per_protein: 2,
        ..Default::default()
    })
    .unwrap();
    std::fs::write(dir.join("toy.jsonl"), serialize_instruction_lines(&recs)).unwrap();
    let cfg = r#"version = 1
seed = 3
output_dir = "out"

[data]
instructions = "toy.jsonl"
eval_count = 2
max_vocab = 200

[encoder]
seed = 11
c_seq = 16
c_ter = 8

[plp]
n_queries = 4
d_model = 16
n_heads = 2
n_layers = 1
ffn_mult = 2
max_text_len = 16

[decoder]
d_lm = 16
n_layers = 1
n_heads = 2
ffn_mult = 2
max_seq_len = 48
max_new_tokens = 8

[pretrain]
steps = 6
batch_size = 4
peak_lr = 1e-3
min_lr = 1e-4
warmup = 2
checkpoint_every = 3

[alignment]
steps = 6
batch_size = 4
peak_lr = 1e-3
min_lr = 1e-4
warmup = 2
checkpoint_every = 3

[tune]
steps = 6
batch_size = 4
peak_lr = 1e-3
min_lr = 1e-4
warmup = 2
checkpoint_every = 3

[eval]
k_rank = 4
"#.to_string();
    let path = dir.join("run.toml");
    std::fs::write(&path, cfg).unwrap();
    path
}
