use plp_tensor::{Precision, Tape, Tensor};
use protchat_core::corpus::Tokenizer;
use protchat_core::generation::{Decoder, DecoderConfig};
use protchat_core::plp::{AttentionMaskMode, PlpConfig, PlpFormer};
use rand::Rng;

use crate::util::{ensure, fail, randn, rng, Outcome};

const SEEDS: u64 = 20;
const VOCAB: usize = 30;
const NQ: usize = 4;
const D: usize = 8;

type Rows = Vec<Vec<f64>>;

fn plp(seed: u64) -> Result<PlpFormer, String> {
    let cfg = PlpConfig {
        n_queries: NQ,
        d_model: D,
        n_heads: 2,
        n_layers: 2,
        ffn_mult: 2,
        vocab_size: VOCAB,
        c_seq: 6,
        max_text_len: 12,
        ..PlpConfig::default()
    };
    PlpFormer::new(&cfg, seed).map_err(fail)
}

fn forward(m: &PlpFormer, e: &Tensor, text: &[usize], mode: AttentionMaskMode) -> Result<(Rows, Rows), String> {
    let mut tape = Tape::new(Precision::F64);
    let ctx = m.encode_protein(&mut tape, e).map_err(fail)?;
    let (q, t) = m.forward_pair(&mut tape, &ctx, text, mode).map_err(fail)?;
    let rows = |v| tape.data(v).chunks(D).map(<[f64]>::to_vec).collect::<Rows>();
    Ok((rows(q), rows(t)))
}

fn max_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Perturbs the protein, one text token, and the padding, and checks that
/// only allowed attention paths carry influence.
fn plp_case(seed: u64, mode: AttentionMaskMode) -> Result<usize, String> {
    let m = plp(seed)?;
    let mut r = rng(1000 + seed);
    let n = r.gen_range(3..10);
    let e = randn(n, 6, &mut r);
    let e2 = randn(n, 6, &mut r);
    let lead = if mode == AttentionMaskMode::MultimodalCausal { Tokenizer::DEC } else { Tokenizer::CLS };
    let len = r.gen_range(3..8);
    let mut text = vec![lead];
    text.extend((1..len).map(|_| r.gen_range(9..VOCAB)));
    let n_pad = r.gen_range(1..4);
    let mut padded = text.clone();
    padded.extend(std::iter::repeat_n(Tokenizer::PAD, n_pad));

    let (q, t) = forward(&m, &e, &padded, mode)?;
    let mut checks = 0;

    let (_, t_p) = forward(&m, &e2, &padded, mode)?;
    let text_moved = max_diff(&t[..len], &t_p[..len]) > 0.0;
    match mode {
        AttentionMaskMode::Unimodal => ensure!(!text_moved, "seed {seed} {mode:?}: protein reached the text"),
        _ => ensure!(text_moved, "seed {seed} {mode:?}: protein never reached the text"),
    }
    checks += 1;

    let j = r.gen_range(0..len);
    let mut changed = padded.clone();
    changed[j] = if changed[j] == VOCAB - 1 { 9 } else { (changed[j] + 1).max(9) };
    let (q_c, t_c) = forward(&m, &e, &changed, mode)?;
    let queries_moved = max_diff(&q, &q_c) > 0.0;
    match mode {
        AttentionMaskMode::Bidirectional => ensure!(queries_moved, "seed {seed}: text never reached the queries"),
        _ => ensure!(!queries_moved, "seed {seed} {mode:?}: text token {j} reached the queries"),
    }
    if mode == AttentionMaskMode::MultimodalCausal {
        ensure!(
            max_diff(&t[..j], &t_c[..j]) == 0.0,
            "seed {seed}: text token {j} reached an earlier position"
        );
    }
    ensure!(max_diff(&t[j..j + 1], &t_c[j..j + 1]) > 0.0, "seed {seed}: token {j} had no effect on itself");
    checks += 1;

    let (q_u, t_u) = forward(&m, &e, &text, mode)?;
    let pad_effect = max_diff(&q, &q_u).max(max_diff(&t[..len], &t_u));
    ensure!(pad_effect <= 1e-12, "seed {seed} {mode:?}: padding changed outputs by {pad_effect:e}");
    checks += 1;
    Ok(checks)
}

fn decoder_case(seed: u64) -> Result<(), String> {
    let cfg = DecoderConfig {
        d_lm: 8,
        n_layers: 2,
        n_heads: 2,
        ffn_mult: 2,
        vocab_size: 20,
        max_seq_len: 16,
        ..DecoderConfig::default()
    };
    let dec = Decoder::new(&cfg, seed).map_err(fail)?;
    let mut r = rng(2000 + seed);
    let t = r.gen_range(4..16);
    let x = randn(t, 8, &mut r);
    let j = r.gen_range(0..t);
    let mut y = x.clone();
    y.data_mut()[j * 8 + r.gen_range(0..8)] += 1.0;
    let logits = |x: &Tensor| -> Result<Vec<f64>, String> {
        let mut tape = Tape::new(Precision::F64);
        let v = tape.leaf(x).map_err(fail)?;
        let l = dec.forward(&mut tape, v).map_err(fail)?;
        Ok(tape.data(l).to_vec())
    };
    let (a, b) = (logits(&x)?, logits(&y)?);
    ensure!(a[..j * 20] == b[..j * 20], "seed {seed}: decoder position {j} reached an earlier position");
    ensure!(a[j * 20..(j + 1) * 20] != b[j * 20..(j + 1) * 20], "seed {seed}: position {j} had no effect on itself");
    Ok(())
}

pub fn run() -> Outcome {
    let mut checks = 0;
    for mode in AttentionMaskMode::ALL {
        for seed in 0..SEEDS {
            checks += plp_case(seed, mode)?;
        }
    }
    for seed in 0..SEEDS {
        decoder_case(seed)?;
        checks += 1;
    }
    Ok(format!("{checks} perturbation checks over 3 masks and the decoder, {SEEDS} seeds each"))
}
