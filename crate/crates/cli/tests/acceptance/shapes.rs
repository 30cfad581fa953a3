use plp_tensor::{Precision, Tape};
use protchat_core::align::{AlignConfig, AlignModel};
use protchat_core::corpus::synthetic::DESCRIBE_QUESTION;
use protchat_core::corpus::Tokenizer;
use protchat_core::encoders::{trim_sequence_seeded, AminoAcidSequence, EncoderSpec, ProteinEncoder, StubEncoder, C_SEC};
use protchat_core::generation::{lm_logits, Adapter, Decoder, DecoderConfig, TuneExample};
use protchat_core::plp::{ptm_logit, AttentionMaskMode, PlpConfig, PlpFormer, TextBatch};
use rand::Rng;

use crate::util::{ensure, fail, rng, Outcome};

const N_QUERIES: usize = 32;
const D: usize = 768;
const C_SEQ: usize = 768;
const C_TER: usize = 512;
const TRIM: usize = 3000;

fn expect(what: &str, got: &[usize], want: &[usize]) -> Result<(), String> {
    ensure!(got == want, "{what}: shape {got:?}, expected {want:?}");
    Ok(())
}

pub fn run() -> Outcome {
    let precision = Precision::F32;
    let tok = Tokenizer::build(["a kinase that binds atp .", DESCRIBE_QUESTION], 100).map_err(fail)?;
    let vocab = tok.vocab_size();
    let encoder = StubEncoder::new(EncoderSpec::stub(1, C_SEQ, C_TER));
    let plp_cfg = PlpConfig {
        n_queries: N_QUERIES,
        d_model: D,
        n_heads: 12,
        vocab_size: vocab,
        c_seq: C_SEQ,
        ..PlpConfig::default()
    };
    let plp = PlpFormer::new(&plp_cfg, 2).map_err(fail)?;
    let align = AlignModel::new(&AlignConfig::default(), N_QUERIES, D, C_TER, 3).map_err(fail)?;
    let dec_cfg = DecoderConfig {
        vocab_size: vocab,
        ..DecoderConfig::default()
    };
    let d_lm = dec_cfg.d_lm;
    let decoder = Decoder::new(&dec_cfg, 4).map_err(fail)?;
    let adapter = Adapter::new(D, d_lm, 5);
    let words = tok.encode("a kinase that binds atp .");
    let question = tok.encode(DESCRIBE_QUESTION);
    let answer = tok.encode_with_eos("a kinase .");

    let mut r = rng(10);
    for (n, kept) in [(1, 1), (100, 100), (TRIM, TRIM), (TRIM + 500, TRIM)] {
        let residues: String = (0..n).map(|_| b"ACDEFGHIKLMNPQRSTVWY"[r.gen_range(0..20)] as char).collect();
        let seq = AminoAcidSequence::new(format!("len{n}"), &residues).map_err(fail)?;
        let seq = trim_sequence_seeded(&seq, TRIM, 0).map_err(fail)?;
        expect("trimmed sequence", &[seq.len()], &[kept])?;

        let emb = encoder.encode(&seq).map_err(fail)?;
        expect("E_seq", emb.e_seq.shape(), &[kept, C_SEQ])?;
        expect("E_sec", emb.e_sec.shape(), &[kept, C_SEC])?;
        expect("E_ter", emb.e_ter.shape(), &[kept, C_TER])?;

        let mut tape = Tape::new(precision);
        let ctx = plp.encode_protein(&mut tape, &emb.e_seq).map_err(fail)?;
        let sel = plp.query_output(&mut tape, &ctx).map_err(fail)?;
        expect("selected E_seq", tape.shape(sel), &[N_QUERIES, D])?;
        let cls = TextBatch::row(Tokenizer::CLS, &words, plp_cfg.max_text_len);
        let (q, t) = plp
            .forward_pair(&mut tape, &ctx, &cls, AttentionMaskMode::Unimodal)
            .map_err(fail)?;
        expect("query outputs", tape.shape(q), &[N_QUERIES, D])?;
        expect("text outputs", tape.shape(t), &[cls.len(), D])?;
        let dec_text = TextBatch::row(Tokenizer::DEC, &words, plp_cfg.max_text_len);
        let (_, t) = plp
            .forward_pair(&mut tape, &ctx, &dec_text, AttentionMaskMode::MultimodalCausal)
            .map_err(fail)?;
        let lm = plp.lm_head.forward(&mut tape, t).map_err(fail)?;
        expect("text logits", tape.shape(lm), &[dec_text.len(), vocab])?;
        let (q, _) = plp
            .forward_pair(&mut tape, &ctx, &cls, AttentionMaskMode::Bidirectional)
            .map_err(fail)?;
        let m = ptm_logit(&mut tape, &plp, q).map_err(fail)?;
        expect("matching logit", tape.shape(m), &[1, 1])?;
        let sel = tape.tensor(sel);

        let e_align = align.align(&sel, &emb.e_sec, precision).map_err(fail)?;
        expect("E_align", e_align.shape(), &[N_QUERIES, D])?;
        let e_ter = align.project(&emb.e_ter, precision).map_err(fail)?;
        expect("projected E_ter", e_ter.shape(), &[N_QUERIES, D])?;

        let prompts = adapter.prompts(&e_align, &e_ter, precision).map_err(fail)?;
        expect("soft prompts", prompts.shape(), &[2 * N_QUERIES, d_lm])?;
        let mut tape = Tape::new(precision);
        let ex = TuneExample {
            e_align: &e_align,
            e_ter_proj: &e_ter,
            question: &question,
            answer: &answer,
        };
        let (logits, targets) = lm_logits(&mut tape, &decoder, &adapter, &ex).map_err(fail)?;
        let stream = 2 * N_QUERIES + 2 + question.len() + answer.len();
        expect("decoder logits", tape.shape(logits), &[stream, vocab])?;
        expect("decoder targets", &[targets.len()], &[stream])?;
        ensure!(tape.data(logits).iter().all(|x| x.is_finite()), "non-finite decoder logits at n={n}");
    }
    Ok(format!(
        "n in {{1, 100, {TRIM}}} (and {} trimmed to {TRIM}): every interface matches, prompts [{}x{d_lm}]",
        TRIM + 500,
        2 * N_QUERIES
    ))
}
