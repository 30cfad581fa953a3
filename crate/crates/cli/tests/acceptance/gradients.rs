use plp_tensor::gradcheck::{GradCheck, GradReport, ParamList};
use plp_tensor::{Module, Result as TResult, Tape, Tensor, Var};
use protchat_core::align::{align_loss, contrastive_loss, pcg_forward, AlignConfig, AlignExample, AlignModel};
use protchat_core::corpus::Tokenizer;
use protchat_core::generation::{lm_loss, Adapter, Decoder, DecoderConfig, TuneExample};
use protchat_core::plp::{plp_losses, PlpConfig, PlpExample, PlpFormer};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::util::{fail, randn, rng, tensor_err, Outcome};

const CHECK: GradCheck = GradCheck {
    h: 1e-4,
    rel_tol: 1e-3,
    abs_floor: 1e-7,
    max_probes: 24,
};
const SEEDS: u64 = 3;

const OPS: [&str; 27] = [
    "matmul",
    "transpose",
    "add",
    "sub",
    "mul",
    "add_row",
    "scale",
    "sigmoid",
    "gelu",
    "softmax_rows",
    "masked_softmax_rows",
    "layer_norm",
    "l2_normalize_rows",
    "cross_entropy",
    "cross_entropy_ignore",
    "bce_with_logits",
    "sum",
    "mean",
    "mean_rows",
    "max_rows",
    "slice_rows",
    "slice_cols",
    "vstack",
    "hstack",
    "gather_rows",
    "conv1d",
    "adaptive_avg_pool_rows",
];

/// Random inputs for one op plus whatever fixed data its loss needs.
struct Case {
    inputs: Vec<Tensor>,
    m: usize,
    n: usize,
    mask: Vec<bool>,
    targets: Vec<Option<usize>>,
    labels: Vec<f64>,
    seed: u64,
}

fn case(op: &str, r: &mut ChaCha8Rng) -> Case {
    let m = r.gen_range(2..5);
    let n = r.gen_range(2..5);
    let k = r.gen_range(2..5);
    let inputs = match op {
        "matmul" => vec![randn(m, k, r), randn(k, n, r)],
        "add" | "sub" | "mul" | "hstack" => vec![randn(m, n, r), randn(m, n, r)],
        "add_row" => vec![randn(m, n, r), Tensor::randn([n], 1.0, r)],
        "layer_norm" => vec![randn(m, n, r), Tensor::randn([n], 1.0, r), Tensor::randn([n], 1.0, r)],
        "bce_with_logits" => vec![Tensor::randn([m], 1.0, r)],
        "vstack" => vec![randn(m, n, r), randn(k, n, r)],
        "conv1d" => vec![randn(m + 3, k, r), Tensor::randn([3, k, n], 1.0, r), Tensor::randn([n], 1.0, r)],
        "adaptive_avg_pool_rows" => vec![randn(m + k, n, r)],
        _ => vec![randn(m, n, r)],
    };
    let mut mask: Vec<bool> = (0..m * n).map(|_| r.gen_bool(0.7)).collect();
    for i in 0..m {
        mask[i * n + r.gen_range(0..n)] = true;
    }
    let targets = (0..m).map(|_| r.gen_bool(0.8).then(|| r.gen_range(0..n))).collect();
    let labels = (0..m).map(|_| if r.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
    Case {
        inputs,
        m,
        n,
        mask,
        targets,
        labels,
        seed: r.gen(),
    }
}

/// Fixed random weights turn a tensor output into a scalar with a
/// non-trivial upstream gradient.
fn weighted_sum(tape: &mut Tape, y: Var, seed: u64) -> TResult<Var> {
    let w = Tensor::randn(tape.shape(y).to_vec(), 1.0, &mut rng(seed));
    let w = tape.constant(&w)?;
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

fn op_loss(op: &str, c: &Case, t: &mut Tape, v: &[Var]) -> TResult<Var> {
    let y = match op {
        "matmul" => t.matmul(v[0], v[1])?,
        "transpose" => t.transpose(v[0])?,
        "add" => t.add(v[0], v[1])?,
        "sub" => t.sub(v[0], v[1])?,
        "mul" => t.mul(v[0], v[1])?,
        "add_row" => t.add_row(v[0], v[1])?,
        "scale" => t.scale(v[0], -1.7)?,
        "sigmoid" => t.sigmoid(v[0])?,
        "gelu" => t.gelu(v[0])?,
        "softmax_rows" => t.softmax_rows(v[0])?,
        "masked_softmax_rows" => t.masked_softmax_rows(v[0], Some(&c.mask))?,
        "layer_norm" => t.layer_norm(v[0], v[1], v[2])?,
        "l2_normalize_rows" => t.l2_normalize_rows(v[0])?,
        "cross_entropy" => return t.cross_entropy(v[0], &c.targets),
        "cross_entropy_ignore" => {
            let ids: Vec<usize> = c.targets.iter().map(|x| x.unwrap_or(0)).collect();
            return t.cross_entropy_ignore(v[0], &ids, Some(0));
        }
        "bce_with_logits" => return t.bce_with_logits(v[0], &c.labels),
        "sum" => {
            let y = t.mul(v[0], v[0])?;
            return t.sum(y);
        }
        "mean" => {
            let y = t.mul(v[0], v[0])?;
            return t.mean(y);
        }
        "mean_rows" => t.mean_rows(v[0])?,
        "max_rows" => t.max_rows(v[0])?,
        "slice_rows" => t.slice_rows(v[0], 1, c.m - 1)?,
        "slice_cols" => t.slice_cols(v[0], 1, c.n - 1)?,
        "vstack" => t.vstack(&[v[0], v[1]])?,
        "hstack" => t.hstack(&[v[0], v[1], v[0]])?,
        "gather_rows" => t.gather_rows(v[0], &[c.m - 1, 0, c.m - 1, 1])?,
        "conv1d" => t.conv1d(v[0], v[1], v[2])?,
        "adaptive_avg_pool_rows" => t.adaptive_avg_pool_rows(v[0], c.m)?,
        other => unreachable!("unknown op {other}"),
    };
    weighted_sum(t, y, c.seed)
}

fn tally(name: &str, rep: GradReport, probes: &mut usize, worst: &mut f64) -> Result<(), String> {
    if !rep.passed() {
        return Err(format!("{name}: {:?}", rep.failures.iter().take(3).collect::<Vec<_>>()));
    }
    *probes += rep.probes;
    *worst = worst.max(rep.max_rel_err);
    Ok(())
}

fn check<M: Module>(m: &mut M, loss: impl Fn(&M, &mut Tape) -> TResult<Var>) -> Result<GradReport, String> {
    CHECK.run(m, loss).map_err(fail)
}

fn tiny_plp(seed: u64) -> Result<PlpFormer, String> {
    let cfg = PlpConfig {
        n_queries: 3,
        d_model: 8,
        n_heads: 2,
        n_layers: 2,
        ffn_mult: 2,
        vocab_size: 24,
        c_seq: 5,
        max_text_len: 8,
        ..PlpConfig::default()
    };
    PlpFormer::new(&cfg, seed).map_err(fail)
}

fn composites(seed: u64, probes: &mut usize, worst: &mut f64) -> Result<(), String> {
    let mut r = rng(500 + seed);
    let b = r.gen_range(2..4);

    let e: Vec<Tensor> = (0..b).map(|_| randn(r.gen_range(2..6), 5, &mut r)).collect();
    let words: Vec<Vec<usize>> = (0..b)
        .map(|_| (0..r.gen_range(1..5)).map(|_| r.gen_range(9..24)).collect())
        .collect();
    let batch: Vec<PlpExample> = e.iter().zip(&words).map(|(e, w)| PlpExample { e_seq: e, words: w }).collect();
    for which in ["PTC", "PTG", "PTM"] {
        let mut m = tiny_plp(seed)?;
        let rep = check(&mut m, |m, tape| {
            let l = plp_losses(tape, m, &batch).map_err(tensor_err)?;
            Ok(match which {
                "PTC" => l.ptc,
                "PTG" => l.ptg,
                _ => l.ptm,
            })
        })?;
        tally(which, rep, probes, worst)?;
    }

    let nq = 3;
    let sel: Vec<Tensor> = (0..b).map(|_| randn(nq, 6, &mut r)).collect();
    let sec: Vec<Tensor> = (0..b).map(|i| randn(3 + i, 8, &mut r)).collect();
    let ter: Vec<Tensor> = (0..b).map(|i| randn(3 + i, 4, &mut r)).collect();
    let mut m = AlignModel::new(&AlignConfig::default(), nq, 6, 4, seed).map_err(fail)?;
    let rep = check(&mut m, |m, tape| {
        let s = tape.constant(&sel[0])?;
        let x = tape.constant(&sec[0])?;
        let y = pcg_forward(tape, &m.pcg, s, x).map_err(tensor_err)?;
        weighted_sum(tape, y, seed)
    })?;
    tally("gated path", rep, probes, worst)?;

    let mut gated_input = ParamList::from_tensors(vec![sel[0].clone()]);
    let pcg = m.pcg.clone();
    let rep = check(&mut gated_input, |l, tape| {
        let v = l.bind(tape)?;
        let x = tape.constant(&sec[0])?;
        let y = pcg_forward(tape, &pcg, v[0], x).map_err(tensor_err)?;
        weighted_sum(tape, y, seed + 1)
    })?;
    tally("gated path input", rep, probes, worst)?;

    let mut free = ParamList::from_tensors((0..4).map(|_| randn(nq, 6, &mut r)).collect());
    let rep = check(&mut free, |l, tape| {
        let v = l.bind(tape)?;
        contrastive_loss(tape, v[0], v[1], &v[2..], 0.8).map_err(tensor_err)
    })?;
    tally("contrastive", rep, probes, worst)?;

    let examples: Vec<AlignExample> = (0..b)
        .map(|i| AlignExample {
            e_seq_sel: &sel[i],
            e_sec: &sec[i],
            e_ter: &ter[i],
        })
        .collect();
    let rep = check(&mut m, |m, tape| align_loss(tape, m, &examples).map_err(tensor_err))?;
    tally("alignment loss", rep, probes, worst)?;

    let dcfg = DecoderConfig {
        d_lm: 8,
        n_layers: 1,
        n_heads: 2,
        ffn_mult: 2,
        vocab_size: 24,
        max_seq_len: 24,
        ..DecoderConfig::default()
    };
    let mut dec = Decoder::new(&dcfg, seed).map_err(fail)?;
    let mut ad = Adapter::new(6, 8, seed + 7);
    let e_align = randn(nq, 6, &mut r);
    let e_ter = randn(nq, 6, &mut r);
    let q: Vec<usize> = (0..3).map(|_| r.gen_range(9..24)).collect();
    let mut a: Vec<usize> = (0..2).map(|_| r.gen_range(9..24)).collect();
    a.push(Tokenizer::EOS);
    let ex = [TuneExample {
        e_align: &e_align,
        e_ter_proj: &e_ter,
        question: &q,
        answer: &a,
    }];
    let rep = check(&mut ad, |ad, tape| lm_loss(tape, &dec, ad, &ex).map_err(tensor_err))?;
    tally("adapter LM loss", rep, probes, worst)?;
    let rep = check(&mut dec, |dec, tape| lm_loss(tape, dec, &ad, &ex).map_err(tensor_err))?;
    tally("decoder LM loss", rep, probes, worst)?;
    Ok(())
}

pub fn run() -> Outcome {
    let (mut probes, mut worst) = (0, 0.0);
    for seed in 0..SEEDS {
        let mut r = rng(seed);
        for op in OPS {
            let c = case(op, &mut r);
            let mut list = ParamList::from_tensors(c.inputs.clone());
            let rep = check(&mut list, |l, tape| {
                let v = l.bind(tape)?;
                op_loss(op, &c, tape, &v)
            })?;
            tally(op, rep, &mut probes, &mut worst)?;
        }
        composites(seed, &mut probes, &mut worst)?;
    }
    Ok(format!(
        "{} ops and 9 composite losses over {SEEDS} seeds, {probes} probes, max rel err {worst:.1e}",
        OPS.len()
    ))
}
