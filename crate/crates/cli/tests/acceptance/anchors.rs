use plp_tensor::{Precision, Tape, Tensor};
use protchat_core::align::{contrastive_loss, AlignConfig, AlignModel};
use protchat_core::plp::ptc_loss_from_similarity;

use crate::util::{ensure, fail, randn, rng, Outcome};

const TOL: f64 = 1e-6;

fn ptc_uniform() -> Outcome {
    for b in [2usize, 3, 5, 8, 16] {
        for c in [-0.7, 0.0, 0.42, 1.0] {
            let mut tape = Tape::new(Precision::F64);
            let sim = tape.constant(&Tensor::full([b, b], c)).map_err(fail)?;
            let l = ptc_loss_from_similarity(&mut tape, sim, 0.07).map_err(fail)?;
            let got = tape.scalar(l);
            let want = (b as f64).ln();
            ensure!((got - want).abs() < TOL, "PTC with B={b}, s={c}: {got} vs ln B = {want}");
        }
    }
    Ok("PTC = ln B for B in {2,3,5,8,16}".into())
}

fn rows(v: &[f64], n: usize) -> Tensor {
    Tensor::from_rows(&vec![v.to_vec(); n]).unwrap()
}

fn contrastive_anchors() -> Outcome {
    let u = [0.6, -0.8, 0.0];
    for k in 1..=8usize {
        let mut tape = Tape::new(Precision::F64);
        let a = tape.leaf(&rows(&u, 3)).map_err(fail)?;
        let cands: Vec<_> = (0..=k).map(|_| tape.leaf(&rows(&u, 2)).unwrap()).collect();
        let l = contrastive_loss(&mut tape, a, cands[0], &cands[1..], 0.8).map_err(fail)?;
        let want = ((k + 1) as f64).ln();
        ensure!((tape.scalar(l) - want).abs() < TOL, "ties with k={k}: {} vs {want}", tape.scalar(l));
    }
    let neg: Vec<f64> = u.iter().map(|x| -x).collect();
    let mut tape = Tape::new(Precision::F64);
    let a = tape.leaf(&rows(&u, 2)).map_err(fail)?;
    let p = tape.leaf(&rows(&u, 2)).map_err(fail)?;
    let n = tape.leaf(&rows(&neg, 2)).map_err(fail)?;
    let l = contrastive_loss(&mut tape, a, p, &[n], 0.8).map_err(fail)?;
    let l = tape.scalar(l);
    let closed = (1.0 + (-2.5f64).exp()).ln();
    ensure!((l - closed).abs() < TOL, "s+=1, s-=-1: {l} vs ln(1+e^-2.5) = {closed}");
    ensure!((l - 0.0789).abs() < 5e-5, "s+=1, s-=-1: {l} does not round to 0.0789");
    Ok(format!("contrastive = ln(k+1) for k in 1..=8, {l:.6} for the (1, -1, 0.8) case"))
}

fn zero_gate() -> Outcome {
    let mut r = rng(31);
    for precision in [Precision::F64, Precision::F32] {
        let mut m = AlignModel::new(&AlignConfig::default(), 6, 10, 4, 1).map_err(fail)?;
        for p in [&mut m.pcg.conv_weight, &mut m.pcg.conv_bias, &mut m.pcg.w_sec, &mut m.pcg.b] {
            let shape = p.value.shape().to_vec();
            p.value = Tensor::zeros(shape);
        }
        let mut sel = randn(6, 10, &mut r);
        precision.round_slice(sel.data_mut());
        let sec = randn(17, 8, &mut r);
        let out = m.align(&sel, &sec, precision).map_err(fail)?;
        let halved = out.data().iter().zip(sel.data()).all(|(o, s)| *o == 0.5 * s);
        ensure!(halved, "zero-parameter gate does not halve E_seq exactly ({precision:?})");
    }
    Ok("zero gate halves E_seq bit-exactly".into())
}

pub fn run() -> Outcome {
    let parts = [ptc_uniform()?, contrastive_anchors()?, zero_gate()?];
    Ok(parts.join("; "))
}
