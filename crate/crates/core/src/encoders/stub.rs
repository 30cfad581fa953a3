use plp_tensor::{Precision, Tensor};
use rand_distr::{Distribution, StandardNormal};

use super::{AminoAcidSequence, EncoderKind, EncoderSpec, MultiLevelEmbeddings, ProteinEncoder, C_SEC};
use crate::corpus::SS8_ALPHABET;
use crate::error::{Error, Result};
use crate::rng::{rng, tag};

/// Symmetric mixing weights for offsets -2..=2.
const WINDOW: [f64; 5] = [0.1, 0.2, 0.4, 0.2, 0.1];
const RADIUS: usize = 2;

/// Stand-in for the frozen pretrained encoders: one-hot residues through
/// a seed-derived random projection per level, then a radius-2 window mix.
/// The secondary level is squashed through a sigmoid.
pub struct StubEncoder {
    spec: EncoderSpec,
    projections: [Vec<f64>; 3],
}

impl StubEncoder {
    pub fn new(spec: EncoderSpec) -> Self {
        let widths = [spec.c_seq, C_SEC, spec.c_ter];
        let projections = [0, 1, 2].map(|level| {
            let mut r = rng(spec.seed, tag(["stub.seq", "stub.sec", "stub.ter"][level]));
            (0..21 * widths[level]).map(|_| StandardNormal.sample(&mut r)).collect()
        });
        StubEncoder { spec, projections }
    }

    fn level(&self, idx: &[usize], level: usize, width: usize) -> Vec<f64> {
        let p = &self.projections[level];
        let n = idx.len();
        let mut out = vec![0.0; n * width];
        for i in 0..n {
            let row = &mut out[i * width..(i + 1) * width];
            for (o, &w) in WINDOW.iter().enumerate() {
                let Some(j) = (i + o).checked_sub(RADIUS).filter(|&j| j < n) else { continue };
                let src = &p[idx[j] * width..(idx[j] + 1) * width];
                for (d, s) in row.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
        out
    }
}

impl ProteinEncoder for StubEncoder {
    fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    fn encode(&self, seq: &AminoAcidSequence) -> Result<MultiLevelEmbeddings> {
        let idx = seq.indices();
        let n = idx.len();
        let f32 = Precision::F32;
        let mut e_seq = self.level(&idx, 0, self.spec.c_seq);
        let mut e_sec = self.level(&idx, 1, C_SEC);
        for x in &mut e_sec {
            *x = 1.0 / (1.0 + (-*x).exp());
        }
        let mut e_ter = self.level(&idx, 2, self.spec.c_ter);
        for v in [&mut e_seq, &mut e_sec, &mut e_ter] {
            f32.round_slice(v);
        }
        MultiLevelEmbeddings::new(
            Tensor::new([n, self.spec.c_seq], e_seq)?,
            Tensor::new([n, C_SEC], e_sec)?,
            Tensor::new([n, self.spec.c_ter], e_ter)?,
        )
    }
}

pub fn encode_stub(seq: &AminoAcidSequence, spec: &EncoderSpec) -> Result<MultiLevelEmbeddings> {
    if spec.kind != EncoderKind::Stub {
        return Err(Error::contract("encode_stub needs a stub encoder spec"));
    }
    StubEncoder::new(spec.clone()).encode(seq)
}

/// One-hot features for an 8-class label string, used in place of
/// predicted secondary-structure features when labels are known.
pub fn ss8_features(ss8: &str) -> Result<Tensor> {
    let mut data = vec![0.0; ss8.len() * C_SEC];
    for (i, c) in ss8.bytes().enumerate() {
        let k = SS8_ALPHABET
            .iter()
            .position(|&a| a == c)
            .ok_or_else(|| Error::contract(format!("invalid secondary-structure label at {i}")))?;
        data[i * C_SEC + k] = 1.0;
    }
    Ok(Tensor::new([ss8.len(), C_SEC], data)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_size_dims() {
        let seq = AminoAcidSequence::new("p", "MKV").unwrap();
        let e = encode_stub(&seq, &EncoderSpec::stub(1, 768, 512)).unwrap();
        assert_eq!(e.e_seq.shape(), &[3, 768]);
        assert_eq!(e.e_sec.shape(), &[3, 8]);
        assert_eq!(e.e_ter.shape(), &[3, 512]);
        assert!(e.e_sec.data().iter().all(|&x| x > 0.0 && x < 1.0));
    }

    #[test]
    fn deterministic_and_local() {
        let spec = EncoderSpec::stub(7, 16, 12);
        let a = AminoAcidSequence::new("a", "MKVLAAGHWYCDE").unwrap();
        let b = AminoAcidSequence::new("b", "MKVLAAWHWYCDE").unwrap();
        let ea = encode_stub(&a, &spec).unwrap();
        assert_eq!(ea, encode_stub(&a, &spec).unwrap());
        let eb = encode_stub(&b, &spec).unwrap();
        for (ta, tb) in [(&ea.e_seq, &eb.e_seq), (&ea.e_sec, &eb.e_sec), (&ea.e_ter, &eb.e_ter)] {
            for i in 0..a.len() {
                let same = ta.row(i) == tb.row(i);
                assert_eq!(same, i.abs_diff(6) > 2, "row {i}");
            }
        }
    }

    #[test]
    fn label_features() {
        let f = ss8_features("HC").unwrap();
        assert_eq!(f.row(0), &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(f.get(1, 7), 1.0);
    }
}
