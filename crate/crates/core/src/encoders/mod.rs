//! Frozen per-residue encoders: a deterministic stub and a loader for
//! precomputed embedding files, behind [`ProteinEncoder`].

mod pemb;
mod sequence;
mod stub;

use std::path::PathBuf;

use plp_tensor::Tensor;
use serde::{Deserialize, Serialize};

pub use pemb::{load_embeddings, read_embeddings, save_embeddings, write_embeddings, PEMB_MAGIC, PEMB_VERSION};
pub use sequence::{residue_index, trim_sequence, trim_sequence_seeded, trim_window, AminoAcidSequence, ALPHABET};
pub use stub::{encode_stub, ss8_features, StubEncoder};

use crate::error::{Error, Result};

/// Width of the secondary-structure features (one per 8-class label).
pub const C_SEC: usize = 8;

/// Per-residue embeddings at three levels, all with `n` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiLevelEmbeddings {
    pub e_seq: Tensor,
    pub e_sec: Tensor,
    pub e_ter: Tensor,
}

impl MultiLevelEmbeddings {
    pub fn new(e_seq: Tensor, e_sec: Tensor, e_ter: Tensor) -> Result<Self> {
        let m = MultiLevelEmbeddings { e_seq, e_sec, e_ter };
        m.validate()?;
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.e_seq.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn c_seq(&self) -> usize {
        self.e_seq.cols()
    }

    pub fn c_ter(&self) -> usize {
        self.e_ter.cols()
    }

    pub fn validate(&self) -> Result<()> {
        for (name, t) in [("e_seq", &self.e_seq), ("e_sec", &self.e_sec), ("e_ter", &self.e_ter)] {
            if t.rank() != 2 {
                return Err(Error::contract(format!("{name} must be a matrix, got shape {:?}", t.shape())));
            }
            if !t.is_finite() {
                return Err(Error::contract(format!("{name} has non-finite values")));
            }
        }
        let n = self.e_seq.rows();
        if n == 0 || self.e_sec.rows() != n || self.e_ter.rows() != n {
            return Err(Error::contract(format!(
                "embedding levels disagree on length: {} / {} / {}",
                n,
                self.e_sec.rows(),
                self.e_ter.rows()
            )));
        }
        if self.e_sec.cols() != C_SEC {
            return Err(Error::contract(format!("e_sec must have {C_SEC} columns")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    #[default]
    Stub,
    File,
}

/// Which encoder to use and the embedding widths it must produce.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    pub seed: u64,
    /// Directory holding `<id>.pemb` files (file kind).
    pub path: Option<PathBuf>,
    pub c_seq: usize,
    pub c_ter: usize,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        EncoderSpec {
            kind: EncoderKind::Stub,
            seed: 0,
            path: None,
            c_seq: 768,
            c_ter: 512,
        }
    }
}

impl EncoderSpec {
    pub fn stub(seed: u64, c_seq: usize, c_ter: usize) -> Self {
        EncoderSpec {
            kind: EncoderKind::Stub,
            seed,
            path: None,
            c_seq,
            c_ter,
        }
    }

    pub fn file(path: impl Into<PathBuf>, c_seq: usize, c_ter: usize) -> Self {
        EncoderSpec {
            kind: EncoderKind::File,
            seed: 0,
            path: Some(path.into()),
            c_seq,
            c_ter,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.c_seq == 0 || self.c_ter == 0 {
            return Err(Error::Config("encoder widths must be positive".into()));
        }
        if self.kind == EncoderKind::File {
            match &self.path {
                Some(p) if p.is_dir() => {}
                Some(p) => return Err(Error::Config(format!("encoder path {} is not a directory", p.display()))),
                None => return Err(Error::Config("file encoder needs a path".into())),
            }
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Box<dyn ProteinEncoder>> {
        self.validate()?;
        Ok(match self.kind {
            EncoderKind::Stub => Box::new(StubEncoder::new(self.clone())),
            EncoderKind::File => Box::new(FileEncoder::new(self.clone())),
        })
    }
}

/// A frozen encoder: a pure function of its spec and the sequence.
pub trait ProteinEncoder: Send + Sync {
    fn spec(&self) -> &EncoderSpec;
    fn encode(&self, seq: &AminoAcidSequence) -> Result<MultiLevelEmbeddings>;
}

/// Reads `<dir>/<id>.pemb` and checks it against the spec and sequence.
pub struct FileEncoder {
    spec: EncoderSpec,
}

impl FileEncoder {
    pub fn new(spec: EncoderSpec) -> Self {
        FileEncoder { spec }
    }
}

impl ProteinEncoder for FileEncoder {
    fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    fn encode(&self, seq: &AminoAcidSequence) -> Result<MultiLevelEmbeddings> {
        let dir = self
            .spec
            .path
            .as_ref()
            .ok_or_else(|| Error::Config("file encoder needs a path".into()))?;
        let path = dir.join(format!("{}.pemb", seq.id()));
        if !path.exists() {
            return Err(Error::NotFound(format!("embedding file {}", path.display())));
        }
        let emb = load_embeddings(&path)?;
        if emb.len() != seq.len() || emb.c_seq() != self.spec.c_seq || emb.c_ter() != self.spec.c_ter {
            return Err(Error::contract(format!(
                "{}: embeddings are {}×({},{}) but {} residues with widths ({},{}) were expected",
                path.display(),
                emb.len(),
                emb.c_seq(),
                emb.c_ter(),
                seq.len(),
                self.spec.c_seq,
                self.spec.c_ter
            )));
        }
        Ok(emb)
    }
}
