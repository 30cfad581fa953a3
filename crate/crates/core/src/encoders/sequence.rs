use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};

/// One-letter codes in embedding order; index 20 is the unknown residue.
pub const ALPHABET: &[u8; 21] = b"ACDEFGHIKLMNPQRSTVWYX";

/// Position of a residue letter in [`ALPHABET`].
pub fn residue_index(c: u8) -> Option<usize> {
    ALPHABET.iter().position(|&a| a == c)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AminoAcidSequence {
    id: String,
    residues: String,
}

impl AminoAcidSequence {
    /// Validates a non-empty residue string over the 21-letter alphabet.
    /// Lowercase letters are accepted and uppercased.
    pub fn new(id: impl Into<String>, residues: &str) -> Result<Self> {
        if residues.is_empty() {
            return Err(Error::contract("amino-acid sequence is empty"));
        }
        let mut out = String::with_capacity(residues.len());
        for (position, ch) in residues.chars().enumerate() {
            let up = ch.to_ascii_uppercase();
            if !up.is_ascii() || residue_index(up as u8).is_none() {
                return Err(Error::Alphabet { ch, position });
            }
            out.push(up);
        }
        Ok(AminoAcidSequence {
            id: id.into(),
            residues: out,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn residues(&self) -> &str {
        &self.residues
    }

    pub fn len(&self) -> usize {
        self.residues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residues.is_empty()
    }

    /// Alphabet indices of the residues.
    pub fn indices(&self) -> Vec<usize> {
        self.residues
            .bytes()
            .map(|b| residue_index(b).expect("validated at construction"))
            .collect()
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }
}

impl fmt::Display for AminoAcidSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({} residues)", self.id, self.len())
    }
}

/// Returns `seq` unchanged when it fits, otherwise a contiguous window of
/// exactly `max_len` residues starting at a random offset drawn from `rng`.
pub fn trim_sequence<R: Rng + ?Sized>(seq: &AminoAcidSequence, max_len: usize, rng: &mut R) -> Result<AminoAcidSequence> {
    if max_len == 0 {
        return Err(Error::contract("trim length must be at least 1"));
    }
    let n = seq.len();
    if n <= max_len {
        return Ok(seq.clone());
    }
    let start = rng.gen_range(0..=n - max_len);
    Ok(AminoAcidSequence {
        id: seq.id.clone(),
        residues: seq.residues[start..start + max_len].to_string(),
    })
}

/// Seeded form of [`trim_sequence`]; the window depends on the seed and the
/// sequence id only.
pub fn trim_sequence_seeded(seq: &AminoAcidSequence, max_len: usize, seed: u64) -> Result<AminoAcidSequence> {
    let w = trim_window(&seq.id, seq.len(), max_len, seed)?;
    Ok(AminoAcidSequence {
        id: seq.id.clone(),
        residues: seq.residues[w].to_string(),
    })
}

/// Residue range kept by [`trim_sequence_seeded`], for trimming per-residue
/// annotations the same way.
pub fn trim_window(id: &str, len: usize, max_len: usize, seed: u64) -> Result<std::ops::Range<usize>> {
    if max_len == 0 {
        return Err(Error::contract("trim length must be at least 1"));
    }
    if len <= max_len {
        return Ok(0..len);
    }
    let mut rng = crate::rng::rng(seed, crate::rng::tag(id));
    let start = rng.gen_range(0..=len - max_len);
    Ok(start..start + max_len)
}
