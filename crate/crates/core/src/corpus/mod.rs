//! Parsers and dataset plumbing: FASTA, PDB chains, 8-class secondary
//! structure strings, line-delimited instruction records, the word-level
//! tokenizer and train/eval splits.

mod fasta;
mod pdb;
mod records;
mod split;
mod ss8;
pub mod synthetic;
mod tokenizer;

pub use fasta::{parse_fasta, serialize_fasta};
pub use pdb::{parse_pdb_chain, three_to_one};
pub use records::{load_instruction_file, parse_instruction_lines, serialize_instruction_lines, ProteinRecord, QaPair};
pub use split::{split_dataset, DatasetSplit};
pub use ss8::{parse_ss8, SS8_ALPHABET};
pub use tokenizer::{normalize, normalize_tokens, Tokenizer, SPECIAL_TOKENS};
