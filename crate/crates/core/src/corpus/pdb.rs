use std::collections::HashSet;

use crate::encoders::AminoAcidSequence;
use crate::error::{Error, ParseError, Result};

const THREE_LETTER: [(&str, char); 20] = [
    ("ALA", 'A'),
    ("ARG", 'R'),
    ("ASN", 'N'),
    ("ASP", 'D'),
    ("CYS", 'C'),
    ("GLN", 'Q'),
    ("GLU", 'E'),
    ("GLY", 'G'),
    ("HIS", 'H'),
    ("ILE", 'I'),
    ("LEU", 'L'),
    ("LYS", 'K'),
    ("MET", 'M'),
    ("PHE", 'F'),
    ("PRO", 'P'),
    ("SER", 'S'),
    ("THR", 'T'),
    ("TRP", 'W'),
    ("TYR", 'Y'),
    ("VAL", 'V'),
];

/// Canonical three-letter residue name to one-letter code, 'X' otherwise.
pub fn three_to_one(name: &str) -> char {
    THREE_LETTER
        .iter()
        .find(|(n, _)| *n == name)
        .map(|&(_, c)| c)
        .unwrap_or('X')
}

// Columns are 1-based inclusive in the format description; these are
// 0-based half-open byte ranges.
const RES_NAME: std::ops::Range<usize> = 17..20;
const CHAIN: usize = 21;
const RES_SEQ: std::ops::Range<usize> = 22..26;
const I_CODE: usize = 26;
const X: std::ops::Range<usize> = 30..38;
const Y: std::ops::Range<usize> = 38..46;
const Z: std::ops::Range<usize> = 46..54;

/// Extracts the residue sequence of one chain from ATOM records. One
/// residue per (sequence number, insertion code), in order of first
/// appearance; alternate locations collapse onto the same residue.
pub fn parse_pdb_chain(bytes: &[u8], chain_id: char) -> Result<AminoAcidSequence> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        let line = 1 + bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count();
        ParseError::line(line, "input is not valid UTF-8")
    })?;
    let mut code = None;
    let mut seen = HashSet::new();
    let mut residues = String::new();

    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim_end_matches('\r');
        if line.starts_with("HEADER") && line.len() >= 66 && code.is_none() {
            let id = line[62..66].trim();
            if !id.is_empty() {
                code = Some(id.to_string());
            }
        }
        if !line.starts_with("ATOM  ") {
            continue;
        }
        if !line.is_ascii() {
            return Err(ParseError::line(lineno, "ATOM record contains non-ASCII bytes").into());
        }
        if line.len() < Z.end {
            return Err(ParseError::line(
                lineno,
                format!("ATOM record has {} columns, coordinates need {}", line.len(), Z.end),
            )
            .into());
        }
        let res_seq: i64 = line[RES_SEQ]
            .trim()
            .parse()
            .map_err(|_| ParseError::line(lineno, format!("bad residue sequence number {:?}", &line[RES_SEQ])))?;
        for (range, axis) in [(X, "x"), (Y, "y"), (Z, "z")] {
            line[range.clone()]
                .trim()
                .parse::<f64>()
                .map_err(|_| ParseError::line(lineno, format!("bad {axis} coordinate {:?}", &line[range])))?;
        }
        let chain = line.as_bytes()[CHAIN] as char;
        if chain != chain_id {
            continue;
        }
        let icode = line.as_bytes()[I_CODE] as char;
        if seen.insert((res_seq, icode)) {
            residues.push(three_to_one(line[RES_NAME].trim()));
        }
    }
    if residues.is_empty() {
        return Err(Error::NotFound(format!("chain {chain_id:?} has no ATOM records")));
    }
    let id = format!("{}_{}", code.unwrap_or_else(|| "pdb".to_string()), chain_id);
    AminoAcidSequence::new(id, &residues)
}
