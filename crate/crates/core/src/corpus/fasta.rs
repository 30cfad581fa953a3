use crate::encoders::{residue_index, AminoAcidSequence};
use crate::error::{ParseError, Result};

const LINE_WIDTH: usize = 60;

/// Parses FASTA text. Header lines start with '>', the id is the first
/// whitespace-delimited token after it, sequence lines are concatenated and
/// uppercased, blank lines are skipped.
pub fn parse_fasta(bytes: &[u8]) -> Result<Vec<AminoAcidSequence>> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        let line = 1 + bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count();
        ParseError::line(line, "input is not valid UTF-8")
    })?;
    let mut out = Vec::new();
    // (id, header line, residues)
    let mut current: Option<(String, usize, String)> = None;

    let finish = |cur: Option<(String, usize, String)>, out: &mut Vec<AminoAcidSequence>| -> Result<()> {
        if let Some((id, line, residues)) = cur {
            if residues.is_empty() {
                return Err(ParseError::line(line, format!("record `{id}` has an empty sequence")).into());
            }
            out.push(AminoAcidSequence::new(id, &residues)?);
        }
        Ok(())
    };

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('>') {
            finish(current.take(), &mut out)?;
            let id = header.split_whitespace().next().unwrap_or("");
            if id.is_empty() {
                return Err(ParseError::line(lineno, "header has no identifier").into());
            }
            current = Some((id.to_string(), lineno, String::new()));
            continue;
        }
        let Some((_, _, residues)) = current.as_mut() else {
            return Err(ParseError::line(lineno, "sequence data before the first header").into());
        };
        for ch in line.chars() {
            if ch.is_whitespace() {
                continue;
            }
            let up = ch.to_ascii_uppercase();
            if !up.is_ascii() || residue_index(up as u8).is_none() {
                return Err(ParseError::line(lineno, format!("invalid residue {ch:?}")).into());
            }
            residues.push(up);
        }
    }
    finish(current, &mut out)?;
    Ok(out)
}

pub fn serialize_fasta(seqs: &[AminoAcidSequence]) -> String {
    let mut s = String::new();
    for seq in seqs {
        s.push('>');
        s.push_str(seq.id());
        s.push('\n');
        let r = seq.residues().as_bytes();
        for chunk in r.chunks(LINE_WIDTH) {
            s.push_str(std::str::from_utf8(chunk).expect("ascii"));
            s.push('\n');
        }
    }
    s
}
