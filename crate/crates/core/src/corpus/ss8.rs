use crate::error::{ParseError, Result};

pub const SS8_ALPHABET: &[u8; 8] = b"HGIEBTSC";

/// Validates an 8-class secondary-structure string; '-' is read as coil.
pub fn parse_ss8(s: &str) -> Result<String> {
    let mut out = String::with_capacity(s.len());
    for (index, ch) in s.chars().enumerate() {
        match ch {
            '-' => out.push('C'),
            c if c.is_ascii() && SS8_ALPHABET.contains(&(c as u8)) => out.push(c),
            c => {
                return Err(ParseError::Index {
                    index,
                    msg: format!("invalid secondary-structure label {c:?}"),
                }
                .into())
            }
        }
    }
    Ok(out)
}
