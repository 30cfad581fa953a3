use std::path::{Path, PathBuf};

use serde_json::{Map, Value};

use super::ss8::parse_ss8;
use crate::encoders::AminoAcidSequence;
use crate::error::{Error, ParseError, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QaPair {
    pub question: String,
    pub answer: String,
}

/// One protein with its annotations. `ter_path == None` means tertiary
/// embeddings come from the stub encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct ProteinRecord {
    pub id: String,
    pub sequence: AminoAcidSequence,
    pub ss8: Option<String>,
    pub ter_path: Option<PathBuf>,
    pub description: Option<String>,
    pub qa: Vec<QaPair>,
}

impl ProteinRecord {
    pub fn new(id: &str, residues: &str) -> Result<Self> {
        Ok(ProteinRecord {
            id: id.to_string(),
            sequence: AminoAcidSequence::new(id, residues)?,
            ss8: None,
            ter_path: None,
            description: None,
            qa: Vec::new(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(ss8) = &self.ss8 {
            if ss8.len() != self.sequence.len() {
                return Err(Error::contract(format!(
                    "record `{}`: ss8 has {} labels for {} residues",
                    self.id,
                    ss8.len(),
                    self.sequence.len()
                )));
            }
        }
        if self.qa.iter().any(|p| p.question.is_empty() || p.answer.is_empty()) {
            return Err(Error::contract(format!("record `{}` has an empty question or answer", self.id)));
        }
        Ok(())
    }
}

/// Reads a line-delimited instruction file. Blank lines are skipped.
pub fn load_instruction_file(path: impl AsRef<Path>) -> Result<Vec<ProteinRecord>> {
    let text = std::fs::read_to_string(path)?;
    parse_instruction_lines(&text)
}

pub fn parse_instruction_lines(text: &str) -> Result<Vec<ProteinRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_line(i + 1, line)?);
    }
    Ok(out)
}

fn parse_line(line: usize, text: &str) -> Result<ProteinRecord> {
    let value: Value = serde_json::from_str(text).map_err(|e| ParseError::field(line, "record", e.to_string()))?;
    let Value::Object(obj) = value else {
        return Err(ParseError::field(line, "record", "expected an object").into());
    };
    const KNOWN: [&str; 6] = ["id", "sequence", "ss8", "ter_path", "description", "qa"];
    if let Some(k) = obj.keys().find(|k| !KNOWN.contains(&k.as_str())) {
        return Err(ParseError::field(line, k.as_str(), "unknown field").into());
    }

    let id = required_str(&obj, line, "id")?;
    if id.is_empty() {
        return Err(ParseError::field(line, "id", "must not be empty").into());
    }
    let residues = required_str(&obj, line, "sequence")?;
    let sequence = AminoAcidSequence::new(id, residues).map_err(|e| ParseError::field(line, "sequence", e.to_string()))?;

    let ss8 = match optional_str(&obj, line, "ss8")? {
        Some(s) => {
            let s = parse_ss8(s).map_err(|e| ParseError::field(line, "ss8", e.to_string()))?;
            if s.len() != sequence.len() {
                return Err(ParseError::field(
                    line,
                    "ss8",
                    format!("{} labels for {} residues", s.len(), sequence.len()),
                )
                .into());
            }
            Some(s)
        }
        None => None,
    };
    let ter_path = optional_str(&obj, line, "ter_path")?.map(PathBuf::from);
    let description = optional_str(&obj, line, "description")?.map(str::to_string);

    let mut qa = Vec::new();
    match obj.get("qa") {
        None | Some(Value::Null) => {}
        Some(Value::Array(items)) => {
            for (j, item) in items.iter().enumerate() {
                let Value::Object(pair) = item else {
                    return Err(ParseError::field(line, format!("qa[{j}]"), "expected an object").into());
                };
                let q = nonempty(pair, line, &format!("qa[{j}]"), "q")?;
                let a = nonempty(pair, line, &format!("qa[{j}]"), "a")?;
                qa.push(QaPair {
                    question: q.to_string(),
                    answer: a.to_string(),
                });
            }
        }
        Some(_) => return Err(ParseError::field(line, "qa", "expected an array").into()),
    }

    Ok(ProteinRecord {
        id: id.to_string(),
        sequence,
        ss8,
        ter_path,
        description,
        qa,
    })
}

fn required_str<'a>(obj: &'a Map<String, Value>, line: usize, key: &str) -> Result<&'a str> {
    match obj.get(key) {
        Some(Value::String(s)) => Ok(s),
        Some(_) => Err(ParseError::field(line, key, "expected a string").into()),
        None => Err(ParseError::field(line, key, "missing required field").into()),
    }
}

fn optional_str<'a>(obj: &'a Map<String, Value>, line: usize, key: &str) -> Result<Option<&'a str>> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s)),
        Some(_) => Err(ParseError::field(line, key, "expected a string").into()),
    }
}

fn nonempty<'a>(obj: &'a Map<String, Value>, line: usize, prefix: &str, key: &str) -> Result<&'a str> {
    let field = format!("{prefix}.{key}");
    match obj.get(key) {
        Some(Value::String(s)) if !s.trim().is_empty() => Ok(s),
        Some(Value::String(_)) => Err(ParseError::field(line, field, "must not be empty").into()),
        Some(_) => Err(ParseError::field(line, field, "expected a string").into()),
        None => Err(ParseError::field(line, field, "missing required field").into()),
    }
}

/// Writes records back in the line-delimited schema, fields in a fixed
/// order and optional fields omitted when absent.
pub fn serialize_instruction_lines(records: &[ProteinRecord]) -> String {
    let mut s = String::new();
    for r in records {
        let mut obj = Map::new();
        obj.insert("id".into(), Value::String(r.id.clone()));
        obj.insert("sequence".into(), Value::String(r.sequence.residues().to_string()));
        if let Some(ss8) = &r.ss8 {
            obj.insert("ss8".into(), Value::String(ss8.clone()));
        }
        if let Some(p) = &r.ter_path {
            obj.insert("ter_path".into(), Value::String(p.to_string_lossy().into_owned()));
        }
        if let Some(d) = &r.description {
            obj.insert("description".into(), Value::String(d.clone()));
        }
        let qa = r
            .qa
            .iter()
            .map(|p| {
                let mut m = Map::new();
                m.insert("q".into(), Value::String(p.question.clone()));
                m.insert("a".into(), Value::String(p.answer.clone()));
                Value::Object(m)
            })
            .collect();
        obj.insert("qa".into(), Value::Array(qa));
        s.push_str(&Value::Object(obj).to_string());
        s.push('\n');
    }
    s
}
