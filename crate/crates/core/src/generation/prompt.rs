use plp_tensor::Tensor;

use crate::corpus::Tokenizer;
use crate::error::{Error, Result};

pub const PROMPT_MAGIC: &[u8; 4] = b"PRSQ";
const PROMPT_VERSION: u32 = 1;

/// Positions of the decoder input stream
/// `<Protein> prompts </Protein> question answer`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StreamLayout {
    pub n_prompts: usize,
    pub question_len: usize,
    pub answer: Vec<usize>,
}

impl StreamLayout {
    pub fn new(n_prompts: usize, question_len: usize, answer: &[usize]) -> Self {
        StreamLayout {
            n_prompts,
            question_len,
            answer: answer.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        2 + self.n_prompts + self.question_len + self.answer.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn question_start(&self) -> usize {
        2 + self.n_prompts
    }

    pub fn answer_start(&self) -> usize {
        self.question_start() + self.question_len
    }

    /// True at answer positions: the tokens the objective scores.
    pub fn loss_mask(&self) -> Vec<bool> {
        let a = self.answer_start();
        (0..self.len()).map(|p| p >= a).collect()
    }

    /// Per-position next-token target; only positions whose successor is
    /// an answer token have one.
    pub fn loss_targets(&self) -> Vec<Option<usize>> {
        let a = self.answer_start();
        (0..self.len())
            .map(|p| (p + 1 >= a && p + 1 < self.len()).then(|| self.answer[p + 1 - a]))
            .collect()
    }
}

/// Soft prompts plus question (and, for training, answer) tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptSequence {
    pub protein_prompts: Tensor,
    pub question: Vec<usize>,
    pub answer: Vec<usize>,
}

/// Checks the pieces and builds the sequence. The marker tokens must be
/// reserved in `tok`.
pub fn assemble_prompt(
    protein_prompts: Tensor,
    question: &[usize],
    answer: Option<&[usize]>,
    tok: &Tokenizer,
) -> Result<PromptSequence> {
    tok.special_id("<Protein>")?;
    tok.special_id("</Protein>")?;
    if question.is_empty() {
        return Err(Error::contract("question must not be empty"));
    }
    if protein_prompts.rank() != 2 || protein_prompts.rows() == 0 || !protein_prompts.rows().is_multiple_of(2) {
        return Err(Error::contract(format!(
            "soft prompts must be an even, non-zero number of rows, got {:?}",
            protein_prompts.shape()
        )));
    }
    let answer = answer.unwrap_or(&[]);
    for &id in question.iter().chain(answer) {
        if id >= tok.vocab_size() {
            return Err(Error::Tokenizer(format!("token id {id} outside the vocabulary")));
        }
        if id == Tokenizer::PROTEIN_OPEN || id == Tokenizer::PROTEIN_CLOSE {
            return Err(Error::Tokenizer("protein markers may not appear in the text".into()));
        }
    }
    Ok(PromptSequence {
        protein_prompts,
        question: question.to_vec(),
        answer: answer.to_vec(),
    })
}

impl PromptSequence {
    pub fn n_prompts(&self) -> usize {
        self.protein_prompts.rows()
    }

    pub fn layout(&self) -> StreamLayout {
        StreamLayout::new(self.n_prompts(), self.question.len(), &self.answer)
    }

    /// Length of the stream before any generated tokens.
    pub fn stream_len(&self) -> usize {
        self.layout().len()
    }

    /// Token ids of the stream with `None` at soft-prompt positions.
    pub fn token_stream(&self) -> Vec<Option<usize>> {
        let mut v = vec![Some(Tokenizer::PROTEIN_OPEN)];
        v.extend(std::iter::repeat_n(None, self.n_prompts()));
        v.push(Some(Tokenizer::PROTEIN_CLOSE));
        v.extend(self.question.iter().map(|&t| Some(t)));
        v.extend(self.answer.iter().map(|&t| Some(t)));
        v
    }

    /// Little-endian container: magic, version, prompt dims and f64 values,
    /// then the question and answer ids.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(PROMPT_MAGIC);
        b.extend_from_slice(&PROMPT_VERSION.to_le_bytes());
        b.extend_from_slice(&(self.protein_prompts.rows() as u64).to_le_bytes());
        b.extend_from_slice(&(self.protein_prompts.cols() as u64).to_le_bytes());
        for &x in self.protein_prompts.data() {
            b.extend_from_slice(&x.to_le_bytes());
        }
        for ids in [&self.question, &self.answer] {
            b.extend_from_slice(&(ids.len() as u64).to_le_bytes());
            for &id in ids.iter() {
                b.extend_from_slice(&(id as u32).to_le_bytes());
            }
        }
        b
    }

    pub fn from_bytes(bytes: &[u8], tok: &Tokenizer) -> Result<Self> {
        let mut r = Reader { b: bytes, pos: 0 };
        if r.take(4, "magic")? != PROMPT_MAGIC {
            return Err(fmt_err("magic", "not a prompt sequence"));
        }
        let version = u32::from_le_bytes(r.take(4, "version")?.try_into().expect("4 bytes"));
        if version != PROMPT_VERSION {
            return Err(fmt_err("version", format!("unsupported version {version}")));
        }
        let rows = r.u64("rows")?;
        let cols = r.u64("cols")?;
        let n = rows.checked_mul(cols).ok_or_else(|| fmt_err("cols", "size overflows"))?;
        let mut data = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            data.push(f64::from_le_bytes(r.take(8, "prompts")?.try_into().expect("8 bytes")));
        }
        let prompts = Tensor::new([rows, cols], data).map_err(|e| fmt_err("prompts", e.to_string()))?;
        let mut lists = Vec::with_capacity(2);
        for field in ["question", "answer"] {
            let len = r.u64(field)?;
            let mut ids = Vec::with_capacity(len.min(1 << 16));
            for _ in 0..len {
                ids.push(u32::from_le_bytes(r.take(4, field)?.try_into().expect("4 bytes")) as usize);
            }
            lists.push(ids);
        }
        if r.pos != bytes.len() {
            return Err(fmt_err("trailer", "bytes after the answer"));
        }
        let answer = lists.pop().expect("two lists");
        let question = lists.pop().expect("two lists");
        assemble_prompt(prompts, &question, Some(&answer), tok)
    }
}

fn fmt_err(field: &'static str, reason: impl Into<String>) -> Error {
    Error::Format {
        field,
        reason: reason.into(),
    }
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.b.len());
        let end = end.ok_or_else(|| fmt_err(field, "input ends early"))?;
        let s = &self.b[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self, field: &'static str) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8, field)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| fmt_err(field, "value does not fit"))
    }
}
