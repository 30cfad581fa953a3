use std::path::{Path, PathBuf};

use log::warn;
use plp_tensor::{Precision, Tensor};

use super::train::{load_align, load_plp, load_tuned, protein_prompts_inputs};
use super::{encode_inputs, prepare, record_inputs, write_atomic, Paths, ProteinInputs};
use crate::align::{cross_level_scores, AlignModel};
use crate::config::{RunConfig, SplitChoice};
use crate::corpus::{parse_fasta, parse_pdb_chain, ProteinRecord, Tokenizer};
use crate::encoders::{save_embeddings, AminoAcidSequence, EncoderKind, ProteinEncoder};
use crate::error::{Error, Result};
use crate::eval::{evaluate_retrieval, rank_by_scores, MetricsReport, PlpMatcher, RetrievalSummary, ScoredExample};
use crate::generation::{assemble_prompt, generate, write_transcripts, Adapter, Decoder, Generation, TranscriptRecord};
use crate::plp::PlpFormer;

/// Every trained model, frozen, plus the encoder and tokenizer.
pub struct Models {
    pub tokenizer: Tokenizer,
    pub encoder: Box<dyn ProteinEncoder>,
    pub plp: PlpFormer,
    pub align: AlignModel,
    pub adapter: Adapter,
    pub decoder: Decoder,
    pub precision: Precision,
}

impl Models {
    pub fn load(cfg: &RunConfig, tokenizer: Tokenizer) -> Result<Models> {
        let (adapter, decoder) = load_tuned(cfg, &tokenizer)?;
        Ok(Models {
            encoder: cfg.encoder.build()?,
            plp: load_plp(cfg, &tokenizer)?,
            align: load_align(cfg)?,
            adapter,
            decoder,
            tokenizer,
            precision: cfg.precision(),
        })
    }

    /// Soft prompts `[2·n_queries × d_lm]` for one protein.
    pub fn prompts(&self, inputs: &ProteinInputs) -> Result<Tensor> {
        let (a, t) = protein_prompts_inputs(&self.plp, &self.align, std::slice::from_ref(inputs), self.precision)?;
        self.adapter.prompts(&a[0], &t[0], self.precision)
    }

    /// Generated answer text and the raw generation.
    pub fn answer(&self, prompts: &Tensor, question: &str) -> Result<(String, Generation)> {
        let q = self.tokenizer.encode(question);
        let prompt = assemble_prompt(prompts.clone(), &q, None, &self.tokenizer)?;
        let c = self.decoder.config();
        let g = generate(&prompt, &self.decoder, &c.mode, c.max_new_tokens, self.precision)?;
        Ok((self.tokenizer.decode_text(&g.tokens), g))
    }
}

fn split_records(prep: &super::Prepared, split: SplitChoice) -> Vec<&ProteinRecord> {
    match split {
        SplitChoice::Train => prep.train_records(),
        SplitChoice::Eval => prep.eval_records(),
        SplitChoice::All => prep.records.iter().collect(),
    }
}

/// Answers every question of the chosen split, scores the answers, runs
/// both retrieval protocols and writes the report and transcripts.
pub fn run_eval(cfg: &RunConfig, split: SplitChoice) -> Result<MetricsReport> {
    let prep = prepare(cfg)?;
    let records = split_records(&prep, split);
    if records.is_empty() {
        return Err(Error::contract(format!("the {split:?} split is empty")));
    }
    let models = Models::load(cfg, prep.tokenizer.clone())?;
    let inputs = records
        .iter()
        .map(|r| record_inputs(models.encoder.as_ref(), cfg, r))
        .collect::<Result<Vec<_>>>()?;

    let mut scored = Vec::new();
    let mut transcripts = Vec::new();
    for (rec, inp) in records.iter().zip(&inputs) {
        if rec.qa.is_empty() {
            continue;
        }
        let prompts = models.prompts(inp)?;
        for qa in &rec.qa {
            let (text, g) = models.answer(&prompts, &qa.question)?;
            transcripts.push(TranscriptRecord {
                protein_id: rec.id.clone(),
                question: qa.question.clone(),
                answer: text.clone(),
                truncated: g.truncated,
            });
            scored.push(ScoredExample {
                id: rec.id.clone(),
                question: qa.question.clone(),
                candidate: text,
                reference: qa.answer.clone(),
            });
        }
    }
    let mut report = MetricsReport::score(&scored, &cfg.eval.meteor, &cfg.eval.cider)?;

    let described: Vec<usize> = (0..records.len())
        .filter(|&i| records[i].description.as_deref().is_some_and(|d| !models.tokenizer.encode(d).is_empty()))
        .collect();
    if !described.is_empty() {
        let e_seq: Vec<Tensor> = described.iter().map(|&i| inputs[i].e_seq.clone()).collect();
        let words: Vec<Vec<usize>> = described
            .iter()
            .map(|&i| models.tokenizer.encode(records[i].description.as_deref().unwrap_or_default()))
            .collect();
        let ids = described.iter().map(|&i| records[i].id.clone()).collect();
        let matcher = PlpMatcher::new(&models.plp, &e_seq, &words, models.precision);
        let index = matcher.index(ids)?;
        let k_rank = cfg.eval.k_rank.min(index.len());
        let (p2t, t2p) = evaluate_retrieval(&index, k_rank, &matcher)?;
        report.retrieval = Some(RetrievalSummary {
            queries: index.len(),
            k_rank,
            protein_to_text: p2t,
            text_to_protein: t2p,
        });
    }
    let (aligned, projected) = protein_prompts_inputs(&models.plp, &models.align, &inputs, models.precision)?;
    report.cross_level = Some(rank_by_scores(&cross_level_scores(&aligned, &projected))?);

    let paths = Paths::new(cfg);
    write_atomic(&paths.transcripts(), write_transcripts(&transcripts).as_bytes())?;
    write_atomic(&paths.report(), report.to_json()?.as_bytes())?;
    Ok(report)
}

/// Reads the first FASTA record, or one chain of a PDB file (chosen by
/// `.pdb`/`.ent` extension).
pub fn read_protein(path: &Path, chain: Option<char>) -> Result<AminoAcidSequence> {
    let bytes = std::fs::read(path).map_err(|e| Error::NotFound(format!("{}: {e}", path.display())))?;
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    if ext == "pdb" || ext == "ent" {
        let chain = chain.ok_or_else(|| Error::Config(format!("{}: PDB input needs a chain id", path.display())))?;
        return parse_pdb_chain(&bytes, chain);
    }
    parse_fasta(&bytes)?
        .into_iter()
        .next()
        .ok_or_else(|| Error::contract(format!("{} contains no sequences", path.display())))
}

/// One protein loaded for questioning.
pub struct ChatSession {
    models: Models,
    cfg: RunConfig,
    prompts: Option<(String, Tensor)>,
}

impl ChatSession {
    pub fn new(cfg: &RunConfig) -> Result<ChatSession> {
        let tok = Tokenizer::load(Paths::new(cfg).tokenizer())?;
        Ok(ChatSession {
            models: Models::load(cfg, tok)?,
            cfg: cfg.clone(),
            prompts: None,
        })
    }

    /// Encodes `seq` (encoder secondary features, no labels) and makes it
    /// the current protein.
    pub fn load_sequence(&mut self, seq: &AminoAcidSequence) -> Result<()> {
        let inputs = encode_inputs(self.models.encoder.as_ref(), &self.cfg, seq, None, None)?;
        self.prompts = Some((seq.id().to_string(), self.models.prompts(&inputs)?));
        Ok(())
    }

    pub fn load_file(&mut self, path: &Path, chain: Option<char>) -> Result<String> {
        let seq = read_protein(path, chain)?;
        self.load_sequence(&seq)?;
        Ok(seq.id().to_string())
    }

    pub fn protein_id(&self) -> Option<&str> {
        self.prompts.as_ref().map(|(id, _)| id.as_str())
    }

    pub fn ask(&self, question: &str) -> Result<String> {
        let (_, prompts) = self
            .prompts
            .as_ref()
            .ok_or_else(|| Error::contract("no protein loaded"))?;
        if self.models.tokenizer.encode(question).is_empty() {
            return Err(Error::contract("question is empty"));
        }
        Ok(self.models.answer(prompts, question)?.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrecomputeInput {
    pub path: PathBuf,
    /// Chain to extract from PDB inputs; FASTA inputs ignore it.
    pub chain: Option<char>,
}

/// Encodes every sequence in `inputs` with the configured stub encoder and
/// writes `<out_dir>/<id>.pemb` plus `manifest.tsv` (`id<TAB>file`). All
/// inputs are parsed before anything is written; the manifest is written
/// last.
pub fn precompute(cfg: &RunConfig, inputs: &[PrecomputeInput], out_dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    if cfg.encoder.kind != EncoderKind::Stub {
        return Err(Error::Config("precompute needs the stub encoder".into()));
    }
    let mut seqs = Vec::new();
    for inp in inputs {
        let bytes = std::fs::read(&inp.path).map_err(|e| Error::NotFound(format!("{}: {e}", inp.path.display())))?;
        let ext = inp.path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
        let parsed = if ext == "pdb" || ext == "ent" {
            let chain = inp
                .chain
                .ok_or_else(|| Error::Config(format!("{}: PDB input needs a chain id", inp.path.display())))?;
            vec![parse_pdb_chain(&bytes, chain)?]
        } else {
            parse_fasta(&bytes)?
        };
        seqs.extend(parsed);
    }
    let mut seen = std::collections::HashSet::new();
    for s in &seqs {
        if !seen.insert(s.id().to_string()) {
            return Err(Error::contract(format!("duplicate protein id `{}`", s.id())));
        }
        if s.id().contains(['/', '\\']) || s.id().starts_with('.') {
            return Err(Error::contract(format!("protein id `{}` cannot name a file", s.id())));
        }
    }
    let encoder = cfg.encoder.build()?;
    std::fs::create_dir_all(out_dir)?;
    let mut manifest = Vec::with_capacity(seqs.len());
    for s in &seqs {
        let window = crate::encoders::trim_window(s.id(), s.len(), cfg.data.max_residues, cfg.seed)?;
        if window.len() < s.len() {
            warn!("{}: trimmed from {} to {} residues", s.id(), s.len(), window.len());
        }
        let trimmed = AminoAcidSequence::new(s.id(), &s.residues()[window])?;
        let emb = encoder.encode(&trimmed)?;
        let file = format!("{}.pemb", s.id());
        save_embeddings(&emb, out_dir.join(&file))?;
        manifest.push((s.id().to_string(), PathBuf::from(file)));
    }
    let text: String = manifest
        .iter()
        .map(|(id, f)| format!("{id}\t{}\n", f.display()))
        .collect();
    write_atomic(&out_dir.join("manifest.tsv"), text.as_bytes())?;
    Ok(manifest)
}
