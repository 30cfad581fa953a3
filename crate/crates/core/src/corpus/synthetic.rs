//! Seeded toy corpora with unique descriptions and templated Q&A pairs.

use rand::seq::SliceRandom;
use rand::Rng;

use super::records::{ProteinRecord, QaPair};
use super::ss8::SS8_ALPHABET;
use crate::encoders::{AminoAcidSequence, ALPHABET};
use crate::error::{Error, Result};

const FAMILIES: [&str; 12] = [
    "kinase",
    "protease",
    "transporter",
    "ligase",
    "hydrolase",
    "oxidase",
    "reductase",
    "isomerase",
    "synthase",
    "channel",
    "receptor",
    "chaperone",
];
const LIGANDS: [&str; 12] = [
    "atp", "zinc", "heme", "calcium", "dna", "rna", "nadh", "iron", "copper", "glucose", "lipid", "actin",
];
const LOCATIONS: [&str; 8] = [
    "membrane",
    "nucleus",
    "cytoplasm",
    "mitochondrion",
    "ribosome",
    "golgi",
    "periplasm",
    "chloroplast",
];

pub const DESCRIBE_QUESTION: &str = "Describe the function of this protein";

#[derive(Clone, Debug)]
pub struct ToyCorpusConfig {
    pub n: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// 1..=3 templated pairs per protein.
    pub qa_per_protein: usize,
    pub seed: u64,
}

impl Default for ToyCorpusConfig {
    fn default() -> Self {
        ToyCorpusConfig {
            n: 32,
            min_len: 24,
            max_len: 48,
            qa_per_protein: 1,
            seed: 0,
        }
    }
}

/// Generates `config.n` proteins with random residues, blocky 8-class
/// labels, and distinct (family, ligand, location) descriptions.
pub fn toy_corpus(config: &ToyCorpusConfig) -> Result<Vec<ProteinRecord>> {
    let max_n = FAMILIES.len() * LIGANDS.len() * LOCATIONS.len();
    if config.n > max_n {
        return Err(Error::contract(format!("toy corpus holds at most {max_n} proteins")));
    }
    if config.min_len == 0 || config.min_len > config.max_len {
        return Err(Error::contract("toy corpus length range is empty"));
    }
    if !(1..=3).contains(&config.qa_per_protein) {
        return Err(Error::contract("qa_per_protein must be 1, 2 or 3"));
    }
    let mut rng = crate::rng::rng(config.seed, crate::rng::tag("toy-corpus"));
    let mut triples: Vec<usize> = (0..max_n).collect();
    triples.shuffle(&mut rng);

    let mut out = Vec::with_capacity(config.n);
    for (i, &t) in triples.iter().take(config.n).enumerate() {
        let family = FAMILIES[t % FAMILIES.len()];
        let ligand = LIGANDS[(t / FAMILIES.len()) % LIGANDS.len()];
        let location = LOCATIONS[t / (FAMILIES.len() * LIGANDS.len())];

        let n = rng.gen_range(config.min_len..=config.max_len);
        let residues: String = (0..n).map(|_| ALPHABET[rng.gen_range(0..20)] as char).collect();
        let mut ss8 = String::with_capacity(n);
        while ss8.len() < n {
            let label = SS8_ALPHABET[rng.gen_range(0..SS8_ALPHABET.len())] as char;
            let run = rng.gen_range(1..=6).min(n - ss8.len());
            ss8.extend(std::iter::repeat_n(label, run));
        }

        let id = format!("toy{i:03}");
        let description = format!("a {family} that binds {ligand} in the {location} .");
        let mut qa = vec![QaPair {
            question: DESCRIBE_QUESTION.to_string(),
            answer: description.clone(),
        }];
        if config.qa_per_protein >= 2 {
            qa.push(QaPair {
                question: "What does this protein bind ?".to_string(),
                answer: ligand.to_string(),
            });
        }
        if config.qa_per_protein >= 3 {
            qa.push(QaPair {
                question: "Where is this protein located ?".to_string(),
                answer: format!("the {location}"),
            });
        }
        out.push(ProteinRecord {
            sequence: AminoAcidSequence::new(id.clone(), &residues)?,
            id,
            ss8: Some(ss8),
            ter_path: None,
            description: Some(description),
            qa,
        });
    }
    Ok(out)
}
