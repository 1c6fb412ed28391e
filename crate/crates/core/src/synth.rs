//! Synthetic corpora and embeddings for tests, demos and smoke runs.
//!
//! Sentences interleave filler words with entity mentions drawn from a
//! per-type lexicon. Lexicons are disjoint across types and from the filler
//! vocabulary, so every tag is recoverable from the word and its left
//! neighbour.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::{BioTag, Dataset, LabelSchema, Sentence, Token};
use crate::embeddings::{EmbeddingHeader, EmbeddingSequence};
use crate::error::Result;
use crate::seeding::derive_rng;

const FILLER: &[(&str, &str)] = &[
    ("the", "DET"),
    ("a", "DET"),
    ("this", "DET"),
    ("of", "ADP"),
    ("in", "ADP"),
    ("at", "ADP"),
    ("with", "ADP"),
    ("from", "ADP"),
    ("and", "CCONJ"),
    ("or", "CCONJ"),
    ("was", "AUX"),
    ("is", "AUX"),
    ("has", "AUX"),
    ("visited", "VERB"),
    ("praised", "VERB"),
    ("joined", "VERB"),
    ("left", "VERB"),
    ("built", "VERB"),
    ("named", "VERB"),
    ("released", "VERB"),
    ("famous", "ADJ"),
    ("new", "ADJ"),
    ("old", "ADJ"),
    ("local", "ADJ"),
    ("major", "ADJ"),
    ("year", "NOUN"),
    ("city", "NOUN"),
    ("team", "NOUN"),
    ("song", "NOUN"),
    ("report", "NOUN"),
    ("people", "NOUN"),
    ("after", "ADP"),
    ("before", "ADP"),
    ("it", "PRON"),
    ("they", "PRON"),
    ("1984", "NUM"),
    ("2001", "NUM"),
    ("twelve", "NUM"),
];

const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st", "kr", "th"];
const NUCLEI: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou", "ei"];
const CODAS: &[&str] = &["", "n", "r", "s", "l", "x", "m"];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpusConfig {
    pub num_sentences: usize,
    /// Lexicon entries per fine type.
    pub names_per_type: usize,
    pub max_entities: usize,
    pub seed: u64,
    /// Restrict to the first `n` fine types of the schema.
    pub num_types: Option<usize>,
    /// Id prefix; ids are `{prefix}{index}`.
    pub id_prefix: String,
}

impl Default for SynthCorpusConfig {
    fn default() -> Self {
        Self {
            num_sentences: 50,
            names_per_type: 3,
            max_entities: 3,
            seed: 0,
            num_types: None,
            id_prefix: "s".into(),
        }
    }
}

fn pseudo_word<R: Rng>(rng: &mut R) -> String {
    let syllables = rng.gen_range(2..=3);
    (0..syllables)
        .map(|_| {
            format!(
                "{}{}{}",
                ONSETS.choose(rng).unwrap(),
                NUCLEI.choose(rng).unwrap(),
                CODAS.choose(rng).unwrap()
            )
        })
        .collect()
}

/// Entity names per fine type: 1–3 pseudo-words each, unique across the
/// whole lexicon and never equal to a filler word. Depends only on the
/// schema and `names_per_type`.
pub fn lexicon(schema: &LabelSchema, names_per_type: usize) -> Vec<(String, Vec<Vec<String>>)> {
    let mut used: std::collections::HashSet<String> = FILLER.iter().map(|f| f.0.to_string()).collect();
    schema
        .fine_types()
        .iter()
        .map(|t| {
            let mut rng = derive_rng(0, &["lexicon", t]);
            let names = (0..names_per_type)
                .map(|_| {
                    let len = rng.gen_range(1..=3);
                    (0..len)
                        .map(|_| loop {
                            let w = pseudo_word(&mut rng);
                            if used.insert(w.clone()) {
                                break w;
                            }
                        })
                        .collect()
                })
                .collect();
            (t.clone(), names)
        })
        .collect()
}

/// Tagged corpus with a POS column.
pub fn synth_corpus(schema: &LabelSchema, config: &SynthCorpusConfig) -> Result<Dataset> {
    let mut lex = lexicon(schema, config.names_per_type.max(1));
    if let Some(n) = config.num_types {
        lex.truncate(n.max(1));
    }
    let mut rng = derive_rng(config.seed, &["corpus"]);
    let filler_run = |rng: &mut rand_chacha::ChaCha8Rng, out: &mut Vec<(Token, String)>, min: usize| {
        for _ in 0..rng.gen_range(min..=min + 2) {
            let (w, pos) = FILLER.choose(rng).unwrap();
            out.push((Token::with_pos(*w, *pos), "O".to_string()));
        }
    };
    let mut sentences = Vec::with_capacity(config.num_sentences);
    for i in 0..config.num_sentences {
        let mut items = Vec::new();
        filler_run(&mut rng, &mut items, 0);
        for _ in 0..rng.gen_range(1..=config.max_entities.max(1)) {
            let (etype, names) = lex.choose(&mut rng).unwrap();
            let name = names.choose(&mut rng).unwrap();
            for (j, w) in name.iter().enumerate() {
                let prefix = if j == 0 { "B" } else { "I" };
                items.push((Token::with_pos(w.as_str(), "PROPN"), format!("{prefix}-{etype}")));
            }
            filler_run(&mut rng, &mut items, 1);
        }
        let (tokens, tags): (Vec<Token>, Vec<String>) = items.into_iter().unzip();
        sentences.push(Sentence::new(format!("{}{i}", config.id_prefix), tokens, Some(tags))?);
    }
    Ok(Dataset::new(sentences))
}

/// How synthetic vectors relate to the words and gold tags.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EmbeddingMode {
    /// Each (word, layer) pair gets a fixed random vector; tags are not used.
    RandomWord,
    /// Vector = prototype of the token's entity type + `noise` × random
    /// word vector. Begin and inside tokens share a prototype, so telling
    /// them apart needs context. Requires gold tags.
    TypePrototype { noise: f32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthEmbeddingConfig {
    pub dim: usize,
    pub num_layers: usize,
    pub seed: u64,
    pub mode: EmbeddingMode,
}

impl Default for SynthEmbeddingConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            num_layers: 3,
            seed: 0,
            mode: EmbeddingMode::RandomWord,
        }
    }
}

fn random_vector(seed: u64, parts: &[&str], dim: usize) -> Vec<f32> {
    let mut rng = derive_rng(seed, parts);
    (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
}

/// One sequence per sentence, in dataset order.
pub fn synth_embeddings(dataset: &Dataset, config: &SynthEmbeddingConfig) -> Result<(EmbeddingHeader, Vec<EmbeddingSequence>)> {
    let header = EmbeddingHeader::new(config.dim, config.num_layers);
    let mut out = Vec::with_capacity(dataset.len());
    for s in dataset {
        let mut values = Vec::with_capacity(s.len() * config.num_layers * config.dim);
        for (t, tok) in s.tokens.iter().enumerate() {
            let word = tok.text.to_lowercase();
            for layer in 0..config.num_layers {
                let layer_s = layer.to_string();
                let wv = random_vector(config.seed, &["word", &word, &layer_s], config.dim);
                match config.mode {
                    EmbeddingMode::RandomWord => values.extend(wv),
                    EmbeddingMode::TypePrototype { noise } => {
                        let tag = s
                            .fg_tags
                            .as_ref()
                            .map(|tags| tags[t].as_str())
                            .ok_or_else(|| crate::Error::Tags(format!("sentence {} has no tags", s.id)))?;
                        let etype = BioTag::parse(tag)?.etype().unwrap_or("O");
                        let proto = random_vector(config.seed, &["prototype", etype, &layer_s], config.dim);
                        values.extend(proto.iter().zip(&wv).map(|(p, w)| p + noise * w));
                    }
                }
            }
        }
        out.push(EmbeddingSequence::new(s.id.clone(), s.len(), config.num_layers, config.dim, values)?);
    }
    Ok((header, out))
}
