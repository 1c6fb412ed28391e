use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const OUTSIDE: &str = "O";

const DEFAULT_SCHEMA: &str = include_str!("../../data/multiconer2_schema.json");

/// Which label space a BIO sequence lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSpace {
    Fine,
    Coarse,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SchemaFile {
    fine_types: Vec<String>,
    coarse_types: Vec<String>,
    fine_to_coarse: BTreeMap<String, String>,
}

/// Two-level entity taxonomy and the BIO label spaces derived from it.
///
/// Label layout in both spaces: `O` at index 0, then `B-t` at `1 + 2i` and
/// `I-t` at `2 + 2i` for the i-th type.
#[derive(Debug, Clone)]
pub struct LabelSchema {
    file: SchemaFile,
    fg_labels: Vec<String>,
    cg_labels: Vec<String>,
    fg_index: HashMap<String, usize>,
    cg_index: HashMap<String, usize>,
}

fn bio_labels(types: &[String]) -> Vec<String> {
    let mut labels = Vec::with_capacity(2 * types.len() + 1);
    labels.push(OUTSIDE.to_string());
    for t in types {
        labels.push(format!("B-{t}"));
        labels.push(format!("I-{t}"));
    }
    labels
}

fn index_map(labels: &[String]) -> HashMap<String, usize> {
    labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.clone(), i))
        .collect()
}

fn check_types(kind: &str, types: &[String]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for t in types {
        if t.is_empty() || t.chars().any(char::is_whitespace) {
            return Err(Error::Schema(format!("invalid {kind} type name {t:?}")));
        }
        if t == OUTSIDE {
            return Err(Error::Schema(format!("{kind} type may not be named \"O\"")));
        }
        if !seen.insert(t) {
            return Err(Error::Schema(format!("duplicate {kind} type {t:?}")));
        }
    }
    Ok(())
}

impl LabelSchema {
    pub fn new(
        fine_types: Vec<String>,
        coarse_types: Vec<String>,
        fine_to_coarse: BTreeMap<String, String>,
    ) -> Result<Self> {
        check_types("fine", &fine_types)?;
        check_types("coarse", &coarse_types)?;
        for f in &fine_types {
            match fine_to_coarse.get(f) {
                None => return Err(Error::Schema(format!("fine type {f:?} has no coarse type"))),
                Some(c) if !coarse_types.contains(c) => {
                    return Err(Error::Schema(format!(
                        "fine type {f:?} maps to unknown coarse type {c:?}"
                    )))
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = fine_to_coarse.keys().find(|k| !fine_types.contains(k)) {
            return Err(Error::Schema(format!("map entry for unknown fine type {extra:?}")));
        }
        let fg_labels = bio_labels(&fine_types);
        let cg_labels = bio_labels(&coarse_types);
        Ok(Self {
            fg_index: index_map(&fg_labels),
            cg_index: index_map(&cg_labels),
            fg_labels,
            cg_labels,
            file: SchemaFile {
                fine_types,
                coarse_types,
                fine_to_coarse,
            },
        })
    }

    /// The shipped 36-type / 6-group taxonomy.
    pub fn multiconer2() -> Self {
        Self::from_json(DEFAULT_SCHEMA).expect("bundled schema is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: SchemaFile = serde_json::from_str(text)?;
        Self::new(f.fine_types, f.coarse_types, f.fine_to_coarse)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.file).expect("schema serializes")
    }

    pub fn fine_types(&self) -> &[String] {
        &self.file.fine_types
    }

    pub fn coarse_types(&self) -> &[String] {
        &self.file.coarse_types
    }

    pub fn coarse_of(&self, fine: &str) -> Option<&str> {
        self.file.fine_to_coarse.get(fine).map(String::as_str)
    }

    pub fn types(&self, space: LabelSpace) -> &[String] {
        match space {
            LabelSpace::Fine => self.fine_types(),
            LabelSpace::Coarse => self.coarse_types(),
        }
    }

    pub fn labels(&self, space: LabelSpace) -> &[String] {
        match space {
            LabelSpace::Fine => &self.fg_labels,
            LabelSpace::Coarse => &self.cg_labels,
        }
    }

    pub fn num_labels(&self, space: LabelSpace) -> usize {
        self.labels(space).len()
    }

    pub fn index_of(&self, space: LabelSpace, tag: &str) -> Option<usize> {
        match space {
            LabelSpace::Fine => self.fg_index.get(tag).copied(),
            LabelSpace::Coarse => self.cg_index.get(tag).copied(),
        }
    }

    pub fn label(&self, space: LabelSpace, index: usize) -> Option<&str> {
        self.labels(space).get(index).map(String::as_str)
    }

    /// Tag strings to label indices; unknown tags are a schema error.
    pub fn encode(&self, space: LabelSpace, tags: &[String]) -> Result<Vec<usize>> {
        tags.iter()
            .map(|t| {
                self.index_of(space, t)
                    .ok_or_else(|| Error::Schema(format!("tag {t:?} is not in the {space:?} label space")))
            })
            .collect()
    }

    pub fn decode(&self, space: LabelSpace, indices: &[usize]) -> Result<Vec<String>> {
        indices
            .iter()
            .map(|&i| {
                self.label(space, i)
                    .map(str::to_string)
                    .ok_or_else(|| Error::Schema(format!("label index {i} out of range")))
            })
            .collect()
    }

    /// Hex SHA-256 of the canonical (compact JSON) schema.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_vec(&self.file).expect("schema serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}
