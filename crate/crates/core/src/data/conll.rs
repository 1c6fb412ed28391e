//! CoNLL-style corpus reading and writing.
//!
//! A file is a sequence of blocks separated by blank lines. Inside a block,
//! lines starting with `#` are comments (`# id <id> ...` names the sentence),
//! every other line is whitespace-separated columns: token first, tag last,
//! anything in between ignored unless a POS column is configured.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bio::BioTag;
use super::schema::{LabelSchema, LabelSpace};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub pos: Option<String>,
}

impl Token {
    pub fn new(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            pos: None,
        }
    }

    pub fn with_pos(text: impl Into<String>, pos: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            pos: Some(pos.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub id: String,
    pub tokens: Vec<Token>,
    pub fg_tags: Option<Vec<String>>,
}

impl Sentence {
    pub fn new(id: impl Into<String>, tokens: Vec<Token>, fg_tags: Option<Vec<String>>) -> Result<Self> {
        let id = id.into();
        if tokens.iter().any(|t| t.text.is_empty()) {
            return Err(Error::shape(format!("sentence {id}: empty token")));
        }
        if let Some(tags) = &fg_tags {
            if tags.len() != tokens.len() {
                return Err(Error::shape(format!(
                    "sentence {id}: {} tags for {} tokens",
                    tags.len(),
                    tokens.len()
                )));
            }
        }
        Ok(Self { id, tokens, fg_tags })
    }

    /// Convenience constructor from whitespace-free words and tags.
    pub fn from_words<S: AsRef<str>>(id: impl Into<String>, words: &[S], tags: Option<&[S]>) -> Result<Self> {
        Self::new(
            id,
            words.iter().map(|w| Token::new(w.as_ref())).collect(),
            tags.map(|t| t.iter().map(|x| x.as_ref().to_string()).collect()),
        )
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.text.as_str())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub sentences: Vec<Sentence>,
}

impl Dataset {
    pub fn new(sentences: Vec<Sentence>) -> Self {
        Self { sentences }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Sentence> {
        self.sentences.iter()
    }

    pub fn has_tags(&self) -> bool {
        self.sentences.iter().all(|s| s.fg_tags.is_some())
    }

    /// Sentences with their tags removed.
    pub fn untagged(&self) -> Self {
        Self::new(
            self.sentences
                .iter()
                .map(|s| Sentence {
                    fg_tags: None,
                    ..s.clone()
                })
                .collect(),
        )
    }

    pub fn concat(mut self, other: Dataset) -> Self {
        self.sentences.extend(other.sentences);
        self
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a Sentence;
    type IntoIter = std::slice::Iter<'a, Sentence>;

    fn into_iter(self) -> Self::IntoIter {
        self.sentences.iter()
    }
}

#[derive(Debug, Clone, Default)]
pub struct ConllOptions<'s> {
    /// Zero-based column holding a part-of-speech tag.
    pub pos_column: Option<usize>,
    /// When set, every tag must belong to the fine label space.
    pub schema: Option<&'s LabelSchema>,
}

struct BlockBuilder {
    id: Option<String>,
    rows: Vec<(usize, Vec<String>)>,
}

pub fn parse_conll(path: impl AsRef<Path>, opts: &ConllOptions<'_>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    read_conll(BufReader::new(file), path, opts)
}

pub fn parse_conll_str(text: &str, opts: &ConllOptions<'_>) -> Result<Dataset> {
    read_conll(text.as_bytes(), Path::new("<string>"), opts)
}

pub fn read_conll<R: BufRead>(reader: R, origin: &Path, opts: &ConllOptions<'_>) -> Result<Dataset> {
    let mut sentences = Vec::new();
    let mut block: Option<BlockBuilder> = None;
    let perr = |line: usize, message: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };

    let finish = |b: BlockBuilder, sentences: &mut Vec<Sentence>| -> Result<()> {
        if b.rows.is_empty() {
            return Ok(());
        }
        let id = b.id.unwrap_or_else(|| sentences.len().to_string());
        let tagged: Vec<bool> = b.rows.iter().map(|(_, c)| c.len() >= 2 && c[c.len() - 1] != "_").collect();
        let has_tags = tagged[0];
        if let Some(pos) = tagged.iter().position(|&t| t != has_tags) {
            return Err(perr(b.rows[pos].0, "tag column present on some lines of the sentence but not others".into()));
        }
        let mut tokens = Vec::with_capacity(b.rows.len());
        let mut tags = Vec::with_capacity(b.rows.len());
        for (line, cols) in &b.rows {
            let pos = opts.pos_column.and_then(|c| {
                let last_data = if has_tags { cols.len() - 1 } else { cols.len() };
                (c > 0 && c < last_data && cols[c] != "_").then(|| cols[c].clone())
            });
            tokens.push(Token {
                text: cols[0].clone(),
                pos,
            });
            if has_tags {
                let tag = &cols[cols.len() - 1];
                let parsed = BioTag::parse(tag).map_err(|e| perr(*line, e.to_string()))?;
                if let Some(schema) = opts.schema {
                    if schema.index_of(LabelSpace::Fine, tag).is_none() {
                        return Err(Error::Schema(format!(
                            "{}:{line}: tag {tag:?} ({:?}) is not in the schema",
                            origin.display(),
                            parsed.etype().unwrap_or("O"),
                        )));
                    }
                }
                tags.push(tag.clone());
            }
        }
        sentences.push(Sentence {
            id,
            tokens,
            fg_tags: has_tags.then_some(tags),
        });
        Ok(())
    };

    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            if let Some(b) = block.take() {
                finish(b, &mut sentences)?;
            }
            continue;
        }
        let b = block.get_or_insert_with(|| BlockBuilder {
            id: None,
            rows: Vec::new(),
        });
        if let Some(comment) = trimmed.strip_prefix('#') {
            let mut words = comment.split_whitespace();
            if words.next() == Some("id") {
                if let Some(id) = words.next() {
                    if !b.rows.is_empty() {
                        return Err(perr(lineno, "id comment after the first token line".into()));
                    }
                    b.id = Some(id.to_string());
                }
            }
            continue;
        }
        let cols: Vec<String> = trimmed.split_whitespace().map(str::to_string).collect();
        if cols.is_empty() {
            return Err(perr(lineno, "line has no columns".into()));
        }
        b.rows.push((lineno, cols));
    }
    if let Some(b) = block.take() {
        finish(b, &mut sentences)?;
    }
    Ok(Dataset::new(sentences))
}

/// Writes `token pos _ tag` lines (with `_` for missing fields); reading the
/// output back with `pos_column: Some(1)` reproduces the dataset.
pub fn write_conll<W: Write>(dataset: &Dataset, mut out: W) -> Result<()> {
    for (n, s) in dataset.iter().enumerate() {
        if n > 0 {
            writeln!(out)?;
        }
        writeln!(out, "# id {}", s.id)?;
        for (i, tok) in s.tokens.iter().enumerate() {
            let pos = tok.pos.as_deref().unwrap_or("_");
            match &s.fg_tags {
                Some(tags) => writeln!(out, "{} {} _ {}", tok.text, pos, tags[i])?,
                None => writeln!(out, "{} {} _ _", tok.text, pos)?,
            }
        }
    }
    Ok(())
}

pub fn save_conll(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_conll(dataset, &mut w)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_line_block() {
        let ds = parse_conll_str("uruguay _ _ B-Location\n", &ConllOptions::default()).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.sentences[0].tokens[0].text, "uruguay");
        assert_eq!(ds.sentences[0].fg_tags.as_deref(), Some(&["B-Location".to_string()][..]));
        assert_eq!(ds.sentences[0].id, "0");
    }

    #[test]
    fn empty_input() {
        let ds = parse_conll_str("", &ConllOptions::default()).unwrap();
        assert!(ds.is_empty());
        let ds = parse_conll_str("\n\n  \n", &ConllOptions::default()).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn ids_and_blocks() {
        let text = "# id abc domain=train\nthe _ _ O\nbeatles _ _ B-MusicalGRP\n\n\n# id def\nparis _ _ B-HumanSettlement\n\nx _ _ O\n";
        let ds = parse_conll_str(text, &ConllOptions::default()).unwrap();
        let ids: Vec<_> = ds.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["abc", "def", "2"]);
        assert_eq!(ds.sentences[0].len(), 2);
    }

    #[test]
    fn untagged_files() {
        let ds = parse_conll_str("# id q\nhello\nworld\n", &ConllOptions::default()).unwrap();
        assert_eq!(ds.sentences[0].fg_tags, None);
        let ds = parse_conll_str("hello _ _ _\n", &ConllOptions::default()).unwrap();
        assert_eq!(ds.sentences[0].fg_tags, None);
    }

    #[test]
    fn mixed_tag_columns_is_parse_error() {
        let err = parse_conll_str("a _ _ O\nb\n", &ConllOptions::default()).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_tag_reports_line() {
        let err = parse_conll_str("\n\na _ _ O\nb _ _ Q-PER\n", &ConllOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }), "{err}");
    }

    #[test]
    fn schema_validation() {
        let schema = LabelSchema::multiconer2();
        let opts = ConllOptions {
            pos_column: None,
            schema: Some(&schema),
        };
        assert!(parse_conll_str("a _ _ B-Artist\n", &opts).is_ok());
        assert!(matches!(parse_conll_str("a _ _ B-Location\n", &opts), Err(Error::Schema(_))));
    }

    #[test]
    fn pos_column() {
        let opts = ConllOptions {
            pos_column: Some(1),
            schema: None,
        };
        let ds = parse_conll_str("the DT _ O\nbig _ _ O\n", &opts).unwrap();
        assert_eq!(ds.sentences[0].tokens[0].pos.as_deref(), Some("DT"));
        assert_eq!(ds.sentences[0].tokens[1].pos, None);
    }

    fn sentence_strategy() -> impl Strategy<Value = Sentence> {
        let tok = ("[a-z0-9]{1,6}", prop::option::of("[A-Z]{2}"), prop_oneof![
            Just("O".to_string()),
            "[AB]".prop_map(|t| format!("B-{t}")),
            "[AB]".prop_map(|t| format!("I-{t}")),
        ]);
        ("[a-z0-9]{1,8}", prop::collection::vec(tok, 1..8), any::<bool>()).prop_map(|(id, toks, tagged)| {
            let tags = tagged.then(|| toks.iter().map(|t| t.2.clone()).collect());
            Sentence {
                id,
                tokens: toks
                    .into_iter()
                    .map(|(text, pos, _)| Token { text, pos })
                    .collect(),
                fg_tags: tags,
            }
        })
    }

    proptest! {
        #[test]
        fn write_then_parse_is_fixed_point(sents in prop::collection::vec(sentence_strategy(), 0..5)) {
            let ds = Dataset::new(sents);
            let mut buf = Vec::new();
            write_conll(&ds, &mut buf).unwrap();
            let opts = ConllOptions { pos_column: Some(1), schema: None };
            let back = read_conll(&buf[..], Path::new("mem"), &opts).unwrap();
            prop_assert_eq!(&back, &ds);
        }
    }
}
