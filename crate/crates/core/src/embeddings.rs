//! Binary interchange format for precomputed per-token encoder embeddings.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "SEQEMB01"                      8 bytes magic
//! u32 header_len                  length of the JSON header in bytes
//! header JSON                     {"version":1,"dim":D,"num_layers":L,"dtype":"f32"}
//! repeated records:
//!   u32 id_len | id bytes (UTF-8)
//!   u32 num_tokens
//!   num_tokens * L * D f32        token-major, then layer, then dim
//! ```
//!
//! Layers are stored in ascending encoder depth: stored layer `L - 1` is the
//! final encoder layer, so "the last k layers" are the final k stored ones.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"SEQEMB01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingHeader {
    pub version: u32,
    pub dim: usize,
    pub num_layers: usize,
    pub dtype: Dtype,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    #[serde(rename = "f32")]
    F32,
}

impl EmbeddingHeader {
    pub fn new(dim: usize, num_layers: usize) -> Self {
        Self {
            version: FORMAT_VERSION,
            dim,
            num_layers,
            dtype: Dtype::F32,
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.version != FORMAT_VERSION {
            return Err(format!("unsupported version {}", self.version));
        }
        if self.dim == 0 || self.num_layers == 0 {
            return Err("dim and num_layers must be at least 1".into());
        }
        Ok(())
    }

    /// Floats per token.
    pub fn token_width(&self) -> usize {
        self.dim * self.num_layers
    }
}

/// Encoder vectors for one sentence, `[num_tokens][num_layers][dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    pub sentence_id: String,
    num_tokens: usize,
    num_layers: usize,
    dim: usize,
    values: Vec<f32>,
}

impl EmbeddingSequence {
    pub fn new(
        sentence_id: impl Into<String>,
        num_tokens: usize,
        num_layers: usize,
        dim: usize,
        values: Vec<f32>,
    ) -> Result<Self> {
        let sentence_id = sentence_id.into();
        if num_tokens == 0 {
            return Err(Error::shape(format!("sequence {sentence_id} has no tokens")));
        }
        if values.len() != num_tokens * num_layers * dim {
            return Err(Error::shape(format!(
                "sequence {sentence_id}: {} values for {num_tokens}x{num_layers}x{dim}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::shape(format!("sequence {sentence_id}: non-finite value at index {i}")));
        }
        Ok(Self {
            sentence_id,
            num_tokens,
            num_layers,
            dim,
            values,
        })
    }

    pub fn num_tokens(&self) -> usize {
        self.num_tokens
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn vector(&self, token: usize, layer: usize) -> &[f32] {
        let start = (token * self.num_layers + layer) * self.dim;
        &self.values[start..start + self.dim]
    }

    /// Per-token concatenation of the final `k` stored layers, shallower
    /// layer first. Output shape `[num_tokens, k * dim]`.
    pub fn concat_layers<T: Scalar>(&self, k: usize) -> Result<Array2<T>> {
        concat_layers(self, k)
    }
}

pub fn concat_layers<T: Scalar>(seq: &EmbeddingSequence, k: usize) -> Result<Array2<T>> {
    if k == 0 || k > seq.num_layers {
        return Err(Error::shape(format!(
            "cannot take the last {k} layers of a {}-layer sequence",
            seq.num_layers
        )));
    }
    let width = k * seq.dim;
    let first = seq.num_layers - k;
    let mut out = Array2::zeros((seq.num_tokens, width));
    for t in 0..seq.num_tokens {
        let start = (t * seq.num_layers + first) * seq.dim;
        let src = &seq.values[start..start + width];
        for (dst, &v) in out.row_mut(t).iter_mut().zip(src) {
            *dst = T::of(v as f64);
        }
    }
    Ok(out)
}

pub struct EmbeddingWriter<W: Write> {
    out: W,
    header: EmbeddingHeader,
}

impl<W: Write> EmbeddingWriter<W> {
    pub fn new(mut out: W, header: EmbeddingHeader) -> Result<Self> {
        header.validate().map_err(Error::Shape)?;
        let json = serde_json::to_vec(&header)?;
        out.write_all(MAGIC)?;
        out.write_all(&(json.len() as u32).to_le_bytes())?;
        out.write_all(&json)?;
        Ok(Self { out, header })
    }

    pub fn write(&mut self, seq: &EmbeddingSequence) -> Result<()> {
        if seq.dim != self.header.dim || seq.num_layers != self.header.num_layers {
            return Err(Error::shape(format!(
                "sequence {} is {}x{} but the header declares {}x{}",
                seq.sentence_id, seq.num_layers, seq.dim, self.header.num_layers, self.header.dim
            )));
        }
        let id = seq.sentence_id.as_bytes();
        let id_len = u32::try_from(id.len()).map_err(|_| Error::shape("sentence id too long"))?;
        let n = u32::try_from(seq.num_tokens).map_err(|_| Error::shape("too many tokens"))?;
        self.out.write_all(&id_len.to_le_bytes())?;
        self.out.write_all(id)?;
        self.out.write_all(&n.to_le_bytes())?;
        let mut buf = Vec::with_capacity(seq.values.len() * 4);
        for v in &seq.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        self.out.write_all(&buf)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

pub fn write_embeddings<'a>(
    path: impl AsRef<Path>,
    header: EmbeddingHeader,
    sequences: impl IntoIterator<Item = &'a EmbeddingSequence>,
) -> Result<()> {
    let file = File::create(path)?;
    let mut w = EmbeddingWriter::new(BufWriter::new(file), header)?;
    for s in sequences {
        w.write(s)?;
    }
    w.finish()?;
    Ok(())
}

/// Streaming reader; yields one record at a time and reports the byte offset
/// of any format violation.
pub struct EmbeddingReader<R: Read> {
    inner: R,
    offset: u64,
    header: EmbeddingHeader,
    done: bool,
}

impl<R: Read> EmbeddingReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        read_exact_at(&mut inner, &mut magic, 0, "magic")?;
        if &magic != MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: "bad magic bytes".into(),
            });
        }
        let mut len = [0u8; 4];
        read_exact_at(&mut inner, &mut len, 8, "header length")?;
        let len = u32::from_le_bytes(len) as usize;
        let mut json = vec![0u8; len];
        read_exact_at(&mut inner, &mut json, 12, "header")?;
        let header: EmbeddingHeader = serde_json::from_slice(&json).map_err(|e| Error::Format {
            offset: 12,
            message: format!("invalid header: {e}"),
        })?;
        header.validate().map_err(|message| Error::Format { offset: 12, message })?;
        Ok(Self {
            inner,
            offset: 12 + len as u64,
            header,
            done: false,
        })
    }

    pub fn header(&self) -> EmbeddingHeader {
        self.header
    }

    fn read_u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        read_exact_at(&mut self.inner, &mut b, self.offset, what)?;
        self.offset += 4;
        Ok(u32::from_le_bytes(b))
    }

    fn read_record(&mut self) -> Result<Option<EmbeddingSequence>> {
        // Distinguish clean EOF from a truncated id length.
        let mut first = [0u8; 1];
        loop {
            match self.inner.read(&mut first) {
                Ok(0) => return Ok(None),
                Ok(_) => break,
                Err(e) if e.kind() == ErrorKind::Interrupted => continue,
                Err(e) => return Err(e.into()),
            }
        }
        let mut rest = [0u8; 3];
        read_exact_at(&mut self.inner, &mut rest, self.offset + 1, "id length")?;
        let id_len = u32::from_le_bytes([first[0], rest[0], rest[1], rest[2]]) as usize;
        self.offset += 4;

        let mut id = vec![0u8; id_len];
        read_exact_at(&mut self.inner, &mut id, self.offset, "sentence id")?;
        let id = String::from_utf8(id).map_err(|_| Error::Format {
            offset: self.offset,
            message: "sentence id is not UTF-8".into(),
        })?;
        self.offset += id_len as u64;

        let n_offset = self.offset;
        let num_tokens = self.read_u32("token count")? as usize;
        if num_tokens == 0 {
            return Err(Error::Format {
                offset: n_offset,
                message: format!("record {id:?} has zero tokens"),
            });
        }
        let count = num_tokens * self.header.token_width();
        let mut bytes = vec![0u8; count * 4];
        read_exact_at(&mut self.inner, &mut bytes, self.offset, "vector payload")?;
        let mut values = Vec::with_capacity(count);
        for (i, chunk) in bytes.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            if !v.is_finite() {
                return Err(Error::Format {
                    offset: self.offset + 4 * i as u64,
                    message: format!("non-finite value {v} in record {id:?}"),
                });
            }
            values.push(v);
        }
        self.offset += bytes.len() as u64;
        Ok(Some(EmbeddingSequence {
            sentence_id: id,
            num_tokens,
            num_layers: self.header.num_layers,
            dim: self.header.dim,
            values,
        }))
    }
}

impl<R: Read> Iterator for EmbeddingReader<R> {
    type Item = Result<EmbeddingSequence>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.read_record() {
            Ok(Some(s)) => Some(Ok(s)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

fn read_exact_at<R: Read>(r: &mut R, buf: &mut [u8], offset: u64, what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == ErrorKind::UnexpectedEof {
            Error::Format {
                offset,
                message: format!("truncated file while reading {what}"),
            }
        } else {
            Error::Io(e)
        }
    })
}

pub fn open_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingReader<BufReader<File>>> {
    EmbeddingReader::new(BufReader::new(File::open(path)?))
}

/// Reads a whole file into memory.
pub fn read_embeddings(path: impl AsRef<Path>) -> Result<(EmbeddingHeader, Vec<EmbeddingSequence>)> {
    let reader = open_embeddings(path)?;
    let header = reader.header();
    let seqs = reader.collect::<Result<Vec<_>>>()?;
    Ok((header, seqs))
}

/// All sequences of a file, keyed by sentence id.
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    pub header: EmbeddingHeader,
    by_id: HashMap<String, EmbeddingSequence>,
}

impl EmbeddingStore {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (header, seqs) = read_embeddings(path)?;
        Self::from_sequences(header, seqs)
    }

    pub fn from_sequences(header: EmbeddingHeader, seqs: Vec<EmbeddingSequence>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(seqs.len());
        for s in seqs {
            if s.dim != header.dim || s.num_layers != header.num_layers {
                return Err(Error::shape(format!("sequence {} does not match the header", s.sentence_id)));
            }
            if let Some(dup) = by_id.insert(s.sentence_id.clone(), s) {
                return Err(Error::Alignment(format!("duplicate sentence id {}", dup.sentence_id)));
            }
        }
        Ok(Self { header, by_id })
    }

    pub fn get(&self, id: &str) -> Option<&EmbeddingSequence> {
        self.by_id.get(id)
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }

    pub fn alignment(&self, dataset: &Dataset) -> AlignmentReport {
        let mut report = AlignmentReport::default();
        let mut seen = HashSet::new();
        for s in dataset {
            if !seen.insert(s.id.as_str()) {
                report.duplicate_corpus_ids.push(s.id.clone());
                continue;
            }
            match self.by_id.get(&s.id) {
                None => report.missing_in_embeddings.push(s.id.clone()),
                Some(e) if e.num_tokens != s.len() => report.token_count_mismatches.push(TokenCountMismatch {
                    sentence_id: s.id.clone(),
                    expected: s.len(),
                    found: e.num_tokens,
                }),
                Some(_) => {}
            }
        }
        let mut extra: Vec<_> = self
            .by_id
            .keys()
            .filter(|k| !seen.contains(k.as_str()))
            .cloned()
            .collect();
        extra.sort();
        report.missing_in_corpus = extra;
        report
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TokenCountMismatch {
    pub sentence_id: String,
    pub expected: usize,
    pub found: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AlignmentReport {
    pub missing_in_embeddings: Vec<String>,
    pub missing_in_corpus: Vec<String>,
    pub token_count_mismatches: Vec<TokenCountMismatch>,
    pub duplicate_corpus_ids: Vec<String>,
}

impl AlignmentReport {
    pub fn is_aligned(&self) -> bool {
        self.missing_in_embeddings.is_empty()
            && self.missing_in_corpus.is_empty()
            && self.token_count_mismatches.is_empty()
            && self.duplicate_corpus_ids.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_aligned() {
            return Ok(());
        }
        let summary: BTreeMap<&str, usize> = BTreeMap::from([
            ("missing_in_embeddings", self.missing_in_embeddings.len()),
            ("missing_in_corpus", self.missing_in_corpus.len()),
            ("token_count_mismatches", self.token_count_mismatches.len()),
            ("duplicate_corpus_ids", self.duplicate_corpus_ids.len()),
        ]);
        let first = self
            .missing_in_embeddings
            .first()
            .or(self.missing_in_corpus.first())
            .or(self.token_count_mismatches.first().map(|m| &m.sentence_id))
            .or(self.duplicate_corpus_ids.first());
        Err(Error::Alignment(format!("{summary:?}; first offending id {first:?}")))
    }
}

/// Checks one-to-one id coverage and token counts between a corpus and an
/// embedding file. Mismatches are reported, not raised.
pub fn validate_alignment(dataset: &Dataset, path: impl AsRef<Path>) -> Result<AlignmentReport> {
    Ok(EmbeddingStore::load(path)?.alignment(dataset))
}
