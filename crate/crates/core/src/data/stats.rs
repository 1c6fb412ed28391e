use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::bio::bio_decode;
use super::conll::Dataset;
use crate::error::Result;

pub const LENGTH_BUCKET_WIDTH: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CorpusStats {
    pub num_sentences: usize,
    pub num_tokens: usize,
    /// Bucket lower bound (multiple of 10) to sentence count.
    pub length_histogram: BTreeMap<usize, usize>,
    /// Entity type to number of decoded mentions.
    pub tag_frequency: BTreeMap<String, usize>,
}

impl CorpusStats {
    /// Tag frequencies, most frequent first, ties by name.
    pub fn ranked_tags(&self) -> Vec<(&str, usize)> {
        let mut v: Vec<_> = self.tag_frequency.iter().map(|(k, &c)| (k.as_str(), c)).collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        v
    }
}

pub fn corpus_stats(dataset: &Dataset) -> Result<CorpusStats> {
    let mut length_histogram = BTreeMap::new();
    let mut tag_frequency = BTreeMap::new();
    let mut num_tokens = 0;
    for s in dataset {
        num_tokens += s.len();
        *length_histogram
            .entry(s.len() / LENGTH_BUCKET_WIDTH * LENGTH_BUCKET_WIDTH)
            .or_insert(0) += 1;
        if let Some(tags) = &s.fg_tags {
            for span in bio_decode(tags)? {
                *tag_frequency.entry(span.etype).or_insert(0) += 1;
            }
        }
    }
    Ok(CorpusStats {
        num_sentences: dataset.len(),
        num_tokens,
        length_histogram,
        tag_frequency,
    })
}

/// Every tag string that occurs in the gold annotations.
pub fn distinct_labels(dataset: &Dataset) -> BTreeSet<String> {
    dataset
        .iter()
        .filter_map(|s| s.fg_tags.as_ref())
        .flatten()
        .cloned()
        .collect()
}
