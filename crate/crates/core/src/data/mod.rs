//! Label taxonomy, BIO tag algebra, corpus ingestion and corpus statistics.

mod bio;
mod conll;
mod schema;
mod stats;

pub use bio::{bio_decode, bio_decode_counted, bio_encode, derive_cg_tags, BioTag, Decoded, EntitySpan};
pub use conll::{
    parse_conll, parse_conll_str, read_conll, save_conll, write_conll, ConllOptions, Dataset, Sentence, Token,
};
pub use schema::{LabelSchema, LabelSpace, OUTSIDE};
pub use stats::{corpus_stats, distinct_labels, CorpusStats, LENGTH_BUCKET_WIDTH};
