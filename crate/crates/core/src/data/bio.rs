//! BIO tag algebra: spans to tags, tags to spans (with repair), and the
//! fine-to-coarse projection.

use serde::{Deserialize, Serialize};

use super::schema::{LabelSchema, OUTSIDE};
use crate::error::{Error, Result};

/// Inclusive token span `[start, end]` of one entity mention.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub etype: String,
}

impl EntitySpan {
    pub fn new(start: usize, end: usize, etype: impl Into<String>) -> Self {
        Self {
            start,
            end,
            etype: etype.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BioTag<'a> {
    Outside,
    Begin(&'a str),
    Inside(&'a str),
}

impl<'a> BioTag<'a> {
    pub fn parse(tag: &'a str) -> Result<Self> {
        if tag == OUTSIDE {
            return Ok(BioTag::Outside);
        }
        let (prefix, etype) = tag
            .split_once('-')
            .ok_or_else(|| Error::Tags(format!("unknown tag {tag:?}")))?;
        if etype.is_empty() {
            return Err(Error::Tags(format!("tag {tag:?} has an empty type")));
        }
        match prefix {
            "B" => Ok(BioTag::Begin(etype)),
            "I" => Ok(BioTag::Inside(etype)),
            _ => Err(Error::Tags(format!("unknown tag {tag:?}"))),
        }
    }

    pub fn etype(&self) -> Option<&'a str> {
        match *self {
            BioTag::Outside => None,
            BioTag::Begin(t) | BioTag::Inside(t) => Some(t),
        }
    }
}

/// Spans to tags. Spans may come in any order but must not overlap.
pub fn bio_encode(spans: &[EntitySpan], length: usize) -> Result<Vec<String>> {
    let mut tags = vec![OUTSIDE.to_string(); length];
    let mut taken = vec![false; length];
    for span in spans {
        if span.start > span.end || span.end >= length {
            return Err(Error::Tags(format!(
                "span [{}, {}] out of range for length {length}",
                span.start, span.end
            )));
        }
        for i in span.start..=span.end {
            if taken[i] {
                return Err(Error::Tags(format!("overlapping spans at token {i}")));
            }
            taken[i] = true;
            let prefix = if i == span.start { "B" } else { "I" };
            tags[i] = format!("{prefix}-{}", span.etype);
        }
    }
    Ok(tags)
}

/// Result of decoding a possibly ill-formed sequence.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Decoded {
    pub spans: Vec<EntitySpan>,
    /// Number of `I-X` tags that opened a span and were read as `B-X`.
    pub repairs: usize,
}

/// Tags to spans. An `I-X` that does not continue an open `X` span starts a
/// new one.
pub fn bio_decode<S: AsRef<str>>(tags: &[S]) -> Result<Vec<EntitySpan>> {
    bio_decode_counted(tags).map(|d| d.spans)
}

pub fn bio_decode_counted<S: AsRef<str>>(tags: &[S]) -> Result<Decoded> {
    let mut out = Decoded::default();
    let mut open: Option<(usize, &str)> = None;
    for (i, tag) in tags.iter().enumerate() {
        let tag = BioTag::parse(tag.as_ref())?;
        match tag {
            BioTag::Outside => {
                if let Some((s, t)) = open.take() {
                    out.spans.push(EntitySpan::new(s, i - 1, t));
                }
            }
            BioTag::Begin(t) => {
                if let Some((s, prev)) = open.take() {
                    out.spans.push(EntitySpan::new(s, i - 1, prev));
                }
                open = Some((i, t));
            }
            BioTag::Inside(t) => match open {
                Some((_, prev)) if prev == t => {}
                _ => {
                    if let Some((s, prev)) = open.take() {
                        out.spans.push(EntitySpan::new(s, i - 1, prev));
                    }
                    out.repairs += 1;
                    open = Some((i, t));
                }
            },
        }
    }
    if let Some((s, t)) = open {
        out.spans.push(EntitySpan::new(s, tags.len() - 1, t));
    }
    Ok(out)
}

/// Replace each fine type by its coarse group, keeping the B/I prefix.
pub fn derive_cg_tags<S: AsRef<str>>(fg_tags: &[S], schema: &LabelSchema) -> Result<Vec<String>> {
    fg_tags
        .iter()
        .map(|tag| {
            let tag = tag.as_ref();
            let map = |t: &str| {
                schema
                    .coarse_of(t)
                    .ok_or_else(|| Error::Schema(format!("fine type {t:?} has no coarse mapping")))
            };
            Ok(match BioTag::parse(tag)? {
                BioTag::Outside => OUTSIDE.to_string(),
                BioTag::Begin(t) => format!("B-{}", map(t)?),
                BioTag::Inside(t) => format!("I-{}", map(t)?),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn encode_examples() {
        assert_eq!(bio_encode(&[], 3).unwrap(), s(&["O", "O", "O"]));
        assert_eq!(
            bio_encode(&[EntitySpan::new(0, 1, "PER")], 3).unwrap(),
            s(&["B-PER", "I-PER", "O"])
        );
        assert_eq!(
            bio_encode(&[EntitySpan::new(0, 0, "LOC"), EntitySpan::new(2, 2, "LOC")], 3).unwrap(),
            s(&["B-LOC", "O", "B-LOC"])
        );
    }

    #[test]
    fn encode_rejects_overlap_and_range() {
        let spans = [EntitySpan::new(0, 1, "A"), EntitySpan::new(1, 2, "B")];
        assert!(matches!(bio_encode(&spans, 3), Err(Error::Tags(_))));
        assert!(bio_encode(&[EntitySpan::new(2, 3, "A")], 3).is_err());
    }

    #[test]
    fn decode_examples() {
        assert_eq!(
            bio_decode(&["B-PER", "I-PER", "O"]).unwrap(),
            vec![EntitySpan::new(0, 1, "PER")]
        );
        let d = bio_decode_counted(&["O", "I-LOC", "I-LOC"]).unwrap();
        assert_eq!(d.spans, vec![EntitySpan::new(1, 2, "LOC")]);
        assert_eq!(d.repairs, 1);
        let d = bio_decode_counted(&["B-PER", "I-LOC"]).unwrap();
        assert_eq!(
            d.spans,
            vec![EntitySpan::new(0, 0, "PER"), EntitySpan::new(1, 1, "LOC")]
        );
        assert_eq!(d.repairs, 1);
    }

    #[test]
    fn decode_rejects_unknown_tags() {
        assert!(bio_decode(&["X-PER"]).is_err());
        assert!(bio_decode(&["B-"]).is_err());
        assert!(bio_decode(&["PER"]).is_err());
    }

    #[test]
    fn cg_projection() {
        let schema = LabelSchema::multiconer2();
        assert_eq!(
            derive_cg_tags(&["B-MusicalWork", "I-MusicalWork"], &schema).unwrap(),
            s(&["B-CW", "I-CW"])
        );
        assert_eq!(derive_cg_tags(&["O", "O"], &schema).unwrap(), s(&["O", "O"]));
        assert_eq!(derive_cg_tags(&["B-Politician"], &schema).unwrap(), s(&["B-PER"]));
        assert!(matches!(
            derive_cg_tags(&["B-Nope"], &schema),
            Err(Error::Schema(_))
        ));
    }

    fn tag_strategy() -> impl Strategy<Value = String> {
        prop_oneof![
            Just("O".to_string()),
            "[ABC]".prop_map(|t| format!("B-{t}")),
            "[ABC]".prop_map(|t| format!("I-{t}")),
        ]
    }

    proptest! {
        #[test]
        fn repair_is_idempotent(tags in prop::collection::vec(tag_strategy(), 0..12)) {
            let once = bio_decode(&tags).unwrap();
            let again = bio_decode(&bio_encode(&once, tags.len()).unwrap()).unwrap();
            prop_assert_eq!(once, again);
        }

        #[test]
        fn cg_keeps_o_and_b_positions(idx in prop::collection::vec(0usize..73, 1..20)) {
            let schema = LabelSchema::multiconer2();
            let fg = schema.decode(crate::data::LabelSpace::Fine, &idx).unwrap();
            let cg = derive_cg_tags(&fg, &schema).unwrap();
            for (f, c) in fg.iter().zip(&cg) {
                prop_assert_eq!(f == "O", c == "O");
                prop_assert_eq!(f.starts_with("B-"), c.starts_with("B-"));
            }
        }
    }
}
