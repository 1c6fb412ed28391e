//! Entity-level scoring: per-type, micro and macro P/R/F1, plus untyped
//! mention detection (MD).
//!
//! A typed match needs identical `(start, end, type)`; an MD match only
//! identical `(start, end)`. Predicted sequences are BIO-repaired before span
//! extraction and the number of repairs is reported.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{bio_decode_counted, Dataset, EntitySpan};
use crate::error::{Error, Result};

/// Which entity types the macro average runs over.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum MacroOver {
    /// Types appearing in gold or predictions.
    #[default]
    Observed,
    /// Every listed type, unseen ones contributing F1 = 0.
    Schema(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl From<Counts> for Prf {
    fn from(c: Counts) -> Self {
        Prf {
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeScores {
    pub counts: Counts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub num_sentences: usize,
    pub per_type: BTreeMap<String, TypeScores>,
    pub micro_counts: Counts,
    pub micro: Prf,
    pub macro_f1: f64,
    pub md_counts: Counts,
    pub md: Prf,
    pub gold_repairs: usize,
    pub pred_repairs: usize,
}

fn spans_of(ds_name: &str, s: &crate::data::Sentence) -> Result<(Vec<EntitySpan>, usize)> {
    let tags = s
        .fg_tags
        .as_ref()
        .ok_or_else(|| Error::Alignment(format!("{ds_name} sentence {} has no tags", s.id)))?;
    let d = bio_decode_counted(tags)?;
    Ok((d.spans, d.repairs))
}

pub fn score(gold: &Dataset, pred: &Dataset, macro_over: &MacroOver) -> Result<EvalReport> {
    if gold.len() != pred.len() {
        return Err(Error::Alignment(format!(
            "gold has {} sentences, predictions {}",
            gold.len(),
            pred.len()
        )));
    }
    let mut per_type: BTreeMap<String, Counts> = BTreeMap::new();
    let mut md = Counts::default();
    let (mut gold_repairs, mut pred_repairs) = (0, 0);
    for (g, p) in gold.iter().zip(pred) {
        if g.id != p.id || g.len() != p.len() {
            return Err(Error::Alignment(format!(
                "sentence mismatch: gold {} ({} tokens) vs prediction {} ({} tokens)",
                g.id,
                g.len(),
                p.id,
                p.len()
            )));
        }
        let (gs, gr) = spans_of("gold", g)?;
        let (ps, pr) = spans_of("predicted", p)?;
        gold_repairs += gr;
        pred_repairs += pr;

        let gset: HashSet<&EntitySpan> = gs.iter().collect();
        let pset: HashSet<&EntitySpan> = ps.iter().collect();
        for s in &gs {
            let c = per_type.entry(s.etype.clone()).or_default();
            if pset.contains(s) {
                c.tp += 1;
            } else {
                c.fn_ += 1;
            }
        }
        for s in &ps {
            if !gset.contains(s) {
                per_type.entry(s.etype.clone()).or_default().fp += 1;
            }
        }

        let gb: HashSet<(usize, usize)> = gs.iter().map(|s| (s.start, s.end)).collect();
        let pb: HashSet<(usize, usize)> = ps.iter().map(|s| (s.start, s.end)).collect();
        let hit = gb.intersection(&pb).count();
        md.add(Counts {
            tp: hit,
            fp: pb.len() - hit,
            fn_: gb.len() - hit,
        });
    }

    let mut micro = Counts::default();
    for c in per_type.values() {
        micro.add(*c);
    }
    let macro_f1 = match macro_over {
        MacroOver::Observed => {
            if per_type.is_empty() {
                0.0
            } else {
                per_type.values().map(Counts::f1).sum::<f64>() / per_type.len() as f64
            }
        }
        MacroOver::Schema(types) => {
            if types.is_empty() {
                0.0
            } else {
                types
                    .iter()
                    .map(|t| per_type.get(t).map_or(0.0, Counts::f1))
                    .sum::<f64>()
                    / types.len() as f64
            }
        }
    };
    Ok(EvalReport {
        num_sentences: gold.len(),
        per_type: per_type
            .into_iter()
            .map(|(t, c)| {
                (
                    t,
                    TypeScores {
                        counts: c,
                        precision: c.precision(),
                        recall: c.recall(),
                        f1: c.f1(),
                    },
                )
            })
            .collect(),
        micro_counts: micro,
        micro: micro.into(),
        macro_f1,
        md_counts: md,
        md: md.into(),
        gold_repairs,
        pred_repairs,
    })
}

impl EvalReport {
    /// Types by F1 descending, ties by name.
    pub fn ranked_types(&self) -> Vec<(&str, &TypeScores)> {
        let mut v: Vec<_> = self.per_type.iter().map(|(k, s)| (k.as_str(), s)).collect();
        v.sort_by(|a, b| b.1.f1.total_cmp(&a.1.f1).then_with(|| a.0.cmp(b.0)));
        v
    }

    pub fn summary_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "sentences: {}", self.num_sentences);
        let _ = writeln!(
            s,
            "micro  P={:.4} R={:.4} F1={:.4}",
            self.micro.precision, self.micro.recall, self.micro.f1
        );
        let _ = writeln!(s, "macro  F1={:.4}", self.macro_f1);
        let _ = writeln!(s, "MD     P={:.4} R={:.4} F1={:.4}", self.md.precision, self.md.recall, self.md.f1);
        let _ = writeln!(s, "repairs: gold={} pred={}", self.gold_repairs, self.pred_repairs);
        s
    }
}

/// Per-type CSV, sorted by F1 descending then name. Types with neither gold
/// nor predicted mentions never appear.
pub fn per_tag_csv(report: &EvalReport) -> String {
    let mut s = String::from("type,tp,fp,fn,precision,recall,f1\n");
    for (t, sc) in report.ranked_types() {
        let c = sc.counts;
        let _ = writeln!(
            s,
            "{t},{},{},{},{:.4},{:.4},{:.4}",
            c.tp, c.fp, c.fn_, sc.precision, sc.recall, sc.f1
        );
    }
    s
}

/// Fixed-width text rendering of [`per_tag_csv`].
pub fn per_tag_table(report: &EvalReport) -> String {
    let width = report.per_type.keys().map(String::len).max().unwrap_or(4).max(4);
    let mut s = format!(
        "{:<width$}  {:>5} {:>5} {:>5}  {:>6} {:>6} {:>6}\n",
        "type", "tp", "fp", "fn", "P", "R", "F1"
    );
    for (t, sc) in report.ranked_types() {
        let c = sc.counts;
        let _ = writeln!(
            s,
            "{t:<width$}  {:>5} {:>5} {:>5}  {:>6.4} {:>6.4} {:>6.4}",
            c.tp, c.fp, c.fn_, sc.precision, sc.recall, sc.f1
        );
    }
    s
}
