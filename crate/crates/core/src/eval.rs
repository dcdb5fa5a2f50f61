//! Entity-level scoring and token-level confusion matrices.
//!
//! A predicted entity counts only when class, start and end all match a gold
//! entity. Per-class scores use the 0/0 = 0 convention. The weighted F1 is
//! the per-class F1 averaged with gold-support weights.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{repair_tags, Dataset, Tag};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntitySpan {
    pub class: String,
    pub start: usize,
    /// Inclusive.
    pub end: usize,
}

/// Maximal `B-X (I-X)*` runs. The input must be IOB2-valid.
pub fn extract_entities(tags: &[Tag]) -> Result<Vec<EntitySpan>> {
    let mut spans: Vec<EntitySpan> = Vec::new();
    let mut open: Option<EntitySpan> = None;
    for (i, tag) in tags.iter().enumerate() {
        match tag {
            Tag::Inside(c) => match open.as_mut() {
                Some(span) if &span.class == c => span.end = i,
                _ => {
                    return Err(Error::InvalidIob {
                        position: i,
                        tag: tag.to_string(),
                    })
                }
            },
            Tag::Begin(c) => {
                spans.extend(open.take());
                open = Some(EntitySpan {
                    class: c.clone(),
                    start: i,
                    end: i,
                });
            }
            Tag::Outside => spans.extend(open.take()),
        }
    }
    spans.extend(open);
    Ok(spans)
}

/// Inverse of [`extract_entities`] for non-overlapping spans.
pub fn spans_to_tags(spans: &[EntitySpan], len: usize) -> Vec<Tag> {
    let mut tags = vec![Tag::Outside; len];
    for s in spans {
        tags[s.start] = Tag::Begin(s.class.clone());
        for t in &mut tags[s.start + 1..=s.end] {
            *t = Tag::Inside(s.class.clone());
        }
    }
    tags
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub p: f64,
    pub r: f64,
    pub f1: f64,
    pub support: u64,
}

/// Rows are gold labels, columns predicted labels. Labels are `O` followed by entity classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn is_diagonal(&self) -> bool {
        self.counts
            .iter()
            .enumerate()
            .all(|(i, row)| row.iter().enumerate().all(|(j, &c)| i == j || c == 0))
    }

    pub fn get(&self, gold: &str, pred: &str) -> Option<u64> {
        let g = self.labels.iter().position(|l| l == gold)?;
        let p = self.labels.iter().position(|l| l == pred)?;
        Some(self.counts[g][p])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class: BTreeMap<String, ClassScore>,
    pub weighted_f1: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Default, Clone, Copy)]
struct Counts {
    tp: u64,
    fp: u64,
    fn_: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(c: Counts) -> f64 {
    ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_)
}

/// Accumulates entity counts and token confusions sentence by sentence.
///
/// Tag sequences are IOB-repaired before entities are extracted, so decoder
/// output with stray `I-` tags is scored the same way a repaired file would be.
#[derive(Debug, Default)]
pub struct Scorer {
    counts: BTreeMap<String, Counts>,
    confusion: BTreeMap<(String, String), u64>,
    labels: BTreeSet<String>,
}

impl Scorer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, gold: &[Tag], pred: &[Tag]) {
        assert_eq!(gold.len(), pred.len(), "sentence length mismatch");
        for (g, p) in gold.iter().zip(pred) {
            let key = (g.collapsed().to_string(), p.collapsed().to_string());
            self.labels.insert(key.0.clone());
            self.labels.insert(key.1.clone());
            *self.confusion.entry(key).or_default() += 1;
        }

        let spans = |tags: &[Tag]| {
            let mut tags = tags.to_vec();
            repair_tags(&mut tags);
            extract_entities(&tags).expect("repaired tags are IOB2-valid")
        };
        let gold_spans: BTreeSet<EntitySpan> = spans(gold).into_iter().collect();
        let pred_spans: BTreeSet<EntitySpan> = spans(pred).into_iter().collect();
        for s in &gold_spans {
            let c = self.counts.entry(s.class.clone()).or_default();
            if pred_spans.contains(s) {
                c.tp += 1;
            } else {
                c.fn_ += 1;
            }
        }
        for s in pred_spans.difference(&gold_spans) {
            self.counts.entry(s.class.clone()).or_default().fp += 1;
        }
    }

    pub fn weighted_f1(&self) -> f64 {
        weighted(&self.counts)
    }

    pub fn confusion(&self) -> ConfusionMatrix {
        let mut labels = vec!["O".to_string()];
        labels.extend(self.labels.iter().filter(|l| *l != "O").cloned());
        let counts = labels
            .iter()
            .map(|g| {
                labels
                    .iter()
                    .map(|p| self.confusion.get(&(g.clone(), p.clone())).copied().unwrap_or(0))
                    .collect()
            })
            .collect();
        ConfusionMatrix { labels, counts }
    }

    pub fn report(&self) -> EvalReport {
        let per_class = self
            .counts
            .iter()
            .map(|(class, &c)| {
                let score = ClassScore {
                    p: ratio(c.tp, c.tp + c.fp),
                    r: ratio(c.tp, c.tp + c.fn_),
                    f1: f1(c),
                    support: c.tp + c.fn_,
                };
                (class.clone(), score)
            })
            .collect();
        let pooled = self.counts.values().fold(Counts::default(), |a, c| Counts {
            tp: a.tp + c.tp,
            fp: a.fp + c.fp,
            fn_: a.fn_ + c.fn_,
        });
        let supported: Vec<f64> = self
            .counts
            .values()
            .filter(|c| c.tp + c.fn_ > 0)
            .map(|&c| f1(c))
            .collect();
        let macro_f1 = if supported.is_empty() {
            0.0
        } else {
            supported.iter().sum::<f64>() / supported.len() as f64
        };
        EvalReport {
            per_class,
            weighted_f1: weighted(&self.counts),
            micro_f1: f1(pooled),
            macro_f1,
            confusion: self.confusion(),
        }
    }
}

fn weighted(counts: &BTreeMap<String, Counts>) -> f64 {
    let mut num = 0.0;
    let mut den = 0u64;
    for &c in counts.values() {
        let support = c.tp + c.fn_;
        num += support as f64 * f1(c);
        den += support;
    }
    if den == 0 {
        0.0
    } else {
        num / den as f64
    }
}

fn check_shapes(gold: &Dataset, pred: &Dataset) -> Result<()> {
    if gold.len() != pred.len() {
        return Err(Error::Shape {
            sentence: gold.len().min(pred.len()),
            message: format!("gold has {} sentences, prediction has {}", gold.len(), pred.len()),
        });
    }
    for (i, (g, p)) in gold.sentences.iter().zip(&pred.sentences).enumerate() {
        if g.len() != p.len() {
            return Err(Error::Shape {
                sentence: i,
                message: format!("gold has {} tokens, prediction has {}", g.len(), p.len()),
            });
        }
    }
    Ok(())
}

fn scorer_for(gold: &Dataset, pred: &Dataset) -> Result<Scorer> {
    check_shapes(gold, pred)?;
    let mut scorer = Scorer::new();
    for (g, p) in gold.sentences.iter().zip(&pred.sentences) {
        scorer.add(&g.tags(), &p.tags());
    }
    Ok(scorer)
}

pub fn score_entities(gold: &Dataset, pred: &Dataset) -> Result<EvalReport> {
    Ok(scorer_for(gold, pred)?.report())
}

pub fn token_confusion(gold: &Dataset, pred: &Dataset) -> Result<ConfusionMatrix> {
    Ok(scorer_for(gold, pred)?.confusion())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Json,
}

pub fn render_report(report: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s
        }
        ReportFormat::Text => render_text(report),
    }
}

pub fn parse_json_report(text: &str) -> serde_json::Result<EvalReport> {
    serde_json::from_str(text)
}

fn render_text(r: &EvalReport) -> String {
    let mut out = String::new();
    let width = r.per_class.keys().map(String::len).max().unwrap_or(0).max(5);
    let _ = writeln!(
        out,
        "{:<width$}  {:>9}  {:>9}  {:>9}  {:>7}",
        "class", "precision", "recall", "f1", "support"
    );
    for (class, s) in &r.per_class {
        let _ = writeln!(
            out,
            "{:<width$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>7}",
            class, s.p, s.r, s.f1, s.support
        );
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "weighted_f1 {:.4}", r.weighted_f1);
    let _ = writeln!(out, "micro_f1 {:.4}", r.micro_f1);
    let _ = writeln!(out, "macro_f1 {:.4}", r.macro_f1);
    let _ = writeln!(out);
    let _ = writeln!(out, "confusion (rows = gold, columns = predicted)");

    let m = &r.confusion;
    let label_w = m.labels.iter().map(String::len).max().unwrap_or(1);
    let cell_w = m
        .counts
        .iter()
        .flatten()
        .map(|c| c.to_string().len())
        .chain(m.labels.iter().map(String::len))
        .max()
        .unwrap_or(1);
    let _ = write!(out, "{:<label_w$}", "");
    for l in &m.labels {
        let _ = write!(out, "  {l:>cell_w$}");
    }
    let _ = writeln!(out);
    for (l, row) in m.labels.iter().zip(&m.counts) {
        let _ = write!(out, "{l:<label_w$}");
        for c in row {
            let _ = write!(out, "  {c:>cell_w$}");
        }
        let _ = writeln!(out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Sentence;

    fn tags(s: &[&str]) -> Vec<Tag> {
        s.iter().map(|t| t.parse().unwrap()).collect()
    }

    fn ds(rows: &[&[(&str, &str)]]) -> Dataset {
        Dataset::new(
            "t",
            rows.iter()
                .map(|r| Sentence::from_pairs(r.iter().copied()).unwrap())
                .collect(),
        )
    }

    fn span(class: &str, start: usize, end: usize) -> EntitySpan {
        EntitySpan {
            class: class.into(),
            start,
            end,
        }
    }

    #[test]
    fn extracts_annotated_spans() {
        assert_eq!(
            extract_entities(&tags(&["O", "B-CW", "I-CW", "I-CW"])).unwrap(),
            [span("CW", 1, 3)]
        );
        let row1 = tags(&["O", "O", "O", "B-PROD", "I-PROD", "I-PROD", "I-PROD", "O", "O", "O"]);
        assert_eq!(extract_entities(&row1).unwrap(), [span("PROD", 3, 6)]);
        assert!(extract_entities(&tags(&["O", "O"])).unwrap().is_empty());
    }

    #[test]
    fn adjacent_spans_and_class_switches() {
        let t = tags(&["B-A", "B-A", "I-A", "B-B", "I-B", "O", "B-C"]);
        let spans = extract_entities(&t).unwrap();
        assert_eq!(
            spans,
            [span("A", 0, 0), span("A", 1, 2), span("B", 3, 4), span("C", 6, 6)]
        );
        assert_eq!(spans_to_tags(&spans, t.len()), t);
    }

    #[test]
    fn stray_inside_is_rejected() {
        assert!(matches!(
            extract_entities(&tags(&["O", "I-CW"])),
            Err(Error::InvalidIob { position: 1, .. })
        ));
        assert!(extract_entities(&tags(&["B-A", "I-B"])).is_err());
    }

    #[test]
    fn perfect_prediction() {
        let gold = ds(&[&[("hameM", "O"), ("this", "B-CW"), ("magic", "I-CW"), ("moment", "I-CW")]]);
        let r = score_entities(&gold, &gold).unwrap();
        assert_eq!(r.weighted_f1, 1.0);
        assert_eq!(r.per_class["CW"].f1, 1.0);
        assert!(r.confusion.is_diagonal());
        assert!(render_report(&r, ReportFormat::Text).contains("weighted_f1 1.0000"));
    }

    #[test]
    fn boundary_shift_scores_zero() {
        let gold = ds(&[&[
            ("a", "O"),
            ("b", "O"),
            ("c", "O"),
            ("d", "B-CW"),
            ("e", "I-CW"),
            ("f", "I-CW"),
        ]]);
        let pred = ds(&[&[
            ("a", "O"),
            ("b", "O"),
            ("c", "O"),
            ("d", "B-CW"),
            ("e", "O"),
            ("f", "O"),
        ]]);
        let r = score_entities(&gold, &pred).unwrap();
        let cw = r.per_class["CW"];
        assert_eq!((cw.p, cw.r, cw.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn weighted_three_matched_one_missed() {
        // Three A entities found exactly, one B entity missed, nothing spurious.
        let gold = ds(&[
            &[("a1", "B-A"), ("x", "O"), ("a2", "B-A")],
            &[("a3", "B-A"), ("b1", "B-B"), ("y", "O")],
        ]);
        let pred = ds(&[
            &[("a1", "B-A"), ("x", "O"), ("a2", "B-A")],
            &[("a3", "B-A"), ("b1", "O"), ("y", "O")],
        ]);
        let r = score_entities(&gold, &pred).unwrap();
        assert_eq!(r.per_class["A"].f1, 1.0);
        assert_eq!(r.per_class["B"].f1, 0.0);
        assert_eq!(r.weighted_f1, 0.75);
        assert_eq!(r.macro_f1, 0.5);
        assert!(render_report(&r, ReportFormat::Text).contains("weighted_f1 0.7500"));
    }

    #[test]
    fn spurious_class_counts_in_micro_only() {
        let gold = ds(&[&[("a", "B-A"), ("b", "O")]]);
        let pred = ds(&[&[("a", "B-A"), ("b", "B-Z")]]);
        let r = score_entities(&gold, &pred).unwrap();
        assert_eq!(r.weighted_f1, 1.0);
        assert_eq!(r.macro_f1, 1.0);
        assert_eq!(r.per_class["Z"].support, 0);
        assert!((r.micro_f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn confusion_counts_collapsed_tags() {
        let gold = ds(&[&[("hameM", "O"), ("this", "B-CW"), ("magic", "I-CW"), ("moment", "I-CW")]]);
        let pred = ds(&[&[("hameM", "O"), ("this", "O"), ("magic", "O"), ("moment", "O")]]);
        let m = token_confusion(&gold, &pred).unwrap();
        assert_eq!(m.labels, ["O", "CW"]);
        assert_eq!(m.get("CW", "O"), Some(3));
        assert_eq!(m.get("O", "O"), Some(1));
        assert_eq!(m.total(), 4);
        assert!(!m.is_diagonal());
    }

    #[test]
    fn shape_mismatch_names_sentence() {
        let gold = ds(&[&[("a", "O")], &[("b", "O"), ("c", "O")]]);
        let pred = ds(&[&[("a", "O")], &[("b", "O")]]);
        assert!(matches!(
            score_entities(&gold, &pred),
            Err(Error::Shape { sentence: 1, .. })
        ));
        let short = ds(&[&[("a", "O")]]);
        assert!(matches!(token_confusion(&gold, &short), Err(Error::Shape { .. })));
    }

    #[test]
    fn json_render_is_canonical() {
        let gold = ds(&[&[("a", "B-A"), ("b", "I-A"), ("c", "B-B")], &[("d", "B-C"), ("e", "O")]]);
        let pred = ds(&[&[("a", "B-A"), ("b", "O"), ("c", "B-B")], &[("d", "I-C"), ("e", "B-A")]]);
        let r = score_entities(&gold, &pred).unwrap();
        let json = render_report(&r, ReportFormat::Json);
        let back = parse_json_report(&json).unwrap();
        assert_eq!(back, r);
        assert_eq!(render_report(&back, ReportFormat::Json), json);

        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        for key in ["per_class", "weighted_f1", "micro_f1", "macro_f1", "confusion"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert!(v["per_class"]["A"].get("support").is_some());
        assert!(v["confusion"]["counts"].is_array());
    }
}
