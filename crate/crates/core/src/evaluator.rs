//! Note-level evaluation against gold diagnoses.
//!
//! Each attribute (stage, grade, extent) gets its own confusion matrix with
//! rows = gold class and columns = predicted class. A missing diagnosis and
//! an `Unknown` value both land in the `absent` class. Per-class metrics are
//! one-vs-rest; macro and weighted averages run over the diagnosis classes
//! that occur in gold or predictions, never over `absent`. Any 0/0 ratio is
//! 0.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::corpus::{ClinicalNote, GoldRecord};
use crate::dataset::{EntityLabel, EntitySpan};
use crate::error::{Error, Result};
use crate::extractor::{extract_note, Method};
use crate::normalizer::{
    normalize_extent, normalize_grade, normalize_stage, resolve_most_severe, to_diagnosis,
    Diagnosis, Extent, Grade, Stage,
};
use crate::sectionizer::split_text;

pub const ABSENT: &str = "absent";

/// Per-note prediction (or gold) diagnoses keyed by note_id.
pub type NoteDiagnoses = BTreeMap<String, Option<Diagnosis>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attribute {
    Stage,
    Grade,
    Extent,
}

impl Attribute {
    pub const ALL: [Attribute; 3] = [Attribute::Stage, Attribute::Grade, Attribute::Extent];

    /// Class labels, `absent` last.
    pub fn classes(self) -> Vec<String> {
        let known: Vec<&str> = match self {
            Attribute::Stage => Stage::KNOWN.iter().filter_map(|s| s.as_str()).collect(),
            Attribute::Grade => Grade::KNOWN.iter().filter_map(|g| g.as_str()).collect(),
            Attribute::Extent => Extent::KNOWN.iter().filter_map(|e| e.as_str()).collect(),
        };
        known
            .into_iter()
            .chain([ABSENT])
            .map(str::to_string)
            .collect()
    }

    pub fn class_of(self, diagnosis: Option<&Diagnosis>) -> &'static str {
        let value = diagnosis.and_then(|d| match self {
            Attribute::Stage => d.stage.as_str(),
            Attribute::Grade => d.grade.as_str(),
            Attribute::Extent => d.extent.as_str(),
        });
        value.unwrap_or(ABSENT)
    }

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Stage => "Stage",
            Attribute::Grade => "Grade",
            Attribute::Extent => "Extent",
        }
    }
}

/// Strips a leading keyword ("stage", "grade") from a span surface.
fn span_value<'a>(surface: &'a str, keyword: &str) -> &'a str {
    let t = surface.trim();
    match t.get(..keyword.len()) {
        Some(head) if head.eq_ignore_ascii_case(keyword) => t[keyword.len()..].trim(),
        _ => t,
    }
}

/// First span of `label` whose value normalizes to something known.
fn first_known<T: Copy + PartialEq + Default>(
    spans: &[&EntitySpan],
    label: EntityLabel,
    norm: impl Fn(&str) -> T,
) -> T {
    spans
        .iter()
        .filter(|s| s.label == label)
        .map(|s| norm(&s.surface))
        .find(|v| *v != T::default())
        .unwrap_or_default()
}

/// Note diagnosis from tagger (or imported) spans: one candidate per
/// section, candidates without stage and grade dropped, most severe wins.
pub fn predictions_to_note_diagnosis(spans: &[EntitySpan], note_text: &str) -> Option<Diagnosis> {
    let sections = split_text("", note_text);
    let mut groups: BTreeMap<usize, Vec<&EntitySpan>> = BTreeMap::new();
    for span in spans {
        if let Some(idx) = sections
            .iter()
            .position(|s| s.start <= span.start && span.start < s.end)
        {
            groups.entry(idx).or_default().push(span);
        }
    }
    let candidates: Vec<Diagnosis> = groups
        .values()
        .map(|group| Diagnosis {
            stage: first_known(group, EntityLabel::Stage, |s| {
                normalize_stage(span_value(s, "stage"))
            }),
            grade: first_known(group, EntityLabel::Grade, |s| {
                normalize_grade(span_value(s, "grade"))
            }),
            extent: first_known(group, EntityLabel::Extent, normalize_extent),
        })
        .filter(|d| d.stage != Stage::Unknown || d.grade != Grade::Unknown)
        .collect();
    resolve_most_severe(&candidates)
}

/// Note diagnosis straight from a regex grammar.
pub fn re_note_diagnosis(note: &ClinicalNote, method: Method) -> Option<Diagnosis> {
    let found: Vec<Diagnosis> = extract_note(note, method).iter().map(to_diagnosis).collect();
    resolve_most_severe(&found)
}

pub fn re_diagnoses(notes: &[ClinicalNote], method: Method) -> NoteDiagnoses {
    notes
        .iter()
        .map(|n| (n.note_id.clone(), re_note_diagnosis(n, method)))
        .collect()
}

pub fn gold_diagnoses(gold: &[GoldRecord]) -> NoteDiagnoses {
    gold.iter()
        .map(|g| (g.note_id.clone(), g.diagnosis))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub attribute: Attribute,
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(attribute: Attribute, classes: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self> {
        if counts.len() != classes.len() || counts.iter().any(|r| r.len() != classes.len()) {
            return Err(Error::Parameter(format!(
                "confusion counts must be {0}x{0}",
                classes.len()
            )));
        }
        Ok(ConfusionMatrix {
            attribute,
            classes,
            counts,
        })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }
}

/// One count per gold note at (gold class, predicted class).
pub fn build_confusion(
    predictions: &NoteDiagnoses,
    gold: &[GoldRecord],
    attribute: Attribute,
) -> Result<ConfusionMatrix> {
    let gold_ids: BTreeSet<&str> = gold.iter().map(|g| g.note_id.as_str()).collect();
    if let Some(stray) = predictions.keys().find(|k| !gold_ids.contains(k.as_str())) {
        return Err(Error::UnknownNote(stray.clone()));
    }
    let classes = attribute.classes();
    let index = |c: &str| classes.iter().position(|x| x == c).unwrap();
    let mut counts = vec![vec![0u64; classes.len()]; classes.len()];
    for g in gold {
        let pred = predictions.get(&g.note_id).ok_or_else(|| {
            Error::KeyMismatch(format!("no prediction entry for gold note {:?}", g.note_id))
        })?;
        let row = index(attribute.class_of(g.diagnosis.as_ref()));
        let col = index(attribute.class_of(pred.as_ref()));
        counts[row][col] += 1;
    }
    ConfusionMatrix::new(attribute, classes, counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: BTreeMap<String, ClassMetrics>,
    #[serde(rename = "macro")]
    pub macro_avg: Averages,
    pub weighted: Averages,
    /// Classes the averages run over.
    pub averaged_classes: Vec<String>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// One-vs-rest metrics for every class plus macro and support-weighted
/// averages.
pub fn compute_metrics(matrix: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = matrix.total();
    if matrix.classes.is_empty() || total == 0 {
        return Err(Error::Parameter("confusion matrix is empty".into()));
    }
    let mut per_class = BTreeMap::new();
    let mut rows = Vec::new();
    for (i, class) in matrix.classes.iter().enumerate() {
        let tp = matrix.counts[i][i];
        let fp = matrix.col_sum(i) - tp;
        let fn_ = matrix.row_sum(i) - tp;
        let tn = total - tp - fp - fn_;
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let m = ClassMetrics {
            precision,
            recall,
            specificity: ratio(tn, tn + fp),
            f1: f1_score(precision, recall),
            support: tp + fn_,
        };
        let active = class != ABSENT && (tp + fp + fn_) > 0;
        rows.push((class.clone(), m, active));
        per_class.insert(class.clone(), m);
    }

    let active: Vec<&(String, ClassMetrics, bool)> = rows.iter().filter(|r| r.2).collect();
    let mut macro_avg = Averages::default();
    let mut weighted = Averages::default();
    if !active.is_empty() {
        let n = active.len() as f64;
        let support: u64 = active.iter().map(|r| r.1.support).sum();
        let w = support as f64;
        for (_, m, _) in &active {
            macro_avg.precision += m.precision / n;
            macro_avg.recall += m.recall / n;
            macro_avg.specificity += m.specificity / n;
            macro_avg.f1 += m.f1 / n;
            if support > 0 {
                let s = m.support as f64;
                weighted.precision += s * m.precision;
                weighted.recall += s * m.recall;
                weighted.specificity += s * m.specificity;
                weighted.f1 += s * m.f1;
            }
        }
        if support > 0 {
            weighted.precision /= w;
            weighted.recall /= w;
            weighted.specificity /= w;
            weighted.f1 /= w;
        }
    }
    Ok(MetricsReport {
        per_class,
        macro_avg,
        weighted,
        averaged_classes: active.iter().map(|r| r.0.clone()).collect(),
    })
}

/// Advanced results as the base, missing pieces filled from simple.
pub fn merge_combined(advanced: &NoteDiagnoses, simple: &NoteDiagnoses) -> Result<NoteDiagnoses> {
    if advanced.len() != simple.len() || advanced.keys().any(|k| !simple.contains_key(k)) {
        let only: Vec<&String> = advanced
            .keys()
            .filter(|k| !simple.contains_key(*k))
            .chain(simple.keys().filter(|k| !advanced.contains_key(*k)))
            .take(5)
            .collect();
        return Err(Error::KeyMismatch(format!("e.g. {only:?}")));
    }
    Ok(advanced
        .iter()
        .map(|(id, adv)| {
            let fallback = simple[id];
            let merged = match (adv, fallback) {
                (None, s) => s,
                (Some(a), None) => Some(*a),
                (Some(a), Some(s)) => Some(Diagnosis {
                    stage: if a.stage == Stage::Unknown { s.stage } else { a.stage },
                    grade: if a.grade == Grade::Unknown { s.grade } else { a.grade },
                    extent: if a.extent == Extent::Unknown { s.extent } else { a.extent },
                }),
            };
            (id.clone(), merged)
        })
        .collect())
}

/// Confusion matrix plus metrics for one attribute, as written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeReport {
    pub attribute: Attribute,
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
    pub per_class: BTreeMap<String, ClassMetrics>,
    #[serde(rename = "macro")]
    pub macro_avg: Averages,
    pub weighted: Averages,
    pub averaging: String,
}

const AVERAGING_NOTE: &str = "one-vs-rest per class; macro and weighted (by gold support) averages over diagnosis classes present in gold or predictions, excluding 'absent'; 0/0 = 0";

pub fn evaluate(predictions: &NoteDiagnoses, gold: &[GoldRecord]) -> Result<Vec<AttributeReport>> {
    Attribute::ALL
        .iter()
        .map(|&attribute| {
            let matrix = build_confusion(predictions, gold, attribute)?;
            let metrics = compute_metrics(&matrix)?;
            Ok(AttributeReport {
                attribute,
                classes: matrix.classes,
                counts: matrix.counts,
                per_class: metrics.per_class,
                macro_avg: metrics.macro_avg,
                weighted: metrics.weighted,
                averaging: AVERAGING_NOTE.to_string(),
            })
        })
        .collect()
}

/// Aligned text table: one row per attribute and average kind.
pub fn render_table(reports: &[AttributeReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<8} {:<17} {:>9} {:>7} {:>11} {:>8}",
        "", "", "Precision", "Recall", "Specificity", "F1"
    );
    for r in reports {
        for (kind, avg) in [("Macro average", &r.macro_avg), ("Weighted average", &r.weighted)] {
            let name = if kind.starts_with("Macro") { r.attribute.name() } else { "" };
            let _ = writeln!(
                out,
                "{:<8} {:<17} {:>9.2} {:>7.2} {:>11.2} {:>8.2}",
                name, kind, avg.precision, avg.recall, avg.specificity, avg.f1
            );
        }
    }
    out
}

/// Confusion matrix as a small grid, gold down the side.
pub fn render_confusion(report: &AttributeReport) -> String {
    let mut out = format!("{} (rows = gold, columns = predicted)\n", report.attribute.name());
    let _ = write!(out, "{:>12}", "");
    for c in &report.classes {
        let _ = write!(out, " {c:>11}");
    }
    out.push('\n');
    for (c, row) in report.classes.iter().zip(&report.counts) {
        let _ = write!(out, "{c:>12}");
        for n in row {
            let _ = write!(out, " {n:>11}");
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpanScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub gold: u64,
    pub predicted: u64,
}

impl fmt::Display for SpanScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "P={:.3} R={:.3} F1={:.3} (gold {}, predicted {})",
            self.precision, self.recall, self.f1, self.gold, self.predicted
        )
    }
}

/// Exact-match span scores per label, for diagnostics. Gold records
/// without spans are skipped.
pub fn span_level_scores(
    predictions: &BTreeMap<String, Vec<EntitySpan>>,
    gold: &[GoldRecord],
) -> BTreeMap<EntityLabel, SpanScore> {
    let mut counts: BTreeMap<EntityLabel, (u64, u64, u64)> =
        EntityLabel::ALL.iter().map(|l| (*l, (0, 0, 0))).collect();
    for g in gold {
        let Some(gold_spans) = &g.spans else { continue };
        let pred = predictions.get(&g.note_id).map_or(&[][..], Vec::as_slice);
        let key = |s: &EntitySpan| (s.label, s.start, s.end);
        let gold_keys: BTreeSet<_> = gold_spans.iter().map(key).collect();
        for p in pred {
            let c = counts.get_mut(&p.label).unwrap();
            c.1 += 1;
            if gold_keys.contains(&key(p)) {
                c.0 += 1;
            }
        }
        for s in gold_spans {
            counts.get_mut(&s.label).unwrap().2 += 1;
        }
    }
    counts
        .into_iter()
        .map(|(label, (tp, predicted, gold))| {
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, gold);
            (
                label,
                SpanScore {
                    precision,
                    recall,
                    f1: f1_score(precision, recall),
                    gold,
                    predicted,
                },
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use Extent::*;

    fn gold(id: &str, d: Option<Diagnosis>) -> GoldRecord {
        GoldRecord {
            note_id: id.into(),
            diagnosis: d,
            spans: None,
        }
    }

    fn dx(s: Stage, g: Grade, e: Extent) -> Option<Diagnosis> {
        Some(Diagnosis::new(s, g, e))
    }

    fn span(label: EntityLabel, text: &str, surface: &str) -> EntitySpan {
        let start = text.find(surface).unwrap();
        EntitySpan {
            label,
            start,
            end: start + surface.len(),
            surface: surface.into(),
        }
    }

    fn two_class(tp: u64, fp: u64, fn_: u64, tn: u64) -> ConfusionMatrix {
        // class "x" positive, "absent" the rest
        ConfusionMatrix::new(
            Attribute::Stage,
            vec!["x".into(), ABSENT.into()],
            vec![vec![tp, fn_], vec![fp, tn]],
        )
        .unwrap()
    }

    #[test]
    fn spans_to_note_diagnosis() {
        let text = "cc: exam\nd: generalized stage iii grade c periodontitis.";
        let spans = vec![
            span(EntityLabel::Extent, text, "generalized"),
            span(EntityLabel::Stage, text, "stage iii"),
            span(EntityLabel::Grade, text, "grade c"),
        ];
        assert_eq!(
            predictions_to_note_diagnosis(&spans, text),
            dx(Stage::III, Grade::C, Generalized)
        );

        let text = "d: localized stage ii grade b\nd: localized stage iii grade b.";
        let second = text.find('\n').unwrap() + 1;
        let mut spans = vec![
            span(EntityLabel::Stage, text, "stage ii"),
            span(EntityLabel::Grade, text, "grade b"),
            span(EntityLabel::Extent, text, "localized"),
        ];
        for (label, s) in [
            (EntityLabel::Stage, "stage iii"),
            (EntityLabel::Grade, "grade b."),
            (EntityLabel::Extent, "localized"),
        ] {
            let start = second + text[second..].find(s).unwrap();
            spans.push(EntitySpan { label, start, end: start + s.len(), surface: s.into() });
        }
        assert_eq!(
            predictions_to_note_diagnosis(&spans, text),
            dx(Stage::III, Grade::B, Localized)
        );
        assert_eq!(predictions_to_note_diagnosis(&[], text), None);

        // extent alone is not a diagnosis
        let text = "d: generalized gingivitis";
        let spans = vec![span(EntityLabel::Extent, text, "generalized")];
        assert_eq!(predictions_to_note_diagnosis(&spans, text), None);
    }

    #[test]
    fn confusion_cells() {
        let g = vec![gold("a", dx(Stage::III, Grade::B, Localized))];
        let mut p = NoteDiagnoses::new();
        p.insert("a".into(), dx(Stage::III, Grade::Unknown, Localized));
        let m = build_confusion(&p, &g, Attribute::Stage).unwrap();
        assert_eq!(m.counts[2][2], 1);
        let m = build_confusion(&p, &g, Attribute::Grade).unwrap();
        assert_eq!(m.counts[1][3], 1);

        p.insert("a".into(), None);
        let m = build_confusion(&p, &g, Attribute::Stage).unwrap();
        assert_eq!(m.counts[2][4], 1);

        let g = vec![gold("b", None)];
        let mut p = NoteDiagnoses::new();
        p.insert("b".into(), dx(Stage::II, Grade::B, Generalized));
        let m = build_confusion(&p, &g, Attribute::Grade).unwrap();
        assert_eq!(m.counts[3][1], 1);
        assert_eq!(m.total(), 1);

        p.insert("zz".into(), None);
        assert!(matches!(
            build_confusion(&p, &g, Attribute::Grade),
            Err(Error::UnknownNote(_))
        ));
    }

    #[test]
    fn metric_arithmetic() {
        let r = compute_metrics(&two_class(8, 2, 2, 88)).unwrap();
        let x = r.per_class["x"];
        assert!((x.precision - 0.8).abs() < 1e-12);
        assert!((x.recall - 0.8).abs() < 1e-12);
        assert!((x.f1 - 0.8).abs() < 1e-12);
        assert!((x.specificity - 88.0 / 90.0).abs() < 1e-12);
        assert_eq!(r.averaged_classes, ["x"]);
    }

    #[test]
    fn perfect_diagonal() {
        let m = ConfusionMatrix::new(
            Attribute::Grade,
            Attribute::Grade.classes(),
            vec![
                vec![3, 0, 0, 0],
                vec![0, 5, 0, 0],
                vec![0, 0, 2, 0],
                vec![0, 0, 0, 4],
            ],
        )
        .unwrap();
        let r = compute_metrics(&m).unwrap();
        for avg in [r.macro_avg, r.weighted] {
            assert_eq!((avg.precision, avg.recall, avg.specificity, avg.f1), (1.0, 1.0, 1.0, 1.0));
        }
    }

    #[test]
    fn weighted_example() {
        // class a: support 10, F1 0.9 (tp 9, fn 1, fp 1)
        // class b: support 30, F1 0.5 (tp 15, fn 15, fp 15)
        let m = ConfusionMatrix::new(
            Attribute::Grade,
            vec!["a".into(), "b".into(), ABSENT.into()],
            vec![vec![9, 0, 1], vec![0, 15, 15], vec![1, 15, 0]],
        )
        .unwrap();
        let r = compute_metrics(&m).unwrap();
        assert!((r.per_class["a"].f1 - 0.9).abs() < 1e-12);
        assert!((r.per_class["b"].f1 - 0.5).abs() < 1e-12);
        assert!((r.weighted.f1 - 0.6).abs() < 1e-12);
        assert!((r.macro_avg.f1 - 0.7).abs() < 1e-12);
    }

    #[test]
    fn empty_matrix_is_an_error() {
        let m = ConfusionMatrix::new(Attribute::Stage, vec!["x".into()], vec![vec![0]]).unwrap();
        assert!(compute_metrics(&m).is_err());
        assert!(ConfusionMatrix::new(Attribute::Stage, vec!["x".into()], vec![vec![0, 1]]).is_err());
    }

    #[test]
    fn merge_rules() {
        let mut adv = NoteDiagnoses::new();
        let mut simple = NoteDiagnoses::new();
        adv.insert("a".into(), None);
        simple.insert("a".into(), dx(Stage::III, Grade::B, Generalized));
        adv.insert("b".into(), dx(Stage::III, Grade::Unknown, Generalized));
        simple.insert("b".into(), dx(Stage::III, Grade::B, Generalized));
        adv.insert("c".into(), None);
        simple.insert("c".into(), None);
        adv.insert("d".into(), dx(Stage::II, Grade::A, Localized));
        simple.insert("d".into(), dx(Stage::IV, Grade::C, Generalized));
        let m = merge_combined(&adv, &simple).unwrap();
        assert_eq!(m["a"], dx(Stage::III, Grade::B, Generalized));
        assert_eq!(m["b"], dx(Stage::III, Grade::B, Generalized));
        assert_eq!(m["c"], None);
        assert_eq!(m["d"], adv["d"]);

        simple.remove("d");
        assert!(matches!(merge_combined(&adv, &simple), Err(Error::KeyMismatch(_))));
    }

    #[test]
    fn report_json_shape() {
        let g = vec![gold("a", dx(Stage::I, Grade::A, Localized))];
        let p: NoteDiagnoses = [("a".to_string(), dx(Stage::I, Grade::A, Localized))].into();
        let reports = evaluate(&p, &g).unwrap();
        let v = serde_json::to_value(&reports[0]).unwrap();
        for key in ["attribute", "classes", "counts", "per_class", "macro", "weighted"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        let table = render_table(&reports);
        assert!(table.contains("Weighted average"));
        assert_eq!(table.lines().count(), 7);
    }
}
