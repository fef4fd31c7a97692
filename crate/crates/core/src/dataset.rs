//! Weak-label sentences in standoff form and the seeded 8:1:1 split.

use std::fmt;
use std::fs::File;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{read_jsonl, write_jsonl, ClinicalNote};
use crate::error::{Error, Result};
use crate::extractor::{extract_note, CapturedField, Method, RawCapture};
use crate::text::{char_len, char_slice};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum EntityLabel {
    Stage,
    Grade,
    Extent,
}

impl EntityLabel {
    pub const ALL: [EntityLabel; 3] = [EntityLabel::Stage, EntityLabel::Grade, EntityLabel::Extent];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityLabel::Stage => "STAGE",
            EntityLabel::Grade => "GRADE",
            EntityLabel::Extent => "EXTENT",
        }
    }
}

impl fmt::Display for EntityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A labelled char range. On disk only `label`, `start` and `end` are
/// stored; `surface` is refilled from the text by [`EntitySpan::resolve`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntitySpan {
    pub label: EntityLabel,
    pub start: usize,
    pub end: usize,
    #[serde(skip)]
    pub surface: String,
}

impl EntitySpan {
    /// Checks bounds against `text` and fills `surface`.
    pub fn resolve(&mut self, note_id: &str, text: &str) -> Result<()> {
        let len = char_len(text);
        let out_of_bounds = || Error::SpanOutOfBounds {
            note_id: note_id.to_string(),
            label: self.label.to_string(),
            start: self.start,
            end: self.end,
            len,
        };
        if self.start >= self.end || self.end > len {
            return Err(out_of_bounds());
        }
        self.surface = char_slice(text, self.start, self.end)
            .ok_or_else(out_of_bounds)?
            .to_string();
        Ok(())
    }

    /// The same span shifted by `delta` chars (negative moves left).
    pub fn shifted(&self, delta: isize) -> EntitySpan {
        EntitySpan {
            label: self.label,
            start: (self.start as isize + delta) as usize,
            end: (self.end as isize + delta) as usize,
            surface: self.surface.clone(),
        }
    }
}

/// One diagnosis section with its entity spans (offsets relative to `text`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedSentence {
    pub note_id: String,
    pub text: String,
    pub spans: Vec<EntitySpan>,
}

impl AnnotatedSentence {
    pub fn resolve(&mut self) -> Result<()> {
        for span in &mut self.spans {
            span.resolve(&self.note_id, &self.text)?;
        }
        Ok(())
    }
}

fn joined(kw: &CapturedField, value: &CapturedField) -> (usize, usize) {
    (kw.start, value.end)
}

/// Weak-label sentence for one filtered capture: `stage <value>`,
/// `grade <value>`, and the extent token, relative to the section.
pub fn sentence_from_capture(capture: &RawCapture) -> AnnotatedSentence {
    let base = capture.section_start;
    let text = &capture.section_text;
    let mut ranges = Vec::new();
    if let (Some(kw), Some(v)) = (&capture.stage_kw, &capture.stage_raw) {
        ranges.push((EntityLabel::Stage, joined(kw, v)));
    }
    if let (Some(kw), Some(v)) = (&capture.grade_kw, &capture.grade_raw) {
        ranges.push((EntityLabel::Grade, joined(kw, v)));
    }
    if let Some(e) = &capture.extent_raw {
        ranges.push((EntityLabel::Extent, (e.start, e.end)));
    }
    let mut spans: Vec<EntitySpan> = ranges
        .into_iter()
        .map(|(label, (s, e))| EntitySpan {
            label,
            start: s - base,
            end: e - base,
            surface: char_slice(text, s - base, e - base)
                .unwrap_or_default()
                .to_string(),
        })
        .collect();
    spans.sort_by_key(|s| (s.start, s.end));
    // order-free searches can land on overlapping text; keep the earliest
    let mut kept: Vec<EntitySpan> = Vec::with_capacity(spans.len());
    for s in spans {
        if kept.last().is_none_or(|k| k.end <= s.start) {
            kept.push(s);
        }
    }
    AnnotatedSentence {
        note_id: capture.note_id.clone(),
        text: text.clone(),
        spans: kept,
    }
}

pub fn build_weak_dataset(notes: &[ClinicalNote], method: Method) -> Vec<AnnotatedSentence> {
    notes
        .iter()
        .flat_map(|n| extract_note(n, method))
        .map(|c| sentence_from_capture(&c))
        .collect()
}

pub fn write_dataset(path: &Path, sentences: &[AnnotatedSentence]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_jsonl(path, file, sentences)
}

pub fn load_dataset(path: &Path) -> Result<Vec<AnnotatedSentence>> {
    read_jsonl::<AnnotatedSentence>(path)?
        .into_iter()
        .map(|(line, mut s)| {
            s.resolve().map_err(|e| Error::Malformed {
                path: path.to_path_buf(),
                line,
                message: e.to_string(),
            })?;
            Ok(s)
        })
        .collect()
}

/// Part sizes for `n` items: floor(0.8n), floor(0.1n), remainder.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = n * 8 / 10;
    let validation = n / 10;
    (train, validation, n - train - validation)
}

/// Index lists into the input, as stored in the split manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitManifest {
    pub fn new(n: usize, seed: u64) -> Result<SplitManifest> {
        if n < 3 {
            return Err(Error::Parameter(format!(
                "need at least 3 sentences to split, got {n}"
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (train, validation, _) = split_sizes(n);
        let test = order.split_off(train + validation);
        let validation = order.split_off(train);
        Ok(SplitManifest {
            seed,
            train: order,
            validation,
            test,
        })
    }

    pub fn apply(&self, sentences: &[AnnotatedSentence]) -> Result<DatasetSplit> {
        let pick = |idx: &[usize]| -> Result<Vec<AnnotatedSentence>> {
            idx.iter()
                .map(|&i| {
                    sentences.get(i).cloned().ok_or_else(|| {
                        Error::Parameter(format!(
                            "split index {i} out of range for {} sentences",
                            sentences.len()
                        ))
                    })
                })
                .collect()
        };
        Ok(DatasetSplit {
            train: pick(&self.train)?,
            validation: pick(&self.validation)?,
            test: pick(&self.test)?,
            seed: self.seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<AnnotatedSentence>,
    pub validation: Vec<AnnotatedSentence>,
    pub test: Vec<AnnotatedSentence>,
    pub seed: u64,
}

/// Seeded shuffle, then cut by the floor/floor/remainder rule.
pub fn split_dataset(sentences: &[AnnotatedSentence], seed: u64) -> Result<DatasetSplit> {
    SplitManifest::new(sentences.len(), seed)?.apply(sentences)
}
