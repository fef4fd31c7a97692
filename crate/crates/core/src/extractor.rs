//! The two diagnosis grammars and the stage/grade presence filter.
//!
//! The simple grammar accepts a diagnosis line only when every label is
//! present and in order: marker, extent, `stage <value>`, `grade <value>`,
//! then the word "periodontitis". The advanced grammar anchors only on the
//! marker and then searches the remainder of the line for each label
//! independently, so order does not matter and any label may be missing.
//!
//! The `regex` crate has no lookahead, so the order-free search of the
//! advanced grammar is run as one leftmost search per label over the text
//! following the marker. This is equivalent to a chain of optional
//! `(?=.*(...))` lookaheads evaluated from the same position.
//!
//! Extent and "periodontitis" tolerate dropped letters (`generlized`,
//! `periodontis`).

use std::sync::OnceLock;

use regex::{Captures, Regex};
use serde::{Deserialize, Serialize};

use crate::corpus::ClinicalNote;
use crate::sectionizer::{is_diagnosis_section, marker_pattern, split_sections, Section};
use crate::text::char_offset;

const EXTENT: &str = r"gener?a?l?i?z?e?d?|local?i?z?e?d?";
const STAGE_VALUE: &str = r"[\w\d]+";
// grade values may drag trailing punctuation along ("b."); normalization strips it
const GRADE_VALUE: &str = r"[\w\d]+[^\s\w]*";
const PERIODONTITIS: &str = r"periodont?i?t?i?s?";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Simple,
    Advanced,
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "simple" => Ok(Method::Simple),
            "advanced" => Ok(Method::Advanced),
            other => Err(format!("unknown method {other:?} (expected simple|advanced)")),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Simple => "simple",
            Method::Advanced => "advanced",
        })
    }
}

/// A captured string and its char span `[start, end)` in the note text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapturedField {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// One grammar hit on one diagnosis section.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawCapture {
    pub note_id: String,
    /// Char offset of the section in the note.
    pub section_start: usize,
    pub section_text: String,
    pub method: Method,
    pub dx_marker: CapturedField,
    pub extent_raw: Option<CapturedField>,
    pub stage_kw: Option<CapturedField>,
    pub stage_raw: Option<CapturedField>,
    pub grade_kw: Option<CapturedField>,
    pub grade_raw: Option<CapturedField>,
    pub perio_token: Option<CapturedField>,
}

impl RawCapture {
    /// All present fields by name.
    pub fn fields(&self) -> Vec<(&'static str, &CapturedField)> {
        let mut out = vec![("dx_marker", &self.dx_marker)];
        let optional = [
            ("extent_raw", &self.extent_raw),
            ("stage_kw", &self.stage_kw),
            ("stage_raw", &self.stage_raw),
            ("grade_kw", &self.grade_kw),
            ("grade_raw", &self.grade_raw),
            ("perio_token", &self.perio_token),
        ];
        out.extend(
            optional
                .into_iter()
                .filter_map(|(name, f)| f.as_ref().map(|f| (name, f))),
        );
        out
    }

    pub fn section_end(&self) -> usize {
        self.section_start + self.section_text.chars().count()
    }
}

struct Grammars {
    simple: Regex,
    extent: Regex,
    stage: Regex,
    grade: Regex,
}

fn grammars() -> &'static Grammars {
    static GRAMMARS: OnceLock<Grammars> = OnceLock::new();
    GRAMMARS.get_or_init(|| Grammars {
        simple: Regex::new(&format!(
            r"(?i)^\s*(?P<dx>(?:diagnosis|d)[ \t]*[:\-]+) ?\b(?P<extent>{EXTENT})\b ?\b(?P<stage_kw>stage) (?P<stage_val>{STAGE_VALUE}) ?\b(?P<grade_kw>grade) (?P<grade_val>{GRADE_VALUE}) ?\b(?P<perio>{PERIODONTITIS})\b"
        ))
        .unwrap(),
        extent: Regex::new(&format!(r"(?i)\b(?P<extent>{EXTENT})\b")).unwrap(),
        stage: Regex::new(&format!(
            r"(?i)\b(?P<stage_kw>stage)[ \t]+(?P<stage_val>{STAGE_VALUE})"
        ))
        .unwrap(),
        grade: Regex::new(&format!(
            r"(?i)\b(?P<grade_kw>grade)[ \t]+(?P<grade_val>{GRADE_VALUE})"
        ))
        .unwrap(),
    })
}

/// Converts byte ranges within a section into note char spans.
struct SectionFrame<'a> {
    section: &'a Section,
}

impl SectionFrame<'_> {
    fn field(&self, byte_start: usize, byte_end: usize) -> CapturedField {
        let text = &self.section.text;
        let start = self.section.start + char_offset(text, byte_start);
        let end = self.section.start + char_offset(text, byte_end);
        CapturedField {
            text: text[byte_start..byte_end].to_string(),
            start,
            end,
        }
    }

    fn group(&self, caps: &Captures<'_>, name: &str, base: usize) -> Option<CapturedField> {
        caps.name(name)
            .map(|m| self.field(base + m.start(), base + m.end()))
    }

    fn capture(&self, method: Method, dx_marker: CapturedField) -> RawCapture {
        RawCapture {
            note_id: self.section.note_id.clone(),
            section_start: self.section.start,
            section_text: self.section.text.clone(),
            method,
            dx_marker,
            extent_raw: None,
            stage_kw: None,
            stage_raw: None,
            grade_kw: None,
            grade_raw: None,
            perio_token: None,
        }
    }
}

/// Ordered, all-labels grammar. Returns a capture with every field present.
pub fn extract_simple(section: &Section) -> Option<RawCapture> {
    let caps = grammars().simple.captures(&section.text)?;
    let frame = SectionFrame { section };
    let mut capture = frame.capture(Method::Simple, frame.group(&caps, "dx", 0)?);
    capture.extent_raw = frame.group(&caps, "extent", 0);
    capture.stage_kw = frame.group(&caps, "stage_kw", 0);
    capture.stage_raw = frame.group(&caps, "stage_val", 0);
    capture.grade_kw = frame.group(&caps, "grade_kw", 0);
    capture.grade_raw = frame.group(&caps, "grade_val", 0);
    capture.perio_token = frame.group(&caps, "perio", 0);
    Some(capture)
}

/// Order-free, partial-labels grammar. Only the marker is required.
pub fn extract_advanced(section: &Section) -> Option<RawCapture> {
    let text = section.text.as_str();
    let marker = marker_pattern().find(text)?;
    let frame = SectionFrame { section };
    // the marker pattern includes leading whitespace; the captured marker does not
    let lead = text[..marker.end()].len() - text[..marker.end()].trim_start().len();
    let mut capture = frame.capture(Method::Advanced, frame.field(lead, marker.end()));

    let rest_at = marker.end();
    let rest = &text[rest_at..];
    let g = grammars();
    if let Some(caps) = g.extent.captures(rest) {
        capture.extent_raw = frame.group(&caps, "extent", rest_at);
    }
    if let Some(caps) = g.stage.captures(rest) {
        capture.stage_kw = frame.group(&caps, "stage_kw", rest_at);
        capture.stage_raw = frame.group(&caps, "stage_val", rest_at);
    }
    if let Some(caps) = g.grade.captures(rest) {
        capture.grade_kw = frame.group(&caps, "grade_kw", rest_at);
        capture.grade_raw = frame.group(&caps, "grade_val", rest_at);
    }
    Some(capture)
}

/// Keeps captures carrying the marker, a stage value, and a grade value.
/// Extent is not required.
pub fn apply_label_filter(capture: &RawCapture) -> bool {
    !capture.dx_marker.text.is_empty() && capture.stage_raw.is_some() && capture.grade_raw.is_some()
}

pub fn extract_section(section: &Section, method: Method) -> Option<RawCapture> {
    if !is_diagnosis_section(section) {
        return None;
    }
    let capture = match method {
        Method::Simple => extract_simple(section),
        Method::Advanced => extract_advanced(section),
    }?;
    apply_label_filter(&capture).then_some(capture)
}

/// Filtered captures of every diagnosis section of `note`, in section order.
pub fn extract_note(note: &ClinicalNote, method: Method) -> Vec<RawCapture> {
    split_sections(note)
        .iter()
        .filter_map(|s| extract_section(s, method))
        .collect()
}
