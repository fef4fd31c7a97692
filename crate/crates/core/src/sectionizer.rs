//! Line sections and the diagnosis-marker screen.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::ClinicalNote;

/// One non-empty line of a note. Offsets are chars into the note text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub note_id: String,
    pub start: usize,
    pub end: usize,
    pub text: String,
}

/// Splits `note` on `\n` (a `\r` directly before it belongs to the line
/// break). Empty lines are dropped.
pub fn split_sections(note: &ClinicalNote) -> Vec<Section> {
    split_text(&note.note_id, &note.text)
}

pub(crate) fn split_text(note_id: &str, text: &str) -> Vec<Section> {
    let mut sections = Vec::new();
    let mut char_pos = 0;
    let mut lines = text.split('\n').peekable();
    while let Some(raw_line) = lines.next() {
        let raw_len = raw_line.chars().count();
        let line = match raw_line.strip_suffix('\r') {
            Some(stripped) if lines.peek().is_some() => stripped,
            _ => raw_line,
        };
        let len = line.chars().count();
        if len > 0 {
            sections.push(Section {
                note_id: note_id.to_string(),
                start: char_pos,
                end: char_pos + len,
                text: line.to_string(),
            });
        }
        char_pos += raw_len + 1;
    }
    sections
}

pub(crate) fn marker_pattern() -> &'static Regex {
    static MARKER: OnceLock<Regex> = OnceLock::new();
    MARKER.get_or_init(|| Regex::new(r"(?i)^\s*(?:diagnosis|d)[ \t]*[:\-]+").unwrap())
}

/// True iff the section opens with a `d` / `diagnosis` marker followed by a
/// `:` or `-` separator, ignoring case and leading whitespace.
pub fn is_diagnosis_section(section: &Section) -> bool {
    is_diagnosis_line(&section.text)
}

pub(crate) fn is_diagnosis_line(text: &str) -> bool {
    marker_pattern().is_match(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::NoteSource;
    use proptest::prelude::*;

    fn note(text: &str) -> ClinicalNote {
        ClinicalNote {
            note_id: "n1".into(),
            text: text.into(),
            source: NoteSource::Real,
        }
    }

    fn section(text: &str) -> Section {
        Section {
            note_id: "n".into(),
            start: 0,
            end: text.chars().count(),
            text: text.into(),
        }
    }

    #[test]
    fn two_lines() {
        let s = split_sections(&note("line1\nline2"));
        assert_eq!(s.len(), 2);
        assert_eq!((s[0].start, s[0].end), (0, 5));
        assert_eq!((s[1].start, s[1].end), (6, 11));
        assert_eq!(s[1].text, "line2");
    }

    #[test]
    fn empty_line_dropped() {
        let s = split_sections(&note("a\n\nb"));
        let texts: Vec<_> = s.iter().map(|s| s.text.as_str()).collect();
        assert_eq!(texts, ["a", "b"]);
        assert_eq!(s[1].start, 3);
    }

    #[test]
    fn single_line() {
        let s = split_sections(&note("d: stage ii grade a"));
        assert_eq!(s.len(), 1);
        assert_eq!((s[0].start, s[0].end), (0, 19));
    }

    #[test]
    fn crlf_is_one_break() {
        let s = split_sections(&note("ab\r\ncd\r\n"));
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].text, "ab");
        assert_eq!((s[1].start, s[1].end), (4, 6));
        // a lone trailing \r with no newline after it is content
        let s = split_sections(&note("ab\r"));
        assert_eq!(s[0].text, "ab\r");
    }

    #[test]
    fn multibyte_offsets() {
        let s = split_sections(&note("caf\u{e9}\nd: x"));
        assert_eq!((s[0].start, s[0].end), (0, 4));
        assert_eq!((s[1].start, s[1].end), (5, 9));
    }

    #[test]
    fn marker_detection() {
        assert!(is_diagnosis_section(&section(
            "d: generalized stage iii grade c periodontitis."
        )));
        assert!(is_diagnosis_section(&section(
            "d : generalized plaque induced gingivitis"
        )));
        assert!(is_diagnosis_section(&section("  Diagnosis - stage ii")));
        assert!(is_diagnosis_section(&section("D-- stage ii")));
        assert!(!is_diagnosis_section(&section("tx: prophylaxis completed")));
        assert!(!is_diagnosis_section(&section("dental history: none")));
        assert!(!is_diagnosis_section(&section("dx: chronic")));
        assert!(!is_diagnosis_section(&section("d stage ii")));
    }

    proptest! {
        #[test]
        fn offsets_reconstruct_note(text in "[a-c \r\n\u{e9}]{0,40}") {
            let n = note(&text);
            let sections = split_sections(&n);
            let chars: Vec<char> = text.chars().collect();
            let mut cursor = 0;
            for s in &sections {
                prop_assert!(s.start < s.end && s.end <= chars.len());
                prop_assert!(s.start >= cursor);
                let gap: String = chars[cursor..s.start].iter().collect();
                prop_assert!(gap.chars().all(|c| c == '\n' || c == '\r'));
                let body: String = chars[s.start..s.end].iter().collect();
                prop_assert_eq!(&body, &s.text);
                cursor = s.end;
            }
            let tail: String = chars[cursor..].iter().collect();
            prop_assert!(tail.chars().all(|c| c == '\n' || c == '\r'));
        }

        #[test]
        fn marker_case_insensitive(text in "[dDiagnosIAGNOS :\\-a-z]{0,20}") {
            let s = section(&text);
            let up = section(&text.to_uppercase());
            prop_assert_eq!(is_diagnosis_section(&s), is_diagnosis_section(&up));
        }
    }
}
