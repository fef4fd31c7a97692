//! Note and gold-standard ingestion, plus the synthetic corpus generator.

mod synth;

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::EntitySpan;
use crate::error::{Error, Result};
use crate::normalizer::Diagnosis;
use crate::text::char_len;

pub use synth::{
    generate_synthetic_corpus, synthesize, Family, NoiseRates, NoteTrace, SynthConfig,
    SyntheticCorpus,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoteSource {
    #[default]
    Real,
    Synthetic,
}

impl NoteSource {
    fn is_real(&self) -> bool {
        *self == NoteSource::Real
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClinicalNote {
    pub note_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "NoteSource::is_real")]
    pub source: NoteSource,
}

/// Gold annotation for one note. `diagnosis: None` means the note carries
/// no periodontitis diagnosis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldRecord {
    pub note_id: String,
    pub diagnosis: Option<Diagnosis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spans: Option<Vec<EntitySpan>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoteFormat {
    Jsonl,
    Csv,
}

impl NoteFormat {
    /// `.csv` files are CSV, anything else JSON Lines.
    pub fn from_path(path: &Path) -> NoteFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => NoteFormat::Csv,
            _ => NoteFormat::Jsonl,
        }
    }
}

#[derive(Deserialize)]
struct NoteRecord {
    note_id: Option<String>,
    text: Option<String>,
    #[serde(default)]
    source: NoteSource,
}

struct NoteCollector<'a> {
    path: &'a Path,
    seen: HashSet<String>,
    notes: Vec<ClinicalNote>,
}

impl NoteCollector<'_> {
    fn push(&mut self, line: usize, record: NoteRecord) -> Result<()> {
        let malformed = |message: &str| Error::Malformed {
            path: self.path.to_path_buf(),
            line,
            message: message.to_string(),
        };
        let note_id = record
            .note_id
            .filter(|id| !id.is_empty())
            .ok_or_else(|| malformed("missing or empty `note_id`"))?;
        let text = record
            .text
            .filter(|t| !t.is_empty())
            .ok_or_else(|| malformed("missing or empty `text`"))?;
        if !self.seen.insert(note_id.clone()) {
            return Err(Error::DuplicateNoteId {
                path: self.path.to_path_buf(),
                line,
                note_id,
            });
        }
        self.notes.push(ClinicalNote {
            note_id,
            text,
            source: record.source,
        });
        Ok(())
    }
}

/// Reads notes in file order. Line numbers in errors are 1-based.
pub fn load_notes(path: &Path, format: NoteFormat) -> Result<Vec<ClinicalNote>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut collector = NoteCollector {
        path,
        seen: HashSet::new(),
        notes: Vec::new(),
    };
    match format {
        NoteFormat::Jsonl => {
            for (idx, line) in BufReader::new(file).lines().enumerate() {
                let line_no = idx + 1;
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: NoteRecord =
                    serde_json::from_str(&line).map_err(|e| Error::Malformed {
                        path: path.to_path_buf(),
                        line: line_no,
                        message: e.to_string(),
                    })?;
                collector.push(line_no, record)?;
            }
        }
        NoteFormat::Csv => {
            let mut reader = csv::Reader::from_reader(file);
            for record in reader.deserialize::<NoteRecord>() {
                let record = record.map_err(|e| Error::Malformed {
                    path: path.to_path_buf(),
                    line: e.position().map_or(0, |p| p.line() as usize),
                    message: e.to_string(),
                })?;
                // header is line 1
                let line_no = collector.notes.len() + 2;
                collector.push(line_no, record)?;
            }
        }
    }
    Ok(collector.notes)
}

pub fn write_notes(path: &Path, notes: &[ClinicalNote], format: NoteFormat) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    match format {
        NoteFormat::Jsonl => write_jsonl(path, file, notes),
        NoteFormat::Csv => {
            let mut writer = csv::Writer::from_writer(file);
            let io_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
            writer.write_record(["note_id", "text"]).map_err(io_err)?;
            for n in notes {
                writer
                    .write_record([n.note_id.as_str(), n.text.as_str()])
                    .map_err(io_err)?;
            }
            writer.flush().map_err(|e| Error::io(path, e))
        }
    }
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, file: File, items: &[T]) -> Result<()> {
    let mut out = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Parses each non-blank line of a JSON Lines file as `T`.
pub(crate) fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push((idx + 1, value));
    }
    Ok(out)
}

/// Reads a gold file. Out-of-domain stage/grade/extent values are reported
/// as malformed records naming the line.
pub fn load_gold(path: &Path) -> Result<Vec<GoldRecord>> {
    let records: Vec<(usize, GoldRecord)> = read_jsonl(path)?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(records.len());
    for (line, record) in records {
        if record.note_id.is_empty() {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                line,
                message: "empty `note_id`".into(),
            });
        }
        if !seen.insert(record.note_id.clone()) {
            return Err(Error::DuplicateNoteId {
                path: path.to_path_buf(),
                line,
                note_id: record.note_id,
            });
        }
        out.push(record);
    }
    Ok(out)
}

pub fn write_gold(path: &Path, gold: &[GoldRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_jsonl(path, file, gold)
}

/// Checks that every gold record refers to a note and that its spans fit the
/// note text, filling in span surfaces.
pub fn validate_gold(gold: &mut [GoldRecord], notes: &[ClinicalNote]) -> Result<()> {
    let by_id: std::collections::HashMap<&str, &ClinicalNote> =
        notes.iter().map(|n| (n.note_id.as_str(), n)).collect();
    for record in gold.iter_mut() {
        let note = by_id
            .get(record.note_id.as_str())
            .ok_or_else(|| Error::UnknownNote(record.note_id.clone()))?;
        if let Some(spans) = record.spans.as_mut() {
            for span in spans.iter_mut() {
                span.resolve(&note.note_id, &note.text)?;
            }
        }
    }
    Ok(())
}

/// Total note length in chars; exposed for bounds checks by other modules.
pub fn note_len(note: &ClinicalNote) -> usize {
    char_len(&note.text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::EntityLabel;
    use crate::normalizer::{Extent, Grade, Stage};

    fn file_with(content: &str, suffix: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(suffix).tempfile().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_jsonl_in_order() {
        let f = file_with(
            "{\"note_id\":\"a\",\"text\":\"x\\ny\"}\n{\"note_id\":\"b\",\"text\":\"z\"}\n",
            ".jsonl",
        );
        let notes = load_notes(f.path(), NoteFormat::Jsonl).unwrap();
        assert_eq!(notes.len(), 2);
        assert_eq!(notes[0].note_id, "a");
        assert_eq!(notes[0].text, "x\ny");
        assert_eq!(notes[1].source, NoteSource::Real);
    }

    #[test]
    fn missing_text_names_line() {
        let f = file_with(
            "{\"note_id\":\"a\",\"text\":\"x\"}\n{\"note_id\":\"b\"}\n",
            ".jsonl",
        );
        match load_notes(f.path(), NoteFormat::Jsonl) {
            Err(Error::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let f = file_with(
            "{\"note_id\":\"n1\",\"text\":\"x\"}\n{\"note_id\":\"n1\",\"text\":\"y\"}\n",
            ".jsonl",
        );
        assert!(matches!(
            load_notes(f.path(), NoteFormat::Jsonl),
            Err(Error::DuplicateNoteId { line: 2, .. })
        ));
    }

    #[test]
    fn csv_with_quoted_newlines() {
        let f = file_with(
            "note_id,text\nn1,\"d: stage ii grade a\nline two\"\nn2,plain\n",
            ".csv",
        );
        assert_eq!(NoteFormat::from_path(f.path()), NoteFormat::Csv);
        let notes = load_notes(f.path(), NoteFormat::Csv).unwrap();
        assert_eq!(notes.len(), 2);
        assert_eq!(notes[0].text, "d: stage ii grade a\nline two");

        let f = file_with("note_id,text\nn1,\n", ".csv");
        assert!(matches!(
            load_notes(f.path(), NoteFormat::Csv),
            Err(Error::Malformed { line: 2, .. })
        ));
    }

    #[test]
    fn unreadable_file() {
        assert!(matches!(
            load_notes(Path::new("/nonexistent/notes.jsonl"), NoteFormat::Jsonl),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn gold_records() {
        let f = file_with(
            concat!(
                "{\"note_id\":\"a\",\"diagnosis\":{\"stage\":\"III\",\"grade\":\"C\",\"extent\":\"generalized\"}}\n",
                "{\"note_id\":\"b\",\"diagnosis\":null}\n",
            ),
            ".jsonl",
        );
        let gold = load_gold(f.path()).unwrap();
        assert_eq!(
            gold[0].diagnosis,
            Some(Diagnosis::new(Stage::III, Grade::C, Extent::Generalized))
        );
        assert_eq!(gold[1].diagnosis, None);

        let f = file_with("{\"note_id\":\"a\",\"diagnosis\":{\"stage\":\"VII\"}}\n", ".jsonl");
        match load_gold(f.path()) {
            Err(Error::Malformed { line, message, .. }) => {
                assert_eq!(line, 1);
                assert!(message.contains("VII"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn gold_spans_validated_against_notes() {
        let notes = vec![ClinicalNote {
            note_id: "a".into(),
            text: "d: stage ii grade a".into(),
            source: NoteSource::Real,
        }];
        let f = file_with(
            "{\"note_id\":\"a\",\"diagnosis\":null,\"spans\":[{\"label\":\"STAGE\",\"start\":3,\"end\":11}]}\n",
            ".jsonl",
        );
        let mut gold = load_gold(f.path()).unwrap();
        validate_gold(&mut gold, &notes).unwrap();
        let span = &gold[0].spans.as_ref().unwrap()[0];
        assert_eq!(span.label, EntityLabel::Stage);
        assert_eq!(span.surface, "stage ii");

        let f = file_with(
            "{\"note_id\":\"a\",\"diagnosis\":null,\"spans\":[{\"label\":\"GRADE\",\"start\":12,\"end\":40}]}\n",
            ".jsonl",
        );
        let mut gold = load_gold(f.path()).unwrap();
        assert!(matches!(
            validate_gold(&mut gold, &notes),
            Err(Error::SpanOutOfBounds { .. })
        ));

        let mut orphan = vec![GoldRecord {
            note_id: "zz".into(),
            diagnosis: None,
            spans: None,
        }];
        assert!(matches!(
            validate_gold(&mut orphan, &notes),
            Err(Error::UnknownNote(_))
        ));
    }
}
