//! Prediction interchange: JSON Lines of `{"note_id", "spans"}` with spans
//! in note char offsets. The same schema is written by this crate and
//! accepted from external taggers.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{read_jsonl, write_jsonl, ClinicalNote};
use crate::dataset::EntitySpan;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub note_id: String,
    pub spans: Vec<EntitySpan>,
}

/// Writes one line per note, ordered by note_id.
pub fn export_predictions(path: &Path, predictions: &BTreeMap<String, Vec<EntitySpan>>) -> Result<()> {
    let records: Vec<PredictionRecord> = predictions
        .iter()
        .map(|(id, spans)| PredictionRecord {
            note_id: id.clone(),
            spans: spans.clone(),
        })
        .collect();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_jsonl(path, file, &records)
}

/// Reads predictions and checks every span against its note. Repeated
/// note_id lines are concatenated.
pub fn import_predictions(
    path: &Path,
    notes: &[ClinicalNote],
) -> Result<BTreeMap<String, Vec<EntitySpan>>> {
    let by_id: HashMap<&str, &ClinicalNote> =
        notes.iter().map(|n| (n.note_id.as_str(), n)).collect();
    let mut out: BTreeMap<String, Vec<EntitySpan>> = BTreeMap::new();
    for (_, record) in read_jsonl::<PredictionRecord>(path)? {
        let note = by_id
            .get(record.note_id.as_str())
            .ok_or_else(|| Error::UnknownNote(record.note_id.clone()))?;
        let entry = out.entry(record.note_id).or_default();
        for mut span in record.spans {
            span.resolve(&note.note_id, &note.text)?;
            entry.push(span);
        }
    }
    for spans in out.values_mut() {
        spans.sort_by_key(|s| (s.start, s.end, s.label));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::NoteSource;
    use crate::dataset::EntityLabel;
    use std::io::Write;

    fn notes(n: usize) -> Vec<ClinicalNote> {
        (0..n)
            .map(|i| ClinicalNote {
                note_id: format!("n{i}"),
                text: "d: stage ii grade a".into(),
                source: NoteSource::Real,
            })
            .collect()
    }

    fn write(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn sixty_notes() {
        let body: String = (0..60)
            .map(|i| format!("{{\"note_id\":\"n{i}\",\"spans\":[{{\"label\":\"STAGE\",\"start\":3,\"end\":11}}]}}\n"))
            .collect();
        let f = write(&body);
        let map = import_predictions(f.path(), &notes(60)).unwrap();
        assert_eq!(map.len(), 60);
        assert_eq!(map["n7"][0].surface, "stage ii");
    }

    #[test]
    fn out_of_bounds_names_note() {
        let f = write("{\"note_id\":\"n0\",\"spans\":[{\"label\":\"GRADE\",\"start\":12,\"end\":99}]}\n");
        match import_predictions(f.path(), &notes(1)) {
            Err(Error::SpanOutOfBounds { note_id, .. }) => assert_eq!(note_id, "n0"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicates_concatenate() {
        let f = write(concat!(
            "{\"note_id\":\"n0\",\"spans\":[{\"label\":\"GRADE\",\"start\":12,\"end\":19}]}\n",
            "{\"note_id\":\"n0\",\"spans\":[{\"label\":\"STAGE\",\"start\":3,\"end\":11}]}\n",
        ));
        let map = import_predictions(f.path(), &notes(1)).unwrap();
        let labels: Vec<_> = map["n0"].iter().map(|s| s.label).collect();
        assert_eq!(labels, [EntityLabel::Stage, EntityLabel::Grade]);
    }

    #[test]
    fn export_then_import() {
        let ns = notes(2);
        let mut map = BTreeMap::new();
        map.insert(
            "n1".to_string(),
            vec![EntitySpan { label: EntityLabel::Grade, start: 12, end: 19, surface: "grade a".into() }],
        );
        map.insert("n0".to_string(), vec![]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.jsonl");
        export_predictions(&p, &map).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(
            text,
            "{\"note_id\":\"n0\",\"spans\":[]}\n{\"note_id\":\"n1\",\"spans\":[{\"label\":\"GRADE\",\"start\":12,\"end\":19}]}\n"
        );
        assert_eq!(import_predictions(&p, &ns).unwrap(), map);
    }
}
