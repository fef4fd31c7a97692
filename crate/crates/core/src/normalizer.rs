//! Canonical diagnosis values and the reduction of raw captured strings onto
//! them.
//!
//! Every normalizer is total: strings that cannot be generalized become
//! `Unknown`. `Unknown` is declared first in each enum so that the derived
//! `Ord` ranks it lowest, which is the severity order used by
//! [`resolve_most_severe`].

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::extractor::RawCapture;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum Stage {
    #[default]
    Unknown,
    I,
    II,
    III,
    IV,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum Grade {
    #[default]
    Unknown,
    A,
    B,
    C,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum Extent {
    #[default]
    Unknown,
    Localized,
    Generalized,
}

impl Stage {
    pub const KNOWN: [Stage; 4] = [Stage::I, Stage::II, Stage::III, Stage::IV];

    /// Canonical surface, `None` for `Unknown`.
    pub fn as_str(self) -> Option<&'static str> {
        match self {
            Stage::I => Some("I"),
            Stage::II => Some("II"),
            Stage::III => Some("III"),
            Stage::IV => Some("IV"),
            Stage::Unknown => None,
        }
    }

    /// Strict parse of a canonical surface (case-insensitive).
    pub fn parse_canonical(s: &str) -> Result<Stage> {
        match s.to_ascii_uppercase().as_str() {
            "I" => Ok(Stage::I),
            "II" => Ok(Stage::II),
            "III" => Ok(Stage::III),
            "IV" => Ok(Stage::IV),
            _ => Err(Error::Domain {
                field: "stage",
                value: s.to_string(),
            }),
        }
    }
}

impl Grade {
    pub const KNOWN: [Grade; 3] = [Grade::A, Grade::B, Grade::C];

    pub fn as_str(self) -> Option<&'static str> {
        match self {
            Grade::A => Some("A"),
            Grade::B => Some("B"),
            Grade::C => Some("C"),
            Grade::Unknown => None,
        }
    }

    pub fn parse_canonical(s: &str) -> Result<Grade> {
        match s.to_ascii_uppercase().as_str() {
            "A" => Ok(Grade::A),
            "B" => Ok(Grade::B),
            "C" => Ok(Grade::C),
            _ => Err(Error::Domain {
                field: "grade",
                value: s.to_string(),
            }),
        }
    }
}

impl Extent {
    pub const KNOWN: [Extent; 2] = [Extent::Localized, Extent::Generalized];

    pub fn as_str(self) -> Option<&'static str> {
        match self {
            Extent::Localized => Some("localized"),
            Extent::Generalized => Some("generalized"),
            Extent::Unknown => None,
        }
    }

    pub fn parse_canonical(s: &str) -> Result<Extent> {
        match s.to_ascii_lowercase().as_str() {
            "localized" => Ok(Extent::Localized),
            "generalized" => Ok(Extent::Generalized),
            _ => Err(Error::Domain {
                field: "extent",
                value: s.to_string(),
            }),
        }
    }
}

macro_rules! nullable_serde {
    ($ty:ty) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
                match self.as_str() {
                    Some(s) => ser.serialize_str(s),
                    None => ser.serialize_none(),
                }
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
                match Option::<String>::deserialize(de)? {
                    None => Ok(<$ty>::Unknown),
                    Some(s) => <$ty>::parse_canonical(&s).map_err(serde::de::Error::custom),
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str().unwrap_or("Unknown"))
            }
        }
    };
}

nullable_serde!(Stage);
nullable_serde!(Grade);
nullable_serde!(Extent);

/// A normalized (stage, grade, extent) triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Diagnosis {
    #[serde(default)]
    pub stage: Stage,
    #[serde(default)]
    pub grade: Grade,
    #[serde(default)]
    pub extent: Extent,
}

impl Diagnosis {
    pub fn new(stage: Stage, grade: Grade, extent: Extent) -> Self {
        Diagnosis {
            stage,
            grade,
            extent,
        }
    }

    /// Severity order: stage first, then extent, then grade.
    pub fn severity_cmp(&self, other: &Diagnosis) -> Ordering {
        (self.stage, self.extent, self.grade).cmp(&(other.stage, other.extent, other.grade))
    }
}

impl fmt::Display for Diagnosis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.stage, self.grade, self.extent)
    }
}

/// Characters trimmed off both ends before mapping a value.
fn strip_symbols(raw: &str) -> &str {
    raw.trim_matches(|c: char| !c.is_alphanumeric())
}

pub fn normalize_stage(raw: &str) -> Stage {
    match strip_symbols(raw).to_lowercase().as_str() {
        "i" | "1" => Stage::I,
        "ii" | "2" => Stage::II,
        "iii" | "3" => Stage::III,
        "iv" | "4" => Stage::IV,
        _ => Stage::Unknown,
    }
}

pub fn normalize_grade(raw: &str) -> Grade {
    Normalizer::default().grade(raw)
}

fn extent_patterns() -> &'static (Regex, Regex) {
    static PATTERNS: OnceLock<(Regex, Regex)> = OnceLock::new();
    PATTERNS.get_or_init(|| {
        (
            Regex::new(r"(?i)^(?:gener?a?l?i?z?e?d?)$").unwrap(),
            Regex::new(r"(?i)^(?:local?i?z?e?d?)$").unwrap(),
        )
    })
}

pub fn normalize_extent(raw: &str) -> Extent {
    let s = strip_symbols(raw);
    let (generalized, localized) = extent_patterns();
    if generalized.is_match(s) {
        Extent::Generalized
    } else if localized.is_match(s) {
        Extent::Localized
    } else {
        Extent::Unknown
    }
}

/// Normalization with a configurable grade alias table.
///
/// The default table is empty, so roman-numeral grades such as `"ii"` are
/// left `Unknown`. Callers who want to coerce them can register aliases.
#[derive(Debug, Clone, Default)]
pub struct Normalizer {
    grade_aliases: BTreeMap<String, Grade>,
}

impl Normalizer {
    pub fn with_grade_alias(mut self, surface: &str, grade: Grade) -> Self {
        self.grade_aliases
            .insert(strip_symbols(surface).to_lowercase(), grade);
        self
    }

    pub fn stage(&self, raw: &str) -> Stage {
        normalize_stage(raw)
    }

    pub fn grade(&self, raw: &str) -> Grade {
        let s = strip_symbols(raw).to_lowercase();
        match s.as_str() {
            "a" => Grade::A,
            "b" => Grade::B,
            "c" => Grade::C,
            other => self
                .grade_aliases
                .get(other)
                .copied()
                .unwrap_or(Grade::Unknown),
        }
    }

    pub fn extent(&self, raw: &str) -> Extent {
        normalize_extent(raw)
    }

    pub fn to_diagnosis(&self, capture: &RawCapture) -> Diagnosis {
        Diagnosis {
            stage: capture
                .stage_raw
                .as_ref()
                .map_or(Stage::Unknown, |f| self.stage(&f.text)),
            grade: capture
                .grade_raw
                .as_ref()
                .map_or(Grade::Unknown, |f| self.grade(&f.text)),
            extent: capture
                .extent_raw
                .as_ref()
                .map_or(Extent::Unknown, |f| self.extent(&f.text)),
        }
    }
}

/// Fieldwise normalization of a capture with the default alias table.
pub fn to_diagnosis(capture: &RawCapture) -> Diagnosis {
    Normalizer::default().to_diagnosis(capture)
}

/// The most severe diagnosis, first occurrence on ties; `None` when empty.
pub fn resolve_most_severe(diagnoses: &[Diagnosis]) -> Option<Diagnosis> {
    let mut best: Option<&Diagnosis> = None;
    for d in diagnoses {
        match best {
            Some(b) if d.severity_cmp(b) != Ordering::Greater => {}
            _ => best = Some(d),
        }
    }
    best.copied()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extractor::{CapturedField, Method};
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn field(text: &str) -> Option<CapturedField> {
        Some(CapturedField {
            text: text.to_string(),
            start: 0,
            end: text.chars().count(),
        })
    }

    fn capture(extent: Option<&str>, stage: Option<&str>, grade: Option<&str>) -> RawCapture {
        RawCapture {
            note_id: "n".into(),
            section_start: 0,
            section_text: String::new(),
            method: Method::Advanced,
            dx_marker: field("d:").unwrap(),
            extent_raw: extent.and_then(field),
            stage_kw: stage.and(field("stage")),
            stage_raw: stage.and_then(field),
            grade_kw: grade.and(field("grade")),
            grade_raw: grade.and_then(field),
            perio_token: None,
        }
    }

    #[test]
    fn stage_values() {
        assert_eq!(normalize_stage("iii"), Stage::III);
        assert_eq!(normalize_stage("3"), Stage::III);
        assert_eq!(normalize_stage("IV,"), Stage::IV);
        assert_eq!(normalize_stage("v"), Stage::Unknown);
        assert_eq!(normalize_stage(""), Stage::Unknown);
    }

    #[test]
    fn grade_values() {
        assert_eq!(normalize_grade("b."), Grade::B);
        assert_eq!(normalize_grade("c"), Grade::C);
        assert_eq!(normalize_grade("C,"), Grade::C);
        assert_eq!(normalize_grade("ii"), Grade::Unknown);
        assert_eq!(normalize_grade("d"), Grade::Unknown);
    }

    #[test]
    fn grade_alias_table() {
        let n = Normalizer::default().with_grade_alias("ii", Grade::B);
        assert_eq!(n.grade("ii."), Grade::B);
        assert_eq!(n.grade("iii"), Grade::Unknown);
    }

    /// Every string accepted by `prefix` followed by an in-order subsequence
    /// of `optional`, built by enumerating subsets instead of a regex.
    fn optional_letter_language(prefix: &str, optional: &str) -> BTreeSet<String> {
        let opt: Vec<char> = optional.chars().collect();
        (0u32..(1 << opt.len()))
            .map(|mask| {
                let mut s = prefix.to_string();
                for (i, c) in opt.iter().enumerate() {
                    if mask & (1 << i) != 0 {
                        s.push(*c);
                    }
                }
                s
            })
            .collect()
    }

    #[test]
    fn extent_values_against_enumerated_language() {
        let generalized = optional_letter_language("gene", "ralized");
        let localized = optional_letter_language("loca", "lized");
        assert!(generalized.contains("generlized"));
        assert_eq!(normalize_extent("generlized"), Extent::Generalized);
        for s in &generalized {
            assert_eq!(normalize_extent(s), Extent::Generalized, "{s}");
        }
        for s in &localized {
            assert_eq!(normalize_extent(s), Extent::Localized, "{s}");
        }
        assert_eq!(normalize_extent("generalized"), Extent::Generalized);
        assert_eq!(normalize_extent("Localized,"), Extent::Localized);
        assert_eq!(normalize_extent("buccal"), Extent::Unknown);
        assert_eq!(normalize_extent("generalise"), Extent::Unknown);
    }

    #[test]
    fn capture_to_diagnosis() {
        assert_eq!(
            to_diagnosis(&capture(Some("generalized"), Some("iii"), Some("c"))),
            Diagnosis::new(Stage::III, Grade::C, Extent::Generalized)
        );
        assert_eq!(
            to_diagnosis(&capture(None, Some("iii"), Some("b"))),
            Diagnosis::new(Stage::III, Grade::B, Extent::Unknown)
        );
        assert_eq!(
            to_diagnosis(&capture(Some("localized"), Some("3"), Some("b."))),
            Diagnosis::new(Stage::III, Grade::B, Extent::Localized)
        );
    }

    #[test]
    fn most_severe_examples() {
        use Extent::*;
        let a = Diagnosis::new(Stage::III, Grade::B, Generalized);
        let b = Diagnosis::new(Stage::II, Grade::C, Generalized);
        assert_eq!(resolve_most_severe(&[a, b]), Some(a));

        let c = Diagnosis::new(Stage::III, Grade::C, Localized);
        let d = Diagnosis::new(Stage::III, Grade::A, Generalized);
        assert_eq!(resolve_most_severe(&[c, d]), Some(d));

        assert_eq!(resolve_most_severe(&[]), None);
    }

    #[test]
    fn serialization_uses_null_for_unknown() {
        let d = Diagnosis::new(Stage::III, Grade::Unknown, Extent::Generalized);
        let json = serde_json::to_string(&d).unwrap();
        assert_eq!(json, r#"{"stage":"III","grade":null,"extent":"generalized"}"#);
        let back: Diagnosis = serde_json::from_str(&json).unwrap();
        assert_eq!(back, d);
        assert!(serde_json::from_str::<Diagnosis>(r#"{"stage":"VII"}"#).is_err());
    }

    fn any_stage() -> impl Strategy<Value = Stage> {
        prop_oneof![
            Just(Stage::Unknown),
            Just(Stage::I),
            Just(Stage::II),
            Just(Stage::III),
            Just(Stage::IV)
        ]
    }
    fn any_grade() -> impl Strategy<Value = Grade> {
        prop_oneof![
            Just(Grade::Unknown),
            Just(Grade::A),
            Just(Grade::B),
            Just(Grade::C)
        ]
    }
    fn any_extent() -> impl Strategy<Value = Extent> {
        prop_oneof![
            Just(Extent::Unknown),
            Just(Extent::Localized),
            Just(Extent::Generalized)
        ]
    }
    fn any_diagnosis() -> impl Strategy<Value = Diagnosis> {
        (any_stage(), any_grade(), any_extent()).prop_map(|(s, g, e)| Diagnosis::new(s, g, e))
    }

    proptest! {
        #[test]
        fn normalizers_are_total_and_idempotent(raw in "\\PC{0,12}") {
            let s = normalize_stage(&raw);
            let g = normalize_grade(&raw);
            let e = normalize_extent(&raw);
            if let Some(c) = s.as_str() { prop_assert_eq!(normalize_stage(c), s); }
            if let Some(c) = g.as_str() { prop_assert_eq!(normalize_grade(c), g); }
            if let Some(c) = e.as_str() { prop_assert_eq!(normalize_extent(c), e); }
        }

        #[test]
        fn most_severe_is_member_and_permutation_stable(
            xs in proptest::collection::vec(any_diagnosis(), 1..12),
            seed in any::<u64>(),
        ) {
            let best = resolve_most_severe(&xs).unwrap();
            prop_assert!(xs.contains(&best));
            for x in &xs {
                prop_assert_ne!(x.severity_cmp(&best), Ordering::Greater);
            }
            let mut ys = xs.clone();
            // cheap deterministic permutation
            let n = ys.len();
            ys.rotate_left((seed as usize) % n);
            ys.reverse();
            let other = resolve_most_severe(&ys).unwrap();
            prop_assert_eq!(other.severity_cmp(&best), Ordering::Equal);
        }
    }
}
