//! Seeded synthetic notes.
//!
//! Each note is 3–10 boilerplate lines with one or more diagnosis lines
//! mixed in. Diagnosis lines come from five sentence families:
//!
//! 1. `d: generalized stage iii grade c periodontitis.`
//! 2. `d- localized periodontitis, stage 3 grade b.`
//! 3. `d: tentative diagnosis is stage 3 grade c generalized`
//! 4. `d- stage iii grade b periodontitis.` (no extent)
//! 5. `d : generalized plaque induced gingivitis` (not periodontitis)
//!
//! The gold record of a note is the most severe of its rendered
//! periodontitis diagnoses, and its spans follow the weak-label convention
//! (`stage iii`, `grade c`, and the extent word).

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ClinicalNote, GoldRecord, NoteSource};
use crate::dataset::{EntityLabel, EntitySpan};
use crate::error::{Error, Result};
use crate::normalizer::{resolve_most_severe, Diagnosis, Extent, Grade, Stage};

/// Per-note probabilities of each rendering variation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseRates {
    /// Extent word with one optional letter dropped ("generlized").
    pub extent_typo: f64,
    /// Grade value followed by "." or ",".
    pub grade_trailing_symbol: f64,
    /// Stage written as 1–4 instead of i–iv.
    pub arabic_stage: f64,
    /// Family 2 or 3 instead of family 1.
    pub order_permuted: f64,
    /// Diagnosis line is gingivitis (family 5); gold is absent.
    pub non_perio_line: f64,
    /// A second periodontitis line in the same note.
    pub multi_diagnosis: f64,
    /// Family 4 (no extent).
    pub missing_extent: f64,
}

impl Default for NoiseRates {
    fn default() -> Self {
        NoiseRates {
            extent_typo: 0.1,
            grade_trailing_symbol: 0.2,
            arabic_stage: 0.3,
            order_permuted: 0.4,
            non_perio_line: 0.15,
            multi_diagnosis: 0.1,
            missing_extent: 0.15,
        }
    }
}

impl NoiseRates {
    pub fn zero() -> Self {
        NoiseRates {
            extent_typo: 0.0,
            grade_trailing_symbol: 0.0,
            arabic_stage: 0.0,
            order_permuted: 0.0,
            non_perio_line: 0.0,
            multi_diagnosis: 0.0,
            missing_extent: 0.0,
        }
    }

    fn entries(&self) -> [(&'static str, f64); 7] {
        [
            ("extent_typo", self.extent_typo),
            ("grade_trailing_symbol", self.grade_trailing_symbol),
            ("arabic_stage", self.arabic_stage),
            ("order_permuted", self.order_permuted),
            ("non_perio_line", self.non_perio_line),
            ("multi_diagnosis", self.multi_diagnosis),
            ("missing_extent", self.missing_extent),
        ]
    }

    /// Sets one rate by its name.
    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let slot = match name {
            "extent_typo" => &mut self.extent_typo,
            "grade_trailing_symbol" => &mut self.grade_trailing_symbol,
            "arabic_stage" => &mut self.arabic_stage,
            "order_permuted" => &mut self.order_permuted,
            "non_perio_line" => &mut self.non_perio_line,
            "multi_diagnosis" => &mut self.multi_diagnosis,
            "missing_extent" => &mut self.missing_extent,
            other => return Err(Error::Config(format!("unknown noise kind {other:?}"))),
        };
        *slot = value;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_notes: usize,
    pub seed: u64,
    #[serde(default)]
    pub noise_rates: NoiseRates,
    /// Probability that a note has a diagnosis section at all.
    #[serde(default = "default_section_rate")]
    pub diagnosis_section_rate: f64,
}

fn default_section_rate() -> f64 {
    0.987
}

impl SynthConfig {
    pub fn new(n_notes: usize, seed: u64) -> Self {
        SynthConfig {
            n_notes,
            seed,
            noise_rates: NoiseRates::default(),
            diagnosis_section_rate: default_section_rate(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_notes == 0 {
            return Err(Error::Config("n_notes must be at least 1".into()));
        }
        let rates = self
            .noise_rates
            .entries()
            .into_iter()
            .chain([("diagnosis_section_rate", self.diagnosis_section_rate)]);
        for (name, p) in rates {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} is not in [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    /// Ordered and complete.
    Ordered,
    /// Extent and disease word before stage/grade.
    ExtentFirst,
    /// Free-text lead, extent trailing.
    ExtentLast,
    /// Stage and grade only.
    NoExtent,
    /// Gingivitis.
    Gingivitis,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::Ordered,
        Family::ExtentFirst,
        Family::ExtentLast,
        Family::NoExtent,
        Family::Gingivitis,
    ];

    /// 1-based row number in the family list.
    pub fn number(self) -> usize {
        Family::ALL.iter().position(|f| *f == self).unwrap() + 1
    }
}

/// What the generator rendered for one note.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoteTrace {
    pub families: Vec<Family>,
    /// Periodontitis diagnoses in rendering order (gingivitis lines excluded).
    pub rendered: Vec<Diagnosis>,
    /// The diagnosis lines in note order.
    pub diagnosis_lines: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub notes: Vec<ClinicalNote>,
    pub gold: Vec<GoldRecord>,
    pub traces: Vec<NoteTrace>,
}

pub fn generate_synthetic_corpus(
    config: &SynthConfig,
) -> Result<(Vec<ClinicalNote>, Vec<GoldRecord>)> {
    let corpus = synthesize(config)?;
    Ok((corpus.notes, corpus.gold))
}

/// Like [`generate_synthetic_corpus`], also returning per-note traces.
pub fn synthesize(config: &SynthConfig) -> Result<SyntheticCorpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let forced = forced_families(config);
    let width = config.n_notes.to_string().len().max(5);

    let mut corpus = SyntheticCorpus {
        notes: Vec::with_capacity(config.n_notes),
        gold: Vec::with_capacity(config.n_notes),
        traces: Vec::with_capacity(config.n_notes),
    };
    for i in 0..config.n_notes {
        let note_id = format!("synth-{i:0width$}");
        let (note, gold, trace) = render_note(&mut rng, config, note_id, forced.get(i).copied());
        corpus.notes.push(note);
        corpus.gold.push(gold);
        corpus.traces.push(trace);
    }
    Ok(corpus)
}

/// From 50 notes up, the first notes cycle through every family the rates
/// can produce so each one is guaranteed to appear.
fn forced_families(config: &SynthConfig) -> Vec<Family> {
    if config.n_notes < 50 {
        return Vec::new();
    }
    let r = &config.noise_rates;
    Family::ALL
        .into_iter()
        .filter(|f| match f {
            Family::Ordered => r.missing_extent < 1.0 && r.order_permuted < 1.0,
            Family::ExtentFirst | Family::ExtentLast => {
                r.missing_extent < 1.0 && r.order_permuted > 0.0
            }
            Family::NoExtent => r.missing_extent > 0.0,
            Family::Gingivitis => r.non_perio_line > 0.0,
        })
        .collect()
}

const COMPLAINTS: &[&str] = &[
    "cc: pt reports bleeding gums when brushing",
    "cc: routine periodic exam and cleaning",
    "cc: sensitivity on lower left",
    "cc: \"my gums are sore\"",
    "cc: loose tooth #24",
    "cc: bad breath for several months",
];
const HISTORY: &[&str] = &[
    "hx: htn controlled with lisinopril",
    "hx: type 2 diabetes, last a1c 7.2",
    "hx: no significant medical history",
    "hx: smoker 1 ppd x 15 yrs",
    "medications reviewed, no changes",
    "dental history: last cleaning 2 years ago",
    "allergies: nkda",
];
const FINDINGS: &[&str] = &[
    "pd: 4-6mm generalized posterior, bop 40%",
    "radiographs: 4 bwx taken, horizontal bone loss noted",
    "perio charting completed, see chart",
    "occlusion: class i, no mobility except #24",
    "calculus: moderate subgingival deposits",
    "gingiva: red, edematous marginal tissue",
];
const PROCEDURES: &[&str] = &[
    "tx: full mouth debridement",
    "tx: srp ur and lr quadrants with local anesthetic",
    "tx: prophylaxis completed",
    "ohi given, pt instructed on flossing",
    "rx: chlorhexidine 0.12% rinse bid",
    "stage of treatment: phase 1 completed",
    "pt tolerated procedure well.",
];
const NEXT_VISIT: &[&str] = &[
    "nv: re-eval in 6 weeks",
    "nv: srp remaining quadrants",
    "nv: 3 month perio maintenance",
];
const FAMILY_3_LEADS: &[&str] = &[
    "tentative diagnosis is",
    "consistent with",
    "findings support",
    "pt presents with",
];
const GINGIVITIS: &[&str] = &[
    "plaque induced gingivitis",
    "plaque-induced gingivitis on an intact periodontium",
    "gingivitis, biofilm induced",
];
const MARKER_VARIANTS: &[&str] = &["d:", "d-", "d :", "D:", "Diagnosis:", "diagnosis -", "D -"];

#[derive(Default)]
struct LineBuilder {
    text: String,
    chars: usize,
    spans: Vec<EntitySpan>,
}

impl LineBuilder {
    fn push(&mut self, s: &str) {
        self.text.push_str(s);
        self.chars += s.chars().count();
    }

    fn entity(&mut self, label: EntityLabel, s: &str) {
        let start = self.chars;
        self.push(s);
        self.spans.push(EntitySpan {
            label,
            start,
            end: self.chars,
            surface: s.to_string(),
        });
    }
}

fn pick<'a>(rng: &mut ChaCha8Rng, items: &[&'a str]) -> &'a str {
    items.choose(rng).copied().unwrap()
}

fn sample_diagnosis(rng: &mut ChaCha8Rng) -> Diagnosis {
    Diagnosis::new(
        *Stage::KNOWN.choose(rng).unwrap(),
        *Grade::KNOWN.choose(rng).unwrap(),
        *Extent::KNOWN.choose(rng).unwrap(),
    )
}

fn sample_perio_family(rng: &mut ChaCha8Rng, rates: &NoiseRates) -> Family {
    if rng.gen_bool(rates.missing_extent) {
        Family::NoExtent
    } else if rng.gen_bool(rates.order_permuted) {
        if rng.gen_bool(0.5) {
            Family::ExtentFirst
        } else {
            Family::ExtentLast
        }
    } else {
        Family::Ordered
    }
}

fn canonical_marker(family: Family) -> &'static str {
    match family {
        Family::Ordered | Family::ExtentLast => "d:",
        Family::ExtentFirst | Family::NoExtent => "d-",
        Family::Gingivitis => "d :",
    }
}

fn extent_word(rng: &mut ChaCha8Rng, extent: Extent, typo: bool) -> String {
    let (word, optional_from) = match extent {
        Extent::Localized => ("localized", 4),
        _ => ("generalized", 4),
    };
    if !typo {
        return word.to_string();
    }
    // drop one of the letters the pattern marks optional
    let drop = rng.gen_range(optional_from..word.len());
    word.char_indices()
        .filter(|(i, _)| *i != drop)
        .map(|(_, c)| c)
        .collect()
}

fn stage_word(stage: Stage, arabic: bool) -> &'static str {
    match (stage, arabic) {
        (Stage::I, false) => "i",
        (Stage::II, false) => "ii",
        (Stage::III, false) => "iii",
        (Stage::IV, false) => "iv",
        (Stage::I, true) => "1",
        (Stage::II, true) => "2",
        (Stage::III, true) => "3",
        (Stage::IV, true) => "4",
        (Stage::Unknown, _) => unreachable!("synthetic stages are always known"),
    }
}

fn grade_word(grade: Grade) -> &'static str {
    match grade {
        Grade::A => "a",
        Grade::B => "b",
        Grade::C => "c",
        Grade::Unknown => unreachable!("synthetic grades are always known"),
    }
}

/// Renders one diagnosis line of `family`.
fn render_line(
    rng: &mut ChaCha8Rng,
    rates: &NoiseRates,
    family: Family,
    dx: Diagnosis,
) -> LineBuilder {
    let marker = if rng.gen_bool(0.3) {
        pick(rng, MARKER_VARIANTS)
    } else {
        canonical_marker(family)
    };
    let typo = rng.gen_bool(rates.extent_typo);
    let extent = extent_word(rng, dx.extent, typo);
    let stage = format!(
        "stage {}",
        stage_word(dx.stage, rng.gen_bool(rates.arabic_stage))
    );
    let symbol = if rng.gen_bool(rates.grade_trailing_symbol) {
        pick(rng, &[".", ","])
    } else {
        ""
    };
    let grade = format!("grade {}{}", grade_word(dx.grade), symbol);

    let mut line = LineBuilder::default();
    line.push(marker);
    line.push(" ");
    match family {
        Family::Ordered => {
            line.entity(EntityLabel::Extent, &extent);
            line.push(" ");
            line.entity(EntityLabel::Stage, &stage);
            line.push(" ");
            line.entity(EntityLabel::Grade, &grade);
            line.push(" periodontitis.");
        }
        Family::ExtentFirst => {
            line.entity(EntityLabel::Extent, &extent);
            line.push(" periodontitis, ");
            line.entity(EntityLabel::Stage, &stage);
            line.push(" ");
            // the closing period sticks to the grade value, as a capture would take it
            let closing = if symbol.is_empty() {
                format!("{grade}.")
            } else {
                grade.clone()
            };
            line.entity(EntityLabel::Grade, &closing);
        }
        Family::ExtentLast => {
            line.push(pick(rng, FAMILY_3_LEADS));
            line.push(" ");
            line.entity(EntityLabel::Stage, &stage);
            line.push(" ");
            line.entity(EntityLabel::Grade, &grade);
            line.push(" ");
            line.entity(EntityLabel::Extent, &extent);
        }
        Family::NoExtent => {
            line.entity(EntityLabel::Stage, &stage);
            line.push(" ");
            line.entity(EntityLabel::Grade, &grade);
            line.push(" periodontitis.");
        }
        Family::Gingivitis => {
            line.push(&extent);
            line.push(" ");
            line.push(pick(rng, GINGIVITIS));
            // gingivitis lines carry no gold spans
            line.spans.clear();
        }
    }
    if rng.gen_bool(0.1) {
        title_case(&mut line);
    }
    line
}

/// Capitalizes the first letter of every word; char offsets are unchanged.
fn title_case(line: &mut LineBuilder) {
    let mut out = String::with_capacity(line.text.len());
    let mut prev_alpha = false;
    for c in line.text.chars() {
        if c.is_alphabetic() && !prev_alpha {
            out.extend(c.to_uppercase());
        } else {
            out.push(c);
        }
        prev_alpha = c.is_alphanumeric();
    }
    for span in &mut line.spans {
        span.surface = out
            .chars()
            .skip(span.start)
            .take(span.end - span.start)
            .collect();
    }
    line.text = out;
}

fn boilerplate(rng: &mut ChaCha8Rng) -> Vec<String> {
    let n = rng.gen_range(3..=10);
    let pools = [COMPLAINTS, HISTORY, FINDINGS, PROCEDURES, NEXT_VISIT];
    let mut lines: Vec<String> = Vec::with_capacity(n);
    lines.push(pick(rng, COMPLAINTS).to_string());
    while lines.len() < n {
        let pool = pools[1 + rng.gen_range(0..pools.len() - 1)];
        lines.push(pick(rng, pool).to_string());
    }
    lines
}

fn render_note(
    rng: &mut ChaCha8Rng,
    config: &SynthConfig,
    note_id: String,
    forced: Option<Family>,
) -> (ClinicalNote, GoldRecord, NoteTrace) {
    let rates = &config.noise_rates;
    let mut lines = boilerplate(rng);

    let has_section = forced.is_some() || rng.gen_bool(config.diagnosis_section_rate);
    let mut families = Vec::new();
    if has_section {
        let first = match forced {
            Some(f) => f,
            None if rng.gen_bool(rates.non_perio_line) => Family::Gingivitis,
            None => sample_perio_family(rng, rates),
        };
        families.push(first);
        if first != Family::Gingivitis && rng.gen_bool(rates.multi_diagnosis) {
            families.push(sample_perio_family(rng, rates));
        }
    }

    let mut rendered = Vec::new();
    let mut dx_lines: Vec<(usize, LineBuilder)> = Vec::new();
    let mut slot = rng.gen_range(1..=lines.len());
    for family in &families {
        let mut dx = sample_diagnosis(rng);
        if *family == Family::NoExtent {
            dx.extent = Extent::Unknown;
        }
        let line = render_line(rng, rates, *family, dx);
        if *family != Family::Gingivitis {
            rendered.push(dx);
        }
        dx_lines.push((slot, line));
        slot = rng.gen_range(slot.min(lines.len())..=lines.len()) + 1;
    }

    // interleave; later insertions shift earlier indices, so insert in reverse
    let mut entries: Vec<(String, Vec<EntitySpan>)> =
        lines.drain(..).map(|l| (l, Vec::new())).collect();
    for (at, line) in dx_lines.into_iter().rev() {
        let at = at.min(entries.len());
        entries.insert(at, (line.text, line.spans));
    }

    let mut text = String::new();
    let mut spans = Vec::new();
    let mut offset = 0;
    let mut diagnosis_lines = Vec::new();
    for (i, (line, line_spans)) in entries.into_iter().enumerate() {
        if i > 0 {
            text.push('\n');
            offset += 1;
        }
        if crate::sectionizer::is_diagnosis_line(&line) {
            diagnosis_lines.push(line.clone());
        }
        spans.extend(line_spans.into_iter().map(|mut s| {
            s.start += offset;
            s.end += offset;
            s
        }));
        offset += line.chars().count();
        text.push_str(&line);
    }

    let diagnosis = resolve_most_severe(&rendered);
    let note = ClinicalNote {
        note_id: note_id.clone(),
        text,
        source: NoteSource::Synthetic,
    };
    let gold = GoldRecord {
        note_id,
        diagnosis,
        spans: Some(spans),
    };
    let trace = NoteTrace {
        families,
        rendered,
        diagnosis_lines,
    };
    (note, gold, trace)
}
