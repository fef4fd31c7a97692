//! Averaged-perceptron BIO tagger trained on weak labels.
//!
//! Decoding is greedy, left to right, with the previous predicted tag as a
//! feature. Training uses the same greedy decoder for its predictions, so
//! the model learns from the tag histories it will see at prediction time.

mod bio;
mod predictions;

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use bio::{encode, repair, spans_to_tags, tags_to_spans, tokenize, Tag, Token};
pub use predictions::{export_predictions, import_predictions, PredictionRecord};

use crate::corpus::ClinicalNote;
use crate::dataset::{AnnotatedSentence, DatasetSplit, EntitySpan};
use crate::error::{Error, Result};
use crate::sectionizer::{is_diagnosis_section, split_sections};

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const FEATURE_TEMPLATE_VERSION: u32 = 1;

type Scores = [f64; Tag::COUNT];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainParams {
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            epochs: 10,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    /// Token-level mistakes made while training this epoch.
    pub mistakes: usize,
    /// Exact-match span F1 on the validation part; `None` when it is empty.
    pub validation_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub epochs: Vec<EpochReport>,
    /// Training sentences dropped because a span did not align with tokens.
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub epochs: usize,
    pub seed: u64,
    pub feature_template_version: u32,
    pub training_sentences: usize,
}

/// Learned weights, one score per tag for every feature string.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggerModel {
    weights: HashMap<String, Scores>,
    averaged: HashMap<String, Scores>,
    pub metadata: TrainingMetadata,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    feature_template_version: u32,
    labels: Vec<Tag>,
    metadata: TrainingMetadata,
    weights: BTreeMap<String, Vec<f64>>,
    averaged: BTreeMap<String, Vec<f64>>,
}

fn word_shape(w: &str) -> String {
    let mut shape = String::new();
    for c in w.chars() {
        let s = if c.is_uppercase() {
            'X'
        } else if c.is_lowercase() {
            'x'
        } else if c.is_numeric() {
            'd'
        } else {
            c
        };
        if !shape.ends_with(s) {
            shape.push(s);
        }
    }
    shape
}

fn affix(w: &str, n: usize, suffix: bool) -> String {
    let chars: Vec<char> = w.chars().collect();
    if suffix {
        chars[chars.len().saturating_sub(n)..].iter().collect()
    } else {
        chars[..n.min(chars.len())].iter().collect()
    }
}

/// Token-local features; everything except the previous-tag features.
fn static_features(words: &[String], i: usize) -> Vec<String> {
    let at = |j: isize| -> &str {
        if j < 0 {
            "<s>"
        } else {
            words.get(j as usize).map_or("</s>", String::as_str)
        }
    };
    let i = i as isize;
    let w = at(i);
    vec![
        "bias".to_string(),
        format!("w={w}"),
        format!("shape={}", word_shape(w)),
        format!("p3={}", affix(w, 3, false)),
        format!("s3={}", affix(w, 3, true)),
        format!("w-1={}", at(i - 1)),
        format!("w+1={}", at(i + 1)),
        format!("w-2={}", at(i - 2)),
        format!("w+2={}", at(i + 2)),
    ]
}

fn tag_features(prev: Tag, word: &str) -> [String; 2] {
    [format!("t-1={prev}"), format!("t-1|w={prev}|{word}")]
}

fn lowered(tokens: &[Token]) -> Vec<String> {
    tokens.iter().map(|t| t.surface.to_lowercase()).collect()
}

/// Highest score wins; ties go to the earlier tag.
fn argmax(scores: &Scores) -> Tag {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if *s > scores[best] {
            best = i;
        }
    }
    Tag::from_index(best)
}

#[derive(Default, Clone, Copy)]
struct WeightCell {
    weight: Scores,
    total: Scores,
    stamp: [u64; Tag::COUNT],
}

struct Perceptron {
    cells: HashMap<String, WeightCell>,
    instances: u64,
}

impl Perceptron {
    fn score(&self, features: &[String], extra: &[String]) -> Scores {
        let mut scores = [0.0; Tag::COUNT];
        for f in features.iter().chain(extra) {
            if let Some(cell) = self.cells.get(f) {
                for (s, w) in scores.iter_mut().zip(&cell.weight) {
                    *s += w;
                }
            }
        }
        scores
    }

    fn bump(&mut self, feature: &str, tag: Tag, delta: f64) {
        let now = self.instances;
        let cell = self.cells.entry(feature.to_string()).or_default();
        let k = tag.index();
        cell.total[k] += (now - cell.stamp[k]) as f64 * cell.weight[k];
        cell.stamp[k] = now;
        cell.weight[k] += delta;
    }

    fn update(&mut self, features: &[String], extra: &[String], truth: Tag, guess: Tag) {
        for f in features.iter().chain(extra) {
            self.bump(f, truth, 1.0);
            self.bump(f, guess, -1.0);
        }
    }

    fn snapshot(&self) -> (HashMap<String, Scores>, HashMap<String, Scores>) {
        let now = self.instances.max(1) as f64;
        let mut weights = HashMap::with_capacity(self.cells.len());
        let mut averaged = HashMap::with_capacity(self.cells.len());
        for (f, cell) in &self.cells {
            let mut avg = [0.0; Tag::COUNT];
            for k in 0..Tag::COUNT {
                let total =
                    cell.total[k] + (self.instances - cell.stamp[k]) as f64 * cell.weight[k];
                avg[k] = total / now;
            }
            weights.insert(f.clone(), cell.weight);
            averaged.insert(f.clone(), avg);
        }
        (weights, averaged)
    }
}

struct Example {
    words: Vec<String>,
    features: Vec<Vec<String>>,
    gold: Vec<Tag>,
}

impl Example {
    fn new(sentence: &AnnotatedSentence) -> Result<Example> {
        let tokens = tokenize(&sentence.text);
        let gold = encode(&tokens, &sentence.spans)?;
        let words = lowered(&tokens);
        let features = (0..words.len()).map(|i| static_features(&words, i)).collect();
        Ok(Example {
            words,
            features,
            gold,
        })
    }
}

/// Trains for `params.epochs` passes over a seeded shuffle of the training
/// part, reporting validation span F1 after each epoch.
pub fn train(split: &DatasetSplit, params: TrainParams) -> Result<(TaggerModel, TrainingReport)> {
    if params.epochs == 0 {
        return Err(Error::Parameter("epochs must be at least 1".into()));
    }
    if split.train.is_empty() {
        return Err(Error::Parameter("training set is empty".into()));
    }
    let mut skipped = 0;
    let examples: Vec<Example> = split
        .train
        .iter()
        .filter_map(|s| match Example::new(s) {
            Ok(e) => Some(e),
            Err(_) => {
                skipped += 1;
                None
            }
        })
        .collect();
    if examples.is_empty() {
        return Err(Error::Parameter(
            "no training sentence aligns with token boundaries".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut perceptron = Perceptron {
        cells: HashMap::new(),
        instances: 0,
    };
    let mut metadata = TrainingMetadata {
        epochs: params.epochs,
        seed: params.seed,
        feature_template_version: FEATURE_TEMPLATE_VERSION,
        training_sentences: examples.len(),
    };
    let mut epochs = Vec::with_capacity(params.epochs);
    for epoch in 1..=params.epochs {
        order.shuffle(&mut rng);
        let mut mistakes = 0;
        for &idx in &order {
            let ex = &examples[idx];
            let mut prev = Tag::O;
            for (i, feats) in ex.features.iter().enumerate() {
                let extra = tag_features(prev, &ex.words[i]);
                let guess = argmax(&perceptron.score(feats, &extra));
                let truth = ex.gold[i];
                if guess != truth {
                    mistakes += 1;
                    perceptron.update(feats, &extra, truth, guess);
                }
                perceptron.instances += 1;
                prev = guess;
            }
        }
        let validation_f1 = if split.validation.is_empty() {
            None
        } else {
            let (weights, averaged) = perceptron.snapshot();
            let model = TaggerModel {
                weights,
                averaged,
                metadata: metadata.clone(),
            };
            Some(span_f1(&model, &split.validation))
        };
        epochs.push(EpochReport {
            epoch,
            mistakes,
            validation_f1,
        });
    }
    let (weights, averaged) = perceptron.snapshot();
    metadata.epochs = params.epochs;
    Ok((
        TaggerModel {
            weights,
            averaged,
            metadata,
        },
        TrainingReport { epochs, skipped },
    ))
}

/// Micro-averaged exact-match span F1 of `model` on `sentences`.
pub fn span_f1(model: &TaggerModel, sentences: &[AnnotatedSentence]) -> f64 {
    let (mut tp, mut predicted, mut gold) = (0usize, 0usize, 0usize);
    for s in sentences {
        let pred = model.predict(&s.text);
        let key = |x: &EntitySpan| (x.label, x.start, x.end);
        let gold_keys: Vec<_> = s.spans.iter().map(key).collect();
        tp += pred.iter().filter(|p| gold_keys.contains(&key(p))).count();
        predicted += pred.len();
        gold += gold_keys.len();
    }
    if predicted + gold == 0 {
        return 1.0;
    }
    2.0 * tp as f64 / (predicted + gold) as f64
}

impl TaggerModel {
    pub fn labels(&self) -> &'static [Tag] {
        &Tag::ALL
    }

    pub fn feature_count(&self) -> usize {
        self.averaged.len()
    }

    fn score(&self, features: &[String], extra: &[String]) -> Scores {
        let mut scores = [0.0; Tag::COUNT];
        for f in features.iter().chain(extra) {
            if let Some(w) = self.averaged.get(f) {
                for (s, v) in scores.iter_mut().zip(w) {
                    *s += v;
                }
            }
        }
        scores
    }

    /// Greedy tags for `tokens`, before repair.
    pub fn tag(&self, tokens: &[Token]) -> Vec<Tag> {
        let words = lowered(tokens);
        let mut tags = Vec::with_capacity(words.len());
        let mut prev = Tag::O;
        for i in 0..words.len() {
            let feats = static_features(&words, i);
            let extra = tag_features(prev, &words[i]);
            prev = argmax(&self.score(&feats, &extra));
            tags.push(prev);
        }
        tags
    }

    /// Entity spans in `text`, in text order.
    pub fn predict(&self, text: &str) -> Vec<EntitySpan> {
        let tokens = tokenize(text);
        let tags = self.tag(&tokens);
        tags_to_spans(&tokens, &tags, text)
    }

    /// Spans over the diagnosis sections of `note`, in note offsets.
    pub fn predict_note(&self, note: &ClinicalNote) -> Vec<EntitySpan> {
        split_sections(note)
            .iter()
            .filter(|s| is_diagnosis_section(s))
            .flat_map(|s| {
                self.predict(&s.text)
                    .into_iter()
                    .map(|span| span.shifted(s.start as isize))
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let sorted = |m: &HashMap<String, Scores>| -> BTreeMap<String, Vec<f64>> {
            m.iter().map(|(k, v)| (k.clone(), v.to_vec())).collect()
        };
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            feature_template_version: FEATURE_TEMPLATE_VERSION,
            labels: Tag::ALL.to_vec(),
            metadata: self.metadata.clone(),
            weights: sorted(&self.weights),
            averaged: sorted(&self.averaged),
        };
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(f);
        serde_json::to_writer(&mut out, &file)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<TaggerModel> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let file: ModelFile = serde_json::from_reader(BufReader::new(f))?;
        let bad = |msg: String| Error::Malformed {
            path: path.to_path_buf(),
            line: 1,
            message: msg,
        };
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(bad(format!("unsupported model format {}", file.format_version)));
        }
        if file.feature_template_version != FEATURE_TEMPLATE_VERSION {
            return Err(bad(format!(
                "model built with feature templates v{}, this build uses v{}",
                file.feature_template_version, FEATURE_TEMPLATE_VERSION
            )));
        }
        if file.labels != Tag::ALL {
            return Err(bad("label set differs from the BIO tag set".into()));
        }
        let unpack = |m: BTreeMap<String, Vec<f64>>| -> Result<HashMap<String, Scores>> {
            m.into_iter()
                .map(|(k, v)| {
                    let arr: Scores = v
                        .try_into()
                        .map_err(|_| bad(format!("feature {k:?} needs {} weights", Tag::COUNT)))?;
                    Ok((k, arr))
                })
                .collect()
        };
        Ok(TaggerModel {
            weights: unpack(file.weights)?,
            averaged: unpack(file.averaged)?,
            metadata: file.metadata,
        })
    }
}
