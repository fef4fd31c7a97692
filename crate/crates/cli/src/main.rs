//! Command-line front end for periodontitis diagnosis extraction.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use perio_extract::corpus::{load_gold, load_notes, synthesize, write_gold, write_notes, NoteFormat};
use perio_extract::dataset::{
    build_weak_dataset, load_dataset, sentence_from_capture, split_sizes, write_dataset,
    SplitManifest,
};
use perio_extract::evaluator::{
    evaluate, merge_combined, predictions_to_note_diagnosis, re_diagnoses, render_confusion,
    render_table, NoteDiagnoses,
};
use perio_extract::extractor::{extract_note, RawCapture};
use perio_extract::sectionizer::{is_diagnosis_section, split_sections};
use perio_extract::tagger::{export_predictions, import_predictions, train, TaggerModel, TrainParams};
use perio_extract::{ClinicalNote, EntitySpan, GoldRecord, Method, SynthConfig};
use rayon::prelude::*;

#[derive(Parser)]
#[command(name = "perio-extract", version, about = "Extract periodontitis stage, grade and extent from clinical notes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with gold labels.
    Synth(SynthArgs),
    /// Run a regex grammar over notes and write raw captures.
    Extract(ExtractArgs),
    /// Build the weakly labelled dataset and its 8:1:1 split.
    Dataset(DatasetArgs),
    /// Train the BIO tagger on a dataset directory.
    Train(TrainArgs),
    /// Predict entity spans with a trained model or a regex grammar.
    Predict(PredictArgs),
    /// Score note-level diagnoses against gold.
    Eval(EvalArgs),
    /// Fill missing advanced-system fields from the simple system.
    Merge(MergeArgs),
    /// Recompute the grammar coverage table and the split-size table.
    ReproduceTables,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Override a noise rate, e.g. `--noise extent_typo=0.3`. Repeatable.
    #[arg(long, value_name = "NAME=RATE")]
    noise: Vec<String>,
    /// Probability that a note has a diagnosis section at all.
    #[arg(long)]
    diagnosis_section_rate: Option<f64>,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    method: Method,
    #[arg(long)]
    notes: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct DatasetArgs {
    /// Captures JSONL from `extract`.
    #[arg(long, conflicts_with_all = ["notes", "method"])]
    captures: Option<PathBuf>,
    #[arg(long, requires = "method")]
    notes: Option<PathBuf>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output directory; receives dataset.jsonl and split.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory written by `dataset`.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long, conflicts_with = "method", required_unless_present = "method")]
    model: Option<PathBuf>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    notes: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    notes: PathBuf,
    /// Span predictions JSONL from `predict`.
    #[arg(long, conflicts_with_all = ["method", "diagnoses"])]
    predictions: Option<PathBuf>,
    /// Evaluate a regex grammar directly.
    #[arg(long, conflicts_with = "diagnoses")]
    method: Option<Method>,
    /// Note-level diagnoses JSONL, e.g. from `merge`.
    #[arg(long)]
    diagnoses: Option<PathBuf>,
    /// Write the full report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MergeArgs {
    /// Span predictions of the advanced system.
    #[arg(long)]
    advanced: PathBuf,
    /// Span predictions of the simple system.
    #[arg(long)]
    simple: PathBuf,
    #[arg(long)]
    notes: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Synth(a) => synth(a)?,
        Command::Extract(a) => extract(a)?,
        Command::Dataset(a) => dataset(a)?,
        Command::Train(a) => train_cmd(a)?,
        Command::Predict(a) => predict(a)?,
        Command::Eval(a) => eval(a)?,
        Command::Merge(a) => merge(a)?,
        Command::ReproduceTables => return Ok(reproduce_tables()),
    }
    Ok(ExitCode::SUCCESS)
}

fn read_notes(path: &Path) -> Result<Vec<ClinicalNote>> {
    load_notes(path, NoteFormat::from_path(path))
        .with_context(|| format!("loading notes from {}", path.display()))
}

fn thread_pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        if n == 0 {
            bail!("--workers must be at least 1");
        }
        b = b.num_threads(n);
    }
    Ok(b.build()?)
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg = SynthConfig::new(a.n, a.seed);
    for kv in &a.noise {
        let (k, v) = kv
            .split_once('=')
            .with_context(|| format!("--noise expects NAME=RATE, got {kv:?}"))?;
        let v: f64 = v.parse().with_context(|| format!("bad rate in {kv:?}"))?;
        cfg.noise_rates.set(k.trim(), v)?;
    }
    if let Some(r) = a.diagnosis_section_rate {
        cfg.diagnosis_section_rate = r;
    }
    let corpus = synthesize(&cfg)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_notes(&a.out.join("notes.jsonl"), &corpus.notes, NoteFormat::Jsonl)?;
    write_gold(&a.out.join("gold.jsonl"), &corpus.gold)?;
    let with_dx = corpus.gold.iter().filter(|g| g.diagnosis.is_some()).count();
    println!(
        "wrote {} notes ({with_dx} with a periodontitis diagnosis) to {}",
        corpus.notes.len(),
        a.out.display()
    );
    Ok(())
}

fn write_lines<T: serde::Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn extract(a: ExtractArgs) -> Result<()> {
    let mut notes = read_notes(&a.notes)?;
    notes.sort_by(|x, y| x.note_id.cmp(&y.note_id));
    let method = a.method;
    let per_note: Vec<Vec<RawCapture>> = thread_pool(a.workers)?
        .install(|| notes.par_iter().map(|n| extract_note(n, method)).collect());
    let with_capture = per_note.iter().filter(|c| !c.is_empty()).count();
    let captures: Vec<RawCapture> = per_note.into_iter().flatten().collect();
    write_lines(&a.out, &captures)?;
    println!(
        "{method}: {} captures from {with_capture} of {} notes",
        captures.len(),
        notes.len()
    );
    Ok(())
}

fn read_captures(path: &Path) -> Result<Vec<RawCapture>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .with_context(|| format!("{}:{}: malformed capture", path.display(), i + 1))?,
        );
    }
    Ok(out)
}

fn dataset(a: DatasetArgs) -> Result<()> {
    let sentences = match (&a.captures, &a.notes, a.method) {
        (Some(c), _, _) => read_captures(c)?.iter().map(sentence_from_capture).collect(),
        (None, Some(n), Some(m)) => build_weak_dataset(&read_notes(n)?, m),
        _ => bail!("give either --captures or --notes with --method"),
    };
    let manifest = SplitManifest::new(sentences.len(), a.seed)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_dataset(&a.out.join("dataset.jsonl"), &sentences)?;
    fs::write(a.out.join("split.json"), serde_json::to_string_pretty(&manifest)?)?;
    println!(
        "{} sentences: train {} / validation {} / test {}",
        sentences.len(),
        manifest.train.len(),
        manifest.validation.len(),
        manifest.test.len()
    );
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let sentences = load_dataset(&a.dataset.join("dataset.jsonl"))?;
    let split_path = a.dataset.join("split.json");
    let manifest: SplitManifest = serde_json::from_str(
        &fs::read_to_string(&split_path)
            .with_context(|| format!("reading {}", split_path.display()))?,
    )
    .with_context(|| format!("parsing {}", split_path.display()))?;
    let split = manifest.apply(&sentences)?;
    let (model, report) = train(
        &split,
        TrainParams {
            epochs: a.epochs,
            seed: a.seed,
        },
    )?;
    for e in &report.epochs {
        match e.validation_f1 {
            Some(f1) => println!("epoch {:>2}: {:>5} mistakes, validation F1 {f1:.4}", e.epoch, e.mistakes),
            None => println!("epoch {:>2}: {:>5} mistakes", e.epoch, e.mistakes),
        }
    }
    if report.skipped > 0 {
        println!("skipped {} misaligned training sentences", report.skipped);
    }
    model.save(&a.out)?;
    println!("saved model with {} features to {}", model.feature_count(), a.out.display());
    Ok(())
}

/// Regex predictions as spans: keyword plus value for stage and grade, the
/// bare word for extent, in note offsets.
fn regex_spans(note: &ClinicalNote, method: Method) -> Vec<EntitySpan> {
    extract_note(note, method)
        .iter()
        .flat_map(|c| {
            let s = sentence_from_capture(c);
            let delta = c.section_start as isize;
            s.spans.into_iter().map(move |sp| sp.shifted(delta))
        })
        .collect()
}

fn predict(a: PredictArgs) -> Result<()> {
    let notes = read_notes(&a.notes)?;
    let model = a.model.as_deref().map(TaggerModel::load).transpose()?;
    let method = a.method;
    let predictions: BTreeMap<String, Vec<EntitySpan>> = thread_pool(a.workers)?.install(|| {
        notes
            .par_iter()
            .map(|n| {
                let spans = match (&model, method) {
                    (Some(m), _) => m.predict_note(n),
                    (None, Some(method)) => regex_spans(n, method),
                    (None, None) => unreachable!("clap requires --model or --method"),
                };
                (n.note_id.clone(), spans)
            })
            .collect()
    });
    export_predictions(&a.out, &predictions)?;
    let spans: usize = predictions.values().map(Vec::len).sum();
    println!("{spans} spans over {} notes", predictions.len());
    Ok(())
}

fn span_diagnoses(path: &Path, notes: &[ClinicalNote]) -> Result<NoteDiagnoses> {
    let spans = import_predictions(path, notes)
        .with_context(|| format!("loading predictions from {}", path.display()))?;
    Ok(notes
        .iter()
        .map(|n| {
            let d = spans
                .get(&n.note_id)
                .and_then(|s| predictions_to_note_diagnosis(s, &n.text));
            (n.note_id.clone(), d)
        })
        .collect())
}

fn eval(a: EvalArgs) -> Result<()> {
    let notes = read_notes(&a.notes)?;
    let gold = load_gold(&a.gold)?;
    let predictions = match (&a.predictions, a.method, &a.diagnoses) {
        (Some(p), _, _) => span_diagnoses(p, &notes)?,
        (None, Some(m), _) => re_diagnoses(&notes, m),
        (None, None, Some(d)) => load_gold(d)?
            .into_iter()
            .map(|g| (g.note_id, g.diagnosis))
            .collect(),
        _ => bail!("give one of --predictions, --method or --diagnoses"),
    };
    let reports = evaluate(&predictions, &gold)?;
    println!("{}", render_table(&reports));
    for r in &reports {
        println!("{}", render_confusion(r));
    }
    if let Some(out) = &a.out {
        fs::write(out, serde_json::to_string_pretty(&reports)?)
            .with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

fn merge(a: MergeArgs) -> Result<()> {
    let notes = read_notes(&a.notes)?;
    let advanced = span_diagnoses(&a.advanced, &notes)?;
    let simple = span_diagnoses(&a.simple, &notes)?;
    let merged = merge_combined(&advanced, &simple)?;
    let records: Vec<GoldRecord> = merged
        .into_iter()
        .map(|(note_id, diagnosis)| GoldRecord {
            note_id,
            diagnosis,
            spans: None,
        })
        .collect();
    write_gold(&a.out, &records)?;
    let with_dx = records.iter().filter(|r| r.diagnosis.is_some()).count();
    println!("{with_dx} of {} notes carry a merged diagnosis", records.len());
    Ok(())
}

const COVERAGE_ROWS: [(&str, bool, bool); 5] = [
    ("d: generalized stage iii grade c periodontitis.", true, true),
    ("d- localized periodontitis, stage 3 grade b.", false, true),
    ("d: tentative diagnosis is stage 3 grade c generalized", false, true),
    ("d- stage iii grade b periodontitis.", false, true),
    ("d : generalized plaque induced gingivitis", false, false),
];

const SPLIT_ROWS: [(usize, usize, usize, usize); 2] = [(693, 554, 69, 70), (3771, 3016, 377, 378)];

fn captured(text: &str, method: Method) -> bool {
    let note = ClinicalNote {
        note_id: "row".into(),
        text: text.into(),
        source: Default::default(),
    };
    debug_assert!(split_sections(&note).iter().any(is_diagnosis_section));
    !extract_note(&note, method).is_empty()
}

fn reproduce_tables() -> ExitCode {
    let mark = |b: bool| if b { "O" } else { "X" };
    let mut ok = true;
    println!("{:<56} {:>6} {:>8}", "diagnosis line", "simple", "advanced");
    for (text, simple, advanced) in COVERAGE_ROWS {
        let (s, a) = (captured(text, Method::Simple), captured(text, Method::Advanced));
        let flag = if (s, a) == (simple, advanced) { "" } else { "  <- mismatch" };
        ok &= flag.is_empty();
        println!("{text:<56} {:>6} {:>8}{flag}", mark(s), mark(a));
    }
    println!();
    println!("{:>9} {:>6} {:>10} {:>5}", "sentences", "train", "validation", "test");
    for (n, train, val, test) in SPLIT_ROWS {
        let got = split_sizes(n);
        let flag = if got == (train, val, test) { "" } else { "  <- mismatch" };
        ok &= flag.is_empty();
        println!("{n:>9} {:>6} {:>10} {:>5}{flag}", got.0, got.1, got.2);
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
