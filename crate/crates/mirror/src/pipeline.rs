//! End-to-end steps behind the subcommands: preprocess, train, generate,
//! evaluate and evaluation-session setup.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use mirror_core::corpus::{build_vocabulary, encode_batch, window_dialogues, Dialogue, Triple, Vocabulary};
use mirror_core::decoders::DecoderId;
use mirror_core::evaluation::{create_session, EvalSource, ModelOutput};
use mirror_core::inference::{generate_response, DecodeRequest};
use mirror_core::metrics::{distinct_n, perplexity_with};
use mirror_core::model::{MirrorModel, ModelConfig};
use mirror_core::train::{fit, Control, EpochRecord, StopReason};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Snapshot};
use crate::config::Settings;
use crate::corpus_io::{load_jsonl, load_vocab, read_corpus, write_jsonl, write_vocab, CorpusFormat};
use crate::journal::Journal;
use crate::server::LiveSession;

pub const SPLITS: [&str; 3] = ["train", "valid", "test"];
pub const VOCAB_FILE: &str = "vocab.txt";
pub const CHECKPOINT_FILE: &str = "checkpoint.mirr";
pub const REPORT_FILE: &str = "report.jsonl";

pub fn split_path(data_dir: &Path, split: &str) -> PathBuf {
    data_dir.join(format!("{}.jsonl", split))
}

#[derive(Debug, Clone)]
pub struct PreprocessInputs {
    pub train: PathBuf,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub format: CorpusFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub split: String,
    pub dialogues: usize,
    pub triples: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSummary {
    pub splits: Vec<SplitSummary>,
    pub vocab_size: usize,
}

/// Convert corpora to the unified format and build the vocabulary from the
/// training triples. A missing validation split reuses the training data;
/// a missing test split reuses the validation data.
pub fn preprocess(inputs: &PreprocessInputs, out_dir: &Path, settings: &Settings) -> Result<PreprocessSummary> {
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let train = read_corpus(&inputs.train, inputs.format)?;
    let valid = match &inputs.valid {
        Some(p) => read_corpus(p, inputs.format)?,
        None => train.clone(),
    };
    let test = match &inputs.test {
        Some(p) => read_corpus(p, inputs.format)?,
        None => valid.clone(),
    };
    let mut summary = PreprocessSummary {
        splits: Vec::new(),
        vocab_size: 0,
    };
    let mut train_triples = Vec::new();
    for (name, dialogues) in SPLITS.iter().zip([&train, &valid, &test]) {
        let report = window_dialogues(dialogues, settings.window, 1)?;
        summary.splits.push(SplitSummary {
            split: name.to_string(),
            dialogues: dialogues.len(),
            triples: report.triples.len(),
            skipped: report.skipped,
        });
        ensure!(!report.triples.is_empty(), "{} split yields no triples", name);
        if *name == "train" {
            train_triples = report.triples;
        }
        write_jsonl(fs::File::create(split_path(out_dir, name))?, dialogues)?;
    }
    let vocab = build_vocabulary(&train_triples, settings.vocab_size)?;
    write_vocab(fs::File::create(out_dir.join(VOCAB_FILE))?, &vocab)?;
    summary.vocab_size = vocab.len();
    fs::write(out_dir.join("preprocess.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(summary)
}

pub fn load_triples(data_dir: &Path, split: &str, window: usize) -> Result<Vec<Triple>> {
    let dialogues = load_jsonl(&split_path(data_dir, split))?;
    Ok(window_dialogues(&dialogues, window, 1)?.triples)
}

pub fn load_dialogues(data_dir: &Path, split: &str) -> Result<Vec<Dialogue>> {
    load_jsonl(&split_path(data_dir, split))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs: usize,
    pub best_epoch: Option<usize>,
    pub stop: String,
    pub checkpoint: PathBuf,
    pub report: PathBuf,
}

/// Train on `data_dir/{train,valid}.jsonl`, writing the best checkpoint and
/// a JSON-lines report (one record per epoch) to `out_dir`.
pub fn train(
    data_dir: &Path,
    out_dir: &Path,
    settings: &Settings,
    mut on_epoch: impl FnMut(&EpochRecord, &MirrorModel<f32>) -> Control,
) -> Result<TrainSummary> {
    let vocab = load_vocab(&data_dir.join(VOCAB_FILE))?;
    let train_set = load_triples(data_dir, "train", settings.window)?;
    let valid_set = load_triples(data_dir, "valid", settings.window)?;
    fs::create_dir_all(out_dir)?;
    let cfg = ModelConfig::for_profile(settings.profile, settings.dataset, vocab.len());
    let model = MirrorModel::<f32>::new(cfg, vocab, settings.seed)?;
    let report_path = out_dir.join(REPORT_FILE);
    let mut report = BufWriter::new(fs::File::create(&report_path)?);
    let mut write_err = None;
    let outcome = fit(model, &train_set, &valid_set, &settings.train_config(), |rec, m| {
        let line = serde_json::to_string(rec).map_err(anyhow::Error::from).and_then(|l| {
            writeln!(report, "{}", l)?;
            report.flush()?;
            Ok(())
        });
        if let Err(e) = line {
            write_err = Some(e);
            return Control::Stop;
        }
        on_epoch(rec, m)
    })?;
    if let Some(e) = write_err {
        return Err(e.context("writing training report"));
    }
    let ckpt = out_dir.join(CHECKPOINT_FILE);
    let snapshot = Snapshot {
        model: cfg,
        profile: settings.profile,
        dataset: settings.dataset,
        epoch: outcome.best_epoch,
    };
    checkpoint::save(&ckpt, &outcome.best, &snapshot)?;
    let stop = match &outcome.stop {
        StopReason::MaxEpochs => "max_epochs".to_string(),
        StopReason::Requested => "requested".to_string(),
        StopReason::Diverged(why) => format!("diverged: {}", why),
    };
    Ok(TrainSummary {
        epochs: outcome.report.len(),
        best_epoch: outcome.best_epoch,
        stop,
        checkpoint: ckpt,
        report: report_path,
    })
}

fn request_for(t: &Triple, settings: &Settings, index: usize) -> DecodeRequest {
    DecodeRequest {
        context: t.context.clone(),
        query: t.query.clone(),
        strategy: settings.strategy(),
        z_mode: settings.z_mode,
        max_len: settings.gen_max_len,
        seed: settings.seed.wrapping_add(index as u64),
    }
}

/// Decode a response for every triple of `triples`.
pub fn generate_outputs(
    model: &MirrorModel<f32>,
    triples: &[Triple],
    settings: &Settings,
    checkpoint_id: &str,
) -> Result<Vec<ModelOutput>> {
    let label = settings.strategy().label();
    triples
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let g = generate_response(model, &request_for(t, settings, i))?;
            Ok(ModelOutput {
                dialogue_index: i,
                response_text: g.tokens.join(" "),
                decode_strategy: label.clone(),
                checkpoint_id: checkpoint_id.to_string(),
            })
        })
        .collect()
}

pub fn write_outputs(path: &Path, outputs: &[ModelOutput]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for o in outputs {
        serde_json::to_writer(&mut w, o)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_outputs(path: &Path) -> Result<Vec<ModelOutput>> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{} line {}", path.display(), i + 1))?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub perplexity: f64,
    /// Perplexity of queries under the backward query decoder.
    pub backward_perplexity: f64,
    pub tokens: usize,
    pub distinct_1: f64,
    pub distinct_2: f64,
    pub responses: usize,
}

/// Perplexities on `triples` and distinct-n over `responses`.
pub fn evaluate(model: &MirrorModel<f32>, triples: &[Triple], responses: &[String], max_len: usize) -> Result<EvalMetrics> {
    let batch = encode_batch(triples, &model.vocab, max_len)?;
    let fwd = perplexity_with(model, &batch, DecoderId::ForwardResponse, 32)?;
    let bwd = perplexity_with(model, &batch, DecoderId::BackwardQuery, 32)?;
    let toks: Vec<Vec<&str>> = responses.iter().map(|r| r.split_whitespace().collect()).collect();
    Ok(EvalMetrics {
        perplexity: fwd.perplexity,
        backward_perplexity: bwd.perplexity,
        tokens: fwd.tokens,
        distinct_1: distinct_n(&toks, 1),
        distinct_2: distinct_n(&toks, 2),
        responses: responses.len(),
    })
}

/// Annotator-facing text for each triple.
pub fn eval_sources(triples: &[Triple]) -> Vec<EvalSource> {
    triples
        .iter()
        .map(|t| EvalSource {
            context: t.context.iter().map(|turn| turn.join(" ")).collect(),
            query: t.query.join(" "),
        })
        .collect()
}

/// Resume the session journaled at `journal`, or create it from the test
/// split and the two output files.
pub fn open_session(
    journal: &Path,
    id: &str,
    sources: &[EvalSource],
    focal: &[ModelOutput],
    comparator: &[ModelOutput],
    pairs: usize,
    seed: u64,
) -> Result<LiveSession> {
    if journal.exists() {
        let (j, session) = Journal::open(journal)?;
        if session.id != id {
            bail!("journal {} holds session {:?}, not {:?}", journal.display(), session.id, id);
        }
        return Ok(LiveSession { session, journal: j });
    }
    let session = create_session(id, sources, focal, comparator, pairs, seed)?;
    let j = Journal::create(journal, &session)?;
    Ok(LiveSession { session, journal: j })
}

pub fn load_model(path: &Path) -> Result<(MirrorModel<f32>, Snapshot)> {
    checkpoint::load(path)
}

/// Vocabulary of a preprocessed data directory.
pub fn data_vocab(data_dir: &Path) -> Result<Vocabulary> {
    load_vocab(&data_dir.join(VOCAB_FILE))
}
