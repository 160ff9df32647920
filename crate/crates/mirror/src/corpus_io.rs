//! Corpus and vocabulary files.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use mirror_core::corpus::{tokenize, Dialogue, Vocabulary, RESERVED};
use serde::{Deserialize, Serialize};

/// One line of the unified corpus format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueRecord {
    pub turns: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speakers: Option<Vec<u8>>,
}

impl DialogueRecord {
    pub fn to_dialogue(&self) -> Result<Dialogue> {
        let mut d = Dialogue::from_texts(&self.turns)?;
        if let Some(s) = &self.speakers {
            if s.len() != self.turns.len() {
                bail!("{} speaker labels for {} turns", s.len(), self.turns.len());
            }
            d.speakers = Some(s.clone());
        }
        Ok(d)
    }

    /// Turns rendered as space-joined tokens.
    pub fn from_dialogue(d: &Dialogue) -> Self {
        Self {
            turns: d.turns.iter().map(|t| t.join(" ")).collect(),
            speakers: d.speakers.clone(),
        }
    }
}

fn lines<R: Read>(reader: R) -> impl Iterator<Item = (usize, std::io::Result<String>)> {
    BufReader::new(reader).lines().enumerate().map(|(i, l)| (i + 1, l))
}

pub fn read_jsonl<R: Read>(reader: R) -> Result<Vec<Dialogue>> {
    let mut out = Vec::new();
    for (n, line) in lines(reader) {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DialogueRecord = serde_json::from_str(&line).with_context(|| format!("line {}", n))?;
        out.push(rec.to_dialogue().with_context(|| format!("line {}", n))?);
    }
    Ok(out)
}

pub fn write_jsonl<W: Write>(writer: W, dialogues: &[Dialogue]) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for d in dialogues {
        serde_json::to_writer(&mut w, &DialogueRecord::from_dialogue(d))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// DailyDialog text: one dialogue per line, turns separated by `__eou__`.
pub fn import_dailydialog<R: Read>(reader: R) -> Result<Vec<Dialogue>> {
    let mut out = Vec::new();
    for (n, line) in lines(reader) {
        let line = line?;
        let turns: Vec<&str> = line.split("__eou__").map(str::trim).filter(|t| !t.is_empty()).collect();
        if turns.is_empty() {
            continue;
        }
        out.push(Dialogue::from_texts(&turns).with_context(|| format!("line {}", n))?);
    }
    Ok(out)
}

/// Three tab-separated columns (context, query, response), one triple per
/// line; each becomes a three-turn dialogue.
pub fn import_triples_tsv<R: Read>(reader: R) -> Result<Vec<Dialogue>> {
    let mut out = Vec::new();
    for (n, line) in lines(reader) {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            bail!("line {}: expected 3 tab-separated columns, found {}", n, cols.len());
        }
        out.push(Dialogue::from_texts(&cols).with_context(|| format!("line {}", n))?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Jsonl,
    Dailydialog,
    Triples,
}

pub fn read_corpus(path: &Path, format: CorpusFormat) -> Result<Vec<Dialogue>> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let r = match format {
        CorpusFormat::Jsonl => read_jsonl(f),
        CorpusFormat::Dailydialog => import_dailydialog(f),
        CorpusFormat::Triples => import_triples_tsv(f),
    };
    r.with_context(|| format!("reading {}", path.display()))
}

/// Non-reserved tokens one per line, in id order.
pub fn write_vocab<W: Write>(writer: W, vocab: &Vocabulary) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for t in vocab.corpus_tokens() {
        writeln!(w, "{}", t)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_vocab<R: Read>(reader: R) -> Result<Vocabulary> {
    let mut tokens = Vec::new();
    for (n, line) in lines(reader) {
        let line = line?;
        if line.is_empty() || RESERVED.contains(&line.as_str()) || tokenize(&line).len() != 1 {
            bail!("line {}: invalid vocabulary entry {:?}", n, line);
        }
        tokens.push(line);
    }
    Ok(Vocabulary::from_tokens(tokens)?)
}

pub fn load_vocab(path: &Path) -> Result<Vocabulary> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_vocab(f).with_context(|| format!("reading {}", path.display()))
}

pub fn load_jsonl(path: &Path) -> Result<Vec<Dialogue>> {
    read_corpus(path, CorpusFormat::Jsonl)
}
