//! Dialogue corpora: tokenization, windowing into (context, query, response)
//! triples, vocabulary construction and padded batches.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const SEP: usize = 4;
pub const RESERVED: [&str; 5] = ["<pad>", "<unk>", "<bos>", "<eos>", "<sep>"];

pub const DEFAULT_VOCAB_SIZE: usize = 20_000;
pub const DEFAULT_MAX_LEN: usize = 50;

/// Lowercase, split on whitespace, and split every non-alphanumeric
/// character off as its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut cur = String::new();
        for ch in word.chars() {
            if ch.is_alphanumeric() {
                cur.extend(ch.to_lowercase());
            } else {
                if !cur.is_empty() {
                    out.push(core::mem::take(&mut cur));
                }
                out.push(ch.to_string());
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub turns: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speakers: Option<Vec<u8>>,
}

impl Dialogue {
    pub fn new(turns: Vec<Vec<String>>) -> Result<Self> {
        if turns.is_empty() {
            return Err(Error::EmptyInput("dialogue has no turns"));
        }
        if turns.iter().any(|t| t.is_empty()) {
            return Err(Error::EmptyInput("dialogue turn is empty"));
        }
        Ok(Self {
            turns,
            speakers: None,
        })
    }

    /// Tokenize raw turn texts.
    pub fn from_texts<S: AsRef<str>>(texts: &[S]) -> Result<Self> {
        Self::new(texts.iter().map(|t| tokenize(t.as_ref())).collect())
    }
}

/// One training unit: older context turns, the query turn right before the
/// response, and the response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triple {
    pub context: Vec<Vec<String>>,
    pub query: Vec<String>,
    pub response: Vec<String>,
}

impl Triple {
    pub fn new(context: Vec<Vec<String>>, query: Vec<String>, response: Vec<String>) -> Result<Self> {
        if context.is_empty() || context.iter().any(|t| t.is_empty()) {
            return Err(Error::EmptyInput("context"));
        }
        if query.is_empty() {
            return Err(Error::EmptyInput("query"));
        }
        if response.is_empty() {
            return Err(Error::EmptyInput("response"));
        }
        Ok(Self {
            context,
            query,
            response,
        })
    }

    /// Context followed by the query: the undecomposed history.
    pub fn full_context(&self) -> Vec<Vec<String>> {
        let mut all = self.context.clone();
        all.push(self.query.clone());
        all
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowReport {
    pub triples: Vec<Triple>,
    /// Dialogues shorter than the window.
    pub skipped: usize,
}

/// Slide a `window`-turn frame over every dialogue. In each frame the first
/// `window - 2` turns are the context, the penultimate turn the query and the
/// last turn the response. Output is ordered by (dialogue, window start).
pub fn window_dialogues(dialogues: &[Dialogue], window: usize, stride: usize) -> Result<WindowReport> {
    if window < 3 {
        return Err(Error::InvalidArgument(format!("window must be >= 3, got {}", window)));
    }
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be >= 1".into()));
    }
    let mut triples = Vec::new();
    let mut skipped = 0;
    for d in dialogues {
        if d.turns.len() < window {
            skipped += 1;
            continue;
        }
        let mut start = 0;
        while start + window <= d.turns.len() {
            let frame = &d.turns[start..start + window];
            triples.push(Triple::new(
                frame[..window - 2].to_vec(),
                frame[window - 2].clone(),
                frame[window - 1].clone(),
            )?);
            start += stride;
        }
    }
    Ok(WindowReport { triples, skipped })
}

/// Token/id maps. Ids 0..5 are PAD, UNK, BOS, EOS, SEP; corpus tokens follow.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Vocabulary {
    /// Build from the non-reserved tokens in id order.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        all.extend(tokens);
        let mut index = BTreeMap::new();
        for (i, t) in all.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate vocabulary token {:?}", t)));
            }
        }
        Ok(Self { tokens: all, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Corpus tokens, excluding the reserved entries.
    pub fn corpus_tokens(&self) -> &[String] {
        &self.tokens[RESERVED.len()..]
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(|s| s.as_str())
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// Ids back to tokens, dropping PAD, BOS and EOS.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .filter(|&&id| id != PAD && id != BOS && id != EOS)
            .map(|&id| self.token(id).unwrap_or(RESERVED[UNK]).to_string())
            .collect()
    }
}

/// Keep the `max_size` most frequent corpus tokens; equal counts are ordered
/// lexicographically so the result is deterministic.
pub fn build_vocabulary(triples: &[Triple], max_size: usize) -> Result<Vocabulary> {
    if triples.is_empty() {
        return Err(Error::EmptyInput("corpus"));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for t in triples {
        let turns = t.context.iter().chain([&t.query, &t.response]);
        for tok in turns.flatten() {
            if RESERVED.contains(&tok.as_str()) {
                continue;
            }
            *counts.entry(tok.as_str()).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    ranked.truncate(max_size);
    Vocabulary::from_tokens(ranked.into_iter().map(|(t, _)| t.to_string()).collect())
}

/// Right-padded id rows with their true lengths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaddedSeqs {
    pub ids: Vec<Vec<usize>>,
    pub lengths: Vec<usize>,
}

impl PaddedSeqs {
    pub fn from_rows(rows: Vec<Vec<usize>>) -> Self {
        let width = rows.iter().map(|r| r.len()).max().unwrap_or(0);
        let lengths = rows.iter().map(|r| r.len()).collect();
        let ids = rows
            .into_iter()
            .map(|mut r| {
                r.resize(width, PAD);
                r
            })
            .collect();
        Self { ids, lengths }
    }

    pub fn batch_size(&self) -> usize {
        self.ids.len()
    }

    pub fn width(&self) -> usize {
        self.ids.first().map(|r| r.len()).unwrap_or(0)
    }

    /// Ids at position `t` across the batch.
    pub fn column(&self, t: usize) -> Vec<usize> {
        self.ids.iter().map(|r| r[t]).collect()
    }

    /// 1 where position `t` is inside the row, else 0.
    pub fn mask_column(&self, t: usize) -> Vec<f64> {
        self.lengths
            .iter()
            .map(|&l| if t < l { 1.0 } else { 0.0 })
            .collect()
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            ids: rows.iter().map(|&r| self.ids[r].clone()).collect(),
            lengths: rows.iter().map(|&r| self.lengths[r]).collect(),
        }
    }
}

/// Decoder view of a turn: inputs `BOS t1 .. tn`, targets `t1 .. tn EOS`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetSeqs {
    pub inputs: PaddedSeqs,
    pub targets: PaddedSeqs,
}

impl TargetSeqs {
    pub fn from_tokens(rows: &[Vec<usize>]) -> Self {
        let inputs = rows
            .iter()
            .map(|r| {
                let mut v = Vec::with_capacity(r.len() + 1);
                v.push(BOS);
                v.extend_from_slice(r);
                v
            })
            .collect();
        let targets = rows
            .iter()
            .map(|r| {
                let mut v = r.clone();
                v.push(EOS);
                v
            })
            .collect();
        Self {
            inputs: PaddedSeqs::from_rows(inputs),
            targets: PaddedSeqs::from_rows(targets),
        }
    }

    /// Number of predicted tokens (EOS included) per row.
    pub fn lengths(&self) -> &[usize] {
        &self.targets.lengths
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            inputs: self.inputs.select(rows),
            targets: self.targets.select(rows),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    /// Context turns flattened with SEP between them.
    pub context: PaddedSeqs,
    pub query: PaddedSeqs,
    pub response: PaddedSeqs,
    pub query_target: TargetSeqs,
    pub response_target: TargetSeqs,
    pub vocab_size: usize,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.query.batch_size()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            context: self.context.select(rows),
            query: self.query.select(rows),
            response: self.response.select(rows),
            query_target: self.query_target.select(rows),
            response_target: self.response_target.select(rows),
            vocab_size: self.vocab_size,
        }
    }
}

fn truncated(vocab: &Vocabulary, turn: &[String], max_len: usize) -> Vec<usize> {
    vocab.encode(&turn[..turn.len().min(max_len)])
}

/// Turns joined with SEP, each truncated to `max_len` tokens.
pub fn flatten_context(vocab: &Vocabulary, turns: &[Vec<String>], max_len: usize) -> Vec<usize> {
    let mut out = Vec::new();
    for (i, turn) in turns.iter().enumerate() {
        if i > 0 {
            out.push(SEP);
        }
        out.extend(truncated(vocab, turn, max_len));
    }
    out
}

/// Encode triples into padded id matrices. Out-of-vocabulary tokens become
/// UNK and every turn is truncated to `max_len` tokens.
pub fn encode_batch(triples: &[Triple], vocab: &Vocabulary, max_len: usize) -> Result<Batch> {
    if max_len < 2 {
        return Err(Error::InvalidArgument(format!("max_len must be >= 2, got {}", max_len)));
    }
    if triples.is_empty() {
        return Err(Error::EmptyInput("batch"));
    }
    let mut ctx = Vec::with_capacity(triples.len());
    let mut qry = Vec::with_capacity(triples.len());
    let mut rsp = Vec::with_capacity(triples.len());
    for t in triples {
        ctx.push(flatten_context(vocab, &t.context, max_len));
        qry.push(truncated(vocab, &t.query, max_len));
        rsp.push(truncated(vocab, &t.response, max_len));
    }
    Ok(Batch {
        context: PaddedSeqs::from_rows(ctx),
        query_target: TargetSeqs::from_tokens(&qry),
        response_target: TargetSeqs::from_tokens(&rsp),
        query: PaddedSeqs::from_rows(qry),
        response: PaddedSeqs::from_rows(rsp),
        vocab_size: vocab.len(),
    })
}
