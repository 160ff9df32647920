//! Pairwise human evaluation: blinded response pairs, three judgments per
//! pair, and win/loss/tie aggregation for a focal model against a
//! comparator. Persistence and transport live outside this module.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const JUDGMENTS_PER_PAIR: usize = 3;
pub const DEFAULT_PAIRS: usize = 200;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("pair {0} does not exist")]
    UnknownPair(usize),
    #[error("invalid choice {0:?}; expected A, B or tie")]
    InvalidChoice(String),
    #[error("annotator {annotator:?} already judged pair {pair_id}")]
    Duplicate { pair_id: usize, annotator: String },
    #[error("pair {0} already has the required judgments")]
    PairComplete(usize),
    #[error("annotator id must be non-empty")]
    EmptyAnnotator,
    #[error("no pair has {JUDGMENTS_PER_PAIR} judgments yet")]
    NoCompletedPairs,
    #[error("requested {requested} pairs from a test set of {available}")]
    TooManyPairs { requested: usize, available: usize },
    #[error("no {model} output for dialogue {index}")]
    MissingOutput { model: &'static str, index: usize },
}

impl EvalError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            EvalError::UnknownPair(_) => "unknown_pair",
            EvalError::InvalidChoice(_) => "invalid_choice",
            EvalError::Duplicate { .. } => "duplicate_judgment",
            EvalError::PairComplete(_) => "pair_complete",
            EvalError::EmptyAnnotator => "empty_annotator",
            EvalError::NoCompletedPairs => "no_completed_pairs",
            EvalError::TooManyPairs { .. } => "too_many_pairs",
            EvalError::MissingOutput { .. } => "missing_output",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Choice {
    A,
    B,
    #[serde(rename = "tie")]
    Tie,
}

impl FromStr for Choice {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, EvalError> {
        match s {
            "A" | "a" => Ok(Choice::A),
            "B" | "b" => Ok(Choice::B),
            "tie" | "Tie" | "TIE" => Ok(Choice::Tie),
            _ => Err(EvalError::InvalidChoice(s.into())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

/// One line of a model-output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelOutput {
    pub dialogue_index: usize,
    pub response_text: String,
    pub decode_strategy: String,
    pub checkpoint_id: String,
}

/// Test-set entry shown to annotators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSource {
    pub context: Vec<String>,
    pub query: String,
}

/// Which system produced a set of outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemInfo {
    pub checkpoint_id: String,
    pub decode_strategy: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPair {
    pub pair_id: usize,
    pub dialogue_index: usize,
    pub context: Vec<String>,
    pub query: String,
    pub response_a: String,
    pub response_b: String,
    /// Side holding the focal model's response. Never sent to annotators.
    pub focal_side: Side,
}

impl EvalPair {
    /// Whether `choice` favors the focal model, the comparator, or neither.
    fn outcome(&self, choice: Choice) -> Outcome {
        match (choice, self.focal_side) {
            (Choice::Tie, _) => Outcome::Tie,
            (Choice::A, Side::A) | (Choice::B, Side::B) => Outcome::Win,
            _ => Outcome::Loss,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Win,
    Loss,
    Tie,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub pair_id: usize,
    pub annotator: String,
    pub choice: Choice,
    /// Milliseconds since the Unix epoch, supplied by the caller.
    pub timestamp: u64,
}

/// What an annotator sees: no model identities, no side mapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairView {
    pub pair_id: usize,
    pub context: Vec<String>,
    pub response_a: String,
    pub response_b: String,
    /// Pairs this annotator has judged so far.
    pub done: usize,
    pub total: usize,
}

/// Win/loss/tie fractions for the focal model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub wins: f64,
    pub losses: f64,
    pub ties: f64,
}

impl AggregateResult {
    fn from_counts(w: usize, l: usize, t: usize) -> Self {
        let n = (w + l + t) as f64;
        Self {
            wins: w as f64 / n,
            losses: l as f64 / n,
            ties: t as f64 / n,
        }
    }
}

/// Majority-rule result (primary) and the pooled-vote alternative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub majority: AggregateResult,
    pub pooled: AggregateResult,
    pub completed_pairs: usize,
}

/// Results payload including progress; aggregates are absent until some
/// pair is complete.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionResults {
    pub majority: Option<AggregateResult>,
    pub pooled: Option<AggregateResult>,
    pub completed_pairs: usize,
    pub total_pairs: usize,
    pub judgments: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSession {
    pub id: String,
    pub seed: u64,
    pub focal: SystemInfo,
    pub comparator: SystemInfo,
    pub pairs: Vec<EvalPair>,
    #[serde(default)]
    pub judgments: Vec<Judgment>,
}

fn output_map<'a>(outputs: &'a [ModelOutput], model: &'static str, index: usize) -> Result<&'a ModelOutput, EvalError> {
    outputs
        .iter()
        .find(|o| o.dialogue_index == index)
        .ok_or(EvalError::MissingOutput { model, index })
}

fn system_info(outputs: &[ModelOutput]) -> SystemInfo {
    outputs.first().map_or(
        SystemInfo {
            checkpoint_id: String::new(),
            decode_strategy: String::new(),
        },
        |o| SystemInfo {
            checkpoint_id: o.checkpoint_id.clone(),
            decode_strategy: o.decode_strategy.clone(),
        },
    )
}

/// Sample `n_pairs` dialogues without replacement and place the two
/// systems' responses on randomly chosen sides.
pub fn create_session(
    id: impl Into<String>,
    test_set: &[EvalSource],
    focal: &[ModelOutput],
    comparator: &[ModelOutput],
    n_pairs: usize,
    seed: u64,
) -> Result<EvalSession, EvalError> {
    if n_pairs > test_set.len() {
        return Err(EvalError::TooManyPairs {
            requested: n_pairs,
            available: test_set.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = index::sample(&mut rng, test_set.len(), n_pairs).into_vec();
    let mut pairs = Vec::with_capacity(n_pairs);
    for (pair_id, di) in picked.into_iter().enumerate() {
        let f = output_map(focal, "focal", di)?;
        let c = output_map(comparator, "comparator", di)?;
        let focal_side = if rng.random_bool(0.5) { Side::A } else { Side::B };
        let (a, b) = match focal_side {
            Side::A => (f, c),
            Side::B => (c, f),
        };
        pairs.push(EvalPair {
            pair_id,
            dialogue_index: di,
            context: test_set[di].context.clone(),
            query: test_set[di].query.clone(),
            response_a: a.response_text.clone(),
            response_b: b.response_text.clone(),
            focal_side,
        });
    }
    Ok(EvalSession {
        id: id.into(),
        seed,
        focal: system_info(focal),
        comparator: system_info(comparator),
        pairs,
        judgments: Vec::new(),
    })
}

impl EvalSession {
    /// The session without judgments, as written at the head of a journal.
    pub fn header(&self) -> EvalSession {
        EvalSession {
            judgments: Vec::new(),
            ..self.clone()
        }
    }

    /// Rebuild from a header and journaled judgments, re-validating each.
    pub fn replay(header: EvalSession, judgments: impl IntoIterator<Item = Judgment>) -> Result<Self, EvalError> {
        let mut s = header;
        s.judgments.clear();
        for j in judgments {
            s.record_judgment(j)?;
        }
        Ok(s)
    }

    pub fn judgments_for(&self, pair_id: usize) -> impl Iterator<Item = &Judgment> {
        self.judgments.iter().filter(move |j| j.pair_id == pair_id)
    }

    /// Validate without recording.
    pub fn check_judgment(&self, j: &Judgment) -> Result<(), EvalError> {
        if j.pair_id >= self.pairs.len() {
            return Err(EvalError::UnknownPair(j.pair_id));
        }
        if j.annotator.is_empty() {
            return Err(EvalError::EmptyAnnotator);
        }
        let mut n = 0;
        for prior in self.judgments_for(j.pair_id) {
            if prior.annotator == j.annotator {
                return Err(EvalError::Duplicate {
                    pair_id: j.pair_id,
                    annotator: j.annotator.clone(),
                });
            }
            n += 1;
        }
        if n >= JUDGMENTS_PER_PAIR {
            return Err(EvalError::PairComplete(j.pair_id));
        }
        Ok(())
    }

    pub fn record_judgment(&mut self, j: Judgment) -> Result<(), EvalError> {
        self.check_judgment(&j)?;
        self.judgments.push(j);
        Ok(())
    }

    /// First pair this annotator has not judged that still needs judgments.
    pub fn next_pair_for(&self, annotator: &str) -> Option<PairView> {
        let mut counts = alloc::vec![0usize; self.pairs.len()];
        let mut mine = alloc::vec![false; self.pairs.len()];
        for j in &self.judgments {
            counts[j.pair_id] += 1;
            if j.annotator == annotator {
                mine[j.pair_id] = true;
            }
        }
        let done = mine.iter().filter(|&&m| m).count();
        self.pairs
            .iter()
            .find(|p| !mine[p.pair_id] && counts[p.pair_id] < JUDGMENTS_PER_PAIR)
            .map(|p| {
                let mut context = p.context.clone();
                context.push(p.query.clone());
                PairView {
                    pair_id: p.pair_id,
                    context,
                    response_a: p.response_a.clone(),
                    response_b: p.response_b.clone(),
                    done,
                    total: self.pairs.len(),
                }
            })
    }

    fn completed(&self) -> BTreeMap<usize, Vec<Outcome>> {
        let mut per_pair: BTreeMap<usize, Vec<Outcome>> = BTreeMap::new();
        for j in &self.judgments {
            per_pair
                .entry(j.pair_id)
                .or_default()
                .push(self.pairs[j.pair_id].outcome(j.choice));
        }
        per_pair.retain(|_, v| v.len() >= JUDGMENTS_PER_PAIR);
        per_pair
    }

    /// Un-blind completed pairs and aggregate. A pair is won or lost when at
    /// least two annotators agree; every other pattern is a tie.
    pub fn aggregate_results(&self) -> Result<AggregateReport, EvalError> {
        let done = self.completed();
        if done.is_empty() {
            return Err(EvalError::NoCompletedPairs);
        }
        let (mut w, mut l, mut t) = (0, 0, 0);
        let (mut pw, mut pl, mut pt) = (0, 0, 0);
        for outcomes in done.values() {
            let count = |o: Outcome| outcomes.iter().filter(|&&x| x == o).count();
            let (cw, cl, ct) = (count(Outcome::Win), count(Outcome::Loss), count(Outcome::Tie));
            pw += cw;
            pl += cl;
            pt += ct;
            let majority = outcomes.len() / 2 + 1;
            if cw >= majority {
                w += 1;
            } else if cl >= majority {
                l += 1;
            } else {
                t += 1;
            }
        }
        Ok(AggregateReport {
            majority: AggregateResult::from_counts(w, l, t),
            pooled: AggregateResult::from_counts(pw, pl, pt),
            completed_pairs: done.len(),
        })
    }

    pub fn results(&self) -> SessionResults {
        let agg = self.aggregate_results().ok();
        SessionResults {
            majority: agg.map(|a| a.majority),
            pooled: agg.map(|a| a.pooled),
            completed_pairs: agg.map_or(0, |a| a.completed_pairs),
            total_pairs: self.pairs.len(),
            judgments: self.judgments.len(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::string::ToString;
    use alloc::vec;

    fn fixture(n: usize) -> (Vec<EvalSource>, Vec<ModelOutput>, Vec<ModelOutput>) {
        let src = (0..n)
            .map(|i| EvalSource {
                context: vec![format!("c{}", i)],
                query: format!("q{}", i),
            })
            .collect();
        let out = |name: &str| {
            (0..n)
                .map(|i| ModelOutput {
                    dialogue_index: i,
                    response_text: format!("{}-{}", name, i),
                    decode_strategy: "greedy".into(),
                    checkpoint_id: name.into(),
                })
                .collect::<Vec<_>>()
        };
        (src, out("focal"), out("other"))
    }

    fn judge(s: &mut EvalSession, pair: usize, who: &str, c: Choice) -> Result<(), EvalError> {
        s.record_judgment(Judgment {
            pair_id: pair,
            annotator: who.to_string(),
            choice: c,
            timestamp: 0,
        })
    }

    #[test]
    fn sides_hold_the_right_text() {
        let (src, f, c) = fixture(20);
        let s = create_session("s", &src, &f, &c, 10, 7).unwrap();
        for p in &s.pairs {
            let (fa, ca) = match p.focal_side {
                Side::A => (&p.response_a, &p.response_b),
                Side::B => (&p.response_b, &p.response_a),
            };
            assert_eq!(fa, &format!("focal-{}", p.dialogue_index));
            assert_eq!(ca, &format!("other-{}", p.dialogue_index));
        }
        let mut idx: Vec<_> = s.pairs.iter().map(|p| p.dialogue_index).collect();
        idx.sort();
        idx.dedup();
        assert_eq!(idx.len(), 10);
    }

    #[test]
    fn cap_and_duplicates() {
        let (src, f, c) = fixture(3);
        let mut s = create_session("s", &src, &f, &c, 3, 1).unwrap();
        judge(&mut s, 0, "a", Choice::A).unwrap();
        assert_eq!(judge(&mut s, 0, "a", Choice::B).unwrap_err().code(), "duplicate_judgment");
        judge(&mut s, 0, "b", Choice::A).unwrap();
        judge(&mut s, 0, "c", Choice::Tie).unwrap();
        assert_eq!(judge(&mut s, 0, "d", Choice::A).unwrap_err().code(), "pair_complete");
        assert_eq!(judge(&mut s, 9, "a", Choice::A).unwrap_err().code(), "unknown_pair");
        assert_eq!("maybe".parse::<Choice>().unwrap_err().code(), "invalid_choice");
    }

    #[test]
    fn three_way_split_is_a_tie() {
        let (src, f, c) = fixture(1);
        let mut s = create_session("s", &src, &f, &c, 1, 3).unwrap();
        let (fc, cc) = match s.pairs[0].focal_side {
            Side::A => (Choice::A, Choice::B),
            Side::B => (Choice::B, Choice::A),
        };
        judge(&mut s, 0, "x", fc).unwrap();
        judge(&mut s, 0, "y", cc).unwrap();
        judge(&mut s, 0, "z", Choice::Tie).unwrap();
        let r = s.aggregate_results().unwrap();
        assert_eq!((r.majority.wins, r.majority.losses, r.majority.ties), (0.0, 0.0, 1.0));
    }

    #[test]
    fn view_hides_the_mapping() {
        let (src, f, c) = fixture(2);
        let s = create_session("s", &src, &f, &c, 2, 5).unwrap();
        let v = s.next_pair_for("ann").unwrap();
        assert_eq!(v.total, 2);
        assert_eq!(v.context.len(), 2);
    }

    #[test]
    fn no_completed_pairs_is_an_error() {
        let (src, f, c) = fixture(2);
        let s = create_session("s", &src, &f, &c, 2, 5).unwrap();
        assert_eq!(s.aggregate_results().unwrap_err(), EvalError::NoCompletedPairs);
        assert!(s.results().majority.is_none());
    }
}
