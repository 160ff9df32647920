//! Test-time decoding. The latent comes from the prior network (its mean by
//! default); responses are decoded with the forward response decoder and the
//! backward query decoder is available as a diagnostic.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{flatten_context, tokenize, PaddedSeqs, TargetSeqs, BOS, DEFAULT_MAX_LEN, EOS, RESERVED};
use crate::decoders::{decode_step, init_decoder_state, teacher_forced_log_prob, Conditioning, DecoderId, DecoderState};
use crate::diff::{log_softmax, Real, Tape, Var};
use crate::encoders::{encode_context, encode_utterance};
use crate::error::{Error, Result};
use crate::latent::{prior_params, GaussianParams};
use crate::model::MirrorModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Strategy {
    Greedy,
    Beam { k: usize },
    Sample { temperature: f64 },
}

impl Strategy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Strategy::Beam { k: 0 } => Err(Error::InvalidArgument("beam width must be >= 1".into())),
            Strategy::Sample { temperature } if !(temperature > 0.0 && temperature.is_finite()) => {
                Err(Error::InvalidArgument("temperature must be > 0".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Strategy::Greedy => "greedy".into(),
            Strategy::Beam { k } => format!("beam({})", k),
            Strategy::Sample { temperature } => format!("sample({})", temperature),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZMode {
    PriorMean,
    PriorSample,
}

/// A finished or truncated token sequence. `ids` excludes BOS and EOS;
/// `score` is the summed log probability of every emitted token, EOS
/// included when `finished`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub ids: Vec<usize>,
    pub score: f64,
    pub finished: bool,
}

impl Hypothesis {
    fn emitted(&self) -> usize {
        self.ids.len() + usize::from(self.finished)
    }

    /// Score per emitted token, used to rank finished beams.
    pub fn normalized_score(&self) -> f64 {
        self.score / self.emitted().max(1) as f64
    }
}

/// Anything that yields next-token log probabilities step by step.
pub trait StepModel {
    type State: Clone;

    fn start(&self) -> Result<Self::State>;

    fn step(&self, state: &Self::State, prev: usize) -> Result<(Vec<f64>, Self::State)>;
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn greedy_decode<M: StepModel>(model: &M, max_len: usize) -> Result<Hypothesis> {
    let mut state = model.start()?;
    let mut prev = BOS;
    let mut hyp = Hypothesis {
        ids: Vec::new(),
        score: 0.0,
        finished: false,
    };
    while hyp.ids.len() < max_len {
        let (lp, next) = model.step(&state, prev)?;
        let tok = argmax(&lp);
        hyp.score += lp[tok];
        if tok == EOS {
            hyp.finished = true;
            break;
        }
        hyp.ids.push(tok);
        state = next;
        prev = tok;
    }
    Ok(hyp)
}

struct Live<S> {
    hyp: Hypothesis,
    state: S,
    prev: usize,
}

/// Beam search keeping the `k` best partial sequences by total log
/// probability. Sequences that emit EOS leave the beam; the result is the
/// finished (or, failing that, truncated) sequence with the best per-token
/// score.
pub fn beam_search<M: StepModel>(model: &M, k: usize, max_len: usize) -> Result<Hypothesis> {
    if k == 0 {
        return Err(Error::InvalidArgument("beam width must be >= 1".into()));
    }
    let mut live = vec![Live {
        hyp: Hypothesis {
            ids: Vec::new(),
            score: 0.0,
            finished: false,
        },
        state: model.start()?,
        prev: BOS,
    }];
    let mut done: Vec<Hypothesis> = Vec::new();
    for _ in 0..max_len {
        let mut cands: Vec<(f64, usize, usize)> = Vec::new();
        let mut next_states = Vec::with_capacity(live.len());
        for (hi, l) in live.iter().enumerate() {
            let (lp, st) = model.step(&l.state, l.prev)?;
            let mut order: Vec<usize> = (0..lp.len()).collect();
            order.sort_by(|&a, &b| lp[b].partial_cmp(&lp[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
            for &t in order.iter().take(k) {
                cands.push((l.hyp.score + lp[t], hi, t));
            }
            next_states.push(st);
        }
        cands.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(Ordering::Equal)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        let mut next_live = Vec::new();
        for &(score, hi, t) in cands.iter().take(k) {
            let ids = live[hi].hyp.ids.clone();
            if t == EOS {
                done.push(Hypothesis {
                    ids,
                    score,
                    finished: true,
                });
            } else {
                let mut ids = ids;
                ids.push(t);
                next_live.push(Live {
                    hyp: Hypothesis {
                        ids,
                        score,
                        finished: false,
                    },
                    state: next_states[hi].clone(),
                    prev: t,
                });
            }
        }
        live = next_live;
        if live.is_empty() || done.len() >= k {
            break;
        }
    }
    if done.is_empty() {
        done.extend(live.into_iter().map(|l| l.hyp));
    }
    done.into_iter()
        .max_by(|a, b| {
            a.normalized_score()
                .partial_cmp(&b.normalized_score())
                .unwrap_or(Ordering::Equal)
        })
        .ok_or(Error::EmptyInput("beam"))
}

/// Ancestral sampling from the temperature-scaled distribution. The score
/// uses the unscaled log probabilities.
pub fn sample_decode<M: StepModel, R: Rng + ?Sized>(
    model: &M,
    temperature: f64,
    max_len: usize,
    rng: &mut R,
) -> Result<Hypothesis> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument("temperature must be > 0".into()));
    }
    let mut state = model.start()?;
    let mut prev = BOS;
    let mut hyp = Hypothesis {
        ids: Vec::new(),
        score: 0.0,
        finished: false,
    };
    while hyp.ids.len() < max_len {
        let (lp, next) = model.step(&state, prev)?;
        let scaled: Vec<f64> = lp.iter().map(|&x| x / temperature).collect();
        let probs: Vec<f64> = log_softmax(&scaled).into_iter().map(Float::exp).collect();
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut tok = probs.len() - 1;
        for (i, &p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                tok = i;
                break;
            }
        }
        hyp.score += lp[tok];
        if tok == EOS {
            hyp.finished = true;
            break;
        }
        hyp.ids.push(tok);
        state = next;
        prev = tok;
    }
    Ok(hyp)
}

pub fn decode_with<M: StepModel>(model: &M, strategy: Strategy, max_len: usize, seed: u64) -> Result<Hypothesis> {
    strategy.validate()?;
    if max_len == 0 {
        return Err(Error::InvalidArgument("max length must be >= 1".into()));
    }
    match strategy {
        Strategy::Greedy => greedy_decode(model, max_len),
        Strategy::Beam { k } => beam_search(model, k, max_len),
        Strategy::Sample { temperature } => {
            sample_decode(model, temperature, max_len, &mut ChaCha8Rng::seed_from_u64(seed))
        }
    }
}

/// Summaries of a context and one further turn plus the prior over `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedTurns<T> {
    pub context: Vec<T>,
    pub given: Vec<T>,
    pub prior: GaussianParams<T>,
}

/// Encode `context` with the context encoder and `given` (the query for
/// forward generation, the response for backward inference) with the
/// utterance encoder.
pub fn encode_turns<T: Real>(model: &MirrorModel<T>, context: &[Vec<String>], given: &[String]) -> Result<EncodedTurns<T>> {
    if context.is_empty() || context.iter().any(|t| t.is_empty()) {
        return Err(Error::EmptyInput("context"));
    }
    if given.is_empty() {
        return Err(Error::EmptyInput("turn"));
    }
    let cfg = &model.config;
    let mut tape = Tape::new();
    let binding = model.params.bind_frozen(&mut tape);
    let ctx_ids = flatten_context(&model.vocab, context, DEFAULT_MAX_LEN);
    let given_ids = model.vocab.encode(&given[..given.len().min(DEFAULT_MAX_LEN)]);
    let c = encode_context(&mut tape, &binding, cfg, &PaddedSeqs::from_rows(vec![ctx_ids]))?;
    let g = encode_utterance(&mut tape, &binding, cfg, &PaddedSeqs::from_rows(vec![given_ids]))?;
    let prior = prior_params(&mut tape, &binding, cfg, c)?;
    tape.ensure_finite()?;
    Ok(EncodedTurns {
        context: tape.value(c).to_vec(),
        given: tape.value(g).to_vec(),
        prior: GaussianParams::from_tape(&tape, prior, 0)?,
    })
}

pub fn latent_for<T: Real>(prior: &GaussianParams<T>, mode: ZMode, seed: u64) -> Vec<T> {
    match mode {
        ZMode::PriorMean => prior.mean.clone(),
        ZMode::PriorSample => prior.sample(&mut ChaCha8Rng::seed_from_u64(seed)).z,
    }
}

/// Step-wise view of one decoder under fixed conditioning values.
pub struct DecoderStepper<'m, T> {
    model: &'m MirrorModel<T>,
    decoder: DecoderId,
    vectors: Vec<Vec<T>>,
}

impl<'m, T: Real> DecoderStepper<'m, T> {
    /// `vectors` in conditioning order: context, z, then query/response for
    /// the three-input decoders.
    pub fn new(model: &'m MirrorModel<T>, decoder: DecoderId, vectors: Vec<Vec<T>>) -> Result<Self> {
        if vectors.len() != decoder.arity() {
            return Err(Error::ArityMismatch {
                decoder: decoder.prefix(),
                expected: decoder.arity(),
                got: vectors.len(),
            });
        }
        Ok(Self { model, decoder, vectors })
    }

    fn conditioning(&self, tape: &mut Tape<T>) -> Result<Conditioning> {
        let vars = self
            .vectors
            .iter()
            .map(|v| tape.constant(1, v.len(), v.clone()))
            .collect::<Result<Vec<Var>>>()?;
        Conditioning::new(self.decoder, vars)
    }
}

/// Per-layer hidden and cell values.
#[derive(Debug, Clone, PartialEq)]
pub struct StepState<T> {
    pub hidden: Vec<Vec<T>>,
    pub cell: Vec<Vec<T>>,
}

impl<T: Real> StepModel for DecoderStepper<'_, T> {
    type State = StepState<T>;

    fn start(&self) -> Result<StepState<T>> {
        let mut tape = Tape::new();
        let binding = self.model.params.bind_frozen(&mut tape);
        let cond = self.conditioning(&mut tape)?;
        let st = init_decoder_state(&mut tape, &binding, &self.model.config, &cond)?;
        tape.ensure_finite()?;
        Ok(StepState {
            hidden: st.hidden().iter().map(|&v| tape.value(v).to_vec()).collect(),
            cell: st.cell().iter().map(|&v| tape.value(v).to_vec()).collect(),
        })
    }

    fn step(&self, state: &StepState<T>, prev: usize) -> Result<(Vec<f64>, StepState<T>)> {
        let mut tape = Tape::new();
        let binding = self.model.params.bind_frozen(&mut tape);
        let h = self.model.config.hidden_dim;
        let hidden = state
            .hidden
            .iter()
            .map(|v| tape.constant(1, h, v.clone()))
            .collect::<Result<Vec<_>>>()?;
        let cell = state
            .cell
            .iter()
            .map(|v| tape.constant(1, h, v.clone()))
            .collect::<Result<Vec<_>>>()?;
        let z = tape.constant(1, self.vectors[1].len(), self.vectors[1].clone())?;
        let st = DecoderState::from_parts(hidden, cell, z);
        let (logits, next) = decode_step(&mut tape, &binding, &self.model.config, self.decoder, &st, &[prev])?;
        tape.ensure_finite()?;
        let lp = log_softmax(tape.value(logits));
        Ok((
            lp,
            StepState {
                hidden: next.hidden().iter().map(|&v| tape.value(v).to_vec()).collect(),
                cell: next.cell().iter().map(|&v| tape.value(v).to_vec()).collect(),
            },
        ))
    }
}

/// Log probability of `ids` (EOS appended when `with_eos`) under teacher
/// forcing with fixed conditioning values.
pub fn sequence_log_prob<T: Real>(
    model: &MirrorModel<T>,
    decoder: DecoderId,
    vectors: &[Vec<T>],
    ids: &[usize],
    with_eos: bool,
) -> Result<f64> {
    let mut tape = Tape::new();
    let binding = model.params.bind_frozen(&mut tape);
    let vars = vectors
        .iter()
        .map(|v| tape.constant(1, v.len(), v.clone()))
        .collect::<Result<Vec<Var>>>()?;
    let cond = Conditioning::new(decoder, vars)?;
    let target = TargetSeqs::from_tokens(&[ids.to_vec()]);
    let tf = teacher_forced_log_prob(&mut tape, &binding, &model.config, &cond, &target)?;
    let n = ids.len() + usize::from(with_eos);
    Ok(tf.per_token[..n].iter().map(|&v| tape.value(v)[0].as_f64()).sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeRequest {
    pub context: Vec<Vec<String>>,
    pub query: Vec<String>,
    pub strategy: Strategy,
    pub z_mode: ZMode,
    pub max_len: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub ids: Vec<usize>,
    pub tokens: Vec<String>,
    pub score: f64,
    pub finished: bool,
    /// The latent the sequence was decoded with.
    pub z: Vec<f64>,
}

fn run<T: Real>(
    model: &MirrorModel<T>,
    decoder: DecoderId,
    context: &[Vec<String>],
    given: &[String],
    strategy: Strategy,
    z_mode: ZMode,
    max_len: usize,
    seed: u64,
) -> Result<Generated> {
    strategy.validate()?;
    let enc = encode_turns(model, context, given)?;
    let z = latent_for(&enc.prior, z_mode, seed);
    let vectors = vec![enc.context, z.clone(), enc.given];
    let stepper = DecoderStepper::new(model, decoder, vectors)?;
    let hyp = decode_with(&stepper, strategy, max_len, seed)?;
    Ok(Generated {
        tokens: model.vocab.decode(&hyp.ids),
        ids: hyp.ids,
        score: hyp.score,
        finished: hyp.finished,
        z: z.iter().map(|v| v.as_f64()).collect(),
    })
}

/// Decode a response to `query` given `context`.
pub fn generate_response<T: Real>(model: &MirrorModel<T>, request: &DecodeRequest) -> Result<Generated> {
    if request.query.is_empty() {
        return Err(Error::EmptyInput("query"));
    }
    run(
        model,
        DecoderId::ForwardResponse,
        &request.context,
        &request.query,
        request.strategy,
        request.z_mode,
        request.max_len,
        request.seed,
    )
}

/// Infer the query that sits between `context` and `response`.
pub fn backward_infer_query<T: Real>(
    model: &MirrorModel<T>,
    context: &[Vec<String>],
    response: &[String],
    strategy: Strategy,
    z_mode: ZMode,
    max_len: usize,
    seed: u64,
) -> Result<Generated> {
    if response.is_empty() {
        return Err(Error::EmptyInput("response"));
    }
    run(model, DecoderId::BackwardQuery, context, response, strategy, z_mode, max_len, seed)
}

/// Rolling chat history mapped onto (context, query) windows.
#[derive(Debug, Clone)]
pub struct ChatSession {
    history: Vec<Vec<String>>,
    /// How many turns before the query form the context.
    pub context_turns: usize,
    pub checkpoint_id: Option<String>,
    pub strategy: Strategy,
    pub z_mode: ZMode,
    pub max_len: usize,
    pub seed: u64,
}

impl ChatSession {
    pub fn new(context_turns: usize) -> Self {
        Self {
            history: Vec::new(),
            context_turns: context_turns.max(1),
            checkpoint_id: None,
            strategy: Strategy::Greedy,
            z_mode: ZMode::PriorMean,
            max_len: 30,
            seed: 0,
        }
    }

    /// Context turn used when nothing precedes the query.
    pub fn placeholder_turn() -> Vec<String> {
        vec![RESERVED[BOS].to_string()]
    }

    pub fn history(&self) -> &[Vec<String>] {
        &self.history
    }

    pub fn reset(&mut self) {
        self.history.clear();
    }

    /// The (context, query) pair the model would see if `utterance` were the
    /// next turn.
    pub fn window(&self, utterance: &[String]) -> (Vec<Vec<String>>, Vec<String>) {
        let start = self.history.len().saturating_sub(self.context_turns);
        let mut context: Vec<Vec<String>> = self.history[start..].to_vec();
        if context.is_empty() {
            context.push(Self::placeholder_turn());
        }
        (context, utterance.to_vec())
    }

    /// Append the user turn, generate, append and return the reply.
    pub fn chat_turn<T: Real>(&mut self, model: Option<&MirrorModel<T>>, utterance: &str) -> Result<Generated> {
        let model = model.ok_or_else(|| Error::InvalidArgument("no checkpoint loaded".into()))?;
        let query = tokenize(utterance);
        if query.is_empty() {
            return Err(Error::EmptyInput("query"));
        }
        let (context, query) = self.window(&query);
        let request = DecodeRequest {
            context,
            query: query.clone(),
            strategy: self.strategy,
            z_mode: self.z_mode,
            max_len: self.max_len,
            seed: self.seed,
        };
        let reply = generate_response(model, &request)?;
        self.history.push(query);
        let system_turn = if reply.tokens.is_empty() {
            vec![RESERVED[EOS].to_string()]
        } else {
            reply.tokens.clone()
        };
        self.history.push(system_turn);
        Ok(reply)
    }

    /// Record a turn without generating.
    pub fn push_turn(&mut self, turn: Vec<String>) {
        self.history.push(turn);
    }
}
