//! The four decoders. They share a design (two-layer LSTM, conditioning
//! projection, vocabulary projection) but never share parameters:
//!
//! | id                 | models          | conditioning  |
//! |--------------------|-----------------|---------------|
//! | `ForwardResponse`  | p(y \| c, z, x) | c, z, x       |
//! | `ForwardQuery`     | p(x \| c, z)    | c, z          |
//! | `BackwardQuery`    | p(x \| c, z, y) | c, z, y       |
//! | `BackwardResponse` | p(y \| c, z)    | c, z          |
//!
//! Conditioning enters twice: the initial hidden state of every layer is an
//! affine map of the concatenated conditioning vectors, and `z` is appended
//! to the token embedding at every step.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::TargetSeqs;
use crate::diff::{log_softmax, Binding, Real, Tape, Var};
use crate::error::{Error, Result};
use crate::lstm::{self, LstmVars, StackState, StepMask};
use crate::model::{Init, ModelConfig, ParamSpec, EMBEDDING};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderId {
    ForwardResponse,
    ForwardQuery,
    BackwardQuery,
    BackwardResponse,
}

impl DecoderId {
    pub const ALL: [DecoderId; 4] = [
        DecoderId::ForwardResponse,
        DecoderId::ForwardQuery,
        DecoderId::BackwardQuery,
        DecoderId::BackwardResponse,
    ];

    pub fn prefix(self) -> &'static str {
        match self {
            DecoderId::ForwardResponse => "dec_fwd_y",
            DecoderId::ForwardQuery => "dec_fwd_x",
            DecoderId::BackwardQuery => "dec_bwd_x",
            DecoderId::BackwardResponse => "dec_bwd_y",
        }
    }

    /// Number of conditioning vectors, `z` included.
    pub fn arity(self) -> usize {
        match self {
            DecoderId::ForwardResponse | DecoderId::BackwardQuery => 3,
            DecoderId::ForwardQuery | DecoderId::BackwardResponse => 2,
        }
    }

    pub fn output_weight(self) -> String {
        format!("{}.out.w", self.prefix())
    }

    pub fn output_bias(self) -> String {
        format!("{}.out.b", self.prefix())
    }

    pub fn init_weight(self) -> String {
        format!("{}.init.w", self.prefix())
    }

    pub fn init_bias(self) -> String {
        format!("{}.init.b", self.prefix())
    }

    fn rnn_prefix(self) -> String {
        format!("{}.rnn", self.prefix())
    }
}

pub fn param_specs(cfg: &ModelConfig, id: DecoderId) -> Vec<ParamSpec> {
    let (h, z, l) = (cfg.hidden_dim, cfg.z_dim, cfg.layers);
    let cond_dim = (id.arity() - 1) * h + z;
    let mut out = vec![
        ParamSpec::new(id.init_weight(), vec![cond_dim, 2 * l * h], Init::Glorot),
        ParamSpec::new(id.init_bias(), vec![2 * l * h], Init::Zeros),
    ];
    out.extend(lstm::specs(&id.rnn_prefix(), cfg.embed_dim + z, h, l));
    out.push(ParamSpec::new(id.output_weight(), vec![h, cfg.vocab_size], Init::Glorot));
    out.push(ParamSpec::new(id.output_bias(), vec![cfg.vocab_size], Init::Zeros));
    out
}

/// Ordered conditioning vectors `(context, z[, query | response])`.
#[derive(Debug, Clone)]
pub struct Conditioning {
    pub decoder: DecoderId,
    pub vectors: Vec<Var>,
}

impl Conditioning {
    pub fn new(decoder: DecoderId, vectors: Vec<Var>) -> Result<Self> {
        if vectors.len() != decoder.arity() {
            return Err(Error::ArityMismatch {
                decoder: decoder.prefix(),
                expected: decoder.arity(),
                got: vectors.len(),
            });
        }
        Ok(Self { decoder, vectors })
    }

    pub fn z(&self) -> Var {
        self.vectors[1]
    }
}

#[derive(Debug, Clone)]
pub struct DecoderState {
    stack: StackState,
    z: Var,
}

impl DecoderState {
    /// Hidden state per layer, bottom first.
    pub fn hidden(&self) -> &[Var] {
        &self.stack.h
    }

    pub fn cell(&self) -> &[Var] {
        &self.stack.c
    }

    pub fn z(&self) -> Var {
        self.z
    }

    /// Rebuild from explicit per-layer values (used by step-wise decoding,
    /// which carries state between tapes).
    pub fn from_parts(hidden: Vec<Var>, cell: Vec<Var>, z: Var) -> Self {
        Self {
            stack: StackState { h: hidden, c: cell },
            z,
        }
    }
}

/// Initial recurrent state: one affine map of the concatenated
/// conditioning vectors, split into per-layer hidden states followed by
/// per-layer cell states.
pub fn init_decoder_state<T: Real>(
    tape: &mut Tape<T>,
    binding: &Binding,
    cfg: &ModelConfig,
    cond: &Conditioning,
) -> Result<DecoderState> {
    let id = cond.decoder;
    if cond.vectors.len() != id.arity() {
        return Err(Error::ArityMismatch {
            decoder: id.prefix(),
            expected: id.arity(),
            got: cond.vectors.len(),
        });
    }
    let rows = tape.dims(cond.vectors[0]).0;
    for (i, &v) in cond.vectors.iter().enumerate() {
        let want = if i == 1 { cfg.z_dim } else { cfg.hidden_dim };
        if tape.dims(v) != (rows, want) {
            return Err(Error::ShapeMismatch {
                op: "conditioning",
                detail: format!("vector {} is {:?}, expected ({}, {})", i, tape.dims(v), rows, want),
            });
        }
    }
    let joined = tape.concat_cols(&cond.vectors)?;
    let w = binding.var(&id.init_weight())?;
    let b = binding.var(&id.init_bias())?;
    let pre = tape.matmul(joined, w)?;
    let init = tape.add_row(pre, b)?;
    let h = cfg.hidden_dim;
    let mut hidden = Vec::with_capacity(cfg.layers);
    let mut cell = Vec::with_capacity(cfg.layers);
    for l in 0..cfg.layers {
        hidden.push(tape.slice_cols(init, l * h, (l + 1) * h)?);
        let off = (cfg.layers + l) * h;
        cell.push(tape.slice_cols(init, off, off + h)?);
    }
    Ok(DecoderState {
        stack: StackState { h: hidden, c: cell },
        z: cond.z(),
    })
}

struct DecoderVars {
    rnn: LstmVars,
    table: Var,
    out_w: Var,
    out_b: Var,
}

impl DecoderVars {
    fn resolve(binding: &Binding, cfg: &ModelConfig, id: DecoderId) -> Result<Self> {
        Ok(Self {
            rnn: LstmVars::resolve(binding, &id.rnn_prefix(), cfg.layers, cfg.hidden_dim)?,
            table: binding.var(EMBEDDING)?,
            out_w: binding.var(&id.output_weight())?,
            out_b: binding.var(&id.output_bias())?,
        })
    }
}

fn step_inner<T: Real>(
    tape: &mut Tape<T>,
    vars: &DecoderVars,
    state: &DecoderState,
    prev: &[usize],
    mask: Option<&StepMask>,
) -> Result<(Var, DecoderState)> {
    let emb = tape.embed(vars.table, prev)?;
    let input = tape.concat_cols(&[emb, state.z])?;
    let stack = lstm::step(tape, &vars.rnn, input, &state.stack, mask)?;
    let proj = tape.matmul(stack.top(), vars.out_w)?;
    let logits = tape.add_row(proj, vars.out_b)?;
    Ok((logits, DecoderState { stack, z: state.z }))
}

/// One decoding step from the previous tokens; returns vocabulary logits
/// `[batch, vocab]` and the advanced state.
pub fn decode_step<T: Real>(
    tape: &mut Tape<T>,
    binding: &Binding,
    cfg: &ModelConfig,
    decoder: DecoderId,
    state: &DecoderState,
    prev: &[usize],
) -> Result<(Var, DecoderState)> {
    if let Some(&bad) = prev.iter().find(|&&t| t >= cfg.vocab_size) {
        return Err(Error::InvalidToken {
            id: bad,
            vocab: cfg.vocab_size,
        });
    }
    let vars = DecoderVars::resolve(binding, cfg, decoder)?;
    step_inner(tape, &vars, state, prev, None)
}

/// Softmax of each logits row, computed in `f64`.
pub fn next_token_distribution<T: Real>(tape: &Tape<T>, logits: Var) -> Vec<Vec<f64>> {
    let (_, cols) = tape.dims(logits);
    tape.value(logits)
        .chunks(cols)
        .map(|row| log_softmax(row).into_iter().map(num_traits::Float::exp).collect())
        .collect()
}

#[derive(Debug, Clone)]
pub struct TeacherForced {
    /// Sum of per-token log probabilities, `[batch, 1]`.
    pub total: Var,
    /// Log probability of the target at each position, `[batch, 1]`;
    /// zero past a row's end.
    pub per_token: Vec<Var>,
}

/// Log-likelihood of `target` under gold-prefix feeding. BOS is input only;
/// every target token through EOS is scored and padding contributes zero.
pub fn teacher_forced_log_prob<T: Real>(
    tape: &mut Tape<T>,
    binding: &Binding,
    cfg: &ModelConfig,
    cond: &Conditioning,
    target: &TargetSeqs,
) -> Result<TeacherForced> {
    let width = target.inputs.width();
    if width == 0 || target.lengths().contains(&0) {
        return Err(Error::EmptyInput("decoder target"));
    }
    let rows = target.inputs.batch_size();
    if tape.dims(cond.vectors[0]).0 != rows {
        return Err(Error::ShapeMismatch {
            op: "teacher_forced_log_prob",
            detail: format!("{} conditioning rows vs {} targets", tape.dims(cond.vectors[0]).0, rows),
        });
    }
    let vars = DecoderVars::resolve(binding, cfg, cond.decoder)?;
    let mut state = init_decoder_state(tape, binding, cfg, cond)?;
    let mut nll_total: Option<Var> = None;
    let mut per_token = Vec::with_capacity(width);
    for t in 0..width {
        let mask_vals = target.targets.mask_column(t);
        let mask = StepMask::new(tape, &mask_vals)?;
        let (logits, next) = step_inner(tape, &vars, &state, &target.inputs.column(t), mask.as_ref())?;
        state = next;
        let weights: Vec<T> = mask_vals.iter().map(|&m| T::lit(m)).collect();
        let nll = tape.cross_entropy(logits, &target.targets.column(t), &weights)?;
        per_token.push(tape.neg(nll));
        nll_total = Some(match nll_total {
            None => nll,
            Some(acc) => tape.add(acc, nll)?,
        });
    }
    let total = tape.neg(nll_total.expect("width > 0"));
    Ok(TeacherForced { total, per_token })
}
