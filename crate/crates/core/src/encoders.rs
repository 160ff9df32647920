//! Utterance and context encoders: two-layer LSTMs summarizing a token
//! sequence by the top-layer hidden state at its last real position.

use alloc::vec::Vec;

use crate::corpus::PaddedSeqs;
use crate::diff::{Binding, Real, Tape, Var};
use crate::error::{Error, Result};
use crate::lstm::{self, LstmVars, StackState, StepMask};
use crate::model::{ModelConfig, ParamSpec, EMBEDDING};

/// The two encoders share an architecture but not parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    /// Encodes the query and the response.
    Utterance,
    /// Encodes the flattened context.
    Context,
}

impl EncoderKind {
    pub fn prefix(self) -> &'static str {
        match self {
            EncoderKind::Utterance => "enc_utt",
            EncoderKind::Context => "enc_ctx",
        }
    }
}

pub fn param_specs(cfg: &ModelConfig, kind: EncoderKind) -> Vec<ParamSpec> {
    lstm::specs(kind.prefix(), cfg.embed_dim, cfg.hidden_dim, cfg.layers)
}

/// Run `kind` over a padded batch; returns `[batch, hidden]`.
pub fn encode<T: Real>(
    tape: &mut Tape<T>,
    binding: &Binding,
    cfg: &ModelConfig,
    kind: EncoderKind,
    seqs: &PaddedSeqs,
) -> Result<Var> {
    if seqs.batch_size() == 0 {
        return Err(Error::EmptyInput("encoder batch"));
    }
    if seqs.lengths.contains(&0) {
        return Err(Error::EmptyInput("fully masked sequence"));
    }
    let vars = LstmVars::resolve(binding, kind.prefix(), cfg.layers, cfg.hidden_dim)?;
    let table = binding.var(EMBEDDING)?;
    let mut state = StackState::zeros(tape, seqs.batch_size(), cfg.hidden_dim, cfg.layers)?;
    for t in 0..seqs.width() {
        let x = tape.embed(table, &seqs.column(t))?;
        let mask = StepMask::new(tape, &seqs.mask_column(t))?;
        state = lstm::step(tape, &vars, x, &state, mask.as_ref())?;
    }
    Ok(state.top())
}

/// Summary of query or response turns.
pub fn encode_utterance<T: Real>(
    tape: &mut Tape<T>,
    binding: &Binding,
    cfg: &ModelConfig,
    seqs: &PaddedSeqs,
) -> Result<Var> {
    encode(tape, binding, cfg, EncoderKind::Utterance, seqs)
}

/// Summary of SEP-flattened context turns.
pub fn encode_context<T: Real>(
    tape: &mut Tape<T>,
    binding: &Binding,
    cfg: &ModelConfig,
    seqs: &PaddedSeqs,
) -> Result<Var> {
    if seqs.lengths.contains(&0) {
        return Err(Error::EmptyInput("context"));
    }
    encode(tape, binding, cfg, EncoderKind::Context, seqs)
}
