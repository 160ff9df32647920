//! Corpus-level scores: perplexity under a chosen decoder and distinct-n.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::corpus::Batch;
use crate::decoders::{teacher_forced_log_prob, Conditioning, DecoderId};
use crate::diff::{Real, Tape};
use crate::encoders::{encode_context, encode_utterance};
use crate::error::{Error, Result};
use crate::latent::prior_params;
use crate::model::MirrorModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perplexity {
    pub perplexity: f64,
    /// Summed log probability of every predicted token.
    pub log_prob: f64,
    /// Predicted tokens, EOS included.
    pub tokens: usize,
}

/// Perplexity of responses given context and query, with `z` at the prior
/// mean.
pub fn perplexity<T: Real>(model: &MirrorModel<T>, data: &Batch, batch_size: usize) -> Result<Perplexity> {
    perplexity_with(model, data, DecoderId::ForwardResponse, batch_size)
}

/// Perplexity of the turns `decoder` predicts, each decoder conditioned the
/// way it is during training and `z` at the prior mean.
pub fn perplexity_with<T: Real>(
    model: &MirrorModel<T>,
    data: &Batch,
    decoder: DecoderId,
    batch_size: usize,
) -> Result<Perplexity> {
    if data.vocab_size != model.config.vocab_size {
        return Err(Error::VocabularyMismatch {
            batch: data.vocab_size,
            model: model.config.vocab_size,
        });
    }
    if data.is_empty() {
        return Err(Error::EmptyInput("evaluation set"));
    }
    let cfg = &model.config;
    let mut log_prob = 0.0;
    let mut tokens = 0;
    let n = data.len();
    let size = batch_size.max(1);
    for start in (0..n).step_by(size) {
        let rows: Vec<usize> = (start..(start + size).min(n)).collect();
        let b = data.select(&rows);
        let mut tape = Tape::new();
        let binding = model.params.bind_frozen(&mut tape);
        let c = encode_context(&mut tape, &binding, cfg, &b.context)?;
        let z = prior_params(&mut tape, &binding, cfg, c)?.mean;
        let (target, extra) = match decoder {
            DecoderId::ForwardResponse => (&b.response_target, Some(encode_utterance(&mut tape, &binding, cfg, &b.query)?)),
            DecoderId::ForwardQuery => (&b.query_target, None),
            DecoderId::BackwardQuery => (&b.query_target, Some(encode_utterance(&mut tape, &binding, cfg, &b.response)?)),
            DecoderId::BackwardResponse => (&b.response_target, None),
        };
        let mut vectors = alloc::vec![c, z];
        vectors.extend(extra);
        let cond = Conditioning::new(decoder, vectors)?;
        let tf = teacher_forced_log_prob(&mut tape, &binding, cfg, &cond, target)?;
        tape.ensure_finite()?;
        log_prob += tape.value(tf.total).iter().map(|v| v.as_f64()).sum::<f64>();
        tokens += target.lengths().iter().sum::<usize>();
    }
    Ok(Perplexity {
        perplexity: Float::exp(-log_prob / tokens as f64),
        log_prob,
        tokens,
    })
}

/// Distinct n-grams over all n-grams in `outputs`; 0 when there are none.
pub fn distinct_n<S: AsRef<str> + Ord>(outputs: &[Vec<S>], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let mut seen = BTreeSet::new();
    let mut total = 0usize;
    for out in outputs {
        for gram in out.windows(n) {
            total += 1;
            seen.insert(gram.iter().map(|s| s.as_ref()).collect::<Vec<&str>>());
        }
    }
    if total == 0 {
        0.0
    } else {
        seen.len() as f64 / total as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn distinct_counts() {
        let outs = vec![vec!["a", "b", "a", "b"], vec!["a", "b"]];
        assert!((distinct_n(&outs, 1) - 2.0 / 6.0).abs() < 1e-12);
        assert!((distinct_n(&outs, 2) - 2.0 / 4.0).abs() < 1e-12);
        assert_eq!(distinct_n::<&str>(&[], 2), 0.0);
    }
}
