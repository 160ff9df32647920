//! Epoch loop: seeded shuffling, KL warm-up, global-norm clipping, Adam,
//! validation at the posterior mean and learning-rate decay on plateaus.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{encode_batch, Batch, Triple, DEFAULT_MAX_LEN};
use crate::diff::{adam_step, backward_gradients, clip_global_norm, AdamConfig, AdamState, Real};
use crate::error::{Error, Result};
use crate::latent::standard_normal;
use crate::model::{MirrorModel, Profile};
use crate::objective::{compute_loss, kl_anneal_weight, LatentDraw, LossBreakdown, LossMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: LossMode,
    pub lr: f64,
    pub lr_decay: f64,
    /// Epochs without validation improvement before decaying.
    pub patience: usize,
    /// KL warm-up length in optimizer steps; 0 disables warm-up.
    pub kl_ramp: u64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub profile: Profile,
    pub max_len: usize,
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: LossMode::Mirror,
            lr: 1e-3,
            lr_decay: 0.5,
            patience: 1,
            kl_ramp: 10_000,
            batch_size: 32,
            max_epochs: 20,
            seed: 1234,
            profile: Profile::Desk,
            max_len: DEFAULT_MAX_LEN,
            clip_norm: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be > 0");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must be in (0, 1]");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.max_len < 2 {
            return bad("max_len must be >= 2");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm must be > 0");
        }
        Ok(())
    }
}

/// One line of the training report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: u64,
    pub lr: f64,
    pub train: LossBreakdown,
    pub valid: LossBreakdown,
    pub best: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StopReason {
    MaxEpochs,
    Requested,
    /// Training produced a non-finite loss; the best model so far is kept.
    Diverged(String),
}

pub struct FitOutcome<T> {
    pub best: MirrorModel<T>,
    pub best_epoch: Option<usize>,
    pub report: Vec<EpochRecord>,
    pub stop: StopReason,
}

/// Accumulates batch breakdowns weighted by batch size.
#[derive(Default)]
struct Average {
    sum: LossBreakdown,
    n: usize,
}

impl Average {
    fn add(&mut self, b: &LossBreakdown) {
        let w = b.batch_size as f64;
        let s = &mut self.sum;
        s.r_fwd_y += w * b.r_fwd_y;
        s.r_fwd_x += w * b.r_fwd_x;
        s.r_bwd_x += w * b.r_bwd_x;
        s.r_bwd_y += w * b.r_bwd_y;
        s.kl += w * b.kl;
        s.kl_weight += w * b.kl_weight;
        s.combined += w * b.combined;
        s.tokens_x += b.tokens_x;
        s.tokens_y += b.tokens_y;
        s.batch_size += b.batch_size;
        self.n += b.batch_size;
    }

    fn finish(self) -> LossBreakdown {
        let mut s = self.sum;
        let n = self.n.max(1) as f64;
        s.r_fwd_y /= n;
        s.r_fwd_x /= n;
        s.r_bwd_x /= n;
        s.r_bwd_y /= n;
        s.kl /= n;
        s.kl_weight /= n;
        s.combined /= n;
        s
    }
}

fn chunks(n: usize, size: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..n).step_by(size).map(move |s| (s..(s + size).min(n)).collect())
}

/// Validation objective: KL weight 1, `z` at the posterior mean.
pub fn evaluate<T: Real>(model: &MirrorModel<T>, data: &Batch, mode: LossMode, batch_size: usize) -> Result<LossBreakdown> {
    let mut avg = Average::default();
    for rows in chunks(data.len(), batch_size.max(1)) {
        let b = data.select(&rows);
        let g = compute_loss(model, &b, mode, 1.0, LatentDraw::PosteriorMean)?;
        avg.add(&g.breakdown);
    }
    Ok(avg.finish())
}

/// Train `model` and return the parameters with the best validation bound.
///
/// `on_epoch` sees every report line with the current (not best) model and
/// may stop training early.
pub fn fit<T: Real>(
    mut model: MirrorModel<T>,
    train: &[Triple],
    valid: &[Triple],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &MirrorModel<T>) -> Control,
) -> Result<FitOutcome<T>> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput("training set"));
    }
    if valid.is_empty() {
        return Err(Error::EmptyInput("validation set"));
    }
    let train_batch = encode_batch(train, &model.vocab, config.max_len)?;
    let valid_batch = encode_batch(valid, &model.vocab, config.max_len)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::new(AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    });
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(f64, usize, MirrorModel<T>)> = None;
    let mut stale = 0;
    let mut report = Vec::new();
    let mut stop = StopReason::MaxEpochs;

    'epochs: for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut avg = Average::default();
        for rows in order.chunks(config.batch_size) {
            let batch = train_batch.select(rows);
            let weight = kl_anneal_weight(adam.step_count(), config.kl_ramp);
            let noise = standard_normal::<T, _>(&mut rng, rows.len() * model.config.z_dim);
            let graph = match compute_loss(&model, &batch, config.mode, weight, LatentDraw::Noise(&noise)) {
                Ok(g) => g,
                Err(e @ (Error::Diverged(_) | Error::NonFinite { .. })) => {
                    stop = StopReason::Diverged(alloc::format!("epoch {}: {}", epoch, e));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            avg.add(&graph.breakdown);
            let mut tape = graph.tape;
            let loss = tape.neg(graph.vars.combined);
            let mut grads = match backward_gradients(&tape, loss, &model.params, &graph.binding) {
                Ok(g) => g,
                Err(e @ (Error::NonFinite { .. } | Error::NonFiniteGradient(_))) => {
                    stop = StopReason::Diverged(alloc::format!("epoch {}: {}", epoch, e));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            drop(tape);
            clip_global_norm(&mut grads, config.clip_norm);
            adam_step(&mut model.params, &grads, &mut adam)?;
        }

        let valid_loss = match evaluate(&model, &valid_batch, config.mode, config.batch_size) {
            Ok(v) => v,
            Err(e @ (Error::Diverged(_) | Error::NonFinite { .. })) => {
                stop = StopReason::Diverged(alloc::format!("epoch {} validation: {}", epoch, e));
                break;
            }
            Err(e) => return Err(e),
        };
        let improved = best.as_ref().is_none_or(|(b, _, _)| valid_loss.combined > *b);
        if improved {
            best = Some((valid_loss.combined, epoch, model.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience.max(1) {
                adam.config.lr *= config.lr_decay;
                stale = 0;
            }
        }
        let record = EpochRecord {
            epoch,
            steps: adam.step_count(),
            lr: adam.config.lr,
            train: avg.finish(),
            valid: valid_loss,
            best: improved,
        };
        let control = on_epoch(&record, &model);
        report.push(record);
        if control == Control::Stop {
            stop = StopReason::Requested;
            break;
        }
    }

    let (best_model, best_epoch) = match best {
        Some((_, e, m)) => (m, Some(e)),
        None => (model, None),
    };
    Ok(FitOutcome {
        best: best_model,
        best_epoch,
        report,
        stop,
    })
}
