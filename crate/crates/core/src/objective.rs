//! Training objectives.
//!
//! All four reconstruction terms are built on every call and reported; the
//! loss mode decides which of them enter the maximized bound:
//!
//! * `Mirror`:   ½ (fwd_y + fwd_x + bwd_x + bwd_y) − w·KL
//! * `Forward`:  fwd_y + fwd_x − w·KL
//! * `Backward`: bwd_x + bwd_y − w·KL
//! * `Cvae`:     fwd_y − w·KL (posterior still sees c, x, y)
//!
//! Reconstruction terms are summed over tokens and averaged over the batch.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::Batch;
use crate::decoders::{teacher_forced_log_prob, Conditioning, DecoderId};
use crate::diff::{Binding, Real, Tape, Var};
use crate::encoders::{encode_context, encode_utterance};
use crate::error::{Error, Result};
use crate::latent::{kl_divergence, posterior_params, prior_params, reparameterize};
use crate::model::{MirrorModel, ModelConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    Mirror,
    Forward,
    Backward,
    Cvae,
}

impl LossMode {
    pub const ALL: [LossMode; 4] = [LossMode::Mirror, LossMode::Forward, LossMode::Backward, LossMode::Cvae];

    pub fn name(self) -> &'static str {
        match self {
            LossMode::Mirror => "mirror",
            LossMode::Forward => "forward",
            LossMode::Backward => "backward",
            LossMode::Cvae => "cvae",
        }
    }
}

impl core::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown loss mode {:?}", s)))
    }
}

/// Where the latent sample comes from.
#[derive(Debug, Clone, Copy)]
pub enum LatentDraw<'a, T> {
    /// Reparameterized posterior sample with this `[batch, z_dim]` noise.
    Noise(&'a [T]),
    /// The posterior mean (deterministic validation).
    PosteriorMean,
}

/// Batch-averaged objective terms.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// log p(y | c, z, x)
    pub r_fwd_y: f64,
    /// log p(x | c, z)
    pub r_fwd_x: f64,
    /// log p(x | c, z, y)
    pub r_bwd_x: f64,
    /// log p(y | c, z)
    pub r_bwd_y: f64,
    pub kl: f64,
    pub kl_weight: f64,
    /// The bound being maximized under the active mode.
    pub combined: f64,
    /// Predicted tokens in the batch for y-terms and x-terms (EOS included).
    pub tokens_y: usize,
    pub tokens_x: usize,
    pub batch_size: usize,
}

impl LossBreakdown {
    /// Sum of the reconstruction terms the mode trains.
    pub fn reconstruction(&self, mode: LossMode) -> f64 {
        match mode {
            LossMode::Mirror => 0.5 * (self.r_fwd_y + self.r_fwd_x + self.r_bwd_x + self.r_bwd_y),
            LossMode::Forward => self.r_fwd_y + self.r_fwd_x,
            LossMode::Backward => self.r_bwd_x + self.r_bwd_y,
            LossMode::Cvae => self.r_fwd_y,
        }
    }

    fn check_finite(&self) -> Result<()> {
        let terms = [self.r_fwd_y, self.r_fwd_x, self.r_bwd_x, self.r_bwd_y, self.kl, self.combined];
        if terms.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Diverged(format!(
                "r_fwd_y={} r_fwd_x={} r_bwd_x={} r_bwd_y={} kl={} combined={}",
                self.r_fwd_y, self.r_fwd_x, self.r_bwd_x, self.r_bwd_y, self.kl, self.combined
            )))
        }
    }
}

/// Tape variables of one objective evaluation; every term is a `1 x 1`
/// batch average.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveVars {
    pub r_fwd_y: Var,
    pub r_fwd_x: Var,
    pub r_bwd_x: Var,
    pub r_bwd_y: Var,
    pub kl: Var,
    pub combined: Var,
}

/// Linear KL warm-up `min(1, step / ramp)`; a zero ramp means weight 1.
pub fn kl_anneal_weight(step: u64, ramp: u64) -> f64 {
    if ramp == 0 {
        1.0
    } else {
        (step as f64 / ramp as f64).min(1.0)
    }
}

fn batch_mean<T: Real>(tape: &mut Tape<T>, rows: Var, batch: usize) -> Var {
    let s = tape.sum(rows);
    tape.scale(s, T::lit(1.0 / batch as f64))
}

/// Record the objective for `batch` on an existing tape.
pub fn build_objective<T: Real>(
    tape: &mut Tape<T>,
    binding: &Binding,
    cfg: &ModelConfig,
    batch: &Batch,
    mode: LossMode,
    kl_weight: f64,
    draw: LatentDraw<'_, T>,
) -> Result<ObjectiveVars> {
    if !(0.0..=1.0).contains(&kl_weight) {
        return Err(Error::InvalidArgument(format!("kl_weight {} outside [0, 1]", kl_weight)));
    }
    if batch.vocab_size != cfg.vocab_size {
        return Err(Error::VocabularyMismatch {
            batch: batch.vocab_size,
            model: cfg.vocab_size,
        });
    }
    let n = batch.len();
    let c = encode_context(tape, binding, cfg, &batch.context)?;
    let x = encode_utterance(tape, binding, cfg, &batch.query)?;
    let y = encode_utterance(tape, binding, cfg, &batch.response)?;
    let q = posterior_params(tape, binding, cfg, c, x, y)?;
    let p = prior_params(tape, binding, cfg, c)?;
    let z = match draw {
        LatentDraw::Noise(eps) => {
            if eps.len() != n * cfg.z_dim {
                return Err(Error::ShapeMismatch {
                    op: "latent noise",
                    detail: format!("{} values for {}x{}", eps.len(), n, cfg.z_dim),
                });
            }
            reparameterize(tape, q, eps)?
        }
        LatentDraw::PosteriorMean => q.mean,
    };

    let term = |tape: &mut Tape<T>, id: DecoderId, extra: Option<Var>| -> Result<Var> {
        let mut vectors = Vec::with_capacity(3);
        vectors.push(c);
        vectors.push(z);
        vectors.extend(extra);
        let cond = Conditioning::new(id, vectors)?;
        let target = match id {
            DecoderId::ForwardResponse | DecoderId::BackwardResponse => &batch.response_target,
            DecoderId::ForwardQuery | DecoderId::BackwardQuery => &batch.query_target,
        };
        let tf = teacher_forced_log_prob(tape, binding, cfg, &cond, target)?;
        Ok(batch_mean(tape, tf.total, n))
    };
    let r_fwd_y = term(tape, DecoderId::ForwardResponse, Some(x))?;
    let r_fwd_x = term(tape, DecoderId::ForwardQuery, None)?;
    let r_bwd_x = term(tape, DecoderId::BackwardQuery, Some(y))?;
    let r_bwd_y = term(tape, DecoderId::BackwardResponse, None)?;

    let kl_rows = kl_divergence(tape, q, p)?;
    let kl = batch_mean(tape, kl_rows, n);

    let recon = match mode {
        LossMode::Mirror => {
            let a = tape.add(r_fwd_y, r_fwd_x)?;
            let b = tape.add(r_bwd_x, r_bwd_y)?;
            let s = tape.add(a, b)?;
            tape.scale(s, T::lit(0.5))
        }
        LossMode::Forward => tape.add(r_fwd_y, r_fwd_x)?,
        LossMode::Backward => tape.add(r_bwd_x, r_bwd_y)?,
        LossMode::Cvae => r_fwd_y,
    };
    let penalty = tape.scale(kl, T::lit(kl_weight));
    let combined = tape.sub(recon, penalty)?;
    Ok(ObjectiveVars {
        r_fwd_y,
        r_fwd_x,
        r_bwd_x,
        r_bwd_y,
        kl,
        combined,
    })
}

/// Read the term values off the tape.
pub fn breakdown<T: Real>(
    tape: &Tape<T>,
    vars: &ObjectiveVars,
    batch: &Batch,
    kl_weight: f64,
) -> Result<LossBreakdown> {
    let v = |var: Var| -> Result<f64> { Ok(tape.scalar(var)?.as_f64()) };
    let b = LossBreakdown {
        r_fwd_y: v(vars.r_fwd_y)?,
        r_fwd_x: v(vars.r_fwd_x)?,
        r_bwd_x: v(vars.r_bwd_x)?,
        r_bwd_y: v(vars.r_bwd_y)?,
        kl: v(vars.kl)?,
        kl_weight,
        combined: v(vars.combined)?,
        tokens_y: batch.response_target.lengths().iter().sum(),
        tokens_x: batch.query_target.lengths().iter().sum(),
        batch_size: batch.len(),
    };
    b.check_finite()?;
    Ok(b)
}

/// A recorded objective ready for the backward pass.
pub struct LossGraph<T> {
    pub tape: Tape<T>,
    pub binding: Binding,
    pub vars: ObjectiveVars,
    pub breakdown: LossBreakdown,
}

/// Evaluate the objective for `batch` with one latent sample per triple.
/// Non-finite terms abort with the magnitudes of every term.
pub fn compute_loss<T: Real>(
    model: &MirrorModel<T>,
    batch: &Batch,
    mode: LossMode,
    kl_weight: f64,
    draw: LatentDraw<'_, T>,
) -> Result<LossGraph<T>> {
    let mut tape = Tape::new();
    let binding = model.params.bind(&mut tape);
    let vars = build_objective(&mut tape, &binding, &model.config, batch, mode, kl_weight, draw)?;
    let breakdown = breakdown(&tape, &vars, batch, kl_weight)?;
    tape.ensure_finite()?;
    Ok(LossGraph {
        tape,
        binding,
        vars,
        breakdown,
    })
}
