//! The shared latent variable: recognition (posterior) and prior networks,
//! reparameterized sampling and the closed-form Gaussian KL divergence.
//!
//! Both networks are `tanh` single-hidden-layer maps (hidden width
//! `2 * z_dim`) emitting a mean and a log-variance. The log-variance is
//! clamped to `[-10, 10]`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::diff::{Binding, Real, Tape, Var};
use crate::error::{Error, Result};
use crate::model::{Init, ModelConfig, ParamSpec};

pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Network {
    /// q(z | c, x, y)
    Posterior,
    /// p(z | c)
    Prior,
}

impl Network {
    fn prefix(self) -> &'static str {
        match self {
            Network::Posterior => "posterior",
            Network::Prior => "prior",
        }
    }

    fn input_dim(self, cfg: &ModelConfig) -> usize {
        match self {
            Network::Posterior => 3 * cfg.hidden_dim,
            Network::Prior => cfg.hidden_dim,
        }
    }

    pub fn output_weight(self) -> alloc::string::String {
        format!("{}.out.w", self.prefix())
    }

    pub fn output_bias(self) -> alloc::string::String {
        format!("{}.out.b", self.prefix())
    }
}

pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let width = 2 * cfg.z_dim;
    let mut out = Vec::new();
    for net in [Network::Posterior, Network::Prior] {
        let p = net.prefix();
        out.push(ParamSpec::new(
            format!("{}.hidden.w", p),
            vec![net.input_dim(cfg), width],
            Init::Glorot,
        ));
        out.push(ParamSpec::new(format!("{}.hidden.b", p), vec![width], Init::Zeros));
        out.push(ParamSpec::new(net.output_weight(), vec![width, width], Init::Glorot));
        out.push(ParamSpec::new(net.output_bias(), vec![width], Init::Zeros));
    }
    out
}

/// Mean and clamped log-variance on the tape, each `[batch, z_dim]`.
#[derive(Debug, Clone, Copy)]
pub struct GaussianVars {
    pub mean: Var,
    pub log_var: Var,
}

fn gaussian_head<T: Real>(
    tape: &mut Tape<T>,
    binding: &Binding,
    cfg: &ModelConfig,
    net: Network,
    input: Var,
) -> Result<GaussianVars> {
    let (_, cols) = tape.dims(input);
    if cols != net.input_dim(cfg) {
        return Err(Error::ShapeMismatch {
            op: net.prefix(),
            detail: format!("input width {} vs {}", cols, net.input_dim(cfg)),
        });
    }
    let p = net.prefix();
    let hw = binding.var(&format!("{}.hidden.w", p))?;
    let hb = binding.var(&format!("{}.hidden.b", p))?;
    let ow = binding.var(&net.output_weight())?;
    let ob = binding.var(&net.output_bias())?;
    let pre = tape.matmul(input, hw)?;
    let pre = tape.add_row(pre, hb)?;
    let hidden = tape.tanh(pre);
    let out = tape.matmul(hidden, ow)?;
    let out = tape.add_row(out, ob)?;
    let mean = tape.slice_cols(out, 0, cfg.z_dim)?;
    let raw = tape.slice_cols(out, cfg.z_dim, 2 * cfg.z_dim)?;
    let log_var = tape.clamp(raw, T::lit(LOG_VAR_MIN), T::lit(LOG_VAR_MAX));
    Ok(GaussianVars { mean, log_var })
}

/// Recognition network over `[c; x; y]`.
pub fn posterior_params<T: Real>(
    tape: &mut Tape<T>,
    binding: &Binding,
    cfg: &ModelConfig,
    context: Var,
    query: Var,
    response: Var,
) -> Result<GaussianVars> {
    let dims = [tape.dims(context), tape.dims(query), tape.dims(response)];
    if dims.iter().any(|d| d.1 != cfg.hidden_dim || d.0 != dims[0].0) {
        return Err(Error::ShapeMismatch {
            op: "posterior",
            detail: format!("inputs {:?}, hidden {}", dims, cfg.hidden_dim),
        });
    }
    let joined = tape.concat_cols(&[context, query, response])?;
    gaussian_head(tape, binding, cfg, Network::Posterior, joined)
}

/// Prior network over the context summary alone.
pub fn prior_params<T: Real>(
    tape: &mut Tape<T>,
    binding: &Binding,
    cfg: &ModelConfig,
    context: Var,
) -> Result<GaussianVars> {
    gaussian_head(tape, binding, cfg, Network::Prior, context)
}

/// `z = mean + exp(log_var / 2) * noise` with the noise held constant, so
/// gradients reach the mean and log-variance.
pub fn reparameterize<T: Real>(tape: &mut Tape<T>, params: GaussianVars, noise: &[T]) -> Result<Var> {
    let (rows, cols) = tape.dims(params.mean);
    let eps = tape.constant(rows, cols, noise.to_vec())?;
    let half = tape.scale(params.log_var, T::lit(0.5));
    let sd = tape.exp(half);
    let spread = tape.mul(sd, eps)?;
    tape.add(params.mean, spread)
}

/// Per-row `KL(q || p)` between diagonal Gaussians, `[batch, 1]`.
pub fn kl_divergence<T: Real>(tape: &mut Tape<T>, q: GaussianVars, p: GaussianVars) -> Result<Var> {
    // 0.5 * sum(lv_p - lv_q + exp(lv_q - lv_p) + (mu_q - mu_p)^2 * exp(-lv_p) - 1)
    let lv_diff = tape.sub(p.log_var, q.log_var)?;
    let ratio_log = tape.neg(lv_diff);
    let ratio = tape.exp(ratio_log);
    let d = tape.sub(q.mean, p.mean)?;
    let d2 = tape.mul(d, d)?;
    let neg_lvp = tape.neg(p.log_var);
    let inv_var_p = tape.exp(neg_lvp);
    let maha = tape.mul(d2, inv_var_p)?;
    let s = tape.add(lv_diff, ratio)?;
    let s = tape.add(s, maha)?;
    let s = tape.offset(s, -T::one());
    let s = tape.row_sum(s);
    Ok(tape.scale(s, T::lit(0.5)))
}

/// Plain-value diagonal Gaussian; variance is `exp(log_var)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams<T> {
    pub mean: Vec<T>,
    pub log_var: Vec<T>,
}

impl<T: Real> GaussianParams<T> {
    pub fn new(mean: Vec<T>, log_var: Vec<T>) -> Result<Self> {
        if mean.len() != log_var.len() || mean.is_empty() {
            return Err(Error::ShapeMismatch {
                op: "gaussian",
                detail: format!("mean {} vs log_var {}", mean.len(), log_var.len()),
            });
        }
        if !mean.iter().chain(&log_var).all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: "gaussian" });
        }
        Ok(Self { mean, log_var })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Row `row` of mean/log-variance values read off a tape.
    pub fn from_tape(tape: &Tape<T>, vars: GaussianVars, row: usize) -> Result<Self> {
        let (_, cols) = tape.dims(vars.mean);
        Self::new(
            tape.value(vars.mean)[row * cols..(row + 1) * cols].to_vec(),
            tape.value(vars.log_var)[row * cols..(row + 1) * cols].to_vec(),
        )
    }

    pub fn std(&self) -> Vec<T> {
        self.log_var
            .iter()
            .map(|&lv| (lv * T::lit(0.5)).exp())
            .collect()
    }

    /// Reparameterized draw: the noise and the resulting `z`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> LatentSample<T> {
        let noise = standard_normal(rng, self.dim());
        let z = self.apply_noise(&noise);
        LatentSample { z, noise }
    }

    pub fn apply_noise(&self, noise: &[T]) -> Vec<T> {
        self.mean
            .iter()
            .zip(self.std())
            .zip(noise)
            .map(|((&m, s), &e)| m + s * e)
            .collect()
    }

    /// Log density at `z`.
    pub fn log_density(&self, z: &[T]) -> f64 {
        let ln_2pi = Float::ln(2.0 * core::f64::consts::PI);
        self.mean
            .iter()
            .zip(&self.log_var)
            .zip(z)
            .map(|((&m, &lv), &x)| {
                let (m, lv, x) = (m.as_f64(), lv.as_f64(), x.as_f64());
                -0.5 * (ln_2pi + lv + (x - m) * (x - m) / Float::exp(lv))
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentSample<T> {
    pub z: Vec<T>,
    pub noise: Vec<T>,
}

pub fn standard_normal<T: Real, R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<T> {
    (0..n)
        .map(|_| T::lit(rng.sample::<f64, _>(StandardNormal)))
        .collect()
}

/// Closed-form `KL(q || p)`:
/// `sum_i 0.5 * (ln(var_p / var_q) + (var_q + (mu_q - mu_p)^2) / var_p - 1)`.
pub fn gaussian_kl<T: Real>(q: &GaussianParams<T>, p: &GaussianParams<T>) -> Result<T> {
    if q.dim() != p.dim() {
        return Err(Error::ShapeMismatch {
            op: "gaussian_kl",
            detail: format!("{} vs {}", q.dim(), p.dim()),
        });
    }
    let half = T::lit(0.5);
    let mut total = T::zero();
    for i in 0..q.dim() {
        let (mq, lq, mp, lp) = (q.mean[i], q.log_var[i], p.mean[i], p.log_var[i]);
        let d = mq - mp;
        total += half * ((lp - lq) + (lq - lp).exp() + d * d * (-lp).exp() - T::one());
    }
    // rounding can leave a tiny negative residue for identical inputs
    Ok(total.max(T::zero()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn g(mean: &[f64], lv: &[f64]) -> GaussianParams<f64> {
        GaussianParams::new(mean.to_vec(), lv.to_vec()).unwrap()
    }

    #[test]
    fn kl_fixtures() {
        let a = g(&[0.3, -1.0], &[0.2, -0.4]);
        assert_eq!(gaussian_kl(&a, &a).unwrap(), 0.0);
        let kl = gaussian_kl(&g(&[1.0], &[0.0]), &g(&[0.0], &[0.0])).unwrap();
        assert!((kl - 0.5).abs() < 1e-12);
        let e = core::f64::consts::E;
        let kl = gaussian_kl(&g(&[0.0], &[1.0]), &g(&[0.0], &[0.0])).unwrap();
        assert!((kl - (e - 2.0) / 2.0).abs() < 1e-12);
        assert!(gaussian_kl(&g(&[0.0], &[0.0]), &g(&[0.0, 1.0], &[0.0, 0.0])).is_err());
    }

    #[test]
    fn zero_noise_gives_mean() {
        let p = g(&[1.5, -2.0], &[0.7, 3.0]);
        assert_eq!(p.apply_noise(&[0.0, 0.0]), vec![1.5, -2.0]);
    }

    #[test]
    fn same_seed_same_sample() {
        let p = g(&[1.0, 2.0, 3.0], &[0.0, 1.0, -1.0]);
        let a = p.sample(&mut ChaCha8Rng::seed_from_u64(9));
        let b = p.sample(&mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        for i in 0..3 {
            assert_eq!(a.z[i], p.mean[i] + p.std()[i] * a.noise[i]);
        }
    }

    #[test]
    fn tape_kl_matches_closed_form() {
        let q = g(&[0.3, -0.2, 1.1], &[0.5, -1.0, 0.1]);
        let p = g(&[-0.4, 0.9, 0.0], &[-0.3, 0.4, 1.2]);
        let mut t = Tape::<f64>::new();
        let qv = GaussianVars {
            mean: t.constant(1, 3, q.mean.clone()).unwrap(),
            log_var: t.constant(1, 3, q.log_var.clone()).unwrap(),
        };
        let pv = GaussianVars {
            mean: t.constant(1, 3, p.mean.clone()).unwrap(),
            log_var: t.constant(1, 3, p.log_var.clone()).unwrap(),
        };
        let kl = kl_divergence(&mut t, qv, pv).unwrap();
        assert!((t.value(kl)[0] - gaussian_kl(&q, &p).unwrap()).abs() < 1e-12);
    }
}
