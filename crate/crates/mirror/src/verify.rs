//! Numerical verification suite: gradient checks, KL Monte Carlo agreement
//! and the mirror-objective identity. Used by `mirror verify` and the
//! acceptance tests.

use std::time::Instant;

use mirror_core::corpus::{build_vocabulary, encode_batch, window_dialogues, Batch, Vocabulary};
use mirror_core::diff::{
    grad_check, grad_check_with, Array, Binding, CoordSelection, GradCheckReport, ParamStore, Stencil, Tape, Var,
};
use mirror_core::latent::{gaussian_kl, standard_normal, GaussianParams};
use mirror_core::model::{Dataset, MirrorModel, ModelConfig, Profile};
use mirror_core::objective::{build_objective, compute_loss, LatentDraw, LossMode};
use mirror_core::Result as CoreResult;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::toy;

pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const FD_STEP: f64 = 1e-5;
/// Step of the five-point stencil used on the full objective, whose value
/// (tens of nats) swamps central differences at `FD_STEP` with rounding
/// noise on coordinates with gradients near 1e-7.
pub const FULL_LOSS_STEP: f64 = 1e-2;
/// Coordinates probed per parameter array in the full-objective check.
pub const FULL_LOSS_COORDS: usize = 8;
pub const KL_MC_SAMPLES: usize = 1_000_000;
pub const KL_MC_TOLERANCE: f64 = 0.01;
pub const KL_FIXTURE_TOLERANCE: f64 = 1e-9;
pub const IDENTITY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

fn timed(name: &str, f: impl FnOnce() -> (bool, String)) -> Check {
    let t = Instant::now();
    let (passed, detail) = f();
    Check {
        name: name.into(),
        passed,
        detail,
        seconds: t.elapsed().as_secs_f64(),
    }
}

fn random_store(seed: u64, specs: &[(&str, &[usize], f64, f64)]) -> ParamStore<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    for &(name, shape, lo, hi) in specs {
        s.insert(name, Array::from_fn(shape, |_| rng.random_range(lo..hi)));
    }
    s
}

/// `sum(v * R)` for a fixed pseudo-random `R`, so every output entry gets a
/// distinct upstream gradient.
fn readout(t: &mut Tape<f64>, v: Var) -> CoreResult<Var> {
    let (r, c) = t.dims(v);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let w = t.constant(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let p = t.mul(v, w)?;
    Ok(t.sum(p))
}

type Probe = fn(&mut Tape<f64>, &Binding) -> CoreResult<Var>;

fn primitive_cases() -> Vec<(&'static str, Vec<(&'static str, &'static [usize], f64, f64)>, Probe)> {
    const M34: &[usize] = &[3, 4];
    vec![
        ("matmul", vec![("a", M34, -1.0, 1.0), ("b", &[4, 2], -1.0, 1.0)], |t, b| {
            let v = t.matmul(b.var("a")?, b.var("b")?)?;
            readout(t, v)
        }),
        ("add", vec![("a", M34, -1.0, 1.0), ("b", M34, -1.0, 1.0)], |t, b| {
            let v = t.add(b.var("a")?, b.var("b")?)?;
            readout(t, v)
        }),
        ("sub", vec![("a", M34, -1.0, 1.0), ("b", M34, -1.0, 1.0)], |t, b| {
            let v = t.sub(b.var("a")?, b.var("b")?)?;
            readout(t, v)
        }),
        ("mul", vec![("a", M34, -1.0, 1.0), ("b", M34, -1.0, 1.0)], |t, b| {
            let v = t.mul(b.var("a")?, b.var("b")?)?;
            readout(t, v)
        }),
        ("add_row", vec![("a", M34, -1.0, 1.0), ("r", &[4], -1.0, 1.0)], |t, b| {
            let v = t.add_row(b.var("a")?, b.var("r")?)?;
            readout(t, v)
        }),
        ("mul_col", vec![("a", M34, -1.0, 1.0), ("c", &[3, 1], -1.0, 1.0)], |t, b| {
            let v = t.mul_col(b.var("a")?, b.var("c")?)?;
            readout(t, v)
        }),
        ("scale_offset_neg", vec![("a", M34, -1.0, 1.0)], |t, b| {
            let v = t.scale(b.var("a")?, -1.7);
            let v = t.offset(v, 0.3);
            let v = t.neg(v);
            readout(t, v)
        }),
        ("tanh", vec![("a", M34, -2.0, 2.0)], |t, b| {
            let v = t.tanh(b.var("a")?);
            readout(t, v)
        }),
        ("sigmoid", vec![("a", M34, -2.0, 2.0)], |t, b| {
            let v = t.sigmoid(b.var("a")?);
            readout(t, v)
        }),
        ("exp", vec![("a", M34, -2.0, 2.0)], |t, b| {
            let v = t.exp(b.var("a")?);
            readout(t, v)
        }),
        ("log", vec![("a", M34, 0.5, 2.0)], |t, b| {
            let v = t.log(b.var("a")?);
            readout(t, v)
        }),
        ("clamp", vec![("a", M34, -0.9, 0.9)], |t, b| {
            let v = t.clamp(b.var("a")?, -1.0, 1.0);
            readout(t, v)
        }),
        ("concat", vec![("a", &[3, 2], -1.0, 1.0), ("b", &[3, 3], -1.0, 1.0)], |t, b| {
            let v = t.concat_cols(&[b.var("a")?, b.var("b")?])?;
            readout(t, v)
        }),
        ("slice", vec![("a", &[3, 5], -1.0, 1.0)], |t, b| {
            let v = t.slice_cols(b.var("a")?, 1, 4)?;
            readout(t, v)
        }),
        ("embedding", vec![("e", &[6, 3], -1.0, 1.0)], |t, b| {
            let v = t.embed(b.var("e")?, &[0, 2, 2, 5])?;
            readout(t, v)
        }),
        ("softmax_cross_entropy", vec![("z", &[4, 5], -3.0, 3.0)], |t, b| {
            let v = t.cross_entropy(b.var("z")?, &[1, 4, 0, 2], &[1.0, 1.0, 0.5, 0.0])?;
            readout(t, v)
        }),
        ("sum_row_sum", vec![("a", M34, -1.0, 1.0)], |t, b| {
            let v = t.row_sum(b.var("a")?);
            let v = t.tanh(v);
            Ok(t.sum(v))
        }),
        (
            "two_layer_softmax_network",
            vec![
                ("w1", &[4, 6], -1.0, 1.0),
                ("b1", &[6], -0.5, 0.5),
                ("w2", &[6, 3], -1.0, 1.0),
                ("b2", &[3], -0.5, 0.5),
            ],
            |t, b| {
                let mut rng = ChaCha8Rng::seed_from_u64(5);
                let x = t.constant(5, 4, (0..20).map(|_| rng.random_range(-1.0..1.0)).collect())?;
                let h = t.matmul(x, b.var("w1")?)?;
                let h = t.add_row(h, b.var("b1")?)?;
                let h = t.tanh(h);
                let o = t.matmul(h, b.var("w2")?)?;
                let o = t.add_row(o, b.var("b2")?)?;
                let ce = t.cross_entropy(o, &[0, 2, 1, 1, 0], &[1.0; 5])?;
                Ok(t.sum(ce))
            },
        ),
    ]
}

/// Gradient check of every primitive at a random point, all coordinates.
pub fn primitive_gradients(seed: u64) -> Vec<(&'static str, CoreResult<GradCheckReport>)> {
    primitive_cases()
        .into_iter()
        .enumerate()
        .map(|(i, (name, specs, f))| {
            let point = random_store(seed + i as u64, &specs);
            (name, grad_check(f, &point, FD_STEP, CoordSelection::All))
        })
        .collect()
}

pub fn toy_triples_and_vocab() -> (Vec<mirror_core::corpus::Triple>, Vocabulary) {
    let triples = window_dialogues(&toy::dialogues(toy::TOY8), 3, 1)
        .expect("window 3 is valid")
        .triples;
    let vocab = build_vocabulary(&triples, 20_000).expect("non-empty corpus");
    (triples, vocab)
}

/// A 64-bit model and a batch of `n` toy triples.
pub fn model_and_batch(cfg: fn(usize) -> ModelConfig, seed: u64, n: usize) -> (MirrorModel<f64>, Batch) {
    let (triples, vocab) = toy_triples_and_vocab();
    let batch = encode_batch(&triples[..n], &vocab, 50).expect("toy batch encodes");
    let model = MirrorModel::new(cfg(vocab.len()), vocab, seed).expect("valid config");
    (model, batch)
}

pub fn desk_config(vocab: usize) -> ModelConfig {
    ModelConfig::for_profile(Profile::Desk, Dataset::Custom, vocab)
}

/// Gradient check of the mirror objective for the desk profile on a
/// two-triple batch. `per_array` coordinates are probed in every parameter
/// array (`None` probes all of them).
pub fn full_loss_gradient(seed: u64, per_array: Option<usize>) -> CoreResult<GradCheckReport> {
    let (model, batch) = model_and_batch(desk_config, seed, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f64> = standard_normal(&mut rng, batch.len() * model.config.z_dim);
    let cfg = model.config;
    let f = |t: &mut Tape<f64>, b: &Binding| -> CoreResult<Var> {
        let vars = build_objective(t, b, &cfg, &batch, LossMode::Mirror, 0.7, LatentDraw::Noise(&noise))?;
        Ok(vars.combined)
    };
    let coords = match per_array {
        Some(n) => CoordSelection::Sample { per_array: n, seed },
        None => CoordSelection::All,
    };
    grad_check_with(f, &model.params, FULL_LOSS_STEP, coords, Stencil::FivePoint)
}

/// Monte Carlo estimate of `E_q[log q(z) - log p(z)]`.
pub fn kl_monte_carlo(q: &GaussianParams<f64>, p: &GaussianParams<f64>, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..samples {
        let z = q.sample(&mut rng).z;
        total += q.log_density(&z) - p.log_density(&z);
    }
    total / samples as f64
}

/// Hand-derived KL values: identical, unit mean shift, and variance e
/// against 1.
pub fn kl_fixtures() -> Vec<(&'static str, f64, f64)> {
    let g = |m: f64, lv: f64| GaussianParams::new(vec![m], vec![lv]).expect("finite");
    let e = std::f64::consts::E;
    vec![
        ("identical", gaussian_kl(&g(0.4, -0.3), &g(0.4, -0.3)).expect("same dim"), 0.0),
        ("mean_shift", gaussian_kl(&g(1.0, 0.0), &g(0.0, 0.0)).expect("same dim"), 0.5),
        ("variance_e", gaussian_kl(&g(0.0, 1.0), &g(0.0, 0.0)).expect("same dim"), (e - 2.0) / 2.0),
    ]
}

/// Random parameter pairs for the Monte Carlo comparison.
pub fn random_gaussian_pairs(n: usize, dim: usize, seed: u64) -> Vec<(GaussianParams<f64>, GaussianParams<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = |rng: &mut ChaCha8Rng| {
        let m = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lv = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        GaussianParams::new(m, lv).expect("finite")
    };
    (0..n).map(|_| (g(&mut rng), g(&mut rng))).collect()
}

/// Largest deviation between the mirror objective and the average of the
/// forward and backward bounds over `settings` random parameter draws.
pub fn mirror_identity(settings: usize, seed: u64) -> CoreResult<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for s in 0..settings {
        let (model, batch) = model_and_batch(desk_config, seed.wrapping_add(s as u64), 2);
        let noise: Vec<f64> = standard_normal(&mut rng, batch.len() * model.config.z_dim);
        let w: f64 = rng.random_range(0.0..=1.0);
        let run = |mode| compute_loss(&model, &batch, mode, w, LatentDraw::Noise(&noise)).map(|g| g.breakdown);
        let mirror = run(LossMode::Mirror)?;
        let fwd = run(LossMode::Forward)?;
        let bwd = run(LossMode::Backward)?;
        let kl = mirror.kl;
        let expected = 0.5 * (fwd.combined + w * kl) + 0.5 * (bwd.combined + w * kl) - w * kl;
        worst = worst.max((mirror.combined - expected).abs());
    }
    Ok(worst)
}

/// The `verify` suite.
pub fn run_all(seed: u64) -> Vec<Check> {
    let mut out = Vec::new();
    out.push(timed("gradients.primitives", || {
        let mut worst = (0.0, "none");
        for (name, r) in primitive_gradients(seed) {
            match r {
                Ok(r) if r.max_rel_error < GRAD_TOLERANCE => {
                    if r.max_rel_error > worst.0 {
                        worst = (r.max_rel_error, name);
                    }
                }
                Ok(r) => return (false, format!("{}: relative error {:.3e}", name, r.max_rel_error)),
                Err(e) => return (false, format!("{}: {}", name, e)),
            }
        }
        (true, format!("max relative error {:.3e} ({})", worst.0, worst.1))
    }));
    out.push(timed("gradients.mirror_loss", || match full_loss_gradient(seed, Some(FULL_LOSS_COORDS)) {
        Ok(r) => (
            r.max_rel_error < GRAD_TOLERANCE,
            format!("max relative error {:.3e} over {} coordinates", r.max_rel_error, r.checked),
        ),
        Err(e) => (false, e.to_string()),
    }));
    out.push(timed("kl.fixtures", || {
        let bad: Vec<String> = kl_fixtures()
            .into_iter()
            .filter(|(_, got, want)| (got - want).abs() > KL_FIXTURE_TOLERANCE)
            .map(|(n, got, want)| format!("{} {} != {}", n, got, want))
            .collect();
        (bad.is_empty(), if bad.is_empty() { "3 fixtures".into() } else { bad.join("; ") })
    }));
    out.push(timed("kl.monte_carlo", || {
        let mut worst: f64 = 0.0;
        for (i, (q, p)) in random_gaussian_pairs(20, 4, seed).iter().enumerate() {
            let exact = gaussian_kl(q, p).expect("same dim");
            let mc = kl_monte_carlo(q, p, KL_MC_SAMPLES, seed + i as u64);
            worst = worst.max((mc - exact).abs() / exact);
        }
        (worst < KL_MC_TOLERANCE, format!("max relative error {:.3e} over 20 pairs", worst))
    }));
    out.push(timed("objective.mirror_identity", || match mirror_identity(100, seed) {
        Ok(d) => (d < IDENTITY_TOLERANCE, format!("max deviation {:.3e} over 100 settings", d)),
        Err(e) => (false, e.to_string()),
    }));
    out
}
