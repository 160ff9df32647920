mod common;

use mirror_core::diff::{
    backward_gradients, numeric_gradient_with, relative_error, Binding, CoordSelection, Stencil, Tape,
};
use mirror_core::objective::{build_objective, compute_loss, LatentDraw, LossMode};

fn noise(n: usize) -> Vec<f64> {
    (0..n).map(|i| ((i as f64) * 0.71).cos()).collect()
}

#[test]
fn combined_matches_its_terms() {
    let m = common::tiny_model(1);
    let batch = common::batch(&m.vocab);
    let eps = noise(batch.len() * m.config.z_dim);
    for mode in LossMode::ALL {
        for w in [0.0, 0.3, 1.0] {
            let g = compute_loss(&m, &batch, mode, w, LatentDraw::Noise(&eps)).unwrap();
            let b = g.breakdown;
            let recon = match mode {
                LossMode::Mirror => 0.5 * (b.r_fwd_y + b.r_fwd_x + b.r_bwd_x + b.r_bwd_y),
                LossMode::Forward => b.r_fwd_y + b.r_fwd_x,
                LossMode::Backward => b.r_bwd_x + b.r_bwd_y,
                LossMode::Cvae => b.r_fwd_y,
            };
            assert!((b.combined - (recon - w * b.kl)).abs() < 1e-9, "{:?} w={}", mode, w);
            assert!((b.reconstruction(mode) - recon).abs() < 1e-12);
            assert!(b.kl >= 0.0);
        }
    }
}

#[test]
fn terms_do_not_depend_on_mode() {
    let m = common::tiny_model(2);
    let batch = common::batch(&m.vocab);
    let eps = noise(batch.len() * m.config.z_dim);
    let base = compute_loss(&m, &batch, LossMode::Mirror, 1.0, LatentDraw::Noise(&eps))
        .unwrap()
        .breakdown;
    for mode in LossMode::ALL {
        let b = compute_loss(&m, &batch, mode, 1.0, LatentDraw::Noise(&eps)).unwrap().breakdown;
        assert_eq!((b.r_fwd_y, b.r_fwd_x, b.r_bwd_x, b.r_bwd_y, b.kl), (base.r_fwd_y, base.r_fwd_x, base.r_bwd_x, base.r_bwd_y, base.kl));
    }
}

#[test]
fn uniform_decoders_give_length_times_log_vocab() {
    let mut m = common::tiny_model(3);
    m.zero_output_projections();
    let batch = common::batch(&m.vocab);
    let g = compute_loss(&m, &batch, LossMode::Mirror, 1.0, LatentDraw::PosteriorMean).unwrap();
    let b = g.breakdown;
    let ln_v = (m.config.vocab_size as f64).ln();
    let n = batch.len() as f64;
    let want_y = -(b.tokens_y as f64) * ln_v / n;
    let want_x = -(b.tokens_x as f64) * ln_v / n;
    for (got, want) in [(b.r_fwd_y, want_y), (b.r_bwd_y, want_y), (b.r_fwd_x, want_x), (b.r_bwd_x, want_x)] {
        assert!((got - want).abs() < 1e-9, "{} vs {}", got, want);
    }
    // Token counts include EOS: responses have 3, 1, 2 tokens.
    assert_eq!(b.tokens_y, 3 + 1 + 2 + 3);
    assert_eq!(b.tokens_x, 1 + 4 + 1 + 3);
}

#[test]
fn single_direction_modes_leave_other_decoders_untrained() {
    let m = common::tiny_model(4);
    let batch = common::batch(&m.vocab);
    let eps = noise(batch.len() * m.config.z_dim);
    for (mode, untouched) in [
        (LossMode::Cvae, vec!["dec_fwd_x.", "dec_bwd_x.", "dec_bwd_y."]),
        (LossMode::Forward, vec!["dec_bwd_x.", "dec_bwd_y."]),
        (LossMode::Backward, vec!["dec_fwd_y.", "dec_fwd_x."]),
        (LossMode::Mirror, vec![]),
    ] {
        let g = compute_loss(&m, &batch, mode, 1.0, LatentDraw::Noise(&eps)).unwrap();
        let grads = backward_gradients(&g.tape, g.vars.combined, &m.params, &g.binding).unwrap();
        for (name, a) in &grads {
            let mass: f64 = a.data().iter().map(|v| v.abs()).sum();
            if untouched.iter().any(|p| name.starts_with(p)) {
                assert_eq!(mass, 0.0, "{:?} reached {}", mode, name);
            }
        }
        let trained = grads.values().filter(|a| a.data().iter().any(|&v| v != 0.0)).count();
        assert!(trained > 0);
    }
}

#[test]
fn invalid_arguments_are_rejected() {
    let m = common::tiny_model(5);
    let batch = common::batch(&m.vocab);
    let eps = noise(batch.len() * m.config.z_dim);
    assert!(compute_loss(&m, &batch, LossMode::Mirror, 1.5, LatentDraw::Noise(&eps)).is_err());
    assert!(compute_loss(&m, &batch, LossMode::Mirror, -0.1, LatentDraw::Noise(&eps)).is_err());
    assert!(compute_loss(&m, &batch, LossMode::Mirror, 1.0, LatentDraw::Noise(&eps[1..])).is_err());
    let mut other = batch.clone();
    other.vocab_size += 1;
    assert!(compute_loss(&m, &other, LossMode::Mirror, 1.0, LatentDraw::Noise(&eps)).is_err());
}

/// Every coordinate of every parameter of a tiny model. A handful of
/// coordinates carry gradients near 1e-10, below what differences of a
/// loss of order 10 can resolve, so agreement is relative error under 1e-4
/// or, for gradients under 1e-6, absolute error under 1e-8.
#[test]
fn full_objective_gradient_every_coordinate() {
    let m = common::tiny_model(6);
    let batch = common::batch(&m.vocab).select(&[0, 1]);
    let eps = noise(batch.len() * m.config.z_dim);
    for mode in [LossMode::Mirror, LossMode::Cvae] {
        let f = |tape: &mut Tape<f64>, binding: &Binding| {
            build_objective(tape, binding, &m.config, &batch, mode, 0.7, LatentDraw::Noise(&eps)).map(|v| v.combined)
        };
        let mut tape = Tape::new();
        let binding = m.params.bind(&mut tape);
        let out = f(&mut tape, &binding).unwrap();
        let analytic = backward_gradients(&tape, out, &m.params, &binding).unwrap();
        let numeric = numeric_gradient_with(&f, &m.params, 1e-2, CoordSelection::All, Stencil::FivePoint).unwrap();
        assert_eq!(numeric.len(), m.params.count());
        for e in &numeric {
            let a = analytic[&e.name].data()[e.index];
            if relative_error(a, e.value) >= 1e-4 {
                assert!(
                    a.abs() < 1e-6 && (a - e.value).abs() < 1e-8,
                    "{:?} {}[{}]: {} vs {}",
                    mode,
                    e.name,
                    e.index,
                    a,
                    e.value
                );
            }
        }
    }
}

#[test]
fn heavier_kl_weight_never_raises_the_objective() {
    let m = common::tiny_model(7);
    let batch = common::batch(&m.vocab);
    let eps = noise(batch.len() * m.config.z_dim);
    for mode in LossMode::ALL {
        let mut last = f64::INFINITY;
        for i in 0..=10 {
            let w = i as f64 / 10.0;
            let b = compute_loss(&m, &batch, mode, w, LatentDraw::Noise(&eps)).unwrap().breakdown;
            assert!(b.kl > 0.0);
            assert!(b.combined <= last, "{:?} w={}", mode, w);
            last = b.combined;
        }
    }
}
