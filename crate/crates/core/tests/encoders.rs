mod common;

use mirror_core::corpus::{PaddedSeqs, PAD};
use mirror_core::diff::{backward_gradients, Array, ParamStore, Real, Tape};
use mirror_core::encoders::{self, encode, EncoderKind};
use mirror_core::model::{Dataset, ModelConfig, Profile, EMBEDDING};
use mirror_core::Error;

fn run(model: &mirror_core::model::MirrorModel<f64>, kind: EncoderKind, seqs: &PaddedSeqs) -> Vec<f64> {
    let mut tape = Tape::new();
    let b = model.params.bind(&mut tape);
    let out = encode(&mut tape, &b, &model.config, kind, seqs).unwrap();
    tape.value(out).to_vec()
}

#[test]
fn padding_does_not_change_a_row() {
    let m = common::tiny_model(1);
    let alone = run(&m, EncoderKind::Utterance, &PaddedSeqs::from_rows(vec![vec![5, 6, 7]]));
    let padded = run(
        &m,
        EncoderKind::Utterance,
        &PaddedSeqs::from_rows(vec![vec![8, 9, 10, 11, 12], vec![5, 6, 7]]),
    );
    let h = m.config.hidden_dim;
    assert_eq!(alone.len(), h);
    for (a, b) in alone.iter().zip(&padded[h..]) {
        assert!((a - b).abs() < 1e-12, "{} vs {}", a, b);
    }
}

#[test]
fn masked_positions_ignore_their_ids() {
    let m = common::tiny_model(2);
    let clean = PaddedSeqs {
        ids: vec![vec![5, 6, PAD, PAD]],
        lengths: vec![2],
    };
    let junk = PaddedSeqs {
        ids: vec![vec![5, 6, 11, 9]],
        lengths: vec![2],
    };
    assert_eq!(run(&m, EncoderKind::Context, &clean), run(&m, EncoderKind::Context, &junk));
}

#[test]
fn order_matters() {
    let m = common::tiny_model(3);
    let fwd = run(&m, EncoderKind::Utterance, &PaddedSeqs::from_rows(vec![vec![5, 6, 7]]));
    let rev = run(&m, EncoderKind::Utterance, &PaddedSeqs::from_rows(vec![vec![7, 6, 5]]));
    let diff: f64 = fwd.iter().zip(&rev).map(|(a, b)| (a - b).abs()).sum();
    assert!(diff > 1e-6);
}

#[test]
fn encoders_share_no_parameters() {
    let cfg = common::tiny_config(13);
    let utt: Vec<String> = encoders::param_specs(&cfg, EncoderKind::Utterance)
        .into_iter()
        .map(|s| s.name)
        .collect();
    let ctx: Vec<String> = encoders::param_specs(&cfg, EncoderKind::Context)
        .into_iter()
        .map(|s| s.name)
        .collect();
    assert!(!utt.is_empty());
    assert!(utt.iter().all(|n| !ctx.contains(n)));

    // Gradients of one encoder's output never reach the other's weights.
    let m = common::tiny_model(4);
    let seqs = PaddedSeqs::from_rows(vec![vec![5, 6], vec![7]]);
    for (kind, other) in [
        (EncoderKind::Utterance, EncoderKind::Context),
        (EncoderKind::Context, EncoderKind::Utterance),
    ] {
        let mut tape = Tape::new();
        let b = m.params.bind(&mut tape);
        let out = encode(&mut tape, &b, &m.config, kind, &seqs).unwrap();
        let loss = tape.sum(out);
        let g = backward_gradients(&tape, loss, &m.params, &b).unwrap();
        let own: f64 = g
            .iter()
            .filter(|(n, _)| n.starts_with(kind.prefix()))
            .flat_map(|(_, a)| a.data().iter().map(|v| v.abs()))
            .sum();
        let foreign: f64 = g
            .iter()
            .filter(|(n, _)| n.starts_with(other.prefix()))
            .flat_map(|(_, a)| a.data().iter().map(|v| v.abs()))
            .sum();
        assert!(own > 0.0);
        assert_eq!(foreign, 0.0);
    }
}

#[test]
fn empty_rows_are_rejected() {
    let m = common::tiny_model(5);
    let mut tape = Tape::new();
    let b = m.params.bind(&mut tape);
    let seqs = PaddedSeqs {
        ids: vec![vec![5, 6], vec![PAD, PAD]],
        lengths: vec![2, 0],
    };
    let err = encode(&mut tape, &b, &m.config, EncoderKind::Utterance, &seqs).unwrap_err();
    assert!(matches!(err, Error::EmptyInput(_)));
    let none = PaddedSeqs::from_rows(vec![]);
    assert!(encode(&mut tape, &b, &m.config, EncoderKind::Utterance, &none).is_err());
}

#[test]
fn paper_profile_summary_width() {
    // Only the embedding and one encoder are materialized; the full model at
    // this size is not needed to check the output shape.
    let cfg = ModelConfig::for_profile(Profile::Paper, Dataset::DailyDialog, 13);
    assert_eq!(cfg.hidden_dim, 1000);
    let mut store = ParamStore::<f32>::new();
    store.insert(
        EMBEDDING,
        Array::from_fn(&[cfg.vocab_size, cfg.embed_dim], |i| f32::lit(((i % 7) as f64 - 3.0) * 0.1)),
    );
    for spec in encoders::param_specs(&cfg, EncoderKind::Utterance) {
        store.insert(
            spec.name,
            Array::from_fn(&spec.shape, |i| f32::lit(((i % 11) as f64 - 5.0) * 0.002)),
        );
    }
    let mut tape = Tape::new();
    let b = store.bind_frozen(&mut tape);
    let out = encode(
        &mut tape,
        &b,
        &cfg,
        EncoderKind::Utterance,
        &PaddedSeqs::from_rows(vec![vec![5, 6, 7], vec![8]]),
    )
    .unwrap();
    assert_eq!(tape.dims(out), (2, 1000));
    assert!(tape.value(out).iter().all(|v| v.is_finite()));
}
