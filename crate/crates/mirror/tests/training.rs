use mirror::config::Settings;
use mirror::corpus_io::CorpusFormat;
use mirror::pipeline::{self, PreprocessInputs};
use mirror::toy;
use mirror_core::model::Profile;
use mirror_core::objective::LossMode;
use mirror_core::train::{Control, EpochRecord};

#[test]
fn reconstruction_improves_over_the_first_epochs() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("toy.jsonl");
    std::fs::write(&src, toy::TOY32).unwrap();
    let settings = Settings {
        profile: Profile::Desk,
        mode: LossMode::Mirror,
        epochs: 5,
        ..Settings::default()
    };
    let inputs = PreprocessInputs {
        train: src,
        valid: None,
        test: None,
        format: CorpusFormat::Jsonl,
    };
    pipeline::preprocess(&inputs, dir.path(), &settings).unwrap();
    let mut records: Vec<EpochRecord> = Vec::new();
    let summary = pipeline::train(dir.path(), &dir.path().join("run"), &settings, |rec, _| {
        records.push(rec.clone());
        Control::Continue
    })
    .unwrap();
    assert_eq!(summary.epochs, 5);
    assert!(summary.checkpoint.exists());
    let report = std::fs::read_to_string(&summary.report).unwrap();
    assert_eq!(report.lines().count(), 5);

    let terms = |r: &EpochRecord| [r.train.r_fwd_y, r.train.r_fwd_x, r.train.r_bwd_x, r.train.r_bwd_y];
    for pair in records.windows(2) {
        for (prev, next) in terms(&pair[0]).into_iter().zip(terms(&pair[1])) {
            // Terms are log-likelihoods: the loss is their negation.
            assert!(-next <= -prev * 1.05, "epoch {}: {} after {}", pair[1].epoch, next, prev);
        }
    }
    let (first, last) = (terms(&records[0]), terms(&records[4]));
    assert!(first.iter().zip(&last).all(|(a, b)| b > a));
}
