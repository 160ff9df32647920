use std::io::Write;

use mirror::checkpoint::{self, Snapshot, MAGIC};
use mirror::corpus_io::{import_dailydialog, import_triples_tsv, read_jsonl, read_vocab, write_jsonl, write_vocab};
use mirror::journal::{self, Journal};
use mirror_core::corpus::{Dialogue, Vocabulary};
use mirror_core::evaluation::{create_session, Choice, EvalSource, Judgment, ModelOutput};
use mirror_core::model::{Dataset, MirrorModel, ModelConfig, Profile};

fn small_model() -> (MirrorModel<f32>, Snapshot) {
    let vocab = Vocabulary::from_tokens(vec!["hi".into(), "there".into(), "ok".into()]).unwrap();
    let cfg = ModelConfig {
        vocab_size: vocab.len(),
        embed_dim: 3,
        hidden_dim: 4,
        z_dim: 2,
        layers: 2,
    };
    let model = MirrorModel::new(cfg, vocab, 5).unwrap();
    let snap = Snapshot {
        model: cfg,
        profile: Profile::Desk,
        dataset: Dataset::Custom,
        epoch: Some(3),
    };
    (model, snap)
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.mirr");
    let (model, snap) = small_model();
    checkpoint::save(&path, &model, &snap).unwrap();
    let (back, snap2) = checkpoint::load(&path).unwrap();
    assert_eq!(snap, snap2);
    assert_eq!(back.vocab, model.vocab);
    assert_eq!(back.config, model.config);
    assert_eq!(back.params.len(), model.params.len());
    for ((n1, a1), (n2, a2)) in model.params.iter().zip(back.params.iter()) {
        assert_eq!(n1, n2);
        assert_eq!(a1.shape(), a2.shape());
        assert!(a1.data().iter().zip(a2.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert_eq!(checkpoint::checkpoint_id(&path), "m");
    assert!(!dir.path().join("m.tmp").exists());
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let (model, snap) = small_model();
    let bytes = checkpoint::encode(&model, &snap).unwrap();
    assert_eq!(&bytes[..4], MAGIC);

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(format!("{:#}", checkpoint::decode(&bad).unwrap_err()).contains("magic"));

    let mut bad = bytes.clone();
    bad[4] = 99;
    assert!(format!("{:#}", checkpoint::decode(&bad).unwrap_err()).contains("version"));

    assert!(checkpoint::decode(&bytes[..bytes.len() - 1]).is_err());
    let mut long = bytes.clone();
    long.push(0);
    assert!(format!("{:#}", checkpoint::decode(&long).unwrap_err()).contains("trailing"));

    let mut other = snap.clone();
    other.model.hidden_dim = 5;
    assert!(checkpoint::encode(&model, &other).is_err());
}

fn session() -> mirror_core::evaluation::EvalSession {
    let src: Vec<EvalSource> = (0..4)
        .map(|i| EvalSource {
            context: vec![format!("c{}", i)],
            query: format!("q{}", i),
        })
        .collect();
    let out = |name: &str| -> Vec<ModelOutput> {
        (0..4)
            .map(|i| ModelOutput {
                dialogue_index: i,
                response_text: format!("{} {}", name, i),
                decode_strategy: "greedy".into(),
                checkpoint_id: name.into(),
            })
            .collect()
    };
    create_session("s", &src, &out("f"), &out("c"), 4, 8).unwrap()
}

fn judgment(pair: usize, who: &str) -> Judgment {
    Judgment {
        pair_id: pair,
        annotator: who.into(),
        choice: Choice::B,
        timestamp: 17,
    }
}

#[test]
fn journal_survives_a_torn_final_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("j.jsonl");
    let mut s = session();
    let mut j = Journal::create(&path, &s).unwrap();
    for (p, who) in [(0, "a"), (0, "b"), (1, "a")] {
        j.append(&judgment(p, who)).unwrap();
        s.record_judgment(judgment(p, who)).unwrap();
    }
    drop(j);
    assert!(Journal::create(&path, &s).is_err(), "create must not clobber");

    // A crash mid-write leaves a partial line behind.
    let mut f = std::fs::OpenOptions::new().append(true).open(&path).unwrap();
    f.write_all(br#"{"record":"judgment","pair_id":2,"annot"#).unwrap();
    drop(f);
    assert_eq!(journal::replay(&path).unwrap(), s);

    // Reopening drops the fragment so new lines start clean.
    let (mut j, resumed) = Journal::open(&path).unwrap();
    assert_eq!(resumed, s);
    j.append(&judgment(2, "c")).unwrap();
    s.record_judgment(judgment(2, "c")).unwrap();
    drop(j);
    assert_eq!(journal::replay(&path).unwrap(), s);
}

#[test]
fn journal_rejects_corruption_before_the_tail_and_invalid_judgments() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("j.jsonl");
    let s = session();
    let mut j = Journal::create(&path, &s).unwrap();
    j.append(&judgment(0, "a")).unwrap();
    drop(j);
    let text = std::fs::read_to_string(&path).unwrap();
    let (head, tail) = text.split_once('\n').unwrap();
    std::fs::write(&path, format!("{}\n{{garbage\n{}", head, tail)).unwrap();
    assert!(journal::replay(&path).is_err());

    // A duplicate in the log means it was not written by this server.
    let mut j = Journal::create(&dir.path().join("k.jsonl"), &s).unwrap();
    j.append(&judgment(0, "a")).unwrap();
    j.append(&judgment(0, "a")).unwrap();
    drop(j);
    assert!(journal::replay(&dir.path().join("k.jsonl")).is_err());
}

#[test]
fn corpus_formats() {
    let jsonl = "{\"turns\":[\"Hi there!\",\"Hello.\",\"Bye\"]}\n\n{\"turns\":[\"a\",\"b\",\"c\"],\"speakers\":[0,1,0]}\n";
    let ds = read_jsonl(jsonl.as_bytes()).unwrap();
    assert_eq!(ds.len(), 2);
    assert_eq!(ds[0].turns[0], vec!["hi", "there", "!"]);
    assert_eq!(ds[1].speakers, Some(vec![0, 1, 0]));
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &ds).unwrap();
    assert_eq!(read_jsonl(buf.as_slice()).unwrap(), ds);

    assert!(read_jsonl("{\"turns\":[\"a\",\"b\"],\"speakers\":[0]}\n".as_bytes()).is_err());
    assert!(read_jsonl("not json\n".as_bytes()).is_err());

    let dd = import_dailydialog("Hi . __eou__ Hey . __eou__ Bye . __eou__\n\n".as_bytes()).unwrap();
    assert_eq!(dd, vec![Dialogue::from_texts(&["Hi .", "Hey .", "Bye ."]).unwrap()]);

    let tsv = import_triples_tsv("where ?\there\tthanks\n".as_bytes()).unwrap();
    assert_eq!(tsv[0].turns.len(), 3);
    let err = import_triples_tsv("only\ttwo\n".as_bytes()).unwrap_err();
    assert!(format!("{:#}", err).contains("line 1"));
}

#[test]
fn vocabulary_files() {
    let v = Vocabulary::from_tokens(vec!["the".into(), "cat".into(), ".".into()]).unwrap();
    let mut buf = Vec::new();
    write_vocab(&mut buf, &v).unwrap();
    assert_eq!(String::from_utf8(buf.clone()).unwrap(), "the\ncat\n.\n");
    assert_eq!(read_vocab(buf.as_slice()).unwrap(), v);
    for bad in ["the\n\ncat\n", "<unk>\n", "two words\n", "a\na\n"] {
        assert!(read_vocab(bad.as_bytes()).is_err(), "{:?}", bad);
    }
}
