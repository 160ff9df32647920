use mirror_core::evaluation::{create_session, Choice, EvalError, EvalSource, Judgment, ModelOutput, Side};
use proptest::prelude::*;

fn fixture(n: usize) -> (Vec<EvalSource>, Vec<ModelOutput>, Vec<ModelOutput>) {
    let src = (0..n)
        .map(|i| EvalSource {
            context: vec![format!("c{}", i)],
            query: format!("q{}", i),
        })
        .collect();
    let out = |name: &str| {
        (0..n)
            .map(|i| ModelOutput {
                dialogue_index: i,
                response_text: format!("{}-{}", name, i),
                decode_strategy: "greedy".into(),
                checkpoint_id: name.into(),
            })
            .collect::<Vec<_>>()
    };
    (src, out("focal"), out("other"))
}

#[test]
fn focal_side_is_a_fair_coin() {
    let (src, f, o) = fixture(4);
    let sessions = 10_000;
    let mut on_a = 0;
    let mut total = 0;
    for seed in 0..sessions {
        let s = create_session("s", &src, &f, &o, 2, seed).unwrap();
        for p in &s.pairs {
            total += 1;
            if p.focal_side == Side::A {
                on_a += 1;
            }
        }
    }
    let frac = on_a as f64 / total as f64;
    assert!((0.49..=0.51).contains(&frac), "{}", frac);
}

#[test]
fn pairs_are_distinct_dialogues() {
    let (src, f, o) = fixture(30);
    let s = create_session("s", &src, &f, &o, 30, 4).unwrap();
    let mut seen: Vec<usize> = s.pairs.iter().map(|p| p.dialogue_index).collect();
    seen.sort_unstable();
    assert_eq!(seen, (0..30).collect::<Vec<_>>());
    assert!(matches!(
        create_session("s", &src, &f, &o, 31, 4),
        Err(EvalError::TooManyPairs { .. })
    ));
    assert!(matches!(
        create_session("s", &src, &f[1..], &o, 30, 4),
        Err(EvalError::MissingOutput { .. })
    ));
}

fn choice() -> impl Strategy<Value = Choice> {
    prop::sample::select(vec![Choice::A, Choice::B, Choice::Tie])
}

proptest! {
    #[test]
    fn aggregates_are_distributions(
        seed in any::<u64>(),
        votes in prop::collection::vec((0usize..6, 0usize..4, choice()), 1..60),
    ) {
        let (src, f, o) = fixture(6);
        let mut s = create_session("s", &src, &f, &o, 6, seed).unwrap();
        let mut accepted = Vec::new();
        for (i, (pair, who, c)) in votes.into_iter().enumerate() {
            let j = Judgment { pair_id: pair, annotator: format!("a{}", who), choice: c, timestamp: i as u64 };
            if s.record_judgment(j.clone()).is_ok() {
                accepted.push(j);
            }
        }
        for p in 0..6 {
            prop_assert!(s.judgments_for(p).count() <= 3);
        }
        let replayed = mirror_core::evaluation::EvalSession::replay(s.header(), accepted).unwrap();
        prop_assert_eq!(&replayed, &s);
        match s.aggregate_results() {
            Ok(r) => {
                for a in [r.majority, r.pooled] {
                    prop_assert!((a.wins + a.losses + a.ties - 1.0).abs() < 1e-12);
                    prop_assert!(a.wins >= 0.0 && a.losses >= 0.0 && a.ties >= 0.0);
                }
                prop_assert!(r.completed_pairs >= 1);
            }
            Err(e) => prop_assert_eq!(e, EvalError::NoCompletedPairs),
        }
    }

    #[test]
    fn swapping_votes_mirrors_the_outcome(seed in any::<u64>(), c in prop::collection::vec(choice(), 3)) {
        let (src, f, o) = fixture(1);
        let mut a = create_session("s", &src, &f, &o, 1, seed).unwrap();
        let mut b = a.clone();
        for (i, &ch) in c.iter().enumerate() {
            let flipped = match ch {
                Choice::A => Choice::B,
                Choice::B => Choice::A,
                Choice::Tie => Choice::Tie,
            };
            let j = |choice| Judgment { pair_id: 0, annotator: format!("a{}", i), choice, timestamp: 0 };
            a.record_judgment(j(ch)).unwrap();
            b.record_judgment(j(flipped)).unwrap();
        }
        let (ra, rb) = (a.aggregate_results().unwrap(), b.aggregate_results().unwrap());
        prop_assert_eq!(ra.majority.wins, rb.majority.losses);
        prop_assert_eq!(ra.majority.ties, rb.majority.ties);
        prop_assert_eq!(ra.pooled.wins, rb.pooled.losses);
        prop_assert_eq!(ra.pooled.ties, rb.pooled.ties);
    }
}

#[test]
fn next_pair_skips_judged_and_full_pairs() {
    let (src, f, o) = fixture(3);
    let mut s = create_session("s", &src, &f, &o, 3, 1).unwrap();
    let j = |p: usize, who: &str| Judgment { pair_id: p, annotator: who.into(), choice: Choice::A, timestamp: 0 };
    assert_eq!(s.next_pair_for("x").unwrap().pair_id, 0);
    for who in ["a", "b", "c"] {
        s.record_judgment(j(0, who)).unwrap();
    }
    s.record_judgment(j(1, "x")).unwrap();
    let v = s.next_pair_for("x").unwrap();
    assert_eq!((v.pair_id, v.done, v.total), (2, 1, 3));
    assert_eq!(v.context, vec![src[s.pairs[2].dialogue_index].context[0].clone(), src[s.pairs[2].dialogue_index].query.clone()]);
    s.record_judgment(j(2, "x")).unwrap();
    assert!(s.next_pair_for("x").is_none());
    assert_eq!(s.record_judgment(j(0, "d")), Err(EvalError::PairComplete(0)));
    assert_eq!(s.record_judgment(j(9, "d")), Err(EvalError::UnknownPair(9)));
    assert_eq!(s.record_judgment(j(1, "")), Err(EvalError::EmptyAnnotator));
}
