use mirror_core::corpus::{
    build_vocabulary, encode_batch, window_dialogues, Dialogue, Triple, BOS, EOS, RESERVED, SEP,
};
use proptest::prelude::*;

fn dialogue(len: usize, tag: usize) -> Dialogue {
    Dialogue::new((0..len).map(|t| vec![format!("d{}t{}", tag, t), "w".to_string()]).collect()).unwrap()
}

fn words() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e", "f", "g"]), 1..6)
        .prop_map(|v| v.into_iter().map(String::from).collect())
}

fn triples() -> impl Strategy<Value = Vec<Triple>> {
    prop::collection::vec(
        (prop::collection::vec(words(), 1..3), words(), words())
            .prop_map(|(c, x, y)| Triple::new(c, x, y).unwrap()),
        1..8,
    )
}

proptest! {
    #[test]
    fn window_counts(lens in prop::collection::vec(1usize..12, 0..10), window in 3usize..6, stride in 1usize..4) {
        let ds: Vec<Dialogue> = lens.iter().enumerate().map(|(i, &l)| dialogue(l, i)).collect();
        let report = window_dialogues(&ds, window, stride).unwrap();
        let want: usize = lens.iter().filter(|&&l| l >= window).map(|&l| (l - window) / stride + 1).sum();
        prop_assert_eq!(report.triples.len(), want);
        prop_assert_eq!(report.skipped, lens.iter().filter(|&&l| l < window).count());
        for t in &report.triples {
            prop_assert_eq!(t.context.len(), window - 2);
            // Turns of a frame are consecutive turns of one dialogue.
            let mut frame = t.full_context();
            frame.push(t.response.clone());
            let ids: Vec<(String, usize)> = frame.iter().map(|turn| {
                let (d, k) = turn[0][1..].split_once('t').unwrap();
                (d.to_string(), k.parse().unwrap())
            }).collect();
            for pair in ids.windows(2) {
                prop_assert_eq!(&pair[0].0, &pair[1].0);
                prop_assert_eq!(pair[0].1 + 1, pair[1].1);
            }
        }
    }

    #[test]
    fn vocabulary_ignores_corpus_order(ts in triples(), max in 1usize..10, seed in any::<u64>()) {
        let mut shuffled = ts.clone();
        let n = shuffled.len();
        shuffled.rotate_left(seed as usize % n);
        shuffled.reverse();
        let a = build_vocabulary(&ts, max).unwrap();
        let b = build_vocabulary(&shuffled, max).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.corpus_tokens().len() <= max);
        prop_assert_eq!(a.token(0), Some(RESERVED[0]));
        prop_assert_eq!(a.len(), RESERVED.len() + a.corpus_tokens().len());
    }

    #[test]
    fn batch_round_trip(ts in triples(), max_len in 2usize..8) {
        let vocab = build_vocabulary(&ts, 100).unwrap();
        let batch = encode_batch(&ts, &vocab, max_len).unwrap();
        prop_assert_eq!(batch.len(), ts.len());
        for (i, t) in ts.iter().enumerate() {
            let q: Vec<String> = t.query.iter().take(max_len).cloned().collect();
            let len = batch.query.lengths[i];
            prop_assert_eq!(vocab.decode(&batch.query.ids[i][..len]), q.clone());
            prop_assert_eq!(batch.query_target.inputs.ids[i][0], BOS);
            prop_assert_eq!(batch.query_target.targets.ids[i][q.len()], EOS);
            prop_assert_eq!(batch.query_target.lengths()[i], q.len() + 1);
            let ctx = &batch.context.ids[i][..batch.context.lengths[i]];
            prop_assert_eq!(ctx.iter().filter(|&&id| id == SEP).count(), t.context.len() - 1);
        }
    }
}
