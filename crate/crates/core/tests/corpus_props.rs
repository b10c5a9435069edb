use proptest::prelude::*;
use ragate::corpus::{
    build_context, load_corpus, relative_position, save_corpus, CorpusFormat, Dialogue, Speaker,
    Turn,
};

fn dialogue() -> impl Strategy<Value = Dialogue> {
    (
        "[a-z]{1,6}",
        prop::collection::vec("[a-z]{1,8}", 0..3),
        prop::collection::vec(
            ("[A-Za-z ,.!?]{0,20}[a-z]", prop::option::of(any::<bool>())),
            1..8,
        ),
        any::<bool>(),
    )
        .prop_map(|(id, domains, texts, trailing_user)| {
            let mut turns = Vec::new();
            for (i, (text, label)) in texts.iter().enumerate() {
                turns.push(Turn {
                    speaker: Speaker::User,
                    text: format!("u{i} {text}"),
                    augment_label: None,
                    gold_snippet_ids: vec![],
                });
                if i + 1 < texts.len() || !trailing_user {
                    turns.push(Turn {
                        speaker: Speaker::System,
                        text: format!("s{i} {text}"),
                        augment_label: *label,
                        gold_snippet_ids: if label == &Some(true) {
                            vec![format!("k{i}")]
                        } else {
                            vec![]
                        },
                    });
                }
            }
            Dialogue {
                dialogue_id: id,
                domains,
                turns,
            }
        })
}

fn corpus() -> impl Strategy<Value = Vec<Dialogue>> {
    prop::collection::vec(dialogue(), 1..6).prop_map(|mut ds| {
        for (i, d) in ds.iter_mut().enumerate() {
            d.dialogue_id = format!("{}-{i}", d.dialogue_id);
        }
        ds
    })
}

proptest! {
    #[test]
    fn canonical_round_trip(c in corpus()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        save_corpus(&c, &path).unwrap();
        let back = load_corpus(&path, CorpusFormat::Canonical, None).unwrap();
        prop_assert_eq!(back, c);
    }

    #[test]
    fn contexts_grow_by_prefix(d in dialogue()) {
        let n = d.n_user_turns();
        let mut prev: Option<Vec<(Speaker, String)>> = None;
        for t in 0..n {
            let ctx = build_context(&d, t).unwrap();
            prop_assert_eq!(ctx.utterances.len(), 2 * t + 1);
            prop_assert_eq!(ctx.utterances.last().unwrap().0, Speaker::User);
            if let Some(p) = &prev {
                prop_assert_eq!(&ctx.utterances[..p.len()], &p[..]);
            }
            prev = Some(ctx.utterances);
        }
        prop_assert!(build_context(&d, n).is_err());
    }

    #[test]
    fn positions_span_unit_interval(n in 1usize..50) {
        let ps: Vec<f64> = (0..n).map(|t| relative_position(t, n).unwrap()).collect();
        prop_assert_eq!(ps[0], 0.0);
        if n > 1 {
            prop_assert_eq!(ps[n - 1], 1.0);
        }
        prop_assert!(ps.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(relative_position(n, n).is_err());
    }
}
