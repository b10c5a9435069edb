mod common;

use std::collections::HashSet;

use proptest::prelude::*;
use ragate::retrieval::{build_index, rank_text, recall_at_k, KnowledgeSnippet, RankedList};

const WORDS: &[&str] = &[
    "apple", "pear", "hotel", "pool", "museum", "train", "red", "green",
];

fn snippets(docs: &[Vec<usize>]) -> Vec<KnowledgeSnippet> {
    docs.iter()
        .enumerate()
        .map(|(i, words)| KnowledgeSnippet {
            snippet_id: format!("s{i:02}"),
            title: String::new(),
            text: words
                .iter()
                .map(|&w| WORDS[w])
                .collect::<Vec<_>>()
                .join(" "),
            source: String::new(),
        })
        .collect()
}

fn oracle(docs: &[Vec<usize>], query: &[usize]) -> Vec<(String, f64)> {
    let words = |d: &[usize]| d.iter().map(|&w| WORDS[w]).collect::<Vec<_>>();
    let docs: Vec<Vec<&str>> = docs.iter().map(|d| words(d)).collect();
    common::oracles::tfidf_ranking(&docs, &words(query))
        .into_iter()
        .map(|(i, s)| (format!("s{i:02}"), s))
        .collect()
}

fn doc() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0..WORDS.len(), 1..6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn rank_matches_brute_force(docs in prop::collection::vec(doc(), 1..=20), query in doc(), k in 1usize..25) {
        let index = build_index(&snippets(&docs)).unwrap();
        let text = query.iter().map(|&w| WORDS[w]).collect::<Vec<_>>().join(" ");
        let got = rank_text(&index, "q", &text, k).unwrap();
        let mut want = oracle(&docs, &query);
        want.truncate(k);
        let got_ids: Vec<&str> = got.ids().collect();
        let want_ids: Vec<&str> = want.iter().map(|(id, _)| id.as_str()).collect();
        prop_assert_eq!(got_ids, want_ids);
        for ((_, g), (_, w)) in got.entries.iter().zip(&want) {
            prop_assert!((g - w).abs() < 1e-12, "{} vs {}", g, w);
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(g));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn recall_is_monotone_in_k(
        n in 1usize..15,
        gold in prop::collection::hash_set(0usize..20, 1..5),
    ) {
        let list = RankedList {
            query_id: "q".into(),
            entries: (0..n).map(|i| (format!("s{i}"), 1.0 / (i + 1) as f64)).collect(),
            empty_query: false,
        };
        let gold: HashSet<String> = gold.into_iter().map(|i| format!("s{i}")).collect();
        let mut prev = 0.0;
        for k in 1..=n + 2 {
            let r = recall_at_k(&list, &gold, k).unwrap();
            prop_assert!(r >= prev && (0.0..=1.0).contains(&r));
            prev = r;
        }
    }
}

#[test]
fn two_document_example() {
    let docs = snippets(&[vec![6, 0], vec![7, 1]]);
    let index = build_index(&docs).unwrap();
    let got = rank_text(&index, "q", "apple", 1).unwrap();
    assert_eq!(got.ids().collect::<Vec<_>>(), ["s00"]);
}
