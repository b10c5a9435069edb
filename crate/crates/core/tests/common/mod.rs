#![allow(dead_code)]

pub mod oracles;

use ragate::corpus::{Dialogue, Speaker, Turn};
use ragate::retrieval::{KnowledgeBase, KnowledgeSnippet};

pub const TOPICS: [(&str, &str); 5] = [
    ("pool", "the hotel pool is heated and open until midnight"),
    (
        "museum",
        "the museum has a famous dinosaur hall and free entry",
    ),
    ("pasta", "the restaurant serves fresh pasta and good wine"),
    (
        "parking",
        "parking near the station costs ten dollars a day",
    ),
    ("spa", "guests say the spa massage is relaxing and quiet"),
];

/// `n` dialogues of `turns` exchanges; every other system turn is labeled
/// for augmentation and cites the snippet of its topic.
pub fn dialogues(n: usize, turns: usize) -> Vec<Dialogue> {
    (0..n)
        .map(|d| {
            let mut out = Vec::new();
            for t in 0..turns {
                let i = (d + t) % TOPICS.len();
                let (topic, _) = TOPICS[i];
                let chit = (d + t) % 2 == 0;
                out.push(Turn {
                    speaker: Speaker::User,
                    text: format!("what do people think of the {topic}"),
                    augment_label: None,
                    gold_snippet_ids: vec![],
                });
                out.push(Turn {
                    speaker: Speaker::System,
                    text: if chit {
                        format!("reviews say the {topic} is lovely")
                    } else {
                        "i can book that for you".to_string()
                    },
                    augment_label: Some(chit),
                    gold_snippet_ids: if chit { vec![format!("k{i}")] } else { vec![] },
                });
            }
            Dialogue {
                dialogue_id: format!("d{d:03}"),
                domains: vec![if d % 2 == 0 { "Hotels" } else { "Restaurants" }.to_string()],
                turns: out,
            }
        })
        .collect()
}

pub fn snippets() -> Vec<KnowledgeSnippet> {
    TOPICS
        .iter()
        .enumerate()
        .map(|(i, (topic, text))| KnowledgeSnippet {
            snippet_id: format!("k{i}"),
            title: topic.to_string(),
            text: text.to_string(),
            source: "review".into(),
        })
        .collect()
}

pub fn knowledge_base() -> KnowledgeBase {
    KnowledgeBase::new(snippets()).unwrap()
}

pub fn system_responses(corpus: &[Dialogue]) -> Vec<&str> {
    corpus
        .iter()
        .flat_map(|d| d.system_turns().map(|(_, t)| t.text.as_str()))
        .collect()
}
