use serde::{Deserialize, Serialize};

use super::train::GateExample;
use super::vocab::Vocabulary;
use crate::corpus::{build_context, Dialogue, TurnKey};
use crate::retrieval::{rank, KnowledgeBase, RetrievalError, TfIdfIndex};

/// A gate example before tokenization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawExample {
    pub key: TurnKey,
    /// `USER: ... SYSTEM: ... USER: ...`
    pub context: String,
    /// Texts of the top retrieved snippets, joined by spaces.
    pub knowledge: Option<String>,
    pub label: Option<bool>,
}

/// One example per system turn. With `retrieval`, the top `k` snippets for
/// each context are attached as knowledge.
pub fn raw_examples(
    corpus: &[Dialogue],
    retrieval: Option<(&TfIdfIndex, &KnowledgeBase, usize)>,
    labeled_only: bool,
) -> Result<Vec<RawExample>, RetrievalError> {
    let mut out = Vec::new();
    for dialogue in corpus {
        for (t, turn) in dialogue.system_turns() {
            if labeled_only && turn.augment_label.is_none() {
                continue;
            }
            let ctx = build_context(dialogue, t).expect("system turn has a preceding user turn");
            let knowledge = match retrieval {
                Some((index, kb, k)) => {
                    let ranked = rank(index, &ctx, k)?;
                    let texts: Vec<&str> = ranked
                        .ids()
                        .filter_map(|id| kb.get(id))
                        .map(|s| s.text.as_str())
                        .collect();
                    Some(texts.join(" "))
                }
                None => None,
            };
            out.push(RawExample {
                key: ctx.key(),
                context: ctx.render(" "),
                knowledge,
                label: turn.augment_label,
            });
        }
    }
    Ok(out)
}

/// Word vocabulary over every utterance in `corpus` plus `extra` texts.
pub fn build_vocabulary<'a>(
    corpus: &'a [Dialogue],
    extra: impl IntoIterator<Item = &'a str>,
    min_frequency: usize,
) -> Vocabulary {
    let turns = corpus
        .iter()
        .flat_map(|d| d.turns.iter().map(|t| t.text.as_str()));
    Vocabulary::build(turns.chain(extra), min_frequency)
}

/// Tokenizes raw examples. Unlabeled examples get label `false`.
pub fn encode_examples(raw: &[RawExample], vocab: &Vocabulary) -> Vec<GateExample> {
    raw.iter()
        .map(|r| GateExample {
            key: Some(r.key.clone()),
            context: vocab.encode(&r.context),
            knowledge: r.knowledge.as_deref().map(|k| vocab.encode(k)),
            label: r.label.unwrap_or(false),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Speaker, Turn};
    use crate::retrieval::{build_index, KnowledgeSnippet};

    fn turn(speaker: Speaker, text: &str, label: Option<bool>) -> Turn {
        Turn {
            speaker,
            text: text.into(),
            augment_label: label,
            gold_snippet_ids: vec![],
        }
    }

    fn corpus() -> Vec<Dialogue> {
        vec![Dialogue {
            dialogue_id: "d1".into(),
            domains: vec!["Hotels".into()],
            turns: vec![
                turn(Speaker::User, "find a hotel", None),
                turn(Speaker::System, "which city", Some(false)),
                turn(Speaker::User, "paris please", None),
                turn(Speaker::System, "the ritz is nice", None),
            ],
        }]
    }

    #[test]
    fn labeled_filter_and_context_format() {
        let all = raw_examples(&corpus(), None, false).unwrap();
        assert_eq!(all.len(), 2);
        assert_eq!(
            all[1].context,
            "USER: find a hotel SYSTEM: which city USER: paris please"
        );
        let labeled = raw_examples(&corpus(), None, true).unwrap();
        assert_eq!(labeled.len(), 1);
        assert_eq!(labeled[0].label, Some(false));
    }

    #[test]
    fn knowledge_attached() {
        let snippets = vec![
            KnowledgeSnippet {
                snippet_id: "s1".into(),
                title: "Paris".into(),
                text: "paris hotels are pricey".into(),
                source: String::new(),
            },
            KnowledgeSnippet {
                snippet_id: "s2".into(),
                title: "Trains".into(),
                text: "trains run hourly".into(),
                source: String::new(),
            },
        ];
        let index = build_index(&snippets).unwrap();
        let kb = KnowledgeBase::new(snippets).unwrap();
        let raw = raw_examples(&corpus(), Some((&index, &kb, 1)), false).unwrap();
        assert_eq!(raw[1].knowledge.as_deref(), Some("paris hotels are pricey"));
        let vocab = build_vocabulary(
            &corpus(),
            raw.iter().filter_map(|r| r.knowledge.as_deref()),
            1,
        );
        let enc = encode_examples(&raw, &vocab);
        assert!(enc[1]
            .knowledge
            .as_ref()
            .unwrap()
            .iter()
            .all(|&id| id != super::super::vocab::UNK));
    }
}
