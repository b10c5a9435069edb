//! TF-IDF retrieval over knowledge snippets.
//!
//! Weighting: raw term frequency times smoothed idf `ln((N + 1) / (df + 1)) + 1`,
//! vectors L2-normalized, cosine scoring. Documents are indexed on
//! `title + " " + text`. Query terms absent from the index vocabulary are
//! ignored. Term ids follow lexicographic term order, so every dot product
//! and norm is summed in the same order regardless of insertion order.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::ConversationContext;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate snippet id `{0}`")]
    DuplicateSnippet(String),
    #[error("snippet collection is empty")]
    EmptyCollection,
    #[error("unknown snippet id `{snippet_id}` (query `{query_id}`)")]
    UnknownSnippet {
        query_id: String,
        snippet_id: String,
    },
    #[error("gold set is empty")]
    EmptyGold,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("index file is invalid: {0}")]
    BadIndex(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeSnippet {
    pub snippet_id: String,
    #[serde(default)]
    pub title: String,
    pub text: String,
    #[serde(default)]
    pub source: String,
}

/// Lowercased alphanumeric runs; every other character separates terms.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Snippets keyed by id, preserving file order.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeBase {
    snippets: Vec<KnowledgeSnippet>,
    by_id: HashMap<String, usize>,
}

impl KnowledgeBase {
    pub fn new(snippets: Vec<KnowledgeSnippet>) -> Result<Self, RetrievalError> {
        let mut by_id = HashMap::with_capacity(snippets.len());
        for (i, s) in snippets.iter().enumerate() {
            if by_id.insert(s.snippet_id.clone(), i).is_some() {
                return Err(RetrievalError::DuplicateSnippet(s.snippet_id.clone()));
            }
        }
        Ok(Self { snippets, by_id })
    }

    pub fn get(&self, id: &str) -> Option<&KnowledgeSnippet> {
        self.by_id.get(id).map(|&i| &self.snippets[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn snippets(&self) -> &[KnowledgeSnippet] {
        &self.snippets
    }

    pub fn len(&self) -> usize {
        self.snippets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snippets.is_empty()
    }
}

pub fn load_knowledge(path: &Path) -> Result<KnowledgeBase, RetrievalError> {
    let file = fs::File::open(path).map_err(|source| RetrievalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut snippets = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| RetrievalError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let snippet: KnowledgeSnippet =
            serde_json::from_str(&line).map_err(|e| RetrievalError::Malformed {
                line: i + 1,
                message: e.to_string(),
            })?;
        if snippet.text.trim().is_empty() {
            return Err(RetrievalError::Malformed {
                line: i + 1,
                message: format!("snippet `{}` has empty text", snippet.snippet_id),
            });
        }
        snippets.push(snippet);
    }
    KnowledgeBase::new(snippets)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfIdfIndex {
    vocabulary: BTreeMap<String, usize>,
    document_frequencies: Vec<usize>,
    doc_ids: Vec<String>,
    /// Sparse unit vectors, `(term_id, weight)` sorted by term id.
    doc_vectors: Vec<Vec<(usize, f64)>>,
    n_docs: usize,
}

impl TfIdfIndex {
    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn vocabulary_size(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn document_frequency(&self, term: &str) -> usize {
        self.vocabulary
            .get(term)
            .map_or(0, |&id| self.document_frequencies[id])
    }

    pub fn idf(&self, term: &str) -> Option<f64> {
        self.vocabulary
            .get(term)
            .map(|&id| smoothed_idf(self.n_docs, self.document_frequencies[id]))
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_vector(&self, snippet_id: &str) -> Option<&[(usize, f64)]> {
        self.doc_ids
            .iter()
            .position(|id| id == snippet_id)
            .map(|i| self.doc_vectors[i].as_slice())
    }

    /// Unit-normalized query vector; terms outside the vocabulary are dropped.
    fn query_vector(&self, text: &str) -> Vec<(usize, f64)> {
        let mut tf: BTreeMap<usize, usize> = BTreeMap::new();
        for term in tokenize(text) {
            if let Some(&id) = self.vocabulary.get(&term) {
                *tf.entry(id).or_default() += 1;
            }
        }
        let weighted = tf
            .into_iter()
            .map(|(id, count)| {
                (
                    id,
                    count as f64 * smoothed_idf(self.n_docs, self.document_frequencies[id]),
                )
            })
            .collect();
        l2_normalize(weighted)
    }

    /// Scores every document against free text, ordered by score then id.
    pub fn score_text(&self, text: &str) -> Vec<(String, f64)> {
        let query = self.query_vector(text);
        let mut scored: Vec<(String, f64)> = self
            .doc_ids
            .iter()
            .zip(&self.doc_vectors)
            .map(|(id, doc)| (id.clone(), sparse_dot(&query, doc)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        scored
    }

    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        let json = serde_json::to_vec(self).expect("index serializes");
        fs::write(path, json).map_err(|source| RetrievalError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, RetrievalError> {
        let bytes = fs::read(path).map_err(|source| RetrievalError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let index: TfIdfIndex =
            serde_json::from_slice(&bytes).map_err(|e| RetrievalError::BadIndex(e.to_string()))?;
        if index.doc_ids.len() != index.n_docs || index.doc_vectors.len() != index.n_docs {
            return Err(RetrievalError::BadIndex("document count mismatch".into()));
        }
        Ok(index)
    }
}

pub fn smoothed_idf(n_docs: usize, df: usize) -> f64 {
    ((n_docs as f64 + 1.0) / (df as f64 + 1.0)).ln() + 1.0
}

fn l2_normalize(mut v: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    let norm = v.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
    if norm > 0.0 {
        for (_, w) in &mut v {
            *w /= norm;
        }
    }
    v
}

fn sparse_dot(a: &[(usize, f64)], b: &[(usize, f64)]) -> f64 {
    let (mut i, mut j, mut sum) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                sum += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    sum
}

pub fn index_text(snippet: &KnowledgeSnippet) -> String {
    format!("{} {}", snippet.title, snippet.text)
}

pub fn build_index(snippets: &[KnowledgeSnippet]) -> Result<TfIdfIndex, RetrievalError> {
    if snippets.is_empty() {
        return Err(RetrievalError::EmptyCollection);
    }
    let mut seen = HashSet::new();
    let mut doc_terms = Vec::with_capacity(snippets.len());
    let mut terms = BTreeSet::new();
    for s in snippets {
        if !seen.insert(s.snippet_id.as_str()) {
            return Err(RetrievalError::DuplicateSnippet(s.snippet_id.clone()));
        }
        let tokens = tokenize(&index_text(s));
        terms.extend(tokens.iter().cloned());
        doc_terms.push(tokens);
    }
    let vocabulary: BTreeMap<String, usize> =
        terms.into_iter().enumerate().map(|(i, t)| (t, i)).collect();
    let mut document_frequencies = vec![0usize; vocabulary.len()];
    let mut counts = Vec::with_capacity(snippets.len());
    for tokens in &doc_terms {
        let mut tf: BTreeMap<usize, usize> = BTreeMap::new();
        for t in tokens {
            *tf.entry(vocabulary[t]).or_default() += 1;
        }
        for &id in tf.keys() {
            document_frequencies[id] += 1;
        }
        counts.push(tf);
    }
    let n_docs = snippets.len();
    let doc_vectors = counts
        .into_iter()
        .map(|tf| {
            l2_normalize(
                tf.into_iter()
                    .map(|(id, c)| {
                        (
                            id,
                            c as f64 * smoothed_idf(n_docs, document_frequencies[id]),
                        )
                    })
                    .collect(),
            )
        })
        .collect();
    Ok(TfIdfIndex {
        vocabulary,
        document_frequencies,
        doc_ids: snippets.iter().map(|s| s.snippet_id.clone()).collect(),
        doc_vectors,
        n_docs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub entries: Vec<(String, f64)>,
    /// The query had no terms after tokenization.
    #[serde(default)]
    pub empty_query: bool,
}

impl RankedList {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(id, _)| id.as_str())
    }

    pub fn top(&self, k: usize) -> &[(String, f64)] {
        &self.entries[..k.min(self.entries.len())]
    }
}

/// Ranks snippets for a context using the concatenation of all its utterances as the query.
pub fn rank(
    index: &TfIdfIndex,
    context: &ConversationContext,
    k: usize,
) -> Result<RankedList, RetrievalError> {
    rank_text(index, &context.key().query_id(), &context.plain_text(), k)
}

pub fn rank_text(
    index: &TfIdfIndex,
    query_id: &str,
    text: &str,
    k: usize,
) -> Result<RankedList, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    if tokenize(text).is_empty() {
        log::warn!("query `{query_id}` is empty after tokenization");
        return Ok(RankedList {
            query_id: query_id.to_string(),
            entries: Vec::new(),
            empty_query: true,
        });
    }
    let mut entries = index.score_text(text);
    entries.truncate(k);
    Ok(RankedList {
        query_id: query_id.to_string(),
        entries,
        empty_query: false,
    })
}

pub fn recall_at_k(
    ranked: &RankedList,
    gold_ids: &HashSet<String>,
    k: usize,
) -> Result<f64, RetrievalError> {
    if gold_ids.is_empty() {
        return Err(RetrievalError::EmptyGold);
    }
    let hits = ranked
        .top(k)
        .iter()
        .filter(|(id, _)| gold_ids.contains(id))
        .map(|(id, _)| id)
        .collect::<HashSet<_>>()
        .len();
    Ok(hits as f64 / gold_ids.len() as f64)
}

#[derive(Debug, Clone, Default)]
pub struct ExternalRankings {
    pub lists: BTreeMap<String, RankedList>,
    /// Queries whose scores increase somewhere down the list; order was kept.
    pub non_monotone: Vec<String>,
}

/// Reads a ranking exchange file.
///
/// Accepts tab-separated `query_id  snippet_id  rank  score` lines, or the
/// six-column whitespace-separated run format `query_id Q0 snippet_id rank score tag`.
/// Entries are ordered by rank. Every snippet id must exist in `known`.
pub fn load_external_rankings(
    path: &Path,
    known: &KnowledgeBase,
) -> Result<ExternalRankings, RetrievalError> {
    let text = fs::read_to_string(path).map_err(|source| RetrievalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_external_rankings(&text, known)
}

pub fn parse_external_rankings(
    text: &str,
    known: &KnowledgeBase,
) -> Result<ExternalRankings, RetrievalError> {
    let mut raw: BTreeMap<String, Vec<(usize, String, f64)>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = if line.contains('\t') {
            line.split('\t').map(str::trim).collect()
        } else {
            trimmed.split_whitespace().collect()
        };
        let (query_id, snippet_id, rank, score) = match cols.len() {
            4 => (cols[0], cols[1], cols[2], cols[3]),
            6 => (cols[0], cols[2], cols[3], cols[4]),
            n => {
                return Err(RetrievalError::Malformed {
                    line: line_no,
                    message: format!("expected 4 or 6 columns, found {n}"),
                })
            }
        };
        let rank: usize = rank.parse().map_err(|_| RetrievalError::Malformed {
            line: line_no,
            message: format!("rank `{rank}` is not a non-negative integer"),
        })?;
        let score: f64 = score.parse().map_err(|_| RetrievalError::Malformed {
            line: line_no,
            message: format!("score `{score}` is not a number"),
        })?;
        if !known.contains(snippet_id) {
            return Err(RetrievalError::UnknownSnippet {
                query_id: query_id.to_string(),
                snippet_id: snippet_id.to_string(),
            });
        }
        raw.entry(query_id.to_string())
            .or_default()
            .push((rank, snippet_id.to_string(), score));
    }
    let mut out = ExternalRankings::default();
    for (query_id, mut entries) in raw {
        entries.sort_by_key(|(rank, _, _)| *rank);
        let mut seen = HashSet::new();
        for (_, id, _) in &entries {
            if !seen.insert(id.clone()) {
                return Err(RetrievalError::Malformed {
                    line: 0,
                    message: format!("snippet `{id}` listed twice for query `{query_id}`"),
                });
            }
        }
        if entries.windows(2).any(|w| w[1].2 > w[0].2) {
            log::warn!("scores for query `{query_id}` are not non-increasing; rank order kept");
            out.non_monotone.push(query_id.clone());
        }
        out.lists.insert(
            query_id.clone(),
            RankedList {
                query_id,
                entries: entries.into_iter().map(|(_, id, s)| (id, s)).collect(),
                empty_query: false,
            },
        );
    }
    Ok(out)
}

/// Writes ranked lists in the tab-separated exchange format (ranks start at 1).
pub fn write_rankings<'a>(
    lists: impl IntoIterator<Item = &'a RankedList>,
    mut out: impl Write,
) -> std::io::Result<()> {
    for list in lists {
        for (rank, (id, score)) in list.entries.iter().enumerate() {
            writeln!(out, "{}\t{}\t{}\t{}", list.query_id, id, rank + 1, score)?;
        }
    }
    Ok(())
}
