//! Adaptive augmentation: gate each system turn, retrieve snippets for the
//! turns that need them, generate, and compare policies.

mod generator;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use generator::{
    generator_prompt, parse_generation, BigramGenerator, ExternalGenerator, Generation,
    GeneratorEndpoint,
};

use crate::corpus::{build_context, ConversationContext, Dialogue, TurnKey};
use crate::decision::GateDecision;
use crate::http::{run_bounded, HttpError};
use crate::metrics::{aligned_table, bleu, rouge, RougeVariant};
use crate::retrieval::{rank, KnowledgeBase, RankedList, RetrievalError, TfIdfIndex};

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("generator: {0}")]
    Generator(String),
    #[error(transparent)]
    Http(#[from] HttpError),
    #[error("generator reply lacks token probabilities: {0}")]
    MissingProbabilities(String),
    #[error("generation has no tokens")]
    EmptyTokens,
    #[error("no knowledge snippets available for {0}")]
    NoSnippets(TurnKey),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("policy {policy} needs {what}")]
    MissingInput { policy: String, what: &'static str },
    #[error("summaries come from different corpora: {0}")]
    MismatchedCorpora(String),
    #[error("need at least two policy summaries to compare")]
    TooFewSummaries,
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Which ranked snippets are injected when augmenting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnippetSelection {
    /// The `k` highest ranked.
    TopK(usize),
    /// Only the snippet at this 1-based rank.
    AtRank(usize),
}

impl SnippetSelection {
    fn depth(self) -> usize {
        match self {
            SnippetSelection::TopK(k) | SnippetSelection::AtRank(k) => k,
        }
    }
}

/// Where snippets come from: a live index or precomputed rankings.
#[derive(Debug, Clone, Copy)]
pub enum KnowledgeSource<'a> {
    Index {
        index: &'a TfIdfIndex,
        kb: &'a KnowledgeBase,
    },
    Rankings {
        lists: &'a BTreeMap<String, RankedList>,
        kb: &'a KnowledgeBase,
    },
}

impl KnowledgeSource<'_> {
    /// `(snippet_id, text)` pairs for a context, in rank order.
    pub fn select(
        &self,
        context: &ConversationContext,
        selection: SnippetSelection,
    ) -> Result<Vec<(String, String)>, OrchestratorError> {
        let depth = selection.depth();
        if depth == 0 {
            return Err(OrchestratorError::InvalidPolicy(
                "k must be at least 1".into(),
            ));
        }
        let (ids, kb): (Vec<String>, _) = match self {
            KnowledgeSource::Index { index, kb } => {
                let list = rank(index, context, depth)?;
                (list.ids().map(str::to_string).collect(), kb)
            }
            KnowledgeSource::Rankings { lists, kb } => {
                let ids = lists
                    .get(&context.key().query_id())
                    .map(|l| l.ids().take(depth).map(str::to_string).collect())
                    .unwrap_or_default();
                (ids, kb)
            }
        };
        let chosen: Vec<String> = match selection {
            SnippetSelection::TopK(_) => ids,
            SnippetSelection::AtRank(r) => ids.into_iter().skip(r - 1).take(1).collect(),
        };
        let out: Vec<(String, String)> = chosen
            .into_iter()
            .filter_map(|id| kb.get(&id).map(|s| (id, s.text.clone())))
            .collect();
        if out.is_empty() {
            return Err(OrchestratorError::NoSnippets(context.key()));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub response: String,
    pub tokens: Vec<String>,
    pub token_probabilities: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logits: Option<Vec<f64>>,
    pub augmented: bool,
    pub snippet_ids_used: Vec<String>,
    pub policy_name: String,
    pub prompt: String,
    /// The corpus system response for this turn.
    #[serde(default)]
    pub reference: String,
}

impl GenerationRecord {
    pub fn key(&self) -> TurnKey {
        TurnKey::new(self.dialogue_id.clone(), self.turn_index)
    }
}

/// Generates the response for one turn, injecting snippets only when `augment` is set.
pub fn adaptive_generate(
    context: &ConversationContext,
    augment: bool,
    knowledge: &KnowledgeSource<'_>,
    selection: SnippetSelection,
    generator: &GeneratorEndpoint,
    policy_name: &str,
) -> Result<GenerationRecord, OrchestratorError> {
    let snippets = if augment {
        knowledge.select(context, selection)?
    } else {
        Vec::new()
    };
    let texts: Vec<&str> = snippets.iter().map(|(_, t)| t.as_str()).collect();
    let prompt = generator_prompt(context, &texts);
    let g = generator.generate(&prompt)?;
    if g.tokens.is_empty() {
        return Err(OrchestratorError::EmptyTokens);
    }
    Ok(GenerationRecord {
        dialogue_id: context.dialogue_id.clone(),
        turn_index: context.turn_index,
        response: g.text,
        tokens: g.tokens,
        token_probabilities: g.probabilities,
        token_logits: g.logits,
        augmented: augment,
        snippet_ids_used: snippets.into_iter().map(|(id, _)| id).collect(),
        policy_name: policy_name.to_string(),
        prompt,
        reference: String::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confidence {
    pub min_probability: f64,
    pub min_log_probability: f64,
    pub min_logit: Option<f64>,
}

/// Minimum token probability, its log, and the minimum logit when present.
pub fn response_confidence(record: &GenerationRecord) -> Result<Confidence, OrchestratorError> {
    let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    if record.token_probabilities.is_empty() {
        return Err(OrchestratorError::EmptyTokens);
    }
    let p = min(&record.token_probabilities);
    Ok(Confidence {
        min_probability: p,
        min_log_probability: p.ln(),
        min_logit: record
            .token_logits
            .as_deref()
            .filter(|l| !l.is_empty())
            .map(min),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyKind {
    NoAug,
    AugAll,
    RandomN { n: usize, seed: u64 },
    HumanLabel,
    Gate { gate_name: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    pub selection: SnippetSelection,
}

impl PolicySpec {
    pub fn new(kind: PolicyKind, k: usize) -> Self {
        Self {
            kind,
            selection: SnippetSelection::TopK(k),
        }
    }

    pub fn name(&self) -> String {
        match &self.kind {
            PolicyKind::NoAug => "no_aug".into(),
            PolicyKind::AugAll => "aug_all".into(),
            PolicyKind::RandomN { n, .. } => format!("random_{n}"),
            PolicyKind::HumanLabel => "human_label".into(),
            PolicyKind::Gate { gate_name } => format!("gate_{gate_name}"),
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyKind::NoAug => f.write_str("no-aug"),
            PolicyKind::AugAll => f.write_str("aug-all"),
            PolicyKind::RandomN { n, .. } => write!(f, "random:{n}"),
            PolicyKind::HumanLabel => f.write_str("human"),
            PolicyKind::Gate { gate_name } => write!(f, "gate:{gate_name}"),
        }
    }
}

impl FromStr for PolicyKind {
    type Err = OrchestratorError;

    /// `no-aug`, `aug-all`, `random:N`, `human`, `gate` or `gate:NAME`.
    /// The seed of `random:N` is 0; callers override it.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || OrchestratorError::InvalidPolicy(format!("`{s}`"));
        Ok(match s.replace('_', "-").as_str() {
            "no-aug" => PolicyKind::NoAug,
            "aug-all" => PolicyKind::AugAll,
            "human" | "human-label" => PolicyKind::HumanLabel,
            "gate" => PolicyKind::Gate {
                gate_name: "gate".into(),
            },
            other => {
                if let Some(n) = other.strip_prefix("random:") {
                    PolicyKind::RandomN {
                        n: n.parse().map_err(|_| bad())?,
                        seed: 0,
                    }
                } else if let Some(name) = other.strip_prefix("gate:") {
                    PolicyKind::Gate {
                        gate_name: name.to_string(),
                    }
                } else {
                    return Err(bad());
                }
            }
        })
    }
}

/// Per-turn augmentation decisions of a policy over every system turn,
/// plus the number of turns a gate left undecided (treated as no augmentation).
///
/// `random_n` draws from the labeled system turns, or from all system turns
/// when the corpus carries no labels.
pub fn policy_decisions(
    corpus: &[Dialogue],
    kind: &PolicyKind,
    gate: Option<&BTreeMap<TurnKey, GateDecision>>,
) -> Result<(BTreeMap<TurnKey, bool>, usize), OrchestratorError> {
    let turns: Vec<(TurnKey, Option<bool>)> = corpus
        .iter()
        .flat_map(|d| {
            d.system_turns()
                .map(move |(t, turn)| (d.key(t), turn.augment_label))
        })
        .collect();
    let mut missing = 0;
    let decisions = match kind {
        PolicyKind::NoAug => turns.iter().map(|(k, _)| (k.clone(), false)).collect(),
        PolicyKind::AugAll => turns.iter().map(|(k, _)| (k.clone(), true)).collect(),
        PolicyKind::HumanLabel => {
            if turns.iter().all(|(_, l)| l.is_none()) {
                return Err(OrchestratorError::MissingInput {
                    policy: kind.to_string(),
                    what: "human labels",
                });
            }
            turns
                .iter()
                .map(|(k, l)| (k.clone(), l.unwrap_or(false)))
                .collect()
        }
        PolicyKind::RandomN { n, seed } => {
            let labeled: Vec<&TurnKey> = turns
                .iter()
                .filter(|(_, l)| l.is_some())
                .map(|(k, _)| k)
                .collect();
            let pool: Vec<&TurnKey> = if labeled.is_empty() {
                turns.iter().map(|(k, _)| k).collect()
            } else {
                labeled
            };
            if *n > pool.len() {
                return Err(OrchestratorError::InvalidPolicy(format!(
                    "random:{n} exceeds the {} eligible turns",
                    pool.len()
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let chosen: BTreeSet<&TurnKey> = rand::seq::index::sample(&mut rng, pool.len(), *n)
                .into_iter()
                .map(|i| pool[i])
                .collect();
            turns
                .iter()
                .map(|(k, _)| (k.clone(), chosen.contains(k)))
                .collect()
        }
        PolicyKind::Gate { .. } => {
            let gate = gate.ok_or_else(|| OrchestratorError::MissingInput {
                policy: kind.to_string(),
                what: "gate decisions",
            })?;
            turns
                .iter()
                .map(|(k, _)| {
                    let d = gate.get(k).map(|g| g.decision);
                    missing += usize::from(d.is_none());
                    (k.clone(), d.unwrap_or(false))
                })
                .collect()
        }
    };
    Ok((decisions, missing))
}

/// SHA-256 over the dialogue ids and their system turn counts.
pub fn corpus_fingerprint(corpus: &[Dialogue]) -> String {
    let mut h = Sha256::new();
    for d in corpus {
        h.update(format!("{}\t{}\n", d.dialogue_id, d.n_system_turns()).as_bytes());
    }
    format!("{:x}", h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub policy: String,
    pub corpus_fingerprint: String,
    pub n_turns: usize,
    pub n_augmented: usize,
    pub n_failures: usize,
    /// Gate policies: turns without a decision, generated without augmentation.
    pub n_missing_decisions: usize,
    pub mean_min_probability: f64,
    pub mean_min_log_probability: f64,
    pub mean_min_logit: Option<f64>,
    pub bleu: f64,
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
    /// Externally computed columns, such as BERTScore.
    #[serde(default)]
    pub extra: BTreeMap<String, f64>,
}

#[derive(Debug, Clone)]
pub struct PolicyRun {
    pub records: Vec<GenerationRecord>,
    pub failures: BTreeMap<TurnKey, String>,
    pub summary: PolicySummary,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Summary statistics over finished records.
pub fn summarize(
    policy: &str,
    corpus: &[Dialogue],
    records: &[GenerationRecord],
    n_augmented: usize,
    n_failures: usize,
    n_missing_decisions: usize,
) -> Result<PolicySummary, OrchestratorError> {
    let conf: Vec<Confidence> = records
        .iter()
        .map(response_confidence)
        .collect::<Result<_, _>>()?;
    let logits: Option<Vec<f64>> = conf.iter().map(|c| c.min_logit).collect();
    let hyps: Vec<&str> = records.iter().map(|r| r.response.as_str()).collect();
    let refs: Vec<&str> = records.iter().map(|r| r.reference.as_str()).collect();
    let n = records.len().max(1) as f64;
    let avg_rouge = |v| {
        records
            .iter()
            .map(|r| rouge(&r.response, &r.reference, v))
            .sum::<f64>()
            / n
    };
    Ok(PolicySummary {
        policy: policy.to_string(),
        corpus_fingerprint: corpus_fingerprint(corpus),
        n_turns: records.len() + n_failures,
        n_augmented,
        n_failures,
        n_missing_decisions,
        mean_min_probability: mean(conf.iter().map(|c| c.min_probability)),
        mean_min_log_probability: mean(conf.iter().map(|c| c.min_log_probability)),
        mean_min_logit: logits
            .filter(|l| !l.is_empty())
            .map(|l| mean(l.into_iter())),
        bleu: if records.is_empty() {
            0.0
        } else {
            bleu(&hyps, &refs).unwrap_or(0.0)
        },
        rouge1: avg_rouge(RougeVariant::R1),
        rouge2: avg_rouge(RougeVariant::R2),
        rouge_l: avg_rouge(RougeVariant::RL),
        extra: BTreeMap::new(),
    })
}

/// Generates a response for every system turn under `spec`.
///
/// Generator failures are recorded per turn and the run continues.
pub fn run_policy(
    corpus: &[Dialogue],
    spec: &PolicySpec,
    gate: Option<&BTreeMap<TurnKey, GateDecision>>,
    knowledge: &KnowledgeSource<'_>,
    generator: &GeneratorEndpoint,
) -> Result<PolicyRun, OrchestratorError> {
    let name = spec.name();
    let (decisions, n_missing) = policy_decisions(corpus, &spec.kind, gate)?;
    let mut jobs: Vec<(ConversationContext, bool, String)> = Vec::with_capacity(decisions.len());
    for d in corpus {
        for (t, turn) in d.system_turns() {
            let ctx = build_context(d, t).expect("system turn has a user turn");
            jobs.push((ctx, decisions[&d.key(t)], turn.text.clone()));
        }
    }
    let results = run_bounded(
        &jobs,
        generator.max_in_flight(),
        |(ctx, augment, reference)| {
            adaptive_generate(ctx, *augment, knowledge, spec.selection, generator, &name).map(
                |mut r| {
                    r.reference = reference.clone();
                    r
                },
            )
        },
    );
    let mut records = Vec::with_capacity(jobs.len());
    let mut failures = BTreeMap::new();
    for ((ctx, _, _), result) in jobs.iter().zip(results) {
        match result {
            Ok(r) => records.push(r),
            Err(e) => {
                log::warn!("{name}: generation failed for {}: {e}", ctx.key());
                failures.insert(ctx.key(), e.to_string());
            }
        }
    }
    records.sort_by_key(GenerationRecord::key);
    let n_augmented = decisions.values().filter(|&&a| a).count();
    let summary = summarize(
        &name,
        corpus,
        &records,
        n_augmented,
        failures.len(),
        n_missing,
    )?;
    Ok(PolicyRun {
        records,
        failures,
        summary,
    })
}

pub fn write_records<W: Write>(
    records: &[GenerationRecord],
    mut out: W,
) -> Result<(), OrchestratorError> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_records<R: BufRead>(input: R) -> Result<Vec<GenerationRecord>, OrchestratorError> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub policy: String,
    pub n_augmented: usize,
    pub bleu: f64,
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
    pub confidence: f64,
    pub confidence_logit: Option<f64>,
    /// `(confidence − no_aug) / no_aug · 100`; absent without a `no_aug` row.
    pub delta_confidence_pct: Option<f64>,
    pub extra: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    /// Adds an external column keyed by policy name.
    pub fn append_column(&mut self, name: &str, values: &BTreeMap<String, f64>) {
        for row in &mut self.rows {
            if let Some(&v) = values.get(&row.policy) {
                row.extra.insert(name.to_string(), v);
            }
        }
    }

    pub fn to_text(&self) -> String {
        let extra: BTreeSet<&String> = self.rows.iter().flat_map(|r| r.extra.keys()).collect();
        let mut header = vec![
            "policy",
            "#augs",
            "BLEU",
            "ROUGE-1",
            "ROUGE-2",
            "ROUGE-L",
            "conf",
            "conf(logit)",
            "Δconf%",
        ];
        header.extend(extra.iter().map(|s| s.as_str()));
        let opt =
            |v: Option<f64>, p: usize| v.map_or_else(|| "-".to_string(), |x| format!("{x:.p$}"));
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let mut cells = vec![
                    r.policy.clone(),
                    r.n_augmented.to_string(),
                    format!("{:.2}", r.bleu),
                    format!("{:.4}", r.rouge1),
                    format!("{:.4}", r.rouge2),
                    format!("{:.4}", r.rouge_l),
                    format!("{:.4}", r.confidence),
                    opt(r.confidence_logit, 4),
                    opt(r.delta_confidence_pct, 2),
                ];
                cells.extend(extra.iter().map(|k| opt(r.extra.get(*k).copied(), 4)));
                cells
            })
            .collect();
        aligned_table(&header, &rows)
    }
}

/// One row per summary, with confidence change relative to the `no_aug` row.
pub fn compare_policies(summaries: &[PolicySummary]) -> Result<ComparisonTable, OrchestratorError> {
    if summaries.len() < 2 {
        return Err(OrchestratorError::TooFewSummaries);
    }
    let first = &summaries[0].corpus_fingerprint;
    if let Some(s) = summaries.iter().find(|s| &s.corpus_fingerprint != first) {
        return Err(OrchestratorError::MismatchedCorpora(format!(
            "`{}` and `{}`",
            summaries[0].policy, s.policy
        )));
    }
    let base = summaries
        .iter()
        .find(|s| s.policy == "no_aug")
        .map(|s| s.mean_min_probability);
    let rows = summaries
        .iter()
        .map(|s| ComparisonRow {
            policy: s.policy.clone(),
            n_augmented: s.n_augmented,
            bleu: s.bleu,
            rouge1: s.rouge1,
            rouge2: s.rouge2,
            rouge_l: s.rouge_l,
            confidence: s.mean_min_probability,
            confidence_logit: s.mean_min_logit,
            delta_confidence_pct: base
                .filter(|b| *b != 0.0)
                .map(|b| (s.mean_min_probability - b) / b * 100.0),
            extra: s.extra.clone(),
        })
        .collect();
    Ok(ComparisonTable { rows })
}
