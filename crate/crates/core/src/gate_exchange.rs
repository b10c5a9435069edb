//! Instruction-tuning export and prediction import for externally
//! fine-tuned gates.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::corpus::{build_context, Dialogue, TurnKey};
use crate::decision::GateDecision;
use crate::gate_prompt::INSTRUCTION;
use crate::retrieval::{KnowledgeBase, RankedList};

pub const DEFAULT_CLAUSES: &str = include_str!("../templates/peft_clauses.txt");
/// Snippets included for the `know` feature.
pub const KNOWLEDGE_TOP_K: usize = 3;

#[derive(Debug, Error)]
pub enum ExchangeError {
    #[error("feature `{feature}` needs data that was not supplied: {detail}")]
    MissingFeatureData { feature: Feature, detail: String },
    #[error("invalid feature set: {0}")]
    InvalidFeatureSet(String),
    #[error("corpus has no labeled system turns")]
    NoLabeledTurns,
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate prediction for {key}")]
    DuplicateKey { key: TurnKey, line: usize },
    #[error("line {line}: {key} is not a system turn of the corpus")]
    UnknownTurn { key: TurnKey, line: usize },
    #[error("instruction clauses: {0}")]
    Clauses(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Contx,
    Resp,
    SynResp,
    Ner,
    Know,
    Source,
}

impl Feature {
    pub const ALL: [Feature; 6] = [
        Feature::Contx,
        Feature::Resp,
        Feature::SynResp,
        Feature::Ner,
        Feature::Know,
        Feature::Source,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::Contx => "contx",
            Feature::Resp => "resp",
            Feature::SynResp => "syn_resp",
            Feature::Ner => "ner",
            Feature::Know => "know",
            Feature::Source => "source",
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Feature {
    type Err = ExchangeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().replace('-', "_");
        Feature::ALL
            .into_iter()
            .find(|f| f.name() == norm)
            .ok_or_else(|| ExchangeError::InvalidFeatureSet(format!("unknown feature `{s}`")))
    }
}

/// Input features, serialized in the order of [`Feature::ALL`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FeatureSet(BTreeSet<Feature>);

impl FeatureSet {
    pub fn new(features: impl IntoIterator<Item = Feature>) -> Result<Self, ExchangeError> {
        let set: BTreeSet<Feature> = features.into_iter().collect();
        if !set.contains(&Feature::Contx) {
            return Err(ExchangeError::InvalidFeatureSet(
                "`contx` is required".into(),
            ));
        }
        if set.contains(&Feature::Resp) && set.contains(&Feature::SynResp) {
            return Err(ExchangeError::InvalidFeatureSet(
                "`resp` and `syn_resp` are alternatives".into(),
            ));
        }
        Ok(Self(set))
    }

    pub fn contains(&self, f: Feature) -> bool {
        self.0.contains(&f)
    }

    pub fn iter(&self) -> impl Iterator<Item = Feature> + '_ {
        self.0.iter().copied()
    }

    /// Name such as `contx-syn_resp-ner`.
    pub fn label(&self) -> String {
        self.iter().map(Feature::name).collect::<Vec<_>>().join("-")
    }
}

impl FromStr for FeatureSet {
    type Err = ExchangeError;

    /// Comma-separated feature names.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let features = s
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(Feature::from_str)
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(features)
    }
}

/// Per-feature sentences appended to the base instruction.
#[derive(Debug, Clone, PartialEq)]
pub struct InstructionClauses {
    pub base: String,
    pub clauses: BTreeMap<Feature, String>,
}

impl InstructionClauses {
    pub fn parse(text: &str) -> Result<Self, ExchangeError> {
        let mut clauses = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                ExchangeError::Clauses(format!("line {}: expected `feature = sentence`", i + 1))
            })?;
            let f = Feature::from_str(k)
                .map_err(|e| ExchangeError::Clauses(format!("line {}: {e}", i + 1)))?;
            clauses.insert(f, v.trim().to_string());
        }
        Ok(Self {
            base: INSTRUCTION.to_string(),
            clauses,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, ExchangeError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn instruction(&self, features: &FeatureSet) -> String {
        let mut out = self.base.clone();
        for f in features.iter() {
            if let Some(c) = self.clauses.get(&f) {
                out.push(' ');
                out.push_str(c);
            }
        }
        out
    }
}

impl Default for InstructionClauses {
    fn default() -> Self {
        Self::parse(DEFAULT_CLAUSES).expect("bundled clause file parses")
    }
}

fn string_or_list<'de, D: Deserializer<'de>>(d: D) -> Result<Option<String>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum V {
        One(String),
        Many(Vec<String>),
    }
    Ok(Option::<V>::deserialize(d)?.map(|v| match v {
        V::One(s) => s,
        V::Many(v) => v.join(", "),
    }))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuxRecord {
    pub dialogue_id: String,
    pub turn_index: usize,
    #[serde(default)]
    pub syn_resp: Option<String>,
    /// A string, or a list joined by `, `.
    #[serde(default, deserialize_with = "string_or_list")]
    pub ner: Option<String>,
    #[serde(default)]
    pub source: Option<String>,
}

/// Precomputed per-turn inputs: synthetic responses, entities, knowledge source.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AuxiliaryFeatures {
    pub records: BTreeMap<TurnKey, AuxRecord>,
}

impl AuxiliaryFeatures {
    /// Reads JSON lines, rejecting duplicates and turns missing from `corpus`.
    pub fn load(path: &Path, corpus: &[Dialogue]) -> Result<Self, ExchangeError> {
        let turns = turn_counts(corpus);
        let mut records = BTreeMap::new();
        let reader = BufReader::new(std::fs::File::open(path)?);
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let n = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let rec: AuxRecord =
                serde_json::from_str(&line).map_err(|e| ExchangeError::Malformed {
                    line: n,
                    message: e.to_string(),
                })?;
            let key = TurnKey::new(rec.dialogue_id.clone(), rec.turn_index);
            if !known(&turns, &key) {
                return Err(ExchangeError::UnknownTurn { key, line: n });
            }
            if records.insert(key.clone(), rec).is_some() {
                return Err(ExchangeError::DuplicateKey { key, line: n });
            }
        }
        Ok(Self { records })
    }
}

fn turn_counts(corpus: &[Dialogue]) -> HashMap<&str, usize> {
    corpus
        .iter()
        .map(|d| (d.dialogue_id.as_str(), d.n_system_turns()))
        .collect()
}

fn known(turns: &HashMap<&str, usize>, key: &TurnKey) -> bool {
    turns
        .get(key.dialogue_id.as_str())
        .is_some_and(|&n| key.turn_index < n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionTriple {
    pub instruction: String,
    pub input: String,
    /// `True` or `False`.
    pub output: String,
    pub dialogue_id: String,
    pub turn_index: usize,
    pub features: Vec<Feature>,
}

/// Ranked snippet lists by query id, with the snippet texts.
pub type Rankings<'a> = (&'a BTreeMap<String, RankedList>, &'a KnowledgeBase);

/// One triple per labeled system turn.
///
/// Input order: context, `RESPONSE:` or `SYNTHETIC RESPONSE:`, `ENTITIES:`,
/// up to three `KNOWLEDGE:` lines, `SOURCE:`. A missing `source` entry
/// falls back to the distinct sources of the retrieved snippets.
pub fn build_triples(
    corpus: &[Dialogue],
    features: &FeatureSet,
    aux: Option<&AuxiliaryFeatures>,
    rankings: Option<Rankings<'_>>,
    clauses: &InstructionClauses,
) -> Result<Vec<InstructionTriple>, ExchangeError> {
    let missing =
        |feature: Feature, detail: String| ExchangeError::MissingFeatureData { feature, detail };
    for f in [Feature::SynResp, Feature::Ner] {
        if features.contains(f) && aux.is_none() {
            return Err(missing(f, "no auxiliary feature file".into()));
        }
    }
    if features.contains(Feature::Know) && rankings.is_none() {
        return Err(missing(Feature::Know, "no rankings".into()));
    }
    if features.contains(Feature::Source) && aux.is_none() && rankings.is_none() {
        return Err(missing(
            Feature::Source,
            "no auxiliary feature file or rankings".into(),
        ));
    }
    let instruction = clauses.instruction(features);
    let feature_list: Vec<Feature> = features.iter().collect();
    let mut out = Vec::new();
    for dialogue in corpus {
        for (t, turn) in dialogue.system_turns() {
            let Some(label) = turn.augment_label else {
                continue;
            };
            let key = dialogue.key(t);
            let ctx = build_context(dialogue, t).expect("system turn has a user turn");
            let rec = aux.and_then(|a| a.records.get(&key));
            let aux_field = |f: Feature, v: Option<&String>| {
                v.cloned()
                    .ok_or_else(|| missing(f, format!("no value for {key}")))
            };
            let snippets: Vec<&crate::retrieval::KnowledgeSnippet> = match rankings {
                Some((lists, kb)) => lists
                    .get(&key.query_id())
                    .map(|l| {
                        l.ids()
                            .filter_map(|id| kb.get(id))
                            .take(KNOWLEDGE_TOP_K)
                            .collect()
                    })
                    .unwrap_or_default(),
                None => Vec::new(),
            };

            let mut input = ctx.render(" ");
            if features.contains(Feature::Resp) {
                input.push_str(&format!("\nRESPONSE: {}", turn.text.trim()));
            }
            if features.contains(Feature::SynResp) {
                let v = aux_field(Feature::SynResp, rec.and_then(|r| r.syn_resp.as_ref()))?;
                input.push_str(&format!("\nSYNTHETIC RESPONSE: {}", v.trim()));
            }
            if features.contains(Feature::Ner) {
                let v = aux_field(Feature::Ner, rec.and_then(|r| r.ner.as_ref()))?;
                input.push_str(&format!("\nENTITIES: {}", v.trim()));
            }
            if features.contains(Feature::Know) {
                if snippets.is_empty() {
                    return Err(missing(Feature::Know, format!("no ranking for {key}")));
                }
                for s in &snippets {
                    input.push_str(&format!("\nKNOWLEDGE: {}", s.text.trim()));
                }
            }
            if features.contains(Feature::Source) {
                let from_snippets = {
                    let mut seen: Vec<&str> = Vec::new();
                    for s in &snippets {
                        if !s.source.is_empty() && !seen.contains(&s.source.as_str()) {
                            seen.push(&s.source);
                        }
                    }
                    (!seen.is_empty()).then(|| seen.join("; "))
                };
                let v = rec
                    .and_then(|r| r.source.clone())
                    .or(from_snippets)
                    .ok_or_else(|| missing(Feature::Source, format!("no value for {key}")))?;
                input.push_str(&format!("\nSOURCE: {}", v.trim()));
            }
            out.push(InstructionTriple {
                instruction: instruction.clone(),
                input,
                output: if label { "True" } else { "False" }.into(),
                dialogue_id: key.dialogue_id.clone(),
                turn_index: t,
                features: feature_list.clone(),
            });
        }
    }
    if out.is_empty() {
        return Err(ExchangeError::NoLabeledTurns);
    }
    Ok(out)
}

/// Writes [`build_triples`] as JSON lines and returns the count.
pub fn export_instruction_dataset<W: Write>(
    corpus: &[Dialogue],
    features: &FeatureSet,
    aux: Option<&AuxiliaryFeatures>,
    rankings: Option<Rankings<'_>>,
    clauses: &InstructionClauses,
    mut out: W,
) -> Result<usize, ExchangeError> {
    let triples = build_triples(corpus, features, aux, rankings, clauses)?;
    for t in &triples {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(triples.len())
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "1" => Some(true),
        "false" | "0" => Some(false),
        _ => None,
    }
}

/// Parses `dialogue_id \t turn_index \t decision [\t score]` lines.
///
/// A missing score becomes 1.0 or 0.0 from the decision. Blank lines, `#`
/// comments and a leading `dialogue_id` header are skipped. Decisions carry
/// no threshold.
pub fn parse_gate_predictions(
    text: &str,
    corpus: &[Dialogue],
    gate_name: &str,
) -> Result<BTreeMap<TurnKey, GateDecision>, ExchangeError> {
    let turns = turn_counts(corpus);
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim_end_matches('\r');
        if trimmed.trim().is_empty()
            || trimmed.starts_with('#')
            || (line == 1 && trimmed.starts_with("dialogue_id"))
        {
            continue;
        }
        let bad = |message: String| ExchangeError::Malformed { line, message };
        let cols: Vec<&str> = trimmed.split('\t').collect();
        if !(3..=4).contains(&cols.len()) {
            return Err(bad(format!(
                "expected 3 or 4 tab-separated columns, found {}",
                cols.len()
            )));
        }
        let turn_index: usize = cols[1].trim().parse().map_err(|_| {
            bad(format!(
                "turn_index `{}` is not a non-negative integer",
                cols[1]
            ))
        })?;
        let decision = parse_bool(cols[2])
            .ok_or_else(|| bad(format!("decision `{}` is not true/false", cols[2])))?;
        let score = match cols.get(3).map(|s| s.trim()).filter(|s| !s.is_empty()) {
            Some(s) => {
                let v: f64 = s
                    .parse()
                    .map_err(|_| bad(format!("score `{s}` is not a number")))?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(bad(format!("score {v} outside [0, 1]")));
                }
                v
            }
            None => f64::from(u8::from(decision)),
        };
        let key = TurnKey::new(cols[0].trim(), turn_index);
        if !known(&turns, &key) {
            return Err(ExchangeError::UnknownTurn { key, line });
        }
        if out.contains_key(&key) {
            return Err(ExchangeError::DuplicateKey { key, line });
        }
        out.insert(
            key.clone(),
            GateDecision {
                dialogue_id: key.dialogue_id.clone(),
                turn_index,
                score,
                decision,
                threshold: None,
                gate_name: gate_name.to_string(),
                unparsed: false,
            },
        );
    }
    Ok(out)
}

pub fn import_gate_predictions(
    path: &Path,
    corpus: &[Dialogue],
) -> Result<BTreeMap<TurnKey, GateDecision>, ExchangeError> {
    parse_gate_predictions(&std::fs::read_to_string(path)?, corpus, "imported")
}
