//! Dialogue corpora in canonical form.
//!
//! A corpus is a list of [`Dialogue`]s, each an alternating sequence of user
//! and system turns starting with the user. System turn `t` follows user turn
//! `t`, so the context for generating system turn `t` is every utterance up
//! to and including user turn `t`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{} invalid record(s); first: {}", .0.len(), .0[0])]
    Invalid(Vec<RecordError>),
    #[error("invalid adapter mapping at line {line}: {message}")]
    Mapping { line: usize, message: String },
    #[error("turn {t} out of range for dialogue {dialogue_id} ({available} available)")]
    TurnOutOfRange {
        dialogue_id: String,
        t: usize,
        available: usize,
    },
    #[error("position {t} out of range for {n_system_turns} system turn(s)")]
    PositionOutOfRange { t: usize, n_system_turns: usize },
}

/// A validation failure for one line of an input file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordError {
    pub line: usize,
    pub field: String,
    pub message: String,
}

impl fmt::Display for RecordError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}: {}", self.line, self.field, self.message)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    System,
}

impl Speaker {
    pub fn tag(self) -> &'static str {
        match self {
            Speaker::User => "USER:",
            Speaker::System => "SYSTEM:",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augment_label: Option<bool>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gold_snippet_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dialogue {
    pub dialogue_id: String,
    #[serde(default)]
    pub domains: Vec<String>,
    pub turns: Vec<Turn>,
}

/// Identifies a system turn: `(dialogue_id, t)` where `t` indexes system turns.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TurnKey {
    pub dialogue_id: String,
    pub turn_index: usize,
}

impl TurnKey {
    pub fn new(dialogue_id: impl Into<String>, turn_index: usize) -> Self {
        Self {
            dialogue_id: dialogue_id.into(),
            turn_index,
        }
    }

    /// Query id used in ranking exchange files: `dialogue_id:turn_index`.
    pub fn query_id(&self) -> String {
        format!("{}:{}", self.dialogue_id, self.turn_index)
    }
}

impl fmt::Display for TurnKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.dialogue_id, self.turn_index)
    }
}

impl Dialogue {
    /// Checks the turn invariants; returns `(field, message)` for the first violation.
    pub fn validate(&self) -> Result<(), (String, String)> {
        if self.dialogue_id.trim().is_empty() {
            return Err(("dialogue_id".into(), "must be non-empty".into()));
        }
        if self.turns.is_empty() {
            return Err(("turns".into(), "dialogue has no turns".into()));
        }
        for (i, turn) in self.turns.iter().enumerate() {
            let expected = if i % 2 == 0 {
                Speaker::User
            } else {
                Speaker::System
            };
            if turn.speaker != expected {
                return Err((
                    format!("turns[{i}].speaker"),
                    format!(
                        "turns must alternate user/system starting with user; expected {:?}",
                        expected
                    ),
                ));
            }
            if turn.text.trim().is_empty() {
                return Err((format!("turns[{i}].text"), "empty after trimming".into()));
            }
            if turn.augment_label.is_some() && turn.speaker != Speaker::System {
                return Err((
                    format!("turns[{i}].augment_label"),
                    "only system turns may carry an augmentation label".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn n_user_turns(&self) -> usize {
        self.turns.len().div_ceil(2)
    }

    pub fn n_system_turns(&self) -> usize {
        self.turns.len() / 2
    }

    pub fn user_turn(&self, t: usize) -> Option<&Turn> {
        self.turns.get(2 * t)
    }

    pub fn system_turn(&self, t: usize) -> Option<&Turn> {
        self.turns.get(2 * t + 1)
    }

    /// System turns in order, with their index `t`.
    pub fn system_turns(&self) -> impl Iterator<Item = (usize, &Turn)> {
        self.turns.iter().skip(1).step_by(2).enumerate()
    }

    pub fn key(&self, t: usize) -> TurnKey {
        TurnKey::new(self.dialogue_id.clone(), t)
    }
}

/// The conversational context `c_t = {u_0, s_0, ..., u_t}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversationContext {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub utterances: Vec<(Speaker, String)>,
}

impl ConversationContext {
    pub fn key(&self) -> TurnKey {
        TurnKey::new(self.dialogue_id.clone(), self.turn_index)
    }

    /// Utterances prefixed with `USER:` / `SYSTEM:`, joined by `sep`.
    pub fn render(&self, sep: &str) -> String {
        self.utterances
            .iter()
            .map(|(speaker, text)| format!("{} {}", speaker.tag(), text.trim()))
            .collect::<Vec<_>>()
            .join(sep)
    }

    /// All utterance texts joined by single spaces, without speaker tags.
    pub fn plain_text(&self) -> String {
        self.utterances
            .iter()
            .map(|(_, text)| text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

pub fn build_context(dialogue: &Dialogue, t: usize) -> Result<ConversationContext, CorpusError> {
    if t >= dialogue.n_user_turns() {
        return Err(CorpusError::TurnOutOfRange {
            dialogue_id: dialogue.dialogue_id.clone(),
            t,
            available: dialogue.n_user_turns(),
        });
    }
    let utterances = dialogue.turns[..=2 * t]
        .iter()
        .map(|turn| (turn.speaker, turn.text.clone()))
        .collect();
    Ok(ConversationContext {
        dialogue_id: dialogue.dialogue_id.clone(),
        turn_index: t,
        utterances,
    })
}

/// Relative position of system turn `t` within a dialogue, in `[0, 1]`.
pub fn relative_position(t: usize, n_system_turns: usize) -> Result<f64, CorpusError> {
    if n_system_turns == 0 || t >= n_system_turns {
        return Err(CorpusError::PositionOutOfRange { t, n_system_turns });
    }
    Ok(t as f64 / (n_system_turns - 1).max(1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_dialogues: usize,
    pub n_turns: usize,
    pub n_system_turns: usize,
    pub n_labeled_system_turns: usize,
    pub n_positive_labels: usize,
    pub positive_label_ratio: f64,
    /// Set when no system turn carries a label; the ratio is then 0.
    pub no_labels: bool,
    /// Number of dialogues touching each domain.
    pub per_domain_counts: BTreeMap<String, usize>,
}

pub fn corpus_stats(corpus: &[Dialogue]) -> CorpusStats {
    let mut stats = CorpusStats {
        n_dialogues: corpus.len(),
        n_turns: 0,
        n_system_turns: 0,
        n_labeled_system_turns: 0,
        n_positive_labels: 0,
        positive_label_ratio: 0.0,
        no_labels: true,
        per_domain_counts: BTreeMap::new(),
    };
    for dialogue in corpus {
        stats.n_turns += dialogue.turns.len();
        stats.n_system_turns += dialogue.n_system_turns();
        for (_, turn) in dialogue.system_turns() {
            if let Some(label) = turn.augment_label {
                stats.n_labeled_system_turns += 1;
                stats.n_positive_labels += usize::from(label);
            }
        }
        let unique: HashSet<&String> = dialogue.domains.iter().collect();
        for domain in unique {
            *stats.per_domain_counts.entry(domain.clone()).or_default() += 1;
        }
    }
    if stats.n_labeled_system_turns > 0 {
        stats.no_labels = false;
        stats.positive_label_ratio =
            stats.n_positive_labels as f64 / stats.n_labeled_system_turns as f64;
    }
    stats
}

/// Human labels for every labeled system turn.
pub fn human_labels(corpus: &[Dialogue]) -> BTreeMap<TurnKey, bool> {
    let mut labels = BTreeMap::new();
    for dialogue in corpus {
        for (t, turn) in dialogue.system_turns() {
            if let Some(label) = turn.augment_label {
                labels.insert(dialogue.key(t), label);
            }
        }
    }
    labels
}

/// Keys of every system turn in corpus order.
pub fn system_turn_keys(corpus: &[Dialogue]) -> Vec<TurnKey> {
    corpus
        .iter()
        .flat_map(|d| (0..d.n_system_turns()).map(move |t| d.key(t)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Canonical,
    /// External records renamed through an [`AdapterMapping`].
    KetodAdapter,
}

/// Field renames from an external schema onto the canonical one.
///
/// The mapping file holds one `external = canonical` pair per line. Keys
/// prefixed with `turn.` apply to fields inside each turn object; all other
/// keys apply to the dialogue record. Blank lines and `#` comments are ignored.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdapterMapping {
    pub dialogue_fields: HashMap<String, String>,
    pub turn_fields: HashMap<String, String>,
}

const DIALOGUE_FIELDS: &[&str] = &["dialogue_id", "domains", "turns"];
const TURN_FIELDS: &[&str] = &["speaker", "text", "augment_label", "gold_snippet_ids"];

impl AdapterMapping {
    pub fn parse(text: &str) -> Result<Self, CorpusError> {
        let mut mapping = AdapterMapping::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (external, canonical) = line
                .split_once('=')
                .or_else(|| line.split_once(':'))
                .ok_or_else(|| CorpusError::Mapping {
                    line: i + 1,
                    message: "expected `external = canonical`".into(),
                })?;
            let (external, canonical) = (external.trim(), canonical.trim().to_string());
            if let Some(turn_field) = external.strip_prefix("turn.") {
                if !TURN_FIELDS.contains(&canonical.as_str()) {
                    return Err(CorpusError::Mapping {
                        line: i + 1,
                        message: format!("unknown canonical turn field `{canonical}`"),
                    });
                }
                mapping
                    .turn_fields
                    .insert(turn_field.to_string(), canonical);
            } else {
                if !DIALOGUE_FIELDS.contains(&canonical.as_str()) {
                    return Err(CorpusError::Mapping {
                        line: i + 1,
                        message: format!("unknown canonical dialogue field `{canonical}`"),
                    });
                }
                mapping
                    .dialogue_fields
                    .insert(external.to_string(), canonical);
            }
        }
        Ok(mapping)
    }

    pub fn from_file(path: &Path) -> Result<Self, CorpusError> {
        let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    fn rename(map: &Map<String, Value>, fields: &HashMap<String, String>) -> Map<String, Value> {
        let mut out = Map::new();
        for (key, value) in map {
            if let Some(canonical) = fields.get(key) {
                out.insert(canonical.clone(), value.clone());
            } else if !out.contains_key(key) {
                out.insert(key.clone(), value.clone());
            }
        }
        out
    }

    /// Rewrites an external record into a canonical [`Dialogue`].
    pub fn apply(&self, record: &Value) -> Result<Dialogue, (String, String)> {
        let obj = record
            .as_object()
            .ok_or_else(|| ("record".to_string(), "expected a JSON object".to_string()))?;
        let renamed = Self::rename(obj, &self.dialogue_fields);
        let dialogue_id = match renamed.get("dialogue_id") {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            Some(_) => return Err(("dialogue_id".into(), "expected a string".into())),
            None => return Err(missing("dialogue_id")),
        };
        let domains = string_list(renamed.get("domains")).map_err(|m| ("domains".into(), m))?;
        let turns_value = renamed.get("turns").ok_or_else(|| missing("turns"))?;
        let turns_raw = turns_value
            .as_array()
            .ok_or_else(|| ("turns".to_string(), "expected an array".to_string()))?;
        let mut turns = Vec::with_capacity(turns_raw.len());
        for (i, raw_turn) in turns_raw.iter().enumerate() {
            let turn_obj = raw_turn
                .as_object()
                .ok_or_else(|| (format!("turns[{i}]"), "expected an object".to_string()))?;
            let t = Self::rename(turn_obj, &self.turn_fields);
            let speaker = match t.get("speaker").and_then(Value::as_str) {
                Some(s) if s.eq_ignore_ascii_case("user") => Speaker::User,
                Some(s) if s.eq_ignore_ascii_case("system") => Speaker::System,
                Some(s) => {
                    return Err((
                        format!("turns[{i}].speaker"),
                        format!("unknown speaker `{s}`"),
                    ))
                }
                None => return Err(missing(&format!("turns[{i}].speaker"))),
            };
            let text = t
                .get("text")
                .and_then(Value::as_str)
                .ok_or_else(|| missing(&format!("turns[{i}].text")))?
                .to_string();
            let augment_label = match t.get("augment_label") {
                None | Some(Value::Null) => None,
                Some(Value::Bool(b)) => Some(*b),
                Some(Value::Number(n)) => Some(n.as_f64().unwrap_or(0.0) != 0.0),
                Some(Value::String(s)) => match s.to_ascii_lowercase().as_str() {
                    "true" | "1" | "yes" => Some(true),
                    "false" | "0" | "no" => Some(false),
                    _ => {
                        return Err((
                            format!("turns[{i}].augment_label"),
                            format!("cannot read `{s}` as a boolean"),
                        ))
                    }
                },
                Some(_) => {
                    return Err((
                        format!("turns[{i}].augment_label"),
                        "expected a boolean".into(),
                    ))
                }
            };
            let gold_snippet_ids = string_list(t.get("gold_snippet_ids"))
                .map_err(|m| (format!("turns[{i}].gold_snippet_ids"), m))?;
            turns.push(Turn {
                speaker,
                text,
                augment_label,
                gold_snippet_ids,
            });
        }
        Ok(Dialogue {
            dialogue_id,
            domains,
            turns,
        })
    }
}

fn missing(field: &str) -> (String, String) {
    (
        field.to_string(),
        "required field missing after mapping".to_string(),
    )
}

fn string_list(value: Option<&Value>) -> Result<Vec<String>, String> {
    match value {
        None | Some(Value::Null) => Ok(Vec::new()),
        Some(Value::String(s)) => Ok(vec![s.clone()]),
        Some(Value::Array(items)) => items
            .iter()
            .map(|item| match item {
                Value::String(s) => Ok(s.clone()),
                Value::Number(n) => Ok(n.to_string()),
                _ => Err("expected a list of strings".to_string()),
            })
            .collect(),
        Some(_) => Err("expected a string or list of strings".to_string()),
    }
}

/// Loads a JSON-lines corpus. Every line is validated; all failures are reported together.
pub fn load_corpus(
    path: &Path,
    format: CorpusFormat,
    mapping: Option<&AdapterMapping>,
) -> Result<Vec<Dialogue>, CorpusError> {
    let file = fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let default_mapping = AdapterMapping::default();
    let mapping = mapping.unwrap_or(&default_mapping);
    let mut dialogues = Vec::new();
    let mut errors = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = match format {
            CorpusFormat::Canonical => serde_json::from_str::<Dialogue>(&line)
                .map_err(|e| ("record".to_string(), e.to_string())),
            CorpusFormat::KetodAdapter => serde_json::from_str::<Value>(&line)
                .map_err(|e| ("record".to_string(), e.to_string()))
                .and_then(|v| mapping.apply(&v)),
        };
        let checked = parsed.and_then(|d| d.validate().map(|_| d));
        match checked {
            Ok(dialogue) => {
                if let Some(first) = seen.get(&dialogue.dialogue_id) {
                    errors.push(RecordError {
                        line: line_no,
                        field: "dialogue_id".into(),
                        message: format!(
                            "duplicate id `{}` (first seen on line {first})",
                            dialogue.dialogue_id
                        ),
                    });
                } else {
                    seen.insert(dialogue.dialogue_id.clone(), line_no);
                    dialogues.push(dialogue);
                }
            }
            Err((field, message)) => errors.push(RecordError {
                line: line_no,
                field,
                message,
            }),
        }
    }
    if errors.is_empty() {
        Ok(dialogues)
    } else {
        Err(CorpusError::Invalid(errors))
    }
}

/// Writes a corpus in canonical JSON-lines form.
pub fn save_corpus(corpus: &[Dialogue], path: &Path) -> Result<(), CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = std::io::BufWriter::new(fs::File::create(path).map_err(io_err)?);
    for dialogue in corpus {
        let line = serde_json::to_string(dialogue).expect("dialogue serializes");
        writeln!(out, "{line}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn turn(speaker: Speaker, text: &str) -> Turn {
        Turn {
            speaker,
            text: text.into(),
            augment_label: None,
            gold_snippet_ids: vec![],
        }
    }

    fn four_turns() -> Dialogue {
        Dialogue {
            dialogue_id: "d1".into(),
            domains: vec!["Travel".into()],
            turns: vec![
                turn(Speaker::User, "u0"),
                turn(Speaker::System, "s0"),
                turn(Speaker::User, "u1"),
                turn(Speaker::System, "s1"),
            ],
        }
    }

    #[test]
    fn context_at_zero_is_first_user_turn() {
        let ctx = build_context(&four_turns(), 0).unwrap();
        assert_eq!(ctx.utterances, vec![(Speaker::User, "u0".to_string())]);
    }

    #[test]
    fn context_interleaves_previous_turns() {
        let ctx = build_context(&four_turns(), 1).unwrap();
        let texts: Vec<_> = ctx.utterances.iter().map(|(_, t)| t.as_str()).collect();
        assert_eq!(texts, ["u0", "s0", "u1"]);
        assert_eq!(ctx.render(" "), "USER: u0 SYSTEM: s0 USER: u1");
    }

    #[test]
    fn context_out_of_range() {
        assert!(matches!(
            build_context(&four_turns(), 5),
            Err(CorpusError::TurnOutOfRange { t: 5, .. })
        ));
    }

    #[test]
    fn relative_positions() {
        assert_eq!(relative_position(0, 10).unwrap(), 0.0);
        assert_eq!(relative_position(9, 10).unwrap(), 1.0);
        assert!((relative_position(3, 8).unwrap() - 3.0 / 7.0).abs() < 1e-15);
        assert_eq!(relative_position(0, 1).unwrap(), 0.0);
        assert!(relative_position(1, 1).is_err());
        assert!(relative_position(0, 0).is_err());
    }

    #[test]
    fn stats_ratios() {
        let mut d = four_turns();
        d.turns[1].augment_label = Some(true);
        let stats = corpus_stats(std::slice::from_ref(&d));
        assert_eq!(stats.positive_label_ratio, 1.0);
        d.turns[3].augment_label = Some(false);
        let stats = corpus_stats(&[d]);
        assert_eq!(stats.positive_label_ratio, 0.5);
        assert_eq!(stats.n_system_turns, 2);
        assert_eq!(stats.per_domain_counts["Travel"], 1);
    }

    #[test]
    fn stats_without_labels_are_flagged() {
        let stats = corpus_stats(&[four_turns()]);
        assert!(stats.no_labels);
        assert_eq!(stats.positive_label_ratio, 0.0);
    }

    #[test]
    fn rejects_system_first() {
        let mut d = four_turns();
        d.turns.remove(0);
        let (field, message) = d.validate().unwrap_err();
        assert_eq!(field, "turns[0].speaker");
        assert!(message.contains("alternate"));
    }

    #[test]
    fn rejects_label_on_user_turn() {
        let mut d = four_turns();
        d.turns[0].augment_label = Some(true);
        assert_eq!(d.validate().unwrap_err().0, "turns[0].augment_label");
    }

    #[test]
    fn mapping_parse_and_apply() {
        let mapping = AdapterMapping::parse(
            "# ketod\nservices = domains\nturn.utterance = text\nturn.enrich = augment_label\nturn.kg_snippets = gold_snippet_ids\n",
        )
        .unwrap();
        let record = serde_json::json!({
            "dialogue_id": "x", "services": ["Hotels_1"],
            "turns": [
                {"speaker": "USER", "utterance": "hi"},
                {"speaker": "SYSTEM", "utterance": "hello", "enrich": 1, "kg_snippets": [17]}
            ]
        });
        let d = mapping.apply(&record).unwrap();
        assert_eq!(d.domains, ["Hotels_1"]);
        assert_eq!(d.turns[1].augment_label, Some(true));
        assert_eq!(d.turns[1].gold_snippet_ids, ["17"]);
    }

    #[test]
    fn mapping_missing_field_is_reported() {
        let mapping = AdapterMapping::default();
        let record = serde_json::json!({"dialogue_id": "x", "turns": [{"speaker": "USER"}]});
        let (field, _) = mapping.apply(&record).unwrap_err();
        assert_eq!(field, "turns[0].text");
    }

    #[test]
    fn mapping_rejects_unknown_target() {
        assert!(AdapterMapping::parse("a = b").is_err());
    }
}
