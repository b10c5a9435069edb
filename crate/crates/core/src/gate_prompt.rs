//! Prompt-based gate: renders an instruction prompt for a chat/completion
//! model and reads a `True`/`False` verdict from its reply.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::corpus::{ConversationContext, TurnKey};
use crate::decision::GateDecision;
use crate::http::{run_bounded, EndpointSettings, HttpError, JsonClient};

pub const ZERO_SHOT_TEMPLATE: &str = include_str!("../templates/zero_shot.txt");
pub const IN_CONTEXT_TEMPLATE: &str = include_str!("../templates/in_context.txt");

pub const INPUT_PLACEHOLDER: &str = "[Converstion Context Input]";
pub const PREAMBLE: &str = "Below is an instruction that describes a task. Please respond with 'True' or 'False' only that appropriately completes the request.";
pub const INSTRUCTION: &str = "Analyse the conversational context so far. Generate an appropriate response. Consider the invovled entites. Estimate if augmenting the response with external knowledge is helpful with an output of 'True' or 'False' only.";

const EXAMPLE_AUGMENT: &str = "USER: I'm planning a trip, can you help me look for a flight? SYSTEM: Which day are you planning to return and from which city? USER: I want to go from NYC the day after tomorrow and return on the 13th of this month. SYSTEM: Where would you like to go? USER: I want to go to Vancouver, BC. Can you look for a Premium Economy class ticket. SYSTEM: I found 1 flight for you. It is a Delta Airlines flight that takes off at 6 am and returns at 2:50 am. The price is $505. USER: What is the departure airport, and how many stops does the flight have?";
const EXAMPLE_NO_AUGMENT: &str =
    "USER: Get me bus tickets to a Cher event on March 6th. SYSTEM: How many to buy? USER: only one, please.";

const SECTION: &str = "\n\n### ";
pub const RESPONSE_CUE: &str = "### Response:";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template: {0}")]
    Template(String),
    #[error(transparent)]
    Http(#[from] HttpError),
    #[error("endpoint reply has no completion text: {0}")]
    MissingText(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    ZeroShot,
    InContext,
}

impl std::str::FromStr for PromptKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zero_shot" | "zero-shot" => Ok(PromptKind::ZeroShot),
            "in_context" | "in-context" | "icl" => Ok(PromptKind::InContext),
            other => Err(format!("unknown prompt kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub kind: PromptKind,
    pub preamble: String,
    pub instruction_text: String,
    /// Worked examples as (serialized context, augment verdict).
    pub icl_examples: Vec<(String, bool)>,
}

fn verdict_word(v: bool) -> &'static str {
    if v {
        "True"
    } else {
        "False"
    }
}

impl PromptTemplate {
    pub fn zero_shot() -> Self {
        Self {
            kind: PromptKind::ZeroShot,
            preamble: PREAMBLE.into(),
            instruction_text: INSTRUCTION.into(),
            icl_examples: Vec::new(),
        }
    }

    pub fn in_context() -> Self {
        Self {
            kind: PromptKind::InContext,
            icl_examples: vec![
                (EXAMPLE_AUGMENT.into(), true),
                (EXAMPLE_NO_AUGMENT.into(), false),
            ],
            ..Self::zero_shot()
        }
    }

    pub fn builtin(kind: PromptKind) -> Self {
        match kind {
            PromptKind::ZeroShot => Self::zero_shot(),
            PromptKind::InContext => Self::in_context(),
        }
    }

    /// Reads a template in the `### Section:` layout of the stored files.
    pub fn parse(text: &str) -> Result<Self, PromptError> {
        let bad = |m: &str| Err(PromptError::Template(m.to_string()));
        let text = text.trim_end();
        let mut sections = text.split(SECTION);
        let preamble = sections.next().unwrap_or_default().to_string();
        let Some(instruction) = sections
            .next()
            .and_then(|s| s.strip_prefix("Instruction: "))
        else {
            return bad("expected `### Instruction:` after the preamble");
        };
        let mut icl_examples = Vec::new();
        let mut saw_input = false;
        let mut rest: Vec<&str> = sections.collect();
        let Some(last) = rest.pop() else {
            return bad("missing `### Response:` cue");
        };
        if last.trim_end() != "Response:" {
            return bad("template must end with `### Response:`");
        }
        let mut it = rest.into_iter();
        while let Some(section) = it.next() {
            if let Some((_, ctx)) = section
                .strip_prefix("Example ")
                .and_then(|s| s.split_once(": "))
            {
                let verdict = match it.next().and_then(|r| r.strip_prefix("Response: ")) {
                    Some("True") => true,
                    Some("False") => false,
                    _ => return bad("each example needs a `### Response: True|False` section"),
                };
                icl_examples.push((ctx.to_string(), verdict));
            } else if let Some(input) = section.strip_prefix("Input: ") {
                if input != INPUT_PLACEHOLDER {
                    return bad("the input section must hold the context placeholder");
                }
                saw_input = true;
            } else {
                return Err(PromptError::Template(format!(
                    "unexpected section `### {}`",
                    section.lines().next().unwrap_or_default()
                )));
            }
        }
        if !saw_input {
            return bad("missing `### Input:` section");
        }
        Ok(Self {
            kind: if icl_examples.is_empty() {
                PromptKind::ZeroShot
            } else {
                PromptKind::InContext
            },
            preamble,
            instruction_text: instruction.to_string(),
            icl_examples,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, PromptError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// The full prompt with `input` in the input slot.
    pub fn render_input(&self, input: &str) -> String {
        let mut out = format!(
            "{}{SECTION}Instruction: {}",
            self.preamble, self.instruction_text
        );
        for (i, (ctx, v)) in self.icl_examples.iter().enumerate() {
            out.push_str(&format!(
                "{SECTION}Example {}: {ctx}{SECTION}Response: {}",
                i + 1,
                verdict_word(*v)
            ));
        }
        out.push_str(&format!("{SECTION}Input: {input}\n\n{RESPONSE_CUE}"));
        out
    }
}

/// Context as `USER: ... SYSTEM: ...`, followed by one `KNOWLEDGE:` line per snippet.
pub fn serialize_input(context: &ConversationContext, knowledge: Option<&[&str]>) -> String {
    let mut out = context.render(" ");
    for text in knowledge.unwrap_or_default() {
        out.push_str("\nKNOWLEDGE: ");
        out.push_str(text.trim());
    }
    out
}

pub fn render_prompt(
    template: &PromptTemplate,
    context: &ConversationContext,
    knowledge: Option<&[&str]>,
) -> String {
    template.render_input(&serialize_input(context, knowledge))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub augment: bool,
    /// 1.0 for `True`, 0.0 for `False`.
    pub score: f64,
    /// No verdict token found; `augment` is the fallback.
    pub unparsed: bool,
}

/// First standalone `true`/`false` token, case-insensitive; `fallback` otherwise.
pub fn parse_verdict(completion: &str, fallback: bool) -> Verdict {
    let found = completion
        .split(|c: char| !c.is_alphanumeric())
        .find_map(|tok| match tok.to_ascii_lowercase().as_str() {
            "true" => Some(true),
            "false" => Some(false),
            _ => None,
        });
    let augment = found.unwrap_or(fallback);
    Verdict {
        augment,
        score: if augment { 1.0 } else { 0.0 },
        unparsed: found.is_none(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatEndpointConfig {
    #[serde(flatten)]
    pub endpoint: EndpointSettings,
    /// Model identifier sent with each request.
    pub model_name: String,
    pub max_tokens: usize,
}

impl ChatEndpointConfig {
    pub fn new(url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            endpoint: EndpointSettings::new(url),
            model_name: model_name.into(),
            max_tokens: 8,
        }
    }
}

/// Completion text from `{"text"}` or common completion/chat reply shapes.
pub fn extract_completion_text(reply: &Value) -> Option<String> {
    if let Some(t) = reply.get("text").and_then(Value::as_str) {
        return Some(t.to_string());
    }
    let choice = reply.get("choices")?.get(0)?;
    choice
        .get("text")
        .or_else(|| choice.get("message").and_then(|m| m.get("content")))
        .and_then(Value::as_str)
        .map(str::to_string)
}

fn request_body(cfg: &ChatEndpointConfig, prompt: &str) -> Value {
    json!({
        "model": cfg.model_name,
        "prompt": prompt,
        "max_tokens": cfg.max_tokens,
        "temperature": 0,
    })
}

pub fn query_gate_endpoint(
    client: &JsonClient,
    cfg: &ChatEndpointConfig,
    prompt: &str,
) -> Result<String, PromptError> {
    let reply = client.post(&request_body(cfg, prompt))?;
    extract_completion_text(&reply).ok_or_else(|| PromptError::MissingText(reply.to_string()))
}

/// One turn to classify.
#[derive(Debug, Clone)]
pub struct PromptItem {
    pub context: ConversationContext,
    pub knowledge: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct PromptGateRun {
    pub decisions: BTreeMap<TurnKey, GateDecision>,
    pub completions: BTreeMap<TurnKey, String>,
    /// Turns whose request failed after all retries.
    pub failures: BTreeMap<TurnKey, String>,
    pub n_unparsed: usize,
}

impl PromptGateRun {
    pub fn unparsed_rate(&self) -> f64 {
        if self.decisions.is_empty() {
            0.0
        } else {
            self.n_unparsed as f64 / self.decisions.len() as f64
        }
    }
}

/// Classifies every item, with up to `max_in_flight` concurrent requests.
pub fn run_prompt_gate(
    items: &[PromptItem],
    template: &PromptTemplate,
    cfg: &ChatEndpointConfig,
    fallback: bool,
    gate_name: &str,
) -> Result<PromptGateRun, PromptError> {
    let client = JsonClient::new(cfg.endpoint.clone())?;
    let replies = run_bounded(items, cfg.endpoint.max_in_flight, |item| {
        let refs: Option<Vec<&str>> = item
            .knowledge
            .as_ref()
            .map(|k| k.iter().map(String::as_str).collect());
        let prompt = render_prompt(template, &item.context, refs.as_deref());
        query_gate_endpoint(&client, cfg, &prompt)
    });
    let mut run = PromptGateRun::default();
    for (item, reply) in items.iter().zip(replies) {
        let key = item.context.key();
        match reply {
            Ok(text) => {
                let v = parse_verdict(&text, fallback);
                let mut d = GateDecision::from_score(&key, v.score, 0.5, gate_name);
                d.unparsed = v.unparsed;
                run.n_unparsed += usize::from(v.unparsed);
                run.decisions.insert(key.clone(), d);
                run.completions.insert(key, text);
            }
            Err(e) => {
                log::warn!("prompt gate failed for {key}: {e}");
                run.failures.insert(key, e.to_string());
            }
        }
    }
    Ok(run)
}
