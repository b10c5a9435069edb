use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::OrchestratorError;
use crate::corpus::ConversationContext;
use crate::http::{EndpointSettings, JsonClient};
use crate::retrieval::tokenize;

/// Generator input: one utterance per line, then a blank line and one
/// `KNOWLEDGE:` line per snippet when augmenting.
pub fn generator_prompt(context: &ConversationContext, snippets: &[&str]) -> String {
    let mut out = context.render("\n");
    if !snippets.is_empty() {
        out.push('\n');
        for s in snippets {
            out.push_str("\nKNOWLEDGE: ");
            out.push_str(s.trim());
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub text: String,
    pub tokens: Vec<String>,
    /// Probability of each emitted token, in `(0, 1]`.
    pub probabilities: Vec<f64>,
    pub logits: Option<Vec<f64>>,
}

const BOS: &str = "<s>";
const EOS: &str = "</s>";

/// Word bigram model with add-one smoothing and greedy decoding.
///
/// Decoding starts from the last prompt word the model knows and never
/// emits the same word twice. The reported logit of a token is
/// `ln(count + 1)` for its bigram count.
#[derive(Debug, Clone, PartialEq)]
pub struct BigramGenerator {
    words: Vec<String>,
    ids: HashMap<String, usize>,
    /// `counts[prev]` maps next-word id to count.
    counts: Vec<HashMap<usize, u32>>,
    totals: Vec<u32>,
    pub max_tokens: usize,
}

impl BigramGenerator {
    pub fn train<'a>(responses: impl IntoIterator<Item = &'a str>, max_tokens: usize) -> Self {
        let mut g = Self {
            words: vec![BOS.into(), EOS.into()],
            ids: HashMap::new(),
            counts: vec![HashMap::new(), HashMap::new()],
            totals: vec![0, 0],
            max_tokens,
        };
        g.ids = g
            .words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        for response in responses {
            let mut prev = 0;
            let toks = tokenize(response);
            for tok in toks.iter().map(String::as_str).chain([EOS]) {
                let id = g.intern(tok);
                *g.counts[prev].entry(id).or_default() += 1;
                g.totals[prev] += 1;
                prev = id;
            }
        }
        g
    }

    fn intern(&mut self, w: &str) -> usize {
        if let Some(&id) = self.ids.get(w) {
            return id;
        }
        let id = self.words.len();
        self.words.push(w.to_string());
        self.ids.insert(w.to_string(), id);
        self.counts.push(HashMap::new());
        self.totals.push(0);
        id
    }

    pub fn vocabulary_size(&self) -> usize {
        self.words.len()
    }

    /// Smoothed `P(next | prev)`; the support excludes the start symbol.
    pub fn probability(&self, prev: usize, next: usize) -> f64 {
        let c = self.counts[prev].get(&next).copied().unwrap_or(0);
        (c as f64 + 1.0) / (self.totals[prev] as f64 + (self.words.len() - 1) as f64)
    }

    pub fn generate(&self, prompt: &str) -> Generation {
        let mut prev = tokenize(prompt)
            .iter()
            .rev()
            .find_map(|t| self.ids.get(t.as_str()).copied())
            .unwrap_or(0);
        let eos = 1;
        let mut used = vec![false; self.words.len()];
        let (mut tokens, mut probabilities, mut logits) = (Vec::new(), Vec::new(), Vec::new());
        while tokens.len() < self.max_tokens {
            let mut best: Option<(u32, usize)> = None;
            for next in 1..self.words.len() {
                if used[next] || (next == eos && tokens.is_empty()) {
                    continue;
                }
                let c = self.counts[prev].get(&next).copied().unwrap_or(0);
                if best.is_none_or(|(bc, _)| c > bc) {
                    best = Some((c, next));
                }
            }
            let Some((c, next)) = best else { break };
            if next == eos {
                break;
            }
            used[next] = true;
            tokens.push(self.words[next].clone());
            probabilities.push(self.probability(prev, next));
            logits.push((c as f64 + 1.0).ln());
            prev = next;
        }
        Generation {
            text: tokens.join(" "),
            tokens,
            probabilities,
            logits: Some(logits),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalGenerator {
    #[serde(flatten)]
    pub endpoint: EndpointSettings,
    pub max_tokens: usize,
}

/// Reads `{"text", "tokens", "logprobs"}` or the `choices[0]` shapes of
/// completion and chat-completion replies.
pub fn parse_generation(reply: &Value) -> Result<Generation, OrchestratorError> {
    let missing =
        || OrchestratorError::MissingProbabilities(reply.to_string().chars().take(200).collect());
    let strings = |v: &Value| -> Option<Vec<String>> {
        v.as_array()?
            .iter()
            .map(|x| x.as_str().map(str::to_string))
            .collect()
    };
    let floats =
        |v: &Value| -> Option<Vec<f64>> { v.as_array()?.iter().map(Value::as_f64).collect() };

    let (text, tokens, logprobs) = if let Some(text) = reply.get("text").and_then(Value::as_str) {
        let tokens = reply.get("tokens").and_then(strings).ok_or_else(missing)?;
        let lp = reply.get("logprobs").and_then(floats).ok_or_else(missing)?;
        (text.to_string(), tokens, lp)
    } else {
        let choice = reply
            .get("choices")
            .and_then(|c| c.get(0))
            .ok_or_else(missing)?;
        let lp = choice.get("logprobs").ok_or_else(missing)?;
        if let Some(content) = lp.get("content").and_then(Value::as_array) {
            let tokens = content
                .iter()
                .map(|e| e.get("token").and_then(Value::as_str).map(str::to_string))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(missing)?;
            let lps = content
                .iter()
                .map(|e| e.get("logprob").and_then(Value::as_f64))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(missing)?;
            let text = choice
                .get("message")
                .and_then(|m| m.get("content"))
                .and_then(Value::as_str)
                .map_or_else(|| tokens.concat(), str::to_string);
            (text, tokens, lps)
        } else {
            let tokens = lp.get("tokens").and_then(strings).ok_or_else(missing)?;
            let lps = lp
                .get("token_logprobs")
                .and_then(floats)
                .ok_or_else(missing)?;
            let text = choice
                .get("text")
                .and_then(Value::as_str)
                .map_or_else(|| tokens.concat(), str::to_string);
            (text, tokens, lps)
        }
    };
    if tokens.len() != logprobs.len() {
        return Err(OrchestratorError::Generator(format!(
            "{} tokens but {} log-probabilities",
            tokens.len(),
            logprobs.len()
        )));
    }
    if logprobs.iter().any(|lp| !lp.is_finite() || *lp > 1e-9) {
        return Err(OrchestratorError::Generator(
            "log-probabilities must be finite and at most 0".into(),
        ));
    }
    Ok(Generation {
        text,
        tokens,
        probabilities: logprobs.iter().map(|lp| lp.min(0.0).exp()).collect(),
        logits: None,
    })
}

/// The response generator `g`.
#[derive(Debug)]
pub enum GeneratorEndpoint {
    Builtin(BigramGenerator),
    External {
        config: ExternalGenerator,
        client: JsonClient,
    },
}

impl GeneratorEndpoint {
    pub fn external(config: ExternalGenerator) -> Result<Self, OrchestratorError> {
        let client = JsonClient::new(config.endpoint.clone())?;
        Ok(Self::External { config, client })
    }

    pub fn max_in_flight(&self) -> usize {
        match self {
            GeneratorEndpoint::Builtin(_) => 1,
            GeneratorEndpoint::External { config, .. } => config.endpoint.max_in_flight,
        }
    }

    pub fn generate(&self, prompt: &str) -> Result<Generation, OrchestratorError> {
        match self {
            GeneratorEndpoint::Builtin(g) => Ok(g.generate(prompt)),
            GeneratorEndpoint::External { config, client } => {
                let body = json!({
                    "prompt": prompt,
                    "max_tokens": config.max_tokens,
                    "return_logprobs": true,
                });
                parse_generation(&client.post(&body)?)
            }
        }
    }
}
