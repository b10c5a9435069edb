use serde::{Deserialize, Serialize};

use crate::corpus::TurnKey;

/// A gate's verdict for one system turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateDecision {
    pub dialogue_id: String,
    pub turn_index: usize,
    /// Probability of the "augment" class.
    pub score: f64,
    pub decision: bool,
    /// When present, `decision == (score >= threshold)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    pub gate_name: String,
    /// The gate's raw output could not be read; `decision` holds a fallback.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unparsed: bool,
}

impl GateDecision {
    pub fn from_score(key: &TurnKey, score: f64, threshold: f64, gate_name: &str) -> Self {
        Self {
            dialogue_id: key.dialogue_id.clone(),
            turn_index: key.turn_index,
            score,
            decision: score >= threshold,
            threshold: Some(threshold),
            gate_name: gate_name.to_string(),
            unparsed: false,
        }
    }

    pub fn key(&self) -> TurnKey {
        TurnKey::new(self.dialogue_id.clone(), self.turn_index)
    }

    /// One line of the prediction exchange format: `dialogue_id \t turn_index \t decision \t score`.
    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}",
            self.dialogue_id, self.turn_index, self.decision, self.score
        )
    }

    pub fn is_consistent(&self) -> bool {
        self.threshold
            .is_none_or(|t| self.decision == (self.score >= t))
    }
}
