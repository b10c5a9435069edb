use serde::{Deserialize, Serialize};

use super::MhaError;

/// How context and retrieved knowledge enter the attention layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Self-attention over the context alone.
    ContextOnly,
    /// Self-attention over `context ⊕ [SEP] ⊕ knowledge`.
    Concat,
    /// Context tokens query a fixed knowledge memory in every layer.
    CrossAttention,
}

impl FusionMode {
    pub fn needs_knowledge(self) -> bool {
        self != FusionMode::ContextOnly
    }

    pub fn label(self) -> &'static str {
        match self {
            FusionMode::ContextOnly => "contx",
            FusionMode::Concat => "contx+know",
            FusionMode::CrossAttention => "contx*know",
        }
    }
}

impl std::str::FromStr for FusionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "context_only" | "contx" => Ok(FusionMode::ContextOnly),
            "concat" => Ok(FusionMode::Concat),
            "cross_attention" | "cross" => Ok(FusionMode::CrossAttention),
            other => Err(format!(
                "unknown fusion mode `{other}` (expected context_only, concat or cross_attention)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MhaGateConfig {
    pub n_heads: usize,
    pub n_layers: usize,
    pub emb_dim: usize,
    /// Hidden width of the feed-forward sublayer.
    pub ffn_dim: usize,
    pub max_seq_len: usize,
    pub fusion_mode: FusionMode,
    pub vocab_size: usize,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl MhaGateConfig {
    pub fn new(n_heads: usize, n_layers: usize, emb_dim: usize, vocab_size: usize) -> Self {
        Self {
            n_heads,
            n_layers,
            emb_dim,
            ffn_dim: 4 * emb_dim,
            max_seq_len: 512,
            fusion_mode: FusionMode::ContextOnly,
            vocab_size,
            dropout_rate: 0.1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), MhaError> {
        let bad = |m: String| Err(MhaError::Config(m));
        if self.emb_dim == 0 || !self.emb_dim.is_multiple_of(2) {
            return Err(MhaError::OddEmbeddingDim(self.emb_dim));
        }
        if self.n_heads == 0 || !self.emb_dim.is_multiple_of(self.n_heads) {
            return bad(format!(
                "emb_dim {} is not divisible by n_heads {}",
                self.emb_dim, self.n_heads
            ));
        }
        if self.max_seq_len == 0 {
            return bad("max_seq_len must be at least 1".into());
        }
        if self.ffn_dim == 0 {
            return bad("ffn_dim must be at least 1".into());
        }
        if self.vocab_size < super::vocab::RESERVED {
            return bad(format!(
                "vocab_size {} leaves no room for the reserved ids",
                self.vocab_size
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.emb_dim / self.n_heads
    }

    /// Whether the configuration lies inside the explored architecture grid.
    pub fn in_search_space(&self) -> bool {
        [2, 4].contains(&self.n_heads)
            && (2..=8).contains(&self.n_layers)
            && [64, 128, 256].contains(&self.emb_dim)
    }

    /// Short label such as `MHA(contx)-h(4)-l(5)-emb(64)`.
    pub fn label(&self) -> String {
        format!(
            "MHA({})-h({})-l({})-emb({})",
            self.fusion_mode.label(),
            self.n_heads,
            self.n_layers,
            self.emb_dim
        )
    }

    pub fn n_parameters(&self) -> usize {
        let d = self.emb_dim;
        let f = self.ffn_dim;
        let per_layer = 4 * d * d + 2 * d * f + f + d + 4 * d;
        self.vocab_size * d + self.n_layers * per_layer + 2 * d + 2
    }
}

/// Layers 2–8 × heads {2, 4} × embedding {64, 128, 256}; other fields copied from `base`.
pub fn architecture_grid(base: &MhaGateConfig) -> Vec<MhaGateConfig> {
    let mut grid = Vec::with_capacity(42);
    for n_layers in 2..=8 {
        for n_heads in [2, 4] {
            for emb_dim in [64, 128, 256] {
                grid.push(MhaGateConfig {
                    n_heads,
                    n_layers,
                    emb_dim,
                    ffn_dim: 4 * emb_dim,
                    ..base.clone()
                });
            }
        }
    }
    grid
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeighting {
    None,
    InverseFrequency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdPolicy {
    #[serde(rename = "fixed_0_5")]
    Fixed,
    DevF1Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub class_weighting: ClassWeighting,
    pub threshold_policy: ThresholdPolicy,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 30,
            early_stop_patience: 3,
            class_weighting: ClassWeighting::InverseFrequency,
            threshold_policy: ThresholdPolicy::DevF1Max,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), MhaError> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(MhaError::Config(format!(
                "learning_rate {} must be a finite non-negative number",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(MhaError::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}
