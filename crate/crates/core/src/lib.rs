//! Adaptive retrieval-augmented generation gating for task-oriented dialogue.

pub mod corpus;
pub mod decision;
pub mod gate_exchange;
pub mod gate_mha;
pub mod gate_prompt;
pub mod http;
pub mod metrics;
pub mod orchestrator;
pub mod retrieval;
