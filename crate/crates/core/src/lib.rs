//! Iterative repair of faulty Alloy specifications with LLM agents.

pub mod analyzer;
pub mod corpus;
pub mod eval;
pub mod llm;
pub mod orchestrator;
pub mod protocol;
