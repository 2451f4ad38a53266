pub mod bench;
pub mod configspace;
pub mod engine;
pub mod glicko2;
pub mod hpo;
pub mod llm;
pub mod prompts;
pub mod sandbox;
pub mod store;
