pub mod dataset;
pub mod embeddings;
pub mod evalharness;
pub mod formulas;
pub mod llm_client;
pub mod ranker;
pub mod sexpr;
pub mod sygus;
pub mod verifier;
