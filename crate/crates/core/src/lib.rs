pub mod agents;
pub mod chunker;
pub mod config;
pub mod corpus;
pub mod embed;
pub mod engine;
pub mod eval;
pub mod http;
pub mod index;
pub mod ingest;
pub mod llm;
pub mod router;
pub mod service;
pub mod text;
