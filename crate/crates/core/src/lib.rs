pub mod db;
pub mod dialogue;
pub mod doc;
pub mod eval;
pub mod engine;
pub mod llm;
pub mod rules;
pub mod runner;
pub mod scenario;
pub mod sim;
