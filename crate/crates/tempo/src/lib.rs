//! Std side of tempo: MCP stdio client and pool, simulated tool servers,
//! discovery cache, DAG executor, the query pipeline and the evaluation
//! harness.

pub mod clock;
pub mod config;
pub mod discovery;
pub mod executor;
pub mod harness;
pub mod http;
pub mod mcpio;
pub mod pipeline;

pub use tempo_core as core;
