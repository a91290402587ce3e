//! Evaluation harness for episodic benchmarks driven by remote policy
//! servers over a msgpack/WebSocket protocol.

pub mod benchmark;
pub mod cli;
pub mod config;
pub mod leaderboard;
pub mod model_server;
pub mod orchestrator;
pub mod par;
pub mod protocol;
pub mod runner;
pub mod throughput;
pub mod util;
