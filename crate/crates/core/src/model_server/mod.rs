//! Hosts a policy behind the wire protocol: blocking predict, chunk
//! buffering with ensembling, and cross-connection request batching.

mod batch;
mod config;
pub mod ensemble;
pub mod policy;
mod server;
mod types;

pub use batch::{predict_batch, BatchQueue, EngineStats, InferenceEngine, PredictRequest, QueueClosed, Reply};
pub use config::ModelServerConfig;
pub use ensemble::{ensemble_action, ChunkBuffer, EnsembleError, EnsembleStrategy};
pub use policy::{ModelFailure, Policy, PolicyConfig, PredictInput};
pub use server::{serve, serve_with_policy, ServeError, ServerHandle};
pub use types::{ActionChunk, ChunkError, Image, ObservationPayload, PredictContext};
