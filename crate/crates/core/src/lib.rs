//! Core building blocks of the clinserve model-serving stack.
//!
//! Everything here is transport-agnostic: the versioned model registry and
//! its deterministic lexicon model, the dynamic batching engine, PHI
//! de-identification and text normalization, the autoscaler control law and
//! its simulator, and the wire types shared by the HTTP and framed-RPC
//! listeners.

pub mod autoscaler;
pub mod batching;
pub mod config;
pub mod model;
pub mod phi;
pub mod wire;

pub use batching::{BatchPolicy, Engine, EngineError};
pub use model::{CostModel, ModelDescriptor, ModelRegistry, SentimentOutput};
pub use phi::{NormalizedInput, PhiSpan, Scrubber};
