//! Strategy-text producers behind one async trait.

mod heuristic;
mod remote;
mod replay;

use std::hash::Hasher;
use std::path::PathBuf;
use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

pub use heuristic::HeuristicStrategist;
pub use remote::{RemoteBackend, DEFAULT_API_KEY_ENV};
pub use replay::{read_transcript, RecordingBackend, ReplayBackend, TranscriptEntry};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InferenceError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("authentication: {0}")]
    Auth(String),
    #[error("transcript exhausted after {0} entries")]
    TranscriptExhausted(usize),
    #[error("transcript entry {index} was recorded for prompt {expected}, got {actual}")]
    TranscriptMismatch {
        index: usize,
        expected: String,
        actual: String,
    },
    #[error("i/o: {0}")]
    Io(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("heuristic could not read the prompt: {0}")]
    Prompt(String),
}

#[async_trait]
pub trait StrategyBackend: Send + Sync {
    /// Full response text for one prompt.
    async fn infer(&self, prompt: &str) -> Result<String, InferenceError>;

    fn describe(&self) -> String;
}

#[async_trait]
impl<T: StrategyBackend + ?Sized> StrategyBackend for Arc<T> {
    async fn infer(&self, prompt: &str) -> Result<String, InferenceError> {
        (**self).infer(prompt).await
    }

    fn describe(&self) -> String {
        (**self).describe()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct InferenceParams {
    pub model: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub stream: bool,
}

impl Default for InferenceParams {
    fn default() -> Self {
        Self {
            model: "llama-3.1-70b-instruct".into(),
            temperature: 0.2,
            top_p: 0.7,
            max_tokens: 1024,
            stream: true,
        }
    }
}

impl InferenceParams {
    pub fn validate(&self) -> Result<(), InferenceError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(InferenceError::Config(format!("temperature {} not in [0, 2]", self.temperature)));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(InferenceError::Config(format!("topP {} not in (0, 1]", self.top_p)));
        }
        if self.max_tokens < 1 {
            return Err(InferenceError::Config("maxTokens must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackendKind {
    Remote {
        endpoint: String,
        params: InferenceParams,
        /// Name of the environment variable holding the bearer token.
        api_key_env: String,
    },
    Heuristic {
        floor_dbm: f64,
    },
    Replay {
        transcript: PathBuf,
    },
}

pub fn build_backend(kind: &BackendKind) -> Result<Arc<dyn StrategyBackend>, InferenceError> {
    Ok(match kind {
        BackendKind::Remote {
            endpoint,
            params,
            api_key_env,
        } => Arc::new(RemoteBackend::new(endpoint.clone(), params.clone(), api_key_env.clone())?),
        BackendKind::Heuristic { floor_dbm } => Arc::new(HeuristicStrategist::new(*floor_dbm)),
        BackendKind::Replay { transcript } => Arc::new(ReplayBackend::open(transcript)?),
    })
}

/// 64-bit FNV-1a of the prompt bytes as 16 hex digits.
pub fn prompt_hash(prompt: &str) -> String {
    let mut h = fnv::FnvHasher::default();
    h.write(prompt.as_bytes());
    format!("{:016x}", h.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_params() {
        let p = InferenceParams::default();
        assert_eq!(p.model, "llama-3.1-70b-instruct");
        assert_eq!((p.temperature, p.top_p, p.max_tokens, p.stream), (0.2, 0.7, 1024, true));
        p.validate().unwrap();
        assert!(InferenceParams { top_p: 0.0, ..p.clone() }.validate().is_err());
        assert!(InferenceParams { temperature: 2.5, ..p.clone() }.validate().is_err());
        assert!(InferenceParams { max_tokens: 0, ..p }.validate().is_err());
    }

    #[test]
    fn fnv1a_reference_vectors() {
        assert_eq!(prompt_hash(""), "cbf29ce484222325");
        assert_eq!(prompt_hash("a"), "af63dc4c8601ec8c");
        assert_eq!(prompt_hash("foobar"), "85944171f73967e8");
    }
}
