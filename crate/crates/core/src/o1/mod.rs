//! O1-style management interface: NETCONF `get-config` / `edit-config`
//! semantics and pushed PM reports over newline-delimited JSON.

mod client;
mod proxy;
mod server;
pub mod wire;

use thiserror::Error;

pub use client::{O1Client, PmSubscription, DEFAULT_REQUEST_TIMEOUT};
pub use proxy::CountingProxy;
pub use server::{serve, Pacing, ServerHandle};
pub use wire::{ErrorCode, MessageKind, WireMessage};

#[derive(Debug, Error)]
pub enum O1Error {
    #[error("cannot bind endpoint: {0}")]
    Bind(std::io::Error),
    #[error("cannot connect: {0}")]
    Connect(std::io::Error),
    #[error("request timed out")]
    Timeout,
    #[error("remote error {code}: {message}")]
    Remote { code: ErrorCode, message: String },
    #[error("connection closed")]
    Disconnected,
    #[error("i/o error: {0}")]
    Io(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
}

impl O1Error {
    /// Timeouts are worth another iteration; everything else means the
    /// wiring itself is broken or the request was rejected.
    pub fn is_retryable(&self) -> bool {
        matches!(self, O1Error::Timeout)
    }
}
