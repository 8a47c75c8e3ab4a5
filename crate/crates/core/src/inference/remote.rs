use std::time::Duration;

use async_trait::async_trait;
use futures::StreamExt;
use serde_json::{json, Value};
use tracing::warn;

use super::{InferenceError, InferenceParams, StrategyBackend};

pub const DEFAULT_API_KEY_ENV: &str = "NVIDIA_API_KEY";

const MAX_RETRIES: u32 = 2;

/// OpenAI-style chat-completions client with SSE streaming.
#[derive(Debug, Clone)]
pub struct RemoteBackend {
    http: reqwest::Client,
    endpoint: String,
    params: InferenceParams,
    api_key_env: String,
    backoff: Duration,
}

impl RemoteBackend {
    pub fn new(endpoint: String, params: InferenceParams, api_key_env: String) -> Result<Self, InferenceError> {
        params.validate()?;
        reqwest::Url::parse(&endpoint).map_err(|e| InferenceError::Config(format!("endpoint {endpoint:?}: {e}")))?;
        let http = reqwest::Client::builder()
            .connect_timeout(Duration::from_secs(10))
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| InferenceError::Config(e.to_string()))?;
        Ok(Self {
            http,
            endpoint,
            params,
            api_key_env,
            backoff: Duration::from_millis(500),
        })
    }

    /// Base delay before the first retry; doubles on each further retry.
    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn request_body(&self, prompt: &str) -> Value {
        json!({
            "model": self.params.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.params.temperature,
            "top_p": self.params.top_p,
            "max_tokens": self.params.max_tokens,
            "stream": self.params.stream,
        })
    }

    async fn attempt(&self, key: &str, body: &Value) -> Result<String, InferenceError> {
        let resp = self
            .http
            .post(&self.endpoint)
            .bearer_auth(key)
            .json(body)
            .send()
            .await
            .map_err(|e| InferenceError::Transport(e.to_string()))?;
        let status = resp.status();
        if status == reqwest::StatusCode::UNAUTHORIZED || status == reqwest::StatusCode::FORBIDDEN {
            return Err(InferenceError::Auth(format!("endpoint answered {status}")));
        }
        if !status.is_success() {
            return Err(InferenceError::Transport(format!("endpoint answered {status}")));
        }
        if self.params.stream {
            read_sse(resp).await
        } else {
            let v: Value = resp.json().await.map_err(|e| InferenceError::Transport(e.to_string()))?;
            v.pointer("/choices/0/message/content")
                .and_then(Value::as_str)
                .map(str::to_owned)
                .ok_or_else(|| InferenceError::Transport("response has no choices[0].message.content".into()))
        }
    }
}

async fn read_sse(resp: reqwest::Response) -> Result<String, InferenceError> {
    let mut text = String::new();
    let mut buf: Vec<u8> = Vec::new();
    let mut stream = resp.bytes_stream();
    while let Some(chunk) = stream.next().await {
        buf.extend_from_slice(&chunk.map_err(|e| InferenceError::Transport(e.to_string()))?);
        while let Some(nl) = buf.iter().position(|&b| b == b'\n') {
            let line: Vec<u8> = buf.drain(..=nl).collect();
            let line = String::from_utf8_lossy(&line);
            let Some(data) = line.trim().strip_prefix("data:") else {
                continue;
            };
            let data = data.trim();
            if data == "[DONE]" {
                return Ok(text);
            }
            let v: Value = serde_json::from_str(data)
                .map_err(|e| InferenceError::Transport(format!("bad stream event: {e}")))?;
            if let Some(delta) = v.pointer("/choices/0/delta/content").and_then(Value::as_str) {
                text.push_str(delta);
            }
        }
    }
    Ok(text)
}

#[async_trait]
impl StrategyBackend for RemoteBackend {
    async fn infer(&self, prompt: &str) -> Result<String, InferenceError> {
        let key = std::env::var(&self.api_key_env)
            .map_err(|_| InferenceError::Auth(format!("environment variable {} is not set", self.api_key_env)))?;
        let body = self.request_body(prompt);
        let mut retry = 0;
        loop {
            match self.attempt(&key, &body).await {
                Err(InferenceError::Transport(e)) if retry < MAX_RETRIES => {
                    let delay = self.backoff * 2u32.pow(retry);
                    warn!("inference call failed ({e}); retrying in {delay:?}");
                    tokio::time::sleep(delay).await;
                    retry += 1;
                }
                other => return other,
            }
        }
    }

    fn describe(&self) -> String {
        format!("remote({} {})", self.endpoint, self.params.model)
    }
}
