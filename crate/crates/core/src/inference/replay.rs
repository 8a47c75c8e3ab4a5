use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{prompt_hash, InferenceError, StrategyBackend};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TranscriptEntry {
    pub prompt_hash: String,
    pub prompt: String,
    pub response: String,
}

pub fn read_transcript(path: impl AsRef<Path>) -> Result<Vec<TranscriptEntry>, InferenceError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| InferenceError::Io(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| InferenceError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line)
            .map_err(|e| InferenceError::Io(format!("{} line {}: {e}", path.display(), i + 1)))?;
        out.push(entry);
    }
    Ok(out)
}

/// Serves recorded responses in order, refusing prompts whose hash differs
/// from the recording.
#[derive(Debug)]
pub struct ReplayBackend {
    source: String,
    entries: Vec<TranscriptEntry>,
    cursor: Mutex<usize>,
}

impl ReplayBackend {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, InferenceError> {
        let entries = read_transcript(&path)?;
        Ok(Self {
            source: path.as_ref().display().to_string(),
            entries,
            cursor: Mutex::new(0),
        })
    }

    pub fn from_entries(entries: Vec<TranscriptEntry>) -> Self {
        Self {
            source: "memory".into(),
            entries,
            cursor: Mutex::new(0),
        }
    }

    /// Entries served so far.
    pub fn position(&self) -> usize {
        *self.cursor.lock().unwrap()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[async_trait]
impl StrategyBackend for ReplayBackend {
    async fn infer(&self, prompt: &str) -> Result<String, InferenceError> {
        let mut cursor = self.cursor.lock().unwrap();
        let entry = self
            .entries
            .get(*cursor)
            .ok_or(InferenceError::TranscriptExhausted(self.entries.len()))?;
        let actual = prompt_hash(prompt);
        if entry.prompt_hash != actual {
            return Err(InferenceError::TranscriptMismatch {
                index: *cursor,
                expected: entry.prompt_hash.clone(),
                actual,
            });
        }
        *cursor += 1;
        Ok(entry.response.clone())
    }

    fn describe(&self) -> String {
        format!("replay({})", self.source)
    }
}

/// Wraps a backend and appends every exchange to a transcript file.
pub struct RecordingBackend {
    inner: Arc<dyn StrategyBackend>,
    path: PathBuf,
    sink: Mutex<File>,
}

impl RecordingBackend {
    /// Creates (or truncates) the transcript at `path` right away, so a run
    /// without inference still leaves a valid empty transcript.
    pub fn create(inner: Arc<dyn StrategyBackend>, path: impl AsRef<Path>) -> Result<Self, InferenceError> {
        let path = path.as_ref().to_path_buf();
        let sink = File::create(&path).map_err(|e| InferenceError::Io(format!("{}: {e}", path.display())))?;
        Ok(Self {
            inner,
            path,
            sink: Mutex::new(sink),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

#[async_trait]
impl StrategyBackend for RecordingBackend {
    async fn infer(&self, prompt: &str) -> Result<String, InferenceError> {
        let response = self.inner.infer(prompt).await?;
        let entry = TranscriptEntry {
            prompt_hash: prompt_hash(prompt),
            prompt: prompt.to_string(),
            response: response.clone(),
        };
        let mut line = serde_json::to_string(&entry).expect("transcript entry serializes");
        line.push('\n');
        let mut sink = self.sink.lock().unwrap();
        sink.write_all(line.as_bytes())
            .and_then(|_| sink.flush())
            .map_err(|e| InferenceError::Io(e.to_string()))?;
        Ok(response)
    }

    fn describe(&self) -> String {
        format!("recording({} -> {})", self.inner.describe(), self.path.display())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Echo;

    #[async_trait]
    impl StrategyBackend for Echo {
        async fn infer(&self, prompt: &str) -> Result<String, InferenceError> {
            Ok(format!("echo:{prompt}"))
        }

        fn describe(&self) -> String {
            "echo".into()
        }
    }

    #[tokio::test]
    async fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let rec = RecordingBackend::create(Arc::new(Echo), &path).unwrap();
        assert!(read_transcript(&path).unwrap().is_empty());
        let prompts: Vec<String> = (0..5).map(|i| format!("prompt {i}")).collect();
        let mut originals = Vec::new();
        for p in &prompts {
            originals.push(rec.infer(p).await.unwrap());
        }
        let replay = ReplayBackend::open(&path).unwrap();
        assert_eq!(replay.len(), 5);
        for (p, o) in prompts.iter().zip(&originals) {
            assert_eq!(&replay.infer(p).await.unwrap(), o);
        }
        assert_eq!(replay.infer("prompt 5").await, Err(InferenceError::TranscriptExhausted(5)));
    }

    #[tokio::test]
    async fn modified_prompt_is_a_mismatch() {
        let replay = ReplayBackend::from_entries(vec![TranscriptEntry {
            prompt_hash: prompt_hash("original"),
            prompt: "original".into(),
            response: "r".into(),
        }]);
        assert!(matches!(
            replay.infer("edited").await,
            Err(InferenceError::TranscriptMismatch { index: 0, .. })
        ));
        assert_eq!(replay.position(), 0);
        assert_eq!(replay.infer("original").await.unwrap(), "r");
    }

    #[test]
    fn missing_transcript_is_io_error() {
        assert!(matches!(ReplayBackend::open("/nonexistent/t.jsonl"), Err(InferenceError::Io(_))));
    }
}
