//! Deterministic scripted backend for offline runs and tests.
//!
//! A script maps a request tag to an ordered list of canned responses; each
//! request consumes the next response for its tag. Consumption is serialized
//! per tag, so concurrent callers still observe the scripted order.
//!
//! Failure injection: a response equal to `%TRANSIENT%` simulates a transient
//! transport failure, and `%PERMANENT:<status>%` a permanent protocol error.
//! This is how retry behavior is exercised without a network.

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{CompletionRequest, Transport, TransportError};

pub const TRANSIENT_DIRECTIVE: &str = "%TRANSIENT%";
const PERMANENT_PREFIX: &str = "%PERMANENT:";

/// Tag → ordered responses. `BTreeMap` keeps serialization deterministic.
#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Script(pub BTreeMap<String, Vec<String>>);

impl Script {
    pub fn new() -> Self {
        Script(BTreeMap::new())
    }

    /// Append responses to a tag's queue, creating the tag when new.
    pub fn push(&mut self, tag: &str, response: impl Into<String>) {
        self.0.entry(tag.to_string()).or_default().push(response.into());
    }

    pub fn extend_from(&mut self, other: Script) {
        for (tag, responses) in other.0 {
            self.0.entry(tag).or_default().extend(responses);
        }
    }

    /// Load a script file: a JSON object mapping tag → array of strings.
    pub fn from_path(path: &Path) -> Result<Self, std::io::Error> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn to_path(&self, path: &Path) -> Result<(), std::io::Error> {
        let text = serde_json::to_string_pretty(self).expect("script serializes");
        fs::write(path, text)
    }
}

/// A chat request as observed by the scripted backend; used by tests to
/// assert on assembled prompts.
#[derive(Debug, Clone)]
pub struct RecordedRequest {
    pub tag: String,
    pub model_id: String,
    pub temperature: f64,
    pub system: String,
    pub user: String,
}

pub struct ScriptedBackend {
    tags: Mutex<BTreeMap<String, VecDeque<String>>>,
    log: Mutex<Vec<RecordedRequest>>,
    embed_dim: usize,
    /// Artificial per-call latency in ms; lets tests observe real overlap
    /// under the gateway's concurrency bound.
    call_delay_ms: AtomicU64,
}

impl ScriptedBackend {
    pub fn new(script: Script, embed_dim: usize) -> Self {
        ScriptedBackend {
            tags: Mutex::new(
                script
                    .0
                    .into_iter()
                    .map(|(k, v)| (k, VecDeque::from(v)))
                    .collect(),
            ),
            log: Mutex::new(Vec::new()),
            embed_dim,
            call_delay_ms: AtomicU64::new(0),
        }
    }

    pub fn recorded_requests(&self) -> Vec<RecordedRequest> {
        self.log.lock().unwrap().clone()
    }

    /// Remaining responses for a tag (0 when exhausted or unknown).
    pub fn remaining(&self, tag: &str) -> usize {
        self.tags.lock().unwrap().get(tag).map_or(0, |q| q.len())
    }

    pub fn set_call_delay(&self, delay: Duration) {
        self.call_delay_ms.store(delay.as_millis() as u64, Ordering::SeqCst);
    }

    fn simulate_latency(&self) {
        let ms = self.call_delay_ms.load(Ordering::SeqCst);
        if ms > 0 {
            std::thread::sleep(Duration::from_millis(ms));
        }
    }
}

impl Transport for ScriptedBackend {
    fn chat(&self, request: &CompletionRequest) -> Result<String, TransportError> {
        self.simulate_latency();
        let response = {
            let mut tags = self.tags.lock().unwrap();
            let queue = tags
                .get_mut(&request.tag)
                .ok_or_else(|| TransportError::ScriptExhausted(request.tag.clone()))?;
            queue
                .pop_front()
                .ok_or_else(|| TransportError::ScriptExhausted(request.tag.clone()))?
        };

        {
            let mut log = self.log.lock().unwrap();
            log.push(RecordedRequest {
                tag: request.tag.clone(),
                model_id: request.model_id.clone(),
                temperature: request.temperature,
                system: request.system_text(),
                user: request.user_text(),
            });
        }

        if response == TRANSIENT_DIRECTIVE {
            return Err(TransportError::Transient("scripted transient failure".to_string()));
        }
        if let Some(rest) = response.strip_prefix(PERMANENT_PREFIX) {
            let status: u16 = rest.trim_end_matches('%').parse().unwrap_or(400);
            return Err(TransportError::Permanent {
                status,
                message: "scripted permanent failure".to_string(),
            });
        }
        Ok(response)
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, TransportError> {
        self.simulate_latency();
        Ok(hash_seeded_unit_vector(text, self.embed_dim))
    }
}

/// Content-hash-seeded pseudo-random unit vector. The same text always maps
/// to the same vector; distinct texts get distinct directions, so pairwise
/// similarities carry usable structure.
pub fn hash_seeded_unit_vector(text: &str, dim: usize) -> Vec<f64> {
    let digest = Sha256::digest(text.as_bytes());
    let seed = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ChatMessage, CompletionRequest};

    fn req(tag: &str) -> CompletionRequest {
        CompletionRequest::new(
            "test-model",
            vec![ChatMessage::system("sys"), ChatMessage::user("hi")],
            0.0,
            128,
            tag,
        )
        .unwrap()
    }

    #[test]
    fn consumes_responses_in_order() {
        let mut script = Script::new();
        script.push("t", "one");
        script.push("t", "two");
        let backend = ScriptedBackend::new(script, 8);
        assert_eq!(backend.chat(&req("t")).unwrap(), "one");
        assert_eq!(backend.chat(&req("t")).unwrap(), "two");
        assert!(matches!(
            backend.chat(&req("t")),
            Err(TransportError::ScriptExhausted(t)) if t == "t"
        ));
    }

    #[test]
    fn unknown_tag_is_exhausted() {
        let backend = ScriptedBackend::new(Script::new(), 8);
        assert!(matches!(
            backend.chat(&req("missing")),
            Err(TransportError::ScriptExhausted(_))
        ));
    }

    #[test]
    fn embeddings_are_deterministic_unit_vectors() {
        let a = hash_seeded_unit_vector("same text", 32);
        let b = hash_seeded_unit_vector("same text", 32);
        assert_eq!(a, b);
        let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
        let c = hash_seeded_unit_vector("different text", 32);
        assert_ne!(a, c);
    }

    #[test]
    fn script_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut script = Script::new();
        script.push("a.b", "x");
        script.push("a.b", "y");
        script.push("c", "z");
        let path = dir.path().join("script.json");
        script.to_path(&path).unwrap();
        assert_eq!(Script::from_path(&path).unwrap(), script);
    }
}
