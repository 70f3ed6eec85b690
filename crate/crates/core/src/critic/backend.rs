//! Chat-style text backends: a message list goes in, a reply comes out.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

/// Which model slot a request goes to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Slot {
    /// Free-text reasoning queries (gripper and action selection).
    Selection,
    /// Turning a free-text answer into JSON.
    Summarization,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub slot: Slot,
    pub messages: Vec<Message>,
    pub temperature: f64,
}

impl ChatRequest {
    /// Stable digest of the conversation, used to key recorded replies.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&(self.slot, &self.messages)).expect("messages serialize"));
        hex::encode(h.finalize())
    }
}

pub trait ChatBackend: Send + Sync {
    fn id(&self) -> String;
    fn complete(&self, request: &ChatRequest) -> Result<String>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for &B {
    fn id(&self) -> String {
        (**self).id()
    }

    fn complete(&self, request: &ChatRequest) -> Result<String> {
        (**self).complete(request)
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for Arc<B> {
    fn id(&self) -> String {
        (**self).id()
    }

    fn complete(&self, request: &ChatRequest) -> Result<String> {
        (**self).complete(request)
    }
}

/// Replies from a fixed script, in call order. Used for fault injection:
/// script malformed replies followed by a valid one.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    replies: Mutex<VecDeque<String>>,
    seen: Mutex<Vec<ChatRequest>>,
}

impl ScriptedBackend {
    pub fn new<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self { replies: Mutex::new(replies.into_iter().map(Into::into).collect()), seen: Mutex::new(Vec::new()) }
    }

    /// Every request received so far.
    pub fn requests(&self) -> Vec<ChatRequest> {
        self.seen.lock().expect("scripted backend lock").clone()
    }

    pub fn remaining(&self) -> usize {
        self.replies.lock().expect("scripted backend lock").len()
    }
}

impl ChatBackend for ScriptedBackend {
    fn id(&self) -> String {
        "scripted".to_string()
    }

    fn complete(&self, request: &ChatRequest) -> Result<String> {
        self.seen.lock().expect("scripted backend lock").push(request.clone());
        self.replies
            .lock()
            .expect("scripted backend lock")
            .pop_front()
            .ok_or_else(|| CoreError::Backend("scripted backend has no replies left".to_string()))
    }
}

/// How a recorded reply is matched to a request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplayKey {
    /// Exact conversation digest (see [`ChatRequest::digest`]).
    Sha256(String),
    /// Substring of the first user message plus the number of messages in
    /// the conversation; robust to template edits elsewhere.
    Contains { text: String, turn: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub slot: Slot,
    pub key: ReplayKey,
    pub reply: String,
}

/// Answers from a recorded transcript.
#[derive(Debug, Clone, Default)]
pub struct ReplayBackend {
    entries: Vec<ReplayEntry>,
}

impl ReplayBackend {
    pub fn new(entries: Vec<ReplayEntry>) -> Self {
        Self { entries }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut entries = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if !line.trim().is_empty() {
                entries.push(serde_json::from_str(&line)?);
            }
        }
        Ok(Self { entries })
    }

    fn matches(entry: &ReplayEntry, request: &ChatRequest, digest: &str) -> bool {
        if entry.slot != request.slot {
            return false;
        }
        match &entry.key {
            ReplayKey::Sha256(h) => h == digest,
            ReplayKey::Contains { text, turn } => {
                *turn == request.messages.len()
                    && request.messages.iter().find(|m| m.role == Role::User).is_some_and(|m| m.content.contains(text))
            }
        }
    }
}

impl ChatBackend for ReplayBackend {
    fn id(&self) -> String {
        "replay".to_string()
    }

    fn complete(&self, request: &ChatRequest) -> Result<String> {
        let digest = request.digest();
        self.entries
            .iter()
            .find(|e| Self::matches(e, request, &digest))
            .map(|e| e.reply.clone())
            .ok_or_else(|| CoreError::Backend(format!("no recorded reply for request {digest}")))
    }
}

/// Records every exchange of an inner backend as replay entries.
pub struct RecordingBackend<B> {
    inner: B,
    entries: Mutex<Vec<ReplayEntry>>,
}

impl<B: ChatBackend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self { inner, entries: Mutex::new(Vec::new()) }
    }

    pub fn entries(&self) -> Vec<ReplayEntry> {
        self.entries.lock().expect("recording lock").clone()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for e in self.entries() {
            serde_json::to_writer(&mut w, &e)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }
}

impl<B: ChatBackend> ChatBackend for RecordingBackend<B> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn complete(&self, request: &ChatRequest) -> Result<String> {
        let reply = self.inner.complete(request)?;
        self.entries.lock().expect("recording lock").push(ReplayEntry {
            slot: request.slot,
            key: ReplayKey::Sha256(request.digest()),
            reply: reply.clone(),
        });
        Ok(reply)
    }
}

/// Counts requests per slot on the way through to an inner backend.
pub struct CountingBackend<B> {
    inner: B,
    selection: AtomicUsize,
    summarization: AtomicUsize,
}

impl<B: ChatBackend> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self { inner, selection: AtomicUsize::new(0), summarization: AtomicUsize::new(0) }
    }

    pub fn selection_calls(&self) -> usize {
        self.selection.load(Ordering::SeqCst)
    }

    pub fn summarization_calls(&self) -> usize {
        self.summarization.load(Ordering::SeqCst)
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: ChatBackend> ChatBackend for CountingBackend<B> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn complete(&self, request: &ChatRequest) -> Result<String> {
        match request.slot {
            Slot::Selection => self.selection.fetch_add(1, Ordering::SeqCst),
            Slot::Summarization => self.summarization.fetch_add(1, Ordering::SeqCst),
        };
        self.inner.complete(request)
    }
}

/// One logged request/response pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub backend: String,
    pub context: String,
    pub request: ChatRequest,
    pub reply: std::result::Result<String, String>,
}

/// Append-only line-delimited JSON log shared by concurrent workers; one
/// writer lock serializes records.
#[derive(Clone)]
pub struct TranscriptLog {
    sink: Arc<Mutex<Box<dyn Write + Send>>>,
}

impl TranscriptLog {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self::from_writer(BufWriter::new(file)))
    }

    pub fn from_writer(w: impl Write + Send + 'static) -> Self {
        Self { sink: Arc::new(Mutex::new(Box::new(w))) }
    }

    pub fn append(&self, record: &TranscriptRecord) -> Result<()> {
        let mut line = serde_json::to_vec(record)?;
        line.push(b'\n');
        let mut sink = self.sink.lock().expect("transcript lock");
        sink.write_all(&line)?;
        sink.flush()?;
        Ok(())
    }
}

/// Wraps a backend so every exchange is appended to a transcript log.
pub struct LoggingBackend<B> {
    inner: B,
    log: TranscriptLog,
    context: String,
}

impl<B: ChatBackend> LoggingBackend<B> {
    pub fn new(inner: B, log: TranscriptLog, context: impl Into<String>) -> Self {
        Self { inner, log, context: context.into() }
    }
}

impl<B: ChatBackend> ChatBackend for LoggingBackend<B> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn complete(&self, request: &ChatRequest) -> Result<String> {
        let reply = self.inner.complete(request);
        self.log.append(&TranscriptRecord {
            backend: self.inner.id(),
            context: self.context.clone(),
            request: request.clone(),
            reply: reply.as_ref().map(Clone::clone).map_err(|e| e.to_string()),
        })?;
        reply
    }
}

#[cfg(feature = "remote")]
pub use remote::{RemoteBackend, RemoteConfig};

#[cfg(feature = "remote")]
mod remote {
    use std::sync::{Condvar, Mutex};
    use std::time::Duration;

    use serde::{Deserialize, Serialize};

    use super::{ChatBackend, ChatRequest, Slot};
    use crate::error::{CoreError, Result};

    pub const API_KEY_ENV: &str = "OLAF_API_KEY";

    /// Settings of an HTTP chat-completions endpoint.
    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    #[serde(default)]
    pub struct RemoteConfig {
        pub base_url: String,
        pub selection_model: String,
        pub summarization_model: String,
        pub temperature: f64,
        pub timeout_secs: u64,
        /// Extra attempts after a transport failure.
        pub max_retries: u32,
        /// Upper bound on requests in flight at once.
        pub concurrency: usize,
        /// Environment variable holding the API key.
        pub api_key_env: String,
    }

    impl Default for RemoteConfig {
        fn default() -> Self {
            Self {
                base_url: "http://127.0.0.1:8000/v1".to_string(),
                selection_model: "gpt-4".to_string(),
                summarization_model: "gpt-3.5-turbo".to_string(),
                temperature: 0.5,
                timeout_secs: 60,
                max_retries: 2,
                concurrency: 4,
                api_key_env: API_KEY_ENV.to_string(),
            }
        }
    }

    #[derive(Serialize)]
    struct Body<'a> {
        model: &'a str,
        messages: &'a [super::Message],
        temperature: f64,
    }

    #[derive(Deserialize)]
    struct Reply {
        choices: Vec<Choice>,
    }

    #[derive(Deserialize)]
    struct Choice {
        message: ReplyMessage,
    }

    #[derive(Deserialize)]
    struct ReplyMessage {
        content: String,
    }

    /// Client for any server speaking the chat-completions protocol.
    pub struct RemoteBackend {
        cfg: RemoteConfig,
        agent: ureq::Agent,
        api_key: Option<String>,
        in_flight: Mutex<usize>,
        slot_free: Condvar,
    }

    impl RemoteBackend {
        pub fn new(cfg: RemoteConfig) -> Result<Self> {
            if cfg.concurrency == 0 {
                return Err(CoreError::Parameter("remote concurrency must be positive".into()));
            }
            let agent: ureq::Agent = ureq::Agent::config_builder()
                .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
                .build()
                .into();
            let api_key = std::env::var(&cfg.api_key_env).ok();
            Ok(Self { cfg, agent, api_key, in_flight: Mutex::new(0), slot_free: Condvar::new() })
        }

        pub fn config(&self) -> &RemoteConfig {
            &self.cfg
        }

        fn once(&self, request: &ChatRequest) -> Result<String> {
            let model = match request.slot {
                Slot::Selection => &self.cfg.selection_model,
                Slot::Summarization => &self.cfg.summarization_model,
            };
            let url = format!("{}/chat/completions", self.cfg.base_url.trim_end_matches('/'));
            let mut req = self.agent.post(&url);
            if let Some(key) = &self.api_key {
                req = req.header("Authorization", &format!("Bearer {key}"));
            }
            let body = Body { model, messages: &request.messages, temperature: request.temperature };
            let mut resp = req.send_json(&body).map_err(|e| CoreError::Backend(format!("POST {url}: {e}")))?;
            let reply: Reply =
                resp.body_mut().read_json().map_err(|e| CoreError::Backend(format!("reply from {url}: {e}")))?;
            reply
                .choices
                .into_iter()
                .next()
                .map(|c| c.message.content)
                .ok_or_else(|| CoreError::Backend(format!("reply from {url} has no choices")))
        }
    }

    impl ChatBackend for RemoteBackend {
        fn id(&self) -> String {
            format!("remote:{}", self.cfg.selection_model)
        }

        fn complete(&self, request: &ChatRequest) -> Result<String> {
            {
                let mut n = self.in_flight.lock().expect("remote lock");
                while *n >= self.cfg.concurrency {
                    n = self.slot_free.wait(n).expect("remote lock");
                }
                *n += 1;
            }
            let mut result = self.once(request);
            for attempt in 0..self.cfg.max_retries {
                if result.is_ok() {
                    break;
                }
                log::warn!("remote request failed (retry {}): {:?}", attempt + 1, result.as_ref().err());
                result = self.once(request);
            }
            *self.in_flight.lock().expect("remote lock") -= 1;
            self.slot_free.notify_one();
            result
        }
    }
}
