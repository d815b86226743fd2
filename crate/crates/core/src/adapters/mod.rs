//! Channels to the subject under test.
//!
//! An adapter turns one [`TestItem`] into exactly one [`ResponseRecord`].
//! Misbehaving subjects never produce an error: timeouts, transport failures
//! and refusals are recorded as the record's [`Outcome`]. The only error an
//! adapter raises is [`AdapterError::ConfigInvalid`].

mod http;
mod manual;
mod subprocess;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::battery::TestItem;
use crate::clock::{Clock, SystemClock};

pub use manual::{ConsoleTranscriber, ScriptedTranscriber, Transcriber};

/// Timeout applied when a config does not name one.
pub const DEFAULT_TIMEOUT_MS: u64 = 30_000;

/// Extra wall-clock time an adapter may take beyond its timeout to tear
/// down a request or child process.
pub const GRACE: Duration = Duration::from_millis(500);

fn default_timeout_ms() -> u64 {
    DEFAULT_TIMEOUT_MS
}

/// How to reach a subject. Serialized with a `kind` tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum AdapterConfig {
    /// POST `{"item_id","prompt","modality"}` and read `{"response"}`.
    HttpJson {
        endpoint: String,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
        #[serde(default)]
        headers: BTreeMap<String, String>,
        #[serde(default)]
        inter_item_delay_ms: u64,
    },
    /// One process per item: prompt line on stdin, response line on stdout.
    Subprocess {
        command: String,
        #[serde(default)]
        args: Vec<String>,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
        #[serde(default)]
        env: BTreeMap<String, String>,
        #[serde(default)]
        inter_item_delay_ms: u64,
    },
    /// A human operator relays prompts and types back the answers.
    ManualTranscript {
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
        #[serde(default)]
        inter_item_delay_ms: u64,
    },
}

impl AdapterConfig {
    pub fn http(endpoint: impl Into<String>) -> Self {
        AdapterConfig::HttpJson {
            endpoint: endpoint.into(),
            timeout_ms: DEFAULT_TIMEOUT_MS,
            headers: BTreeMap::new(),
            inter_item_delay_ms: 0,
        }
    }

    pub fn subprocess(command: impl Into<String>, args: &[&str]) -> Self {
        AdapterConfig::Subprocess {
            command: command.into(),
            args: args.iter().map(|a| a.to_string()).collect(),
            timeout_ms: DEFAULT_TIMEOUT_MS,
            env: BTreeMap::new(),
            inter_item_delay_ms: 0,
        }
    }

    pub fn manual() -> Self {
        AdapterConfig::ManualTranscript {
            timeout_ms: DEFAULT_TIMEOUT_MS,
            inter_item_delay_ms: 0,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            AdapterConfig::HttpJson { .. } => "HttpJson",
            AdapterConfig::Subprocess { .. } => "Subprocess",
            AdapterConfig::ManualTranscript { .. } => "ManualTranscript",
        }
    }

    pub fn timeout(&self) -> Duration {
        let ms = match self {
            AdapterConfig::HttpJson { timeout_ms, .. }
            | AdapterConfig::Subprocess { timeout_ms, .. }
            | AdapterConfig::ManualTranscript { timeout_ms, .. } => *timeout_ms,
        };
        Duration::from_millis(ms)
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        let ms = timeout.as_millis() as u64;
        match &mut self {
            AdapterConfig::HttpJson { timeout_ms, .. }
            | AdapterConfig::Subprocess { timeout_ms, .. }
            | AdapterConfig::ManualTranscript { timeout_ms, .. } => *timeout_ms = ms,
        }
        self
    }

    pub fn inter_item_delay(&self) -> Duration {
        let ms = match self {
            AdapterConfig::HttpJson {
                inter_item_delay_ms, ..
            }
            | AdapterConfig::Subprocess {
                inter_item_delay_ms, ..
            }
            | AdapterConfig::ManualTranscript {
                inter_item_delay_ms, ..
            } => *inter_item_delay_ms,
        };
        Duration::from_millis(ms)
    }

    pub fn validate(&self) -> Result<(), AdapterError> {
        if self.timeout().is_zero() {
            return Err(AdapterError::ConfigInvalid("timeout must be > 0".into()));
        }
        match self {
            AdapterConfig::HttpJson {
                endpoint, headers, ..
            } => {
                let url = url::Url::parse(endpoint)
                    .map_err(|e| AdapterError::ConfigInvalid(format!("endpoint {endpoint:?}: {e}")))?;
                if !matches!(url.scheme(), "http" | "https") {
                    return Err(AdapterError::ConfigInvalid(format!(
                        "endpoint scheme {:?} is not http(s)",
                        url.scheme()
                    )));
                }
                for (name, value) in headers {
                    http::check_header(name, value)?;
                }
            }
            AdapterConfig::Subprocess { command, .. } => {
                if command.trim().is_empty() {
                    return Err(AdapterError::ConfigInvalid("empty command".into()));
                }
            }
            AdapterConfig::ManualTranscript { .. } => {}
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AdapterError {
    #[error("invalid adapter config: {0}")]
    ConfigInvalid(String),
}

/// What happened when an item was put to the subject.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum Outcome {
    Answered,
    Timeout,
    TransportError {
        detail: String,
    },
    /// The subject replied with nothing.
    Refused,
}

impl Outcome {
    pub fn is_answered(&self) -> bool {
        matches!(self, Outcome::Answered)
    }
}

/// One administered item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseRecord {
    pub item_id: String,
    /// Empty unless the outcome is `Answered`.
    pub raw_response: String,
    pub latency_ms: u64,
    pub outcome: Outcome,
    pub received_at: DateTime<Utc>,
}

impl ResponseRecord {
    /// Equality on everything except latency and timestamp.
    pub fn same_transcript(&self, other: &ResponseRecord) -> bool {
        self.item_id == other.item_id
            && self.raw_response == other.raw_response
            && self.outcome == other.outcome
    }
}

/// Result of a liveness check.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub reachable: bool,
    pub round_trip_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

/// Raw result of one exchange before it becomes a record.
#[derive(Debug)]
pub(crate) enum Reply {
    Text(String),
    Timeout,
    Failed(String),
}

/// A validated config plus the collaborators it needs.
pub struct Adapter {
    config: AdapterConfig,
    clock: Arc<dyn Clock>,
    transcriber: Option<Box<dyn Transcriber>>,
    client: Option<reqwest::blocking::Client>,
}

impl std::fmt::Debug for Adapter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Adapter").field("config", &self.config).finish()
    }
}

impl Adapter {
    pub fn new(config: AdapterConfig) -> Result<Self, AdapterError> {
        config.validate()?;
        Ok(Self {
            config,
            clock: Arc::new(SystemClock),
            transcriber: None,
            client: None,
        })
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    /// Operator input for `ManualTranscript`. Defaults to the terminal.
    pub fn with_transcriber(mut self, transcriber: Box<dyn Transcriber>) -> Self {
        self.transcriber = Some(transcriber);
        self
    }

    pub fn config(&self) -> &AdapterConfig {
        &self.config
    }

    fn client(&mut self) -> &reqwest::blocking::Client {
        self.client.get_or_insert_with(http::client)
    }

    /// Puts `item` to the subject. Never fails; see [`Outcome`].
    pub fn administer(&mut self, item: &TestItem) -> ResponseRecord {
        let timeout = self.config.timeout();
        let started = Instant::now();
        let reply = match self.config.clone() {
            AdapterConfig::HttpJson {
                endpoint, headers, ..
            } => {
                let client = self.client().clone();
                http::exchange(&client, &endpoint, &headers, item, timeout)
            }
            AdapterConfig::Subprocess {
                command, args, env, ..
            } => subprocess::exchange(&command, &args, &env, item, timeout),
            AdapterConfig::ManualTranscript { .. } => {
                let transcriber = self
                    .transcriber
                    .get_or_insert_with(|| Box::new(ConsoleTranscriber));
                match transcriber.transcribe(item) {
                    Ok(text) => Reply::Text(text),
                    Err(e) => Reply::Failed(format!("operator input: {e}")),
                }
            }
        };
        let elapsed = started.elapsed();
        self.record(item, reply, elapsed, timeout)
    }

    fn record(&self, item: &TestItem, reply: Reply, elapsed: Duration, timeout: Duration) -> ResponseRecord {
        let (outcome, raw_response) = match reply {
            // an answer that arrives after the deadline does not count
            Reply::Text(_) if elapsed > timeout => (Outcome::Timeout, String::new()),
            Reply::Text(text) if text.trim().is_empty() => (Outcome::Refused, String::new()),
            Reply::Text(text) => (Outcome::Answered, text),
            Reply::Timeout => (Outcome::Timeout, String::new()),
            Reply::Failed(detail) => (Outcome::TransportError { detail }, String::new()),
        };
        let latency_ms = match outcome {
            Outcome::Answered => (elapsed.as_millis() as u64).min(timeout.as_millis() as u64),
            _ => elapsed.as_millis() as u64,
        };
        ResponseRecord {
            item_id: item.id.clone(),
            raw_response,
            latency_ms,
            outcome,
            received_at: self.clock.now(),
        }
    }

    /// Non-destructive liveness check.
    pub fn probe(&mut self) -> Health {
        let timeout = self.config.timeout();
        let started = Instant::now();
        let result = match self.config.clone() {
            AdapterConfig::HttpJson {
                endpoint, headers, ..
            } => {
                let client = self.client().clone();
                http::probe(&client, &endpoint, &headers, timeout)
            }
            AdapterConfig::Subprocess {
                command, args, env, ..
            } => subprocess::probe(&command, &args, &env),
            AdapterConfig::ManualTranscript { .. } => Ok(()),
        };
        let round_trip_ms = started.elapsed().as_millis() as u64;
        match result {
            Ok(()) => Health {
                reachable: true,
                round_trip_ms,
                detail: None,
            },
            Err(detail) => Health {
                reachable: false,
                round_trip_ms,
                detail: Some(detail),
            },
        }
    }
}

/// Administers one item with a fresh adapter built from `cfg`.
pub fn administer_item(cfg: &AdapterConfig, item: &TestItem) -> Result<ResponseRecord, AdapterError> {
    Ok(Adapter::new(cfg.clone())?.administer(item))
}

pub fn probe_subject(cfg: &AdapterConfig) -> Result<Health, AdapterError> {
    Ok(Adapter::new(cfg.clone())?.probe())
}
