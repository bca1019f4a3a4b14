//! Replay and remote oracles.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use framerepeat_core::aoi::{unknown_sample, FrameMultiset, Oracle, RepeatGainRecord};
use framerepeat_core::{OracleError, OracleErrorKind};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{oracle_error, Error, Result};
use crate::records::RecordStore;

/// Answers baseline and single-repeat queries from stored records and
/// refuses everything else.
#[derive(Clone, Debug)]
pub struct ReplayOracle {
    oracle_id: String,
    records: BTreeMap<String, RepeatGainRecord>,
}

impl ReplayOracle {
    pub fn new(records: impl IntoIterator<Item = RepeatGainRecord>) -> Result<Self> {
        let mut map = BTreeMap::new();
        let mut oracle_id: Option<String> = None;
        for r in records {
            match &oracle_id {
                None => oracle_id = Some(r.oracle_id.clone()),
                Some(id) if *id != r.oracle_id => {
                    return Err(Error::Usage(format!(
                        "records mix oracles {id:?} and {:?}",
                        r.oracle_id
                    )))
                }
                Some(_) => {}
            }
            map.insert(r.sample_id.clone(), r);
        }
        let oracle_id = oracle_id.ok_or_else(|| Error::Usage("no records to replay".into()))?;
        Ok(ReplayOracle { oracle_id, records: map })
    }

    pub fn from_store(store: &RecordStore) -> Result<Self> {
        Self::new(store.all()?)
    }

    fn lookup(&self, sample_id: &str, seq: &FrameMultiset) -> std::result::Result<f64, OracleError> {
        let r = self.records.get(sample_id).ok_or_else(|| unknown_sample(sample_id))?;
        if seq.indices().iter().any(|&i| i >= r.n_frames) {
            return Err(oracle_error(
                OracleErrorKind::InvalidSequence,
                format!("{sample_id}: sequence does not index {} frames", r.n_frames),
            ));
        }
        if seq.is_baseline() {
            return Ok(r.baseline_logprob);
        }
        let frame = seq.single_repeat().ok_or_else(|| {
            oracle_error(
                OracleErrorKind::Unsupported,
                format!("{sample_id}: only baseline and single-repeat sequences can be replayed"),
            )
        })?;
        r.entries
            .iter()
            .find(|e| e.frame == frame)
            .map(|e| e.logprob)
            .ok_or_else(|| oracle_error(OracleErrorKind::Miss, format!("{sample_id}: no stored repeat of frame {frame}")))
    }
}

impl Oracle for ReplayOracle {
    fn oracle_id(&self) -> String {
        self.oracle_id.clone()
    }

    fn logprob(&self, sample_id: &str, seq: &FrameMultiset, _answer_id: usize) -> std::result::Result<f64, OracleError> {
        self.lookup(sample_id, seq)
    }

    fn sample_answer(&self, sample_id: &str, _: &FrameMultiset, _: f64, _: u64) -> std::result::Result<usize, OracleError> {
        Err(oracle_error(
            OracleErrorKind::Unsupported,
            format!("{sample_id}: stored records carry no decoded answers"),
        ))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    /// Base URL, e.g. `http://127.0.0.1:8000`.
    pub endpoint: String,
    /// Bearer token; empty for none.
    pub token: String,
    pub in_flight: usize,
    pub timeout_secs: f64,
    /// Extra attempts after the first.
    pub retries: u32,
    /// First backoff delay; doubles each retry.
    pub backoff_ms: u64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            endpoint: String::new(),
            token: String::new(),
            in_flight: 4,
            timeout_secs: 60.0,
            retries: 3,
            backoff_ms: 200,
        }
    }
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("semaphore lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("semaphore lock");
        }
        *free -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("semaphore lock") += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct Health {
    pub oracle_id: String,
    pub model_name: String,
}

/// HTTP client for the oracle wire protocol.
pub struct RemoteOracle {
    config: RemoteConfig,
    agent: ureq::Agent,
    health: Health,
    gate: Semaphore,
    requests: AtomicU64,
    attempts: AtomicU64,
}

enum Attempt {
    Done(Value),
    Retry(OracleError),
    Fail(OracleError),
}

impl RemoteOracle {
    /// Builds the client and checks `/v1/health`.
    pub fn connect(config: RemoteConfig) -> Result<Self> {
        if config.endpoint.is_empty() {
            return Err(Error::Usage("remote oracle needs an endpoint".into()));
        }
        if config.in_flight == 0 || !(config.timeout_secs > 0.0) {
            return Err(Error::Usage("in-flight budget and timeout must be positive".into()));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let mut oracle = RemoteOracle {
            gate: Semaphore { free: Mutex::new(config.in_flight), cv: Condvar::new() },
            config,
            agent,
            health: Health { oracle_id: String::new(), model_name: String::new() },
            requests: AtomicU64::new(0),
            attempts: AtomicU64::new(0),
        };
        let body = oracle.request("GET", "/v1/health", None)?;
        oracle.health = Health {
            oracle_id: str_field(&body, "oracle_id", "/v1/health")?,
            model_name: str_field(&body, "model_name", "/v1/health")?,
        };
        log::info!("remote oracle {} ({})", oracle.health.oracle_id, oracle.health.model_name);
        Ok(oracle)
    }

    pub fn health(&self) -> &Health {
        &self.health
    }

    /// Logical requests issued.
    pub fn requests(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }

    /// HTTP attempts, retries included.
    pub fn attempts(&self) -> u64 {
        self.attempts.load(Ordering::Relaxed)
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.config.endpoint.trim_end_matches('/'))
    }

    fn attempt(&self, method: &str, path: &str, body: Option<&Value>) -> Attempt {
        let _permit = self.gate.acquire();
        self.attempts.fetch_add(1, Ordering::Relaxed);
        let url = self.url(path);
        let auth = format!("Bearer {}", self.config.token);
        let sent = match body {
            Some(b) => {
                let mut req = self.agent.post(&url);
                if !self.config.token.is_empty() {
                    req = req.header("Authorization", &auth);
                }
                req.send_json(b)
            }
            None => {
                let mut req = self.agent.get(&url);
                if !self.config.token.is_empty() {
                    req = req.header("Authorization", &auth);
                }
                req.call()
            }
        };
        let ctx = |m: String| format!("{method} {path}: {m}");
        let mut resp = match sent {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => {
                return Attempt::Retry(oracle_error(OracleErrorKind::Timeout, ctx("timed out".into())))
            }
            Err(e) => return Attempt::Retry(oracle_error(OracleErrorKind::Transport, ctx(e.to_string()))),
        };
        let status = resp.status().as_u16();
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(oracle_error(OracleErrorKind::Transport, ctx(e.to_string()))),
        };
        if status == 429 || status >= 500 {
            return Attempt::Retry(oracle_error(OracleErrorKind::Status, ctx(format!("HTTP {status}"))));
        }
        if !(200..300).contains(&status) {
            let kind = if status == 404 { OracleErrorKind::UnknownSample } else { OracleErrorKind::Status };
            return Attempt::Fail(oracle_error(kind, ctx(format!("HTTP {status}: {}", text.trim()))));
        }
        match serde_json::from_str(&text) {
            Ok(v) => Attempt::Done(v),
            Err(e) => Attempt::Fail(oracle_error(OracleErrorKind::Protocol, ctx(format!("body is not JSON: {e}")))),
        }
    }

    fn request(&self, method: &str, path: &str, body: Option<&Value>) -> std::result::Result<Value, OracleError> {
        self.requests.fetch_add(1, Ordering::Relaxed);
        let mut delay = Duration::from_millis(self.config.backoff_ms);
        for attempt in 0..=self.config.retries {
            match self.attempt(method, path, body) {
                Attempt::Done(v) => {
                    if attempt > 0 {
                        log::info!("{method} {path} succeeded after {} attempts", attempt + 1);
                    }
                    return Ok(v);
                }
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(e) if attempt == self.config.retries => {
                    return Err(OracleError::new(
                        e.kind,
                        format!("{} (gave up after {} attempts)", e.message, attempt + 1),
                    ))
                }
                Attempt::Retry(e) => {
                    log::warn!("attempt {} failed: {e}; retrying in {delay:?}", attempt + 1);
                    std::thread::sleep(delay);
                    delay *= 2;
                }
            }
        }
        unreachable!("loop returns on the last attempt")
    }
}

fn field<'v>(body: &'v Value, name: &str, path: &str) -> std::result::Result<&'v Value, OracleError> {
    body.get(name)
        .ok_or_else(|| oracle_error(OracleErrorKind::Protocol, format!("{path}: response lacks field `{name}`")))
}

fn str_field(body: &Value, name: &str, path: &str) -> std::result::Result<String, OracleError> {
    field(body, name, path)?
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| oracle_error(OracleErrorKind::Protocol, format!("{path}: field `{name}` is not a string")))
}

impl Oracle for RemoteOracle {
    fn oracle_id(&self) -> String {
        self.health.oracle_id.clone()
    }

    fn logprob(&self, sample_id: &str, seq: &FrameMultiset, answer_id: usize) -> std::result::Result<f64, OracleError> {
        let body = serde_json::json!({
            "sample_id": sample_id,
            "sequence": seq.indices(),
            "answer_id": answer_id,
        });
        let v = self.request("POST", "/v1/logprob", Some(&body))?;
        let lp = field(&v, "logprob", "/v1/logprob")?.as_f64().ok_or_else(|| {
            oracle_error(OracleErrorKind::Protocol, "/v1/logprob: field `logprob` is not a number")
        })?;
        if !lp.is_finite() || lp > 0.0 {
            return Err(oracle_error(
                OracleErrorKind::Protocol,
                format!("/v1/logprob: logprob {lp} for {sample_id} is not a finite value <= 0"),
            ));
        }
        Ok(lp)
    }

    fn sample_answer(
        &self,
        sample_id: &str,
        seq: &FrameMultiset,
        temperature: f64,
        _trial: u64,
    ) -> std::result::Result<usize, OracleError> {
        let body = serde_json::json!({
            "sample_id": sample_id,
            "sequence": seq.indices(),
            "temperature": temperature,
        });
        let v = self.request("POST", "/v1/answer", Some(&body))?;
        field(&v, "answer_id", "/v1/answer")?
            .as_u64()
            .map(|a| a as usize)
            .ok_or_else(|| oracle_error(OracleErrorKind::Protocol, "/v1/answer: field `answer_id` is not an integer"))
    }
}
