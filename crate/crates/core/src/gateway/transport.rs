//! Wire transports for the remote AI services.

use std::collections::{BTreeMap, VecDeque};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use parking_lot::Mutex;
use serde_json::Value;

/// One JSON POST. Errors are transport-level and retryable.
pub trait Transport: Send + Sync {
    fn post(&self, path: &str, body: &Value, timeout: Duration, bearer: Option<&str>) -> Result<Value, String>;
}

/// HTTP(S) JSON transport rooted at `base`.
pub struct HttpTransport {
    base: String,
}

impl HttpTransport {
    pub fn new(base: impl Into<String>) -> Self {
        Self { base: base.into().trim_end_matches('/').to_string() }
    }
}

impl Transport for HttpTransport {
    fn post(&self, path: &str, body: &Value, timeout: Duration, bearer: Option<&str>) -> Result<Value, String> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(true)
            .build()
            .into();
        let url = format!("{}/{}", self.base, path.trim_start_matches('/'));
        let mut req = agent.post(&url).header("Content-Type", "application/json");
        if let Some(tok) = bearer {
            req = req.header("Authorization", &format!("Bearer {tok}"));
        }
        let mut resp = req.send(serde_json::to_vec(body).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        resp.body_mut().read_json::<Value>().map_err(|e| e.to_string())
    }
}

/// Replays recorded responses keyed by path, in order. Counts every call,
/// including failed ones, so tests can assert retry behaviour.
#[derive(Default)]
pub struct CassetteTransport {
    responses: Mutex<BTreeMap<String, VecDeque<Result<Value, String>>>>,
    fallback: Mutex<BTreeMap<String, Result<Value, String>>>,
    calls: AtomicUsize,
    requests: Mutex<Vec<(String, Value)>>,
}

impl CassetteTransport {
    pub fn new() -> Self {
        Self::default()
    }

    /// Queue one response for `path`.
    pub fn push(&self, path: &str, response: Result<Value, String>) -> &Self {
        self.responses.lock().entry(path.to_string()).or_default().push_back(response);
        self
    }

    /// Response returned for `path` once its queue is exhausted.
    pub fn always(&self, path: &str, response: Result<Value, String>) -> &Self {
        self.fallback.lock().insert(path.to_string(), response);
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<(String, Value)> {
        self.requests.lock().clone()
    }
}

impl Transport for CassetteTransport {
    fn post(&self, path: &str, body: &Value, _timeout: Duration, _bearer: Option<&str>) -> Result<Value, String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.requests.lock().push((path.to_string(), body.clone()));
        if let Some(r) = self.responses.lock().get_mut(path).and_then(VecDeque::pop_front) {
            return r;
        }
        self.fallback
            .lock()
            .get(path)
            .cloned()
            .unwrap_or_else(|| Err(format!("no recorded response for {path}")))
    }
}
