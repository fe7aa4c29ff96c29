//! The single point of contact with external AI services: embeddings,
//! templated completions and remote argument classification.
//!
//! `Mock` mode is fully deterministic and never touches the network, so every
//! downstream artifact can be golden-tested. No other module performs network
//! calls.

pub mod template;
pub mod transport;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use parking_lot::{Condvar, Mutex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::graph::CharRange;
use crate::import::markup::{Component, ComponentMarkup, Relation};
use crate::import::classifier::RuleBasedClassifier;
use crate::text;
use crate::transcript::Segment;

pub use template::{bindings, PromptTemplate, TemplateSet};
pub use transport::{CassetteTransport, HttpTransport, Transport};

/// Embedding width of the mock model.
pub const MOCK_DIM: usize = 32;
pub const MOCK_MODEL_TAG: &str = "mock-hashed-bow-32@1";
pub const MAX_RETRIES_LIMIT: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GatewayMode {
    Remote,
    #[default]
    Mock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BatchPolicy {
    #[default]
    Split,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub endpoint: String,
    /// Name of the environment variable holding the bearer token.
    pub auth_token_env: Option<String>,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub mode: GatewayMode,
    pub max_batch: usize,
    pub batch_policy: BatchPolicy,
    pub max_concurrency: usize,
    pub model_tag: String,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            auth_token_env: None,
            timeout_ms: 30_000,
            max_retries: 2,
            backoff_base_ms: 200,
            mode: GatewayMode::Mock,
            max_batch: 64,
            batch_policy: BatchPolicy::Split,
            max_concurrency: 4,
            model_tag: "remote".into(),
        }
    }
}

impl GatewayConfig {
    pub fn mock() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.timeout_ms == 0 {
            return Err(GatewayError::Config("timeout_ms must be > 0".into()));
        }
        if self.max_retries > MAX_RETRIES_LIMIT {
            return Err(GatewayError::Config(format!("max_retries must be <= {MAX_RETRIES_LIMIT}")));
        }
        if self.max_batch == 0 || self.max_concurrency == 0 {
            return Err(GatewayError::Config("max_batch and max_concurrency must be > 0".into()));
        }
        if self.mode == GatewayMode::Remote && self.endpoint.is_empty() {
            return Err(GatewayError::Config("remote mode needs an endpoint".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GatewayError {
    #[error("unknown template {0}")]
    UnknownTemplate(String),
    #[error("slot {0} is unbound")]
    UnboundSlot(String),
    #[error("binding {0} names no slot of the template")]
    UnknownSlot(String),
    #[error("template error: {0}")]
    Template(String),
    #[error("remote call failed after {attempts} attempts: {last_error}")]
    RemoteTimeout { attempts: u32, last_error: String },
    #[error("batch of {size} exceeds max_batch {max}")]
    BatchTooLarge { size: usize, max: usize },
    #[error("remote response violates contract: {0}")]
    Integrity(String),
    #[error("input must be non-empty")]
    EmptyInput,
    #[error("gateway misconfigured: {0}")]
    Config(String),
}

/// Counting semaphore capping in-flight remote requests.
struct Permits {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Permits {
    fn acquire(&self) -> PermitGuard<'_> {
        let mut free = self.free.lock();
        while *free == 0 {
            self.cv.wait(&mut free);
        }
        *free -= 1;
        PermitGuard(self)
    }
}

struct PermitGuard<'a>(&'a Permits);

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock() += 1;
        self.0.cv.notify_one();
    }
}

pub struct Gateway {
    config: GatewayConfig,
    templates: TemplateSet,
    transport: Option<Arc<dyn Transport>>,
    permits: Permits,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").field("config", &self.config).finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn mock() -> Self {
        Self::with_transport(GatewayConfig::mock(), None).expect("mock config is valid")
    }

    /// Remote mode gets an HTTP transport to `config.endpoint`.
    pub fn new(config: GatewayConfig) -> Result<Self, GatewayError> {
        let transport: Option<Arc<dyn Transport>> = match config.mode {
            GatewayMode::Mock => None,
            GatewayMode::Remote => Some(Arc::new(HttpTransport::new(config.endpoint.clone()))),
        };
        Self::with_transport(config, transport)
    }

    pub fn with_transport(config: GatewayConfig, transport: Option<Arc<dyn Transport>>) -> Result<Self, GatewayError> {
        config.validate()?;
        if config.mode == GatewayMode::Remote && transport.is_none() {
            return Err(GatewayError::Config("remote mode needs a transport".into()));
        }
        let permits = Permits { free: Mutex::new(config.max_concurrency), cv: Condvar::new() };
        Ok(Self { config, templates: TemplateSet::bundled(), transport, permits })
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn is_mock(&self) -> bool {
        self.config.mode == GatewayMode::Mock
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    /// Tag recorded on generated artifacts.
    pub fn tag(&self) -> String {
        match self.config.mode {
            GatewayMode::Mock => "mock".into(),
            GatewayMode::Remote => self.config.model_tag.clone(),
        }
    }

    pub fn embedding_model_tag(&self) -> String {
        match self.config.mode {
            GatewayMode::Mock => MOCK_MODEL_TAG.into(),
            GatewayMode::Remote => self.config.model_tag.clone(),
        }
    }

    fn call(&self, path: &str, body: &Value) -> Result<Value, GatewayError> {
        let transport = self.transport.as_ref().ok_or_else(|| GatewayError::Config("no transport".into()))?;
        let bearer = self.config.auth_token_env.as_deref().and_then(|name| std::env::var(name).ok());
        let timeout = Duration::from_millis(self.config.timeout_ms);
        let _permit = self.permits.acquire();
        let mut last_error = String::new();
        let attempts = self.config.max_retries + 1;
        for attempt in 0..attempts {
            if attempt > 0 && self.config.backoff_base_ms > 0 {
                let wait = self.config.backoff_base_ms.saturating_mul(1 << (attempt - 1).min(16));
                std::thread::sleep(Duration::from_millis(wait));
            }
            match transport.post(path, body, timeout, bearer.as_deref()) {
                Ok(v) => return Ok(v),
                Err(e) => {
                    log::warn!("gateway {path} attempt {} failed: {e}", attempt + 1);
                    last_error = e;
                }
            }
        }
        Err(GatewayError::RemoteTimeout { attempts, last_error })
    }

    /// One L2-normalised vector per text.
    pub fn embed_texts(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::EmptyInput);
        }
        if self.is_mock() {
            return Ok(texts.iter().map(|t| mock_embedding(t)).collect());
        }
        if texts.len() > self.config.max_batch && self.config.batch_policy == BatchPolicy::Reject {
            return Err(GatewayError::BatchTooLarge { size: texts.len(), max: self.config.max_batch });
        }
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.config.max_batch) {
            let resp = self.call("embeddings", &json!({ "texts": chunk }))?;
            let vectors: Vec<Vec<f64>> = serde_json::from_value(resp.get("vectors").cloned().unwrap_or(Value::Null))
                .map_err(|e| GatewayError::Integrity(format!("embeddings: {e}")))?;
            if vectors.len() != chunk.len() {
                return Err(GatewayError::Integrity(format!(
                    "embeddings: {} vectors for {} texts",
                    vectors.len(),
                    chunk.len()
                )));
            }
            for v in vectors {
                out.push(normalize(v).ok_or_else(|| GatewayError::Integrity("zero or non-finite vector".into()))?);
            }
        }
        let d = out[0].len();
        if d < 2 || out.iter().any(|v| v.len() != d) {
            return Err(GatewayError::Integrity("embedding dimensions inconsistent or < 2".into()));
        }
        Ok(out)
    }

    /// Renders `template_name` with the bindings (client-side, before any
    /// network activity) and returns the completion text.
    pub fn complete(&self, template_name: &str, slot_bindings: &BTreeMap<String, String>) -> Result<String, GatewayError> {
        let template = self.templates.get(template_name)?;
        let prompt = template.render(slot_bindings)?;
        if self.is_mock() {
            return Ok(mock_completion(template_name, slot_bindings));
        }
        let resp = self.call("completions", &json!({ "template": template.versioned_name(), "prompt": prompt }))?;
        resp.get("text")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| GatewayError::Integrity("completion without text".into()))
    }

    /// Argument-component markup for the segments. Mock mode runs the
    /// rule-based baseline.
    pub fn classify_spans(&self, segments: &[Segment]) -> Result<Vec<ComponentMarkup>, GatewayError> {
        if self.is_mock() {
            return Ok(RuleBasedClassifier.markup(segments));
        }
        let payload: Vec<Value> = segments
            .iter()
            .enumerate()
            .map(|(i, s)| json!({ "index": i, "speaker": s.speaker, "text": s.text }))
            .collect();
        let resp = self.call("classify", &json!({ "segments": payload }))?;
        let spans: Vec<RemoteSpan> = serde_json::from_value(resp.get("spans").cloned().unwrap_or(Value::Null))
            .map_err(|e| GatewayError::Integrity(format!("classify: {e}")))?;
        let markup: Vec<ComponentMarkup> = spans
            .into_iter()
            .enumerate()
            .map(|(id, s)| ComponentMarkup {
                id,
                segment_index: s.segment_index,
                char_range: CharRange::new(s.start, s.end),
                component: s.component,
                confidence: s.confidence,
                relations: s.relations,
            })
            .collect();
        crate::import::markup::validate_markup(&markup, segments).map_err(GatewayError::Integrity)?;
        Ok(markup)
    }
}

#[derive(Deserialize)]
struct RemoteSpan {
    segment_index: usize,
    start: usize,
    end: usize,
    component: Component,
    confidence: f64,
    #[serde(default)]
    relations: Vec<Relation>,
}

fn normalize(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !norm.is_finite() || norm == 0.0 {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Some(v)
}

fn token_vector(token: &str) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(text::stable_u64(format!("tok:{token}").as_bytes()));
    (0..MOCK_DIM).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Deterministic unit vector for `text`: the normalised sum of per-token
/// pseudo-random Gaussian vectors, each seeded by a stable hash of the token.
/// Texts sharing vocabulary land near each other; equal texts are identical.
pub fn mock_embedding(text: &str) -> Vec<f64> {
    let mut toks = text::content_tokens(text);
    if toks.is_empty() {
        toks = text::tokens(text);
    }
    if toks.is_empty() {
        toks = vec![format!("raw:{text}")];
    }
    let mut acc = vec![0.0; MOCK_DIM];
    for t in &toks {
        for (a, x) in acc.iter_mut().zip(token_vector(t)) {
            *a += x;
        }
    }
    normalize(acc).unwrap_or_else(|| {
        let mut e = vec![0.0; MOCK_DIM];
        e[0] = 1.0;
        e
    })
}

/// `MOCK[<template>|<digest of canonical bindings>]`.
pub fn mock_completion(template_name: &str, slot_bindings: &BTreeMap<String, String>) -> String {
    let canonical = serde_json::to_vec(slot_bindings).expect("string map serializes");
    format!("MOCK[{template_name}|{}]", text::short_digest(&canonical))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn remote(cassette: Arc<CassetteTransport>, max_retries: u32) -> Gateway {
        let cfg = GatewayConfig {
            mode: GatewayMode::Remote,
            endpoint: "http://cassette".into(),
            max_retries,
            backoff_base_ms: 0,
            ..GatewayConfig::default()
        };
        Gateway::with_transport(cfg, Some(cassette)).unwrap()
    }

    #[test]
    fn mock_embeddings_deterministic_unit() {
        let g = Gateway::mock();
        let v = g.embed_texts(&["Tax sugary drinks".into(), "Tax sugary drinks".into(), "".into()]).unwrap();
        assert_eq!(v[0], v[1]);
        for row in &v {
            assert_eq!(row.len(), MOCK_DIM);
            let n: f64 = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn mock_embedding_is_stable_across_runs() {
        // frozen so a change of RNG or hashing shows up as a diff
        let v = mock_embedding("local food");
        let again = mock_embedding("local food");
        assert_eq!(v, again);
        assert!(v.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn shared_vocabulary_is_closer() {
        let a = mock_embedding("local organic food markets");
        let b = mock_embedding("organic food markets downtown");
        let c = mock_embedding("carbon tax on aviation fuel");
        let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
        assert!(dot(&a, &b) > dot(&a, &c));
    }

    #[test]
    fn empty_embed_rejected() {
        assert_eq!(Gateway::mock().embed_texts(&[]), Err(GatewayError::EmptyInput));
    }

    #[test]
    fn mock_completion_digest() {
        let g = Gateway::mock();
        let b = bindings([("cluster_index", "1".into()), ("members", "a\nb".into())]);
        let out = g.complete("cluster_label", &b).unwrap();
        assert!(out.starts_with("MOCK[cluster_label|"));
        assert_eq!(out, g.complete("cluster_label", &b).unwrap());
        assert_eq!(out.len(), "MOCK[cluster_label|]".len() + 16);
    }

    #[test]
    fn unbound_slot_before_network() {
        let cassette = Arc::new(CassetteTransport::new());
        let g = remote(cassette.clone(), 2);
        let err = g.complete("cluster_label", &bindings([("members", "x".into())])).unwrap_err();
        assert_eq!(err, GatewayError::UnboundSlot("cluster_index".into()));
        assert_eq!(cassette.calls(), 0);
    }

    #[test]
    fn retries_then_timeout() {
        let cassette = Arc::new(CassetteTransport::new());
        cassette.always("embeddings", Err("timed out".into()));
        let g = remote(cassette.clone(), 2);
        let err = g.embed_texts(&["x".into()]).unwrap_err();
        assert!(matches!(err, GatewayError::RemoteTimeout { attempts: 3, .. }));
        assert_eq!(cassette.calls(), 3);
    }

    #[test]
    fn retry_recovers() {
        let cassette = Arc::new(CassetteTransport::new());
        cassette.push("completions", Err("503".into()));
        cassette.push("completions", Ok(json!({"text": "Which food policies?"})));
        let g = remote(cassette.clone(), 1);
        let out = g.complete("speaker_positions", &bindings([("speaker", "A".into()), ("text", "t".into())])).unwrap();
        assert_eq!(out, "Which food policies?");
        assert_eq!(cassette.calls(), 2);
        let (path, body) = &cassette.requests()[1];
        assert_eq!(path, "completions");
        assert_eq!(body["template"], "speaker_positions@1.0.0");
        assert!(body["prompt"].as_str().unwrap().contains("speaker A"));
    }

    #[test]
    fn batch_policy() {
        let cassette = Arc::new(CassetteTransport::new());
        cassette.always("embeddings", Ok(json!({"vectors": [[3.0, 4.0], [1.0, 0.0]]})));
        let cfg = GatewayConfig {
            mode: GatewayMode::Remote,
            endpoint: "http://cassette".into(),
            max_batch: 2,
            batch_policy: BatchPolicy::Reject,
            ..GatewayConfig::default()
        };
        let g = Gateway::with_transport(cfg.clone(), Some(cassette.clone())).unwrap();
        let texts: Vec<String> = (0..3).map(|i| i.to_string()).collect();
        assert_eq!(g.embed_texts(&texts), Err(GatewayError::BatchTooLarge { size: 3, max: 2 }));
        let g = Gateway::with_transport(GatewayConfig { batch_policy: BatchPolicy::Split, ..cfg }, Some(cassette.clone())).unwrap();
        let two: Vec<String> = vec!["a".into(), "b".into()];
        let v = g.embed_texts(&two).unwrap();
        assert_eq!(v[0], vec![0.6, 0.8]);
    }

    #[test]
    fn config_limits() {
        let bad = GatewayConfig { max_retries: 6, ..GatewayConfig::default() };
        assert!(matches!(bad.validate(), Err(GatewayError::Config(_))));
        let bad = GatewayConfig { timeout_ms: 0, ..GatewayConfig::default() };
        assert!(matches!(bad.validate(), Err(GatewayError::Config(_))));
        // mock ignores endpoint
        GatewayConfig { endpoint: String::new(), ..GatewayConfig::mock() }.validate().unwrap();
    }
}
