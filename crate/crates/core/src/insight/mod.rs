//! Numerical core: embeddings, fuzzy c-means, cluster labels and the 2D
//! theme map.

pub mod fcm;
pub mod labels;
pub mod pca;

use std::collections::HashMap;
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Gateway, GatewayError};
use crate::graph::{ArgumentGraph, ContributionKind, GraphError};
use crate::ids::{ContributionId, DiscussionId};
use crate::text;

pub use fcm::{fcm_fit, fcm_fit_observed, hard_assign, ClusterModel, FcmParams, FcmStep, MAX_K, MIN_K};
pub use labels::{cluster_members, label_clusters, ClusterLabel};
pub use pca::{project_2d, Pca, Projector, ThemeMap};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InsightError {
    #[error("k must be between {MIN_K} and {MAX_K}, got {0}")]
    InvalidK(usize),
    #[error("too few points: {n} < {need}")]
    TooFewPoints { n: usize, need: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

impl InsightError {
    pub fn invariant(&self) -> &'static str {
        match self {
            InsightError::InvalidK(_) => "cluster.k_range",
            InsightError::TooFewPoints { .. } => "cluster.n_at_least_k",
            InsightError::InvalidParameter(_) => "cluster.parameters",
            InsightError::InvalidInput(_) => "embedding.shape",
            InsightError::Gateway(_) => "gateway.available",
            InsightError::Graph(g) => g.invariant(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSet {
    pub ids: Vec<ContributionId>,
    /// Row-major n×d, rows unit length.
    pub vectors: Vec<Vec<f64>>,
    pub model_tag: String,
}

impl EmbeddingSet {
    pub fn new(ids: Vec<ContributionId>, vectors: Vec<Vec<f64>>, model_tag: String) -> Result<Self, InsightError> {
        if ids.len() != vectors.len() {
            return Err(InsightError::InvalidInput(format!("{} ids for {} vectors", ids.len(), vectors.len())));
        }
        let set = Self { ids, vectors, model_tag };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<(), InsightError> {
        let Some(first) = self.vectors.first() else { return Ok(()) };
        let d = first.len();
        if d < 2 {
            return Err(InsightError::InvalidInput(format!("dimension {d} < 2")));
        }
        for (i, v) in self.vectors.iter().enumerate() {
            if v.len() != d {
                return Err(InsightError::InvalidInput(format!("row {i} has dimension {}, expected {d}", v.len())));
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !norm.is_finite() || (norm - 1.0).abs() > 1e-6 {
                return Err(InsightError::InvalidInput(format!("row {i} has norm {norm}")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    /// Digest over the tag, ids and exact vector bits.
    pub fn fingerprint(&self) -> String {
        let mut bytes = Vec::with_capacity(self.len() * (self.dim() * 8 + 32));
        bytes.extend_from_slice(self.model_tag.as_bytes());
        bytes.push(0);
        for (id, v) in self.ids.iter().zip(&self.vectors) {
            bytes.extend_from_slice(id.as_str().as_bytes());
            bytes.push(0);
            for x in v {
                bytes.extend_from_slice(&x.to_bits().to_le_bytes());
            }
        }
        text::short_digest(&bytes)
    }
}

/// Positions and Arguments of a discussion, in id order.
pub fn clusterable_contributions(
    graph: &ArgumentGraph,
    discussion: &DiscussionId,
) -> Result<Vec<(ContributionId, String)>, InsightError> {
    graph.discussion(discussion)?;
    let mut out: Vec<(ContributionId, String)> = graph
        .contributions_of(discussion)
        .filter(|c| c.kind != ContributionKind::Issue)
        .map(|c| (c.id.clone(), c.text.clone()))
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

pub fn embed_contributions(items: &[(ContributionId, String)], gateway: &Gateway) -> Result<EmbeddingSet, InsightError> {
    if items.is_empty() {
        return EmbeddingSet::new(Vec::new(), Vec::new(), gateway.embedding_model_tag());
    }
    let texts: Vec<String> = items.iter().map(|(_, t)| t.clone()).collect();
    let vectors = gateway.embed_texts(&texts)?;
    EmbeddingSet::new(items.iter().map(|(id, _)| id.clone()).collect(), vectors, gateway.embedding_model_tag())
}

/// Clustering seed stored for a discussion.
pub fn discussion_seed(discussion: &DiscussionId) -> u64 {
    text::stable_u64(discussion.as_str().as_bytes())
}

/// Fitted models keyed by (embedding fingerprint, k).
#[derive(Debug, Default)]
pub struct ReclusterCache {
    models: RwLock<HashMap<(String, usize), Arc<ClusterModel>>>,
}

impl ReclusterCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.models.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `fcm_fit` with default parameters and `seed`, memoised. k is checked
    /// before any lookup or computation.
    pub fn recluster(&self, set: &EmbeddingSet, k: usize, seed: u64) -> Result<Arc<ClusterModel>, InsightError> {
        fcm::check_k(k)?;
        let key = (set.fingerprint(), k);
        if let Some(m) = self.models.read().get(&key) {
            return Ok(m.clone());
        }
        let model = Arc::new(fcm_fit(&set.vectors, &FcmParams::new(k, seed))?);
        // a concurrent fit of the same key produced the same model; keep the first
        Ok(self.models.write().entry(key).or_insert(model).clone())
    }
}
