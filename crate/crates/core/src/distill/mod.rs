//! Labelled clusters → provenance-linked policy recommendations, reports and
//! issue-to-proposal pitches.

pub mod report;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{bindings, Gateway};
use crate::graph::{ArgumentGraph, CharRange, ContributionKind, GraphError, ProvenanceSource, Stance};
use crate::ids::{ContributionId, DiscussionId, RecommendationId, Timestamp, TranscriptId};
use crate::insight::{cluster_members, ClusterLabel, ClusterModel, EmbeddingSet};
use crate::text;

pub use report::{generate_report, DeliberationReport, PositionStats, ReportSection, ReportStats, ReportStyle};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistillError {
    #[error("cluster model has {model} rows but the embedding set has {set}")]
    ModelMismatch { model: usize, set: usize },
    #[error("{labels} labels for {k} clusters")]
    LabelMismatch { labels: usize, k: usize },
    #[error("threshold must lie in (0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("issue has no positions")]
    NoPositions,
    #[error(transparent)]
    Graph(#[from] GraphError),
}

impl DistillError {
    pub fn invariant(&self) -> &'static str {
        match self {
            DistillError::ModelMismatch { .. } | DistillError::LabelMismatch { .. } => "recommendation.model_matches_store",
            DistillError::InvalidThreshold(_) => "recommendation.threshold",
            DistillError::NoPositions => "proposal.issue_has_positions",
            DistillError::Graph(g) => g.invariant(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportingClaim {
    pub contribution_id: ContributionId,
    pub membership: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OriginatingContext {
    pub transcript_id: TranscriptId,
    pub segment_index: usize,
    pub char_range: CharRange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRecommendation {
    pub id: RecommendationId,
    pub discussion_id: DiscussionId,
    pub cluster_index: usize,
    pub key_position: String,
    pub supporting_claims: Vec<SupportingClaim>,
    pub originating_contexts: Vec<OriginatingContext>,
    pub synthesis: String,
    pub generated_at: Timestamp,
    pub gateway_tag: String,
    pub model_fingerprint: String,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distillation {
    pub recommendations: Vec<PolicyRecommendation>,
    /// Clusters omitted because no member reached the threshold.
    pub empty_clusters: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Claim threshold for cluster `j`: max(0.5 × the cluster's highest
/// membership, 1/k).
pub fn claim_threshold(model: &ClusterModel, j: usize) -> f64 {
    let top = model.membership.iter().map(|row| row[j]).fold(0.0, f64::max);
    (0.5 * top).max(1.0 / model.k as f64)
}

/// Transcript spans behind a set of contributions, deduplicated and sorted.
pub fn transcript_contexts<'a>(
    graph: &ArgumentGraph,
    ids: impl IntoIterator<Item = &'a ContributionId>,
) -> Result<Vec<OriginatingContext>, GraphError> {
    let mut out = BTreeSet::new();
    for id in ids {
        let p = &graph.contribution(id)?.provenance;
        if p.source != ProvenanceSource::TranscriptSpan {
            continue;
        }
        if let (Some(t), Some(s), Some(r)) = (&p.transcript_id, p.segment_index, p.char_range) {
            out.insert(OriginatingContext { transcript_id: t.clone(), segment_index: s, char_range: r });
        }
    }
    Ok(out.into_iter().collect())
}

/// One recommendation per cluster whose hard-assigned members include at
/// least one at or above the claim threshold. `threshold` overrides the
/// adaptive per-cluster rule.
#[allow(clippy::too_many_arguments)]
pub fn distill_recommendations(
    graph: &ArgumentGraph,
    discussion: &DiscussionId,
    set: &EmbeddingSet,
    model: &ClusterModel,
    labels: &[ClusterLabel],
    gateway: &Gateway,
    threshold: Option<f64>,
    at: Timestamp,
) -> Result<Distillation, DistillError> {
    graph.discussion(discussion)?;
    if model.n() != set.len() {
        return Err(DistillError::ModelMismatch { model: model.n(), set: set.len() });
    }
    if labels.len() != model.k {
        return Err(DistillError::LabelMismatch { labels: labels.len(), k: model.k });
    }
    if let Some(t) = threshold {
        if !(t > 0.0 && t <= 1.0) {
            return Err(DistillError::InvalidThreshold(t));
        }
    }
    let model_fp = model.fingerprint();
    let set_fp = set.fingerprint();
    let mut out = Distillation { recommendations: Vec::new(), empty_clusters: Vec::new(), warnings: Vec::new() };

    for (j, members) in cluster_members(model).into_iter().enumerate() {
        let tau = threshold.unwrap_or_else(|| claim_threshold(model, j));
        let claims: Vec<SupportingClaim> = members
            .iter()
            .filter(|&&i| model.membership[i][j] >= tau)
            .map(|&i| SupportingClaim { contribution_id: set.ids[i].clone(), membership: model.membership[i][j] })
            .collect();
        if claims.is_empty() {
            log::info!("cluster {j} has no member at or above {tau}; no recommendation");
            out.empty_clusters.push(j);
            out.warnings.push(format!("cluster {j}: no member reaches membership {tau:.4}"));
            continue;
        }
        let mut claim_texts = Vec::with_capacity(claims.len());
        for c in &claims {
            let node = graph.contribution(&c.contribution_id)?;
            if node.discussion_id != *discussion {
                return Err(GraphError::UnknownContribution(c.contribution_id.clone()).into());
            }
            claim_texts.push(format!("- {}", node.text));
        }
        let contexts = transcript_contexts(graph, claims.iter().map(|c| &c.contribution_id))?;
        let label = &labels[j];
        let key_position = if label.placeholder {
            graph.contribution(&claims[0].contribution_id)?.text.clone()
        } else {
            label.title.clone()
        };
        let synthesis = match gateway.complete(
            "recommendation_synthesis",
            &bindings([
                ("title", label.title.clone()),
                ("description", label.description.clone()),
                ("claims", claim_texts.join("\n")),
            ]),
        ) {
            Ok(s) => s.trim().to_string(),
            Err(e) => {
                out.warnings.push(format!("cluster {}: synthesis unavailable ({e}); using label description", j + 1));
                label.description.clone()
            }
        };
        let id_src = format!("{discussion}|{set_fp}|{model_fp}|{j}");
        out.recommendations.push(PolicyRecommendation {
            id: format!("rec-{}", text::short_digest(id_src.as_bytes())).into(),
            discussion_id: discussion.clone(),
            cluster_index: j,
            key_position,
            supporting_claims: claims,
            originating_contexts: contexts,
            synthesis,
            generated_at: at,
            gateway_tag: gateway.tag(),
            model_fingerprint: model_fp.clone(),
            threshold: tau,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalPitch {
    pub issue_id: ContributionId,
    pub position_id: ContributionId,
    pub text: String,
    pub source_links: Vec<ContributionId>,
    /// Gateway failed; `text` is assembled from the contributions verbatim.
    pub extractive: bool,
}

/// Pitch grounded in the Issue's most contested Position and its Pro
/// arguments.
pub fn issue_to_proposal(graph: &ArgumentGraph, issue: &ContributionId, gateway: &Gateway) -> Result<ProposalPitch, DistillError> {
    let issue_node = graph.contribution(issue)?;
    if issue_node.kind != ContributionKind::Issue {
        return Err(GraphError::UnknownContribution(issue.clone()).into());
    }
    let ranked = graph.ranked_positions_under(issue)?;
    let top = ranked.first().ok_or(DistillError::NoPositions)?;
    let position = graph.contribution(&top.position_id)?;
    let mut pros = Vec::new();
    let mut cons = Vec::new();
    let mut links = vec![issue.clone(), position.id.clone()];
    for child in graph.children(&position.id) {
        let c = graph.contribution(child)?;
        match c.stance {
            Stance::Pro => pros.push(c),
            Stance::Con => cons.push(c),
            Stance::None => {}
        }
    }
    links.extend(pros.iter().map(|c| c.id.clone()));
    let list = |v: &[&crate::graph::Contribution]| v.iter().map(|c| format!("- {}", c.text)).collect::<Vec<_>>().join("\n");
    let b = bindings([
        ("issue", issue_node.text.clone()),
        ("position", position.text.clone()),
        ("pros", list(&pros)),
        ("cons", list(&cons)),
    ]);
    let (text, extractive) = match gateway.complete("issue_proposal", &b) {
        Ok(t) => (t.trim().to_string(), false),
        Err(e) => {
            log::warn!("proposal generation failed: {e}");
            let mut t = format!("Proposal for \"{}\": {}.", issue_node.text, position.text);
            if !pros.is_empty() {
                t.push_str(" Supported because: ");
                t.push_str(&pros.iter().map(|c| c.text.as_str()).collect::<Vec<_>>().join("; "));
                t.push('.');
            }
            (t, true)
        }
    };
    Ok(ProposalPitch { issue_id: issue.clone(), position_id: position.id.clone(), text, source_links: links, extractive })
}
