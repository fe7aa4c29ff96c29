//! Human-in-the-loop transcript import: classify spans, assemble a draft
//! IBIS tree, curator review, merge into a live discussion.

pub mod classifier;
pub mod draft;
pub mod markup;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{bindings, Gateway};
use crate::graph::{ArgumentGraph, ContributionKind, GraphError, InsertMode, NewContribution, Phase};
use crate::ids::{ContributionId, DiscussionId, IdMint, SessionId, Timestamp, TranscriptId};
use crate::text;
use crate::transcript::Transcript;

pub use classifier::{RuleBasedClassifier, SpanClassifier};
pub use draft::{DraftIbis, DraftNode, DraftNodeId, PatchOp, PatchOutcome};
pub use markup::{Component, ComponentMarkup, Relation, RelationKind};

/// Imported Issues thread into an existing Issue at or above this similarity.
pub const THREADING_THRESHOLD: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ImportState {
    Uploaded,
    Analyzed,
    UnderReview,
    Approved,
    Rejected,
    Merged,
}

impl ImportState {
    pub const ALL: [ImportState; 6] = [
        ImportState::Uploaded,
        ImportState::Analyzed,
        ImportState::UnderReview,
        ImportState::Approved,
        ImportState::Rejected,
        ImportState::Merged,
    ];

    pub fn can_transition(self, to: ImportState) -> bool {
        use ImportState::*;
        matches!(
            (self, to),
            (Uploaded, Analyzed) | (Analyzed, UnderReview) | (UnderReview, Approved) | (UnderReview, Rejected) | (Approved, Merged)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub actor: String,
    pub action: String,
    pub timestamp: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportSession {
    pub id: SessionId,
    pub transcript_id: TranscriptId,
    pub target_discussion_id: DiscussionId,
    pub state: ImportState,
    pub draft: DraftIbis,
    pub markup: Vec<ComponentMarkup>,
    pub audit: Vec<AuditEntry>,
    pub warnings: Vec<String>,
    pub rejection_reason: Option<String>,
    /// Draft node → contribution it became (filled by merge).
    pub merged: BTreeMap<DraftNodeId, ContributionId>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImportError {
    #[error("operation {op} not allowed in state {state:?}")]
    WrongState { state: ImportState, op: &'static str },
    #[error("classifier unavailable: {0}")]
    ClassifierUnavailable(String),
    #[error("patch breaks invariant: {0}")]
    PatchBreaksInvariant(String),
    #[error("target discussion is closed")]
    TargetDiscussionClosed,
    #[error("transcript {0} does not belong to this session")]
    TranscriptMismatch(TranscriptId),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

impl ImportError {
    pub fn invariant(&self) -> &'static str {
        match self {
            ImportError::WrongState { .. } => "import.state_machine",
            ImportError::ClassifierUnavailable(_) => "gateway.available",
            ImportError::PatchBreaksInvariant(_) => "draft.contribution_invariants",
            ImportError::TargetDiscussionClosed => "discussion.phase_open",
            ImportError::TranscriptMismatch(_) => "import.transcript",
            ImportError::Graph(g) => g.invariant(),
        }
    }
}

/// Gateway output of one analysis run; logged so replays never re-query the
/// classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisResult {
    pub markup: Vec<ComponentMarkup>,
    pub issue_text: String,
    pub warnings: Vec<String>,
}

impl ImportSession {
    pub fn new(id: SessionId, transcript_id: TranscriptId, target: DiscussionId, actor: &str, at: Timestamp) -> Self {
        Self {
            id,
            transcript_id,
            target_discussion_id: target,
            state: ImportState::Uploaded,
            draft: DraftIbis::default(),
            markup: Vec::new(),
            audit: vec![AuditEntry { actor: actor.into(), action: "uploaded".into(), timestamp: at }],
            warnings: Vec::new(),
            rejection_reason: None,
            merged: BTreeMap::new(),
        }
    }

    /// Moves to `to` if the pair is a legal transition; otherwise leaves the
    /// session untouched.
    pub fn transition(&mut self, to: ImportState, actor: &str, at: Timestamp) -> Result<(), ImportError> {
        if !self.state.can_transition(to) {
            return Err(ImportError::WrongState { state: self.state, op: transition_op(to) });
        }
        self.state = to;
        self.audit.push(AuditEntry { actor: actor.into(), action: format!("{to:?}").to_lowercase(), timestamp: at });
        Ok(())
    }

    fn require(&self, state: ImportState, op: &'static str) -> Result<(), ImportError> {
        if self.state != state {
            return Err(ImportError::WrongState { state: self.state, op });
        }
        Ok(())
    }

    fn check_transcript(&self, transcript: &Transcript) -> Result<(), ImportError> {
        if transcript.id != self.transcript_id {
            return Err(ImportError::TranscriptMismatch(transcript.id.clone()));
        }
        Ok(())
    }

    /// Runs the classifier and working-Issue summary without touching the
    /// session. The working Issue is summarised by a remote gateway when one
    /// is supplied; otherwise the event title is used.
    pub fn prepare_analysis(
        &self,
        transcript: &Transcript,
        classifier: &dyn SpanClassifier,
        summarizer: Option<&Gateway>,
    ) -> Result<AnalysisResult, ImportError> {
        self.require(ImportState::Uploaded, "analyze")?;
        self.check_transcript(transcript)?;
        let markup = classifier
            .classify(&transcript.segments)
            .map_err(|e| ImportError::ClassifierUnavailable(e.to_string()))?;
        let mut warnings = Vec::new();
        if transcript.segments.is_empty() {
            warnings.push("transcript has no segments; draft is empty".into());
        }
        let mut issue_text = transcript.event_title.clone();
        if let (Some(gw), Some(first)) = (summarizer.filter(|g| !g.is_mock()), transcript.segments.first()) {
            let b = bindings([
                ("event_title", transcript.event_title.clone()),
                ("speaker", first.speaker.clone()),
                ("text", first.text.clone()),
            ]);
            match gw.complete("working_issue", &b) {
                Ok(t) if !t.trim().is_empty() => issue_text = t.trim().to_string(),
                Ok(_) => warnings.push("empty working-issue summary; using event title".into()),
                Err(e) => warnings.push(format!("working-issue summary failed ({e}); using event title")),
            }
        }
        Ok(AnalysisResult { markup, issue_text, warnings })
    }

    /// Assembles the draft from an analysis result and advances
    /// Uploaded → Analyzed → UnderReview.
    pub fn apply_analysis(
        &mut self,
        transcript: &Transcript,
        result: AnalysisResult,
        actor: &str,
        at: Timestamp,
    ) -> Result<&DraftIbis, ImportError> {
        self.require(ImportState::Uploaded, "analyze")?;
        self.check_transcript(transcript)?;
        markup::validate_markup(&result.markup, &transcript.segments).map_err(ImportError::ClassifierUnavailable)?;
        let (draft, mut warnings) = DraftIbis::assemble(transcript, &result.markup, &result.issue_text, &self.id);
        draft.validate(transcript).map_err(ImportError::PatchBreaksInvariant)?;
        let mut next = self.clone();
        next.transition(ImportState::Analyzed, actor, at)?;
        next.transition(ImportState::UnderReview, actor, at)?;
        next.draft = draft;
        next.markup = result.markup;
        next.warnings.extend(result.warnings);
        next.warnings.append(&mut warnings);
        *self = next;
        Ok(&self.draft)
    }

    pub fn analyze_transcript(
        &mut self,
        transcript: &Transcript,
        classifier: &dyn SpanClassifier,
        summarizer: Option<&Gateway>,
        actor: &str,
        at: Timestamp,
    ) -> Result<&DraftIbis, ImportError> {
        let result = self.prepare_analysis(transcript, classifier, summarizer)?;
        self.apply_analysis(transcript, result, actor, at)
    }

    pub fn edit_draft(
        &mut self,
        transcript: &Transcript,
        curator: &str,
        patch: &[PatchOp],
        at: Timestamp,
    ) -> Result<PatchOutcome, ImportError> {
        self.require(ImportState::UnderReview, "edit")?;
        self.check_transcript(transcript)?;
        let outcome = self.draft.apply_patch(patch, transcript, &self.id).map_err(ImportError::PatchBreaksInvariant)?;
        self.audit.push(AuditEntry {
            actor: curator.into(),
            action: format!("edit ({} ops, {} removed, {} inserted)", patch.len(), outcome.removed, outcome.inserted.len()),
            timestamp: at,
        });
        Ok(outcome)
    }

    pub fn approve(&mut self, curator: &str, at: Timestamp) -> Result<ImportState, ImportError> {
        self.require(ImportState::UnderReview, "approve")?;
        self.transition(ImportState::Approved, curator, at)?;
        Ok(self.state)
    }

    pub fn reject(&mut self, curator: &str, reason: &str, at: Timestamp) -> Result<ImportState, ImportError> {
        self.require(ImportState::UnderReview, "reject")?;
        self.transition(ImportState::Rejected, curator, at)?;
        self.rejection_reason = Some(reason.to_string());
        Ok(self.state)
    }

    /// Inserts the approved draft in parent-first order. Draft Issues whose
    /// text matches an existing Issue of the discussion (token Jaccard ≥ 0.9)
    /// thread into it instead of being duplicated. All-or-nothing.
    pub fn merge_into_discussion(
        &mut self,
        graph: &mut ArgumentGraph,
        mint: &mut IdMint,
        actor: &str,
        at: Timestamp,
    ) -> Result<Vec<(DraftNodeId, ContributionId)>, ImportError> {
        self.require(ImportState::Approved, "merge")?;
        let discussion = graph.discussion(&self.target_discussion_id)?;
        if discussion.phase == Phase::Closed {
            return Err(ImportError::TargetDiscussionClosed);
        }
        let existing_issues: Vec<(ContributionId, String)> = {
            let focal = discussion.focal_question.clone();
            let mut v: Vec<(ContributionId, String)> = graph
                .contributions_of(&self.target_discussion_id)
                .filter(|c| c.kind == ContributionKind::Issue)
                .map(|c| (c.id.clone(), c.text.clone()))
                .collect();
            v.sort_by_key(|(id, _)| *id != focal);
            v
        };

        let mut work = graph.clone();
        let mut mapping: BTreeMap<DraftNodeId, ContributionId> = BTreeMap::new();
        let mut order = Vec::new();
        for node in self.draft.topological() {
            if node.kind == ContributionKind::Issue && node.parent.is_none() {
                if let Some((id, _)) = existing_issues.iter().find(|(_, t)| text::jaccard(t, &node.text) >= THREADING_THRESHOLD) {
                    mapping.insert(node.id, id.clone());
                    order.push((node.id, id.clone()));
                    continue;
                }
            }
            let parent = node.parent.map(|p| mapping[&p].clone());
            let id = work.add_contribution(
                mint,
                NewContribution {
                    discussion_id: self.target_discussion_id.clone(),
                    kind: node.kind,
                    stance: node.stance,
                    text: node.text.clone(),
                    author: node.author.clone(),
                    parent,
                    provenance: node.provenance.clone(),
                },
                InsertMode::Merge,
                at,
            )?;
            mapping.insert(node.id, id.clone());
            order.push((node.id, id));
        }
        self.transition(ImportState::Merged, actor, at)?;
        *graph = work;
        self.merged = mapping;
        Ok(order)
    }
}

fn transition_op(to: ImportState) -> &'static str {
    match to {
        ImportState::Uploaded => "upload",
        ImportState::Analyzed => "analyze",
        ImportState::UnderReview => "review",
        ImportState::Approved => "approve",
        ImportState::Rejected => "reject",
        ImportState::Merged => "merge",
    }
}

#[cfg(test)]
mod tests;
