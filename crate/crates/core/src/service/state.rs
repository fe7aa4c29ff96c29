//! Platform state as a pure fold over the command log.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::distill::{transcript_contexts, PolicyRecommendation};
use crate::graph::{ArgumentGraph, ContributionKind, InsertMode};
use crate::ids::{ContributionId, DiscussionId, EventId, IdMint, SessionId, Timestamp, TranscriptId};
use crate::import::{DraftNodeId, ImportSession, ImportState, PatchOutcome};
use crate::reflection::{Admission, EventStatus, FacilitatorPrompt, LiveEvent, ReflectionError, SpikeAlert};

use super::command::Command;
use super::notify::{DiscussionUpdate, FacilitatorUpdate, Notices, PublicUpdate};
use super::ServiceError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationRun {
    pub k: usize,
    pub seq: u64,
    pub recommendations: Vec<PolicyRecommendation>,
    pub empty_clusters: Vec<usize>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlatformState {
    /// Last applied log record.
    pub seq: u64,
    pub graph: ArgumentGraph,
    pub sessions: BTreeMap<SessionId, ImportSession>,
    pub events: BTreeMap<EventId, LiveEvent>,
    /// Latest distillation per discussion.
    pub recommendations: BTreeMap<DiscussionId, RecommendationRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum Outcome {
    DiscussionCreated { discussion_id: DiscussionId, focal_question: ContributionId },
    ContributionAdded { contribution_id: ContributionId },
    Endorsed { endorsements: u64 },
    PhaseAdvanced,
    TranscriptRegistered { transcript_id: TranscriptId },
    ImportCreated { session_id: SessionId },
    Import { session: Box<ImportSession> },
    DraftEdited { outcome: PatchOutcome },
    Merged { mapping: Vec<(DraftNodeId, ContributionId)> },
    RecommendationsRecorded { k: usize, recommendations: Vec<PolicyRecommendation> },
    EventCreated { event_id: EventId },
    TranscriptAttached,
    Reflection { admission: AdmissionKind, alerts: Vec<SpikeAlert> },
    PromptRecorded { prompt: Box<FacilitatorPrompt>, new: bool },
    PromptDelivered { prompt: Box<FacilitatorPrompt> },
    EventClosed { alerts: Vec<SpikeAlert> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AdmissionKind {
    Accepted,
    Duplicate,
}

/// Result of applying one command. `logged` is false for no-ops (duplicate
/// reflections, re-recorded prompts) which leave the state untouched.
#[derive(Debug)]
pub struct Applied {
    pub outcome: Outcome,
    pub logged: bool,
    pub notices: Notices,
}

impl Applied {
    fn logged(outcome: Outcome, notices: Notices) -> Self {
        Self { outcome, logged: true, notices }
    }
}

/// Context of one application. `event_now` is the live clock for the
/// reflection skew check; replays pass `None`.
#[derive(Debug, Clone, Copy)]
pub struct ApplyCtx {
    pub seq: u64,
    pub ts: Timestamp,
    pub event_now: Option<Timestamp>,
}

impl PlatformState {
    pub fn session(&self, id: &SessionId) -> Result<&ImportSession, ServiceError> {
        self.sessions.get(id).ok_or_else(|| ServiceError::NotFound(format!("import session {id}")))
    }

    fn session_mut(&mut self, id: &SessionId) -> Result<&mut ImportSession, ServiceError> {
        self.sessions.get_mut(id).ok_or_else(|| ServiceError::NotFound(format!("import session {id}")))
    }

    pub fn event(&self, id: &EventId) -> Result<&LiveEvent, ServiceError> {
        self.events.get(id).ok_or_else(|| ServiceError::NotFound(format!("event {id}")))
    }

    fn event_mut(&mut self, id: &EventId) -> Result<&mut LiveEvent, ServiceError> {
        self.events.get_mut(id).ok_or_else(|| ServiceError::NotFound(format!("event {id}")))
    }

    pub fn transcript(&self, id: &TranscriptId) -> Result<&crate::transcript::Transcript, ServiceError> {
        self.graph.transcript(id).ok_or_else(|| ServiceError::NotFound(format!("transcript {id}")))
    }

    /// Applies `cmd`. On error the state is unchanged.
    pub fn apply(&mut self, cmd: &Command, ctx: ApplyCtx) -> Result<Applied, ServiceError> {
        let mut mint = IdMint::new(ctx.ts, ctx.seq);
        let mut notices = Notices::default();
        let at = ctx.ts;
        let applied = match cmd {
            Command::CreateDiscussion { title, focal_question, author } => {
                let id = self.graph.create_discussion(&mut mint, title, focal_question, author.clone(), at)?;
                let focal = self.graph.discussion(&id)?.focal_question.clone();
                Applied::logged(Outcome::DiscussionCreated { discussion_id: id, focal_question: focal }, notices)
            }
            Command::AddContribution(new) => {
                let d = new.discussion_id.clone();
                let id = self.graph.add_contribution(&mut mint, new.clone(), InsertMode::Participant, at)?;
                notices.discussion.push((d, DiscussionUpdate::ContributionAdded { contribution_id: id.clone() }));
                Applied::logged(Outcome::ContributionAdded { contribution_id: id }, notices)
            }
            Command::Endorse { contribution_id, participant } => {
                let n = self.graph.endorse(contribution_id, participant.clone())?;
                Applied::logged(Outcome::Endorsed { endorsements: n }, notices)
            }
            Command::AdvancePhase { discussion_id, phase } => {
                self.graph.advance_phase(discussion_id, *phase)?;
                Applied::logged(Outcome::PhaseAdvanced, notices)
            }
            Command::RegisterTranscript(input) => {
                input.validate()?;
                let id: TranscriptId = mint.mint_id();
                self.graph.register_transcript(input.clone().into_transcript(id.clone()));
                Applied::logged(Outcome::TranscriptRegistered { transcript_id: id }, notices)
            }
            Command::CreateImport { transcript_id, discussion_id, actor } => {
                self.transcript(transcript_id)?;
                self.graph.discussion(discussion_id)?;
                let id: SessionId = mint.mint_id();
                let s = ImportSession::new(id.clone(), transcript_id.clone(), discussion_id.clone(), actor, at);
                notices.discussion.push((discussion_id.clone(), DiscussionUpdate::ImportState { session_id: id.clone(), state: s.state }));
                self.sessions.insert(id.clone(), s);
                Applied::logged(Outcome::ImportCreated { session_id: id }, notices)
            }
            Command::ApplyAnalysis { session_id, result, actor } => {
                let transcript = self.transcript(&self.session(session_id)?.transcript_id)?.clone();
                let s = self.session_mut(session_id)?;
                s.apply_analysis(&transcript, result.clone(), actor, at)?;
                Self::import_notice(&mut notices, s);
                Applied::logged(Outcome::Import { session: Box::new(s.clone()) }, notices)
            }
            Command::EditDraft { session_id, patch, curator } => {
                let transcript = self.transcript(&self.session(session_id)?.transcript_id)?.clone();
                let s = self.session_mut(session_id)?;
                let outcome = s.edit_draft(&transcript, curator, patch, at)?;
                Applied::logged(Outcome::DraftEdited { outcome }, notices)
            }
            Command::Approve { session_id, curator } => {
                let s = self.session_mut(session_id)?;
                s.approve(curator, at)?;
                Self::import_notice(&mut notices, s);
                Applied::logged(Outcome::Import { session: Box::new(s.clone()) }, notices)
            }
            Command::Reject { session_id, curator, reason } => {
                let s = self.session_mut(session_id)?;
                s.reject(curator, reason, at)?;
                Self::import_notice(&mut notices, s);
                Applied::logged(Outcome::Import { session: Box::new(s.clone()) }, notices)
            }
            Command::Merge { session_id, actor } => {
                let s = self.sessions.get_mut(session_id).ok_or_else(|| ServiceError::NotFound(format!("import session {session_id}")))?;
                let mapping = s.merge_into_discussion(&mut self.graph, &mut mint, actor, at)?;
                Self::import_notice(&mut notices, s);
                notices.discussion.push((
                    s.target_discussion_id.clone(),
                    DiscussionUpdate::Merged { session_id: s.id.clone(), contributions: mapping.iter().map(|(_, c)| c.clone()).collect() },
                ));
                Applied::logged(Outcome::Merged { mapping }, notices)
            }
            Command::RecordRecommendations { discussion_id, k, distillation } => {
                self.check_recommendations(discussion_id, &distillation.recommendations)?;
                notices.discussion.push((discussion_id.clone(), DiscussionUpdate::recommendations(*k, &distillation.recommendations)));
                self.recommendations.insert(
                    discussion_id.clone(),
                    RecommendationRun {
                        k: *k,
                        seq: ctx.seq,
                        recommendations: distillation.recommendations.clone(),
                        empty_clusters: distillation.empty_clusters.clone(),
                        warnings: distillation.warnings.clone(),
                    },
                );
                Applied::logged(Outcome::RecommendationsRecorded { k: *k, recommendations: distillation.recommendations.clone() }, notices)
            }
            Command::CreateEvent { event_id, title, deck, config } => {
                if self.events.contains_key(event_id) {
                    return Err(ServiceError::AlreadyExists(format!("event {event_id}")));
                }
                let ev = LiveEvent::new(event_id.clone(), title.clone(), deck.clone(), *config, at)?;
                self.events.insert(event_id.clone(), ev);
                Applied::logged(Outcome::EventCreated { event_id: event_id.clone() }, notices)
            }
            Command::AttachEventTranscript { event_id, transcript_id } => {
                let t = self.transcript(transcript_id)?.clone();
                let ev = self.event_mut(event_id)?;
                if ev.status() == EventStatus::Closed {
                    return Err(ReflectionError::EventClosed.into());
                }
                ev.attach_transcript(t);
                Applied::logged(Outcome::TranscriptAttached, notices)
            }
            Command::Reflect(e) => {
                let ev = self.event_mut(&e.event_id)?;
                let now_ms = ctx.event_now.map(|now| (now - ev.started_at()).num_milliseconds().max(0) as u64);
                match ev.admit(e, now_ms)? {
                    Admission::Duplicate => {
                        return Ok(Applied {
                            outcome: Outcome::Reflection { admission: AdmissionKind::Duplicate, alerts: Vec::new() },
                            logged: false,
                            notices,
                        })
                    }
                    Admission::Accept => {
                        let before = ev.sealed_windows();
                        let alerts = ev.accept(e.clone());
                        Self::window_notices(&mut notices, ev, before, &alerts);
                        Applied::logged(Outcome::Reflection { admission: AdmissionKind::Accepted, alerts }, notices)
                    }
                }
            }
            Command::RecordPrompt(p) => {
                let ev = self.event_mut(&p.event_id)?;
                let new = ev.add_prompt(p.clone())?;
                if new {
                    notices.facilitator.push((p.event_id.clone(), FacilitatorUpdate::Prompt { prompt: p.clone() }));
                }
                Applied { outcome: Outcome::PromptRecorded { prompt: Box::new(p.clone()), new }, logged: new, notices }
            }
            Command::DeliverPrompt { event_id, prompt_id, .. } => {
                let ev = self.event_mut(event_id)?;
                let p = ev.deliver_prompt(prompt_id)?.clone();
                notices.facilitator.push((event_id.clone(), FacilitatorUpdate::PromptDelivered { prompt_id: prompt_id.clone() }));
                Applied::logged(Outcome::PromptDelivered { prompt: Box::new(p) }, notices)
            }
            Command::CloseEvent { event_id, duration_ms } => {
                let ev = self.event_mut(event_id)?;
                if ev.status() == EventStatus::Closed {
                    return Err(ReflectionError::EventClosed.into());
                }
                let before = ev.sealed_windows();
                let alerts = ev.close(*duration_ms);
                Self::window_notices(&mut notices, ev, before, &alerts);
                notices.event_public(event_id, PublicUpdate::Closed { total_reflections: ev.log().len() as u64 });
                Applied::logged(Outcome::EventClosed { alerts }, notices)
            }
        };
        if applied.logged {
            self.seq = ctx.seq;
        }
        Ok(applied)
    }

    fn import_notice(notices: &mut Notices, s: &ImportSession) {
        notices
            .discussion
            .push((s.target_discussion_id.clone(), DiscussionUpdate::ImportState { session_id: s.id.clone(), state: s.state }));
    }

    fn window_notices(notices: &mut Notices, ev: &LiveEvent, before: usize, alerts: &[SpikeAlert]) {
        let series = ev.live_series();
        for w in before..ev.sealed_windows() {
            let (start, end) = series.window_range(w);
            let counts = series.counts.iter().map(|(c, v)| (c.clone(), v[w])).collect();
            notices.event_public(
                ev.id(),
                PublicUpdate::WindowSealed { window_index: w, window_start_ms: start, window_end_ms: end, counts },
            );
        }
        for a in alerts {
            notices.facilitator.push((ev.id().clone(), FacilitatorUpdate::Alert { alert: a.clone() }));
        }
    }

    /// Claims resolve inside the discussion and transcript contexts are
    /// exactly the union of the claims' span provenances.
    fn check_recommendations(&self, discussion: &DiscussionId, recs: &[PolicyRecommendation]) -> Result<(), ServiceError> {
        self.graph.discussion(discussion)?;
        for r in recs {
            if &r.discussion_id != discussion {
                return Err(ServiceError::BadRequest(format!("recommendation {} targets another discussion", r.id)));
            }
            for c in &r.supporting_claims {
                let node = self.graph.contribution(&c.contribution_id)?;
                if &node.discussion_id != discussion || node.kind == ContributionKind::Issue {
                    return Err(ServiceError::BadRequest(format!("claim {} is not a clusterable contribution of {discussion}", c.contribution_id)));
                }
            }
            let expected = transcript_contexts(&self.graph, r.supporting_claims.iter().map(|c| &c.contribution_id))?;
            if expected != r.originating_contexts {
                return Err(ServiceError::BadRequest(format!("recommendation {} contexts differ from claim provenance", r.id)));
            }
        }
        Ok(())
    }

    /// Every integrity invariant across modules; empty means clean.
    pub fn verify(&self) -> Vec<String> {
        let mut out = self.graph.validate_all();
        for s in self.sessions.values() {
            let Some(t) = self.graph.transcript(&s.transcript_id) else {
                out.push(format!("session {}: unknown transcript {}", s.id, s.transcript_id));
                continue;
            };
            if self.graph.discussion(&s.target_discussion_id).is_err() {
                out.push(format!("session {}: unknown target discussion", s.id));
            }
            if matches!(s.state, ImportState::UnderReview | ImportState::Approved | ImportState::Merged) {
                if let Err(e) = s.draft.validate(t) {
                    out.push(format!("session {}: draft {e}", s.id));
                }
            }
            if s.state == ImportState::Merged {
                if s.merged.len() != s.draft.len() {
                    out.push(format!("session {}: {} of {} draft nodes merged", s.id, s.merged.len(), s.draft.len()));
                }
                for c in s.merged.values() {
                    if self.graph.contribution(c).is_err() {
                        out.push(format!("session {}: merged node {c} missing", s.id));
                    }
                }
            } else if !s.merged.is_empty() {
                out.push(format!("session {}: merge mapping outside Merged state", s.id));
            }
        }
        for ev in self.events.values() {
            out.extend(ev.validate());
        }
        for (d, run) in &self.recommendations {
            if let Err(e) = self.check_recommendations(d, &run.recommendations) {
                out.push(format!("recommendations of {d}: {e}"));
            }
            let ids: BTreeSet<_> = run.recommendations.iter().map(|r| &r.id).collect();
            if ids.len() != run.recommendations.len() {
                out.push(format!("recommendations of {d}: duplicate ids"));
            }
        }
        out
    }
}
