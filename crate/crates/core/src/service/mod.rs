//! The platform: command log, replayable state, snapshots, notifications and
//! the pipeline entry points used by the HTTP API, the CLI and the C ABI.

pub mod auth;
pub mod command;
pub mod config;
mod error;
pub mod http;
pub mod notify;
pub mod state;
pub mod store;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use chrono::Utc;
use parking_lot::{Mutex, RwLock};
use serde::Serialize;

use crate::distill::{distill_recommendations, generate_report, DeliberationReport, PolicyRecommendation, ReportStyle};
use crate::gateway::Gateway;
use crate::graph::{ArgumentGraph, ContestedPosition};
use crate::ids::{ContributionId, DiscussionId, EventId, SessionId, Timestamp, TranscriptId};
use crate::import::{ImportError, ImportSession, RuleBasedClassifier};
use crate::insight::{
    clusterable_contributions, discussion_seed, embed_contributions, fcm, label_clusters, project_2d, ClusterLabel,
    ClusterModel, EmbeddingSet, ReclusterCache, ThemeMap,
};
use crate::reflection::{
    generate_prompt, EventStatus, FacilitatorPrompt, FacilitatorSnapshot, PublicSnapshot, ReflectionEvent, SpikeAlert,
};
use crate::text;
use crate::transcript::TranscriptInput;

pub use command::{Command, EventLogRecord};
pub use config::{EventClock, ServiceConfig};
pub use error::{ErrorBody, ErrorClass, ServiceError};
pub use notify::Hub;
pub use state::{AdmissionKind, ApplyCtx, Outcome, PlatformState, RecommendationRun};
pub use store::Store;

/// How a data directory was brought back.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Recovery {
    pub snapshot_seq: Option<u64>,
    pub replayed: usize,
    pub dropped_bytes: u64,
}

struct Inner {
    state: PlatformState,
    store: Option<Store>,
    poisoned: bool,
}

/// Clusters of one discussion at one k.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterView {
    pub discussion_id: DiscussionId,
    pub k: usize,
    pub embedding_fingerprint: String,
    pub ids: Vec<ContributionId>,
    pub model: ClusterModel,
    pub hard_assignment: Vec<usize>,
    pub labels: Vec<ClusterLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReflectResult {
    pub admission: AdmissionKind,
    pub alerts: Vec<SpikeAlert>,
    pub prompts: Vec<FacilitatorPrompt>,
}

pub struct Platform {
    inner: RwLock<Inner>,
    gateway: Gateway,
    hub: Hub,
    config: ServiceConfig,
    recovery: Recovery,
    clusters: ReclusterCache,
    embeddings: Mutex<HashMap<DiscussionId, (String, Arc<EmbeddingSet>)>>,
    labels: Mutex<HashMap<(String, usize), Vec<ClusterLabel>>>,
    embed_calls: AtomicU64,
}

/// Folds records over a starting state. Every record must apply and change
/// the state; anything else means the log is not ours.
pub fn replay(mut state: PlatformState, records: &[EventLogRecord]) -> Result<PlatformState, ServiceError> {
    for rec in records {
        let cmd = rec.command()?;
        let applied = state
            .apply(&cmd, ApplyCtx { seq: rec.seq, ts: rec.ts, event_now: None })
            .map_err(|e| ServiceError::CorruptLog(format!("record {} ({}) does not apply: {e}", rec.seq, rec.kind)))?;
        if !applied.logged {
            return Err(ServiceError::CorruptLog(format!("record {} ({}) is a no-op", rec.seq, rec.kind)));
        }
    }
    Ok(state)
}

impl Platform {
    /// Builds the gateway from the config and opens (or creates) the data
    /// directory, replaying the log over the latest snapshot.
    pub fn open(config: ServiceConfig) -> Result<Self, ServiceError> {
        let gateway = Gateway::new(config.gateway.clone())?;
        Self::with_gateway(config, gateway)
    }

    pub fn with_gateway(config: ServiceConfig, gateway: Gateway) -> Result<Self, ServiceError> {
        let (state, store, recovery) = match &config.data_dir {
            None => (PlatformState::default(), None, Recovery::default()),
            Some(dir) => {
                let (store, loaded) = Store::open(dir, config.fsync)?;
                let recovery = Recovery {
                    snapshot_seq: loaded.snapshot.as_ref().map(|s| s.seq),
                    replayed: loaded.records.len(),
                    dropped_bytes: loaded.dropped_bytes,
                };
                let state = replay(loaded.snapshot.unwrap_or_default(), &loaded.records)?;
                (state, Some(store), recovery)
            }
        };
        Ok(Self {
            inner: RwLock::new(Inner { state, store, poisoned: false }),
            gateway,
            hub: Hub::default(),
            config,
            recovery,
            clusters: ReclusterCache::new(),
            embeddings: Mutex::new(HashMap::new()),
            labels: Mutex::new(HashMap::new()),
            embed_calls: AtomicU64::new(0),
        })
    }

    pub fn in_memory_mock() -> Self {
        Self::with_gateway(ServiceConfig::default().deterministic(), Gateway::mock()).expect("in-memory platform")
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn hub(&self) -> &Hub {
        &self.hub
    }

    pub fn recovery(&self) -> &Recovery {
        &self.recovery
    }

    pub fn data_dir(&self) -> Option<PathBuf> {
        self.config.data_dir.clone()
    }

    /// Number of gateway embedding calls made so far.
    pub fn embedding_calls(&self) -> u64 {
        self.embed_calls.load(Ordering::Relaxed)
    }

    pub fn read<R>(&self, f: impl FnOnce(&PlatformState) -> R) -> R {
        f(&self.inner.read().state)
    }

    pub fn state(&self) -> PlatformState {
        self.inner.read().state.clone()
    }

    pub fn seq(&self) -> u64 {
        self.inner.read().state.seq
    }

    fn stamp(&self, seq: u64) -> Timestamp {
        self.config.clock.stamp(seq)
    }

    /// Applies, logs and publishes one command under the single writer lock.
    pub fn execute(&self, cmd: &Command) -> Result<Outcome, ServiceError> {
        let mut guard = self.inner.write();
        let Inner { state, store, poisoned } = &mut *guard;
        if *poisoned {
            return Err(ServiceError::Poisoned);
        }
        let seq = state.seq + 1;
        let ts = self.stamp(seq);
        let event_now = match self.config.event_clock {
            EventClock::Wall => Some(Utc::now()),
            EventClock::Trusted => None,
        };
        let applied = state.apply(cmd, ApplyCtx { seq, ts, event_now })?;
        if !applied.logged {
            return Ok(applied.outcome);
        }
        if let Some(store) = store.as_mut() {
            if let Err(e) = store.append(&EventLogRecord::new(seq, ts, cmd)) {
                *poisoned = true;
                return Err(e);
            }
            if self.config.snapshot_every > 0 && seq % self.config.snapshot_every == 0 {
                if let Err(e) = store.snapshot(state) {
                    log::warn!("snapshot at seq {seq} failed: {e}");
                }
            }
        }
        self.hub.publish(seq, applied.notices);
        Ok(applied.outcome)
    }

    pub fn snapshot_now(&self) -> Result<Option<PathBuf>, ServiceError> {
        let g = self.inner.read();
        g.store.as_ref().map(|s| s.snapshot(&g.state)).transpose()
    }

    pub fn verify(&self) -> Vec<String> {
        self.read(PlatformState::verify)
    }

    pub fn create_discussion(&self, title: &str, focal_question: &str, author: &str) -> Result<DiscussionId, ServiceError> {
        match self.execute(&Command::CreateDiscussion {
            title: title.into(),
            focal_question: focal_question.into(),
            author: author.into(),
        })? {
            Outcome::DiscussionCreated { discussion_id, .. } => Ok(discussion_id),
            o => unreachable!("create_discussion produced {o:?}"),
        }
    }

    pub fn upload_transcript(&self, input: TranscriptInput) -> Result<TranscriptId, ServiceError> {
        match self.execute(&Command::RegisterTranscript(input))? {
            Outcome::TranscriptRegistered { transcript_id } => Ok(transcript_id),
            o => unreachable!("register_transcript produced {o:?}"),
        }
    }

    pub fn start_import(&self, transcript: &TranscriptId, discussion: &DiscussionId, actor: &str) -> Result<SessionId, ServiceError> {
        match self.execute(&Command::CreateImport {
            transcript_id: transcript.clone(),
            discussion_id: discussion.clone(),
            actor: actor.into(),
        })? {
            Outcome::ImportCreated { session_id } => Ok(session_id),
            o => unreachable!("create_import produced {o:?}"),
        }
    }

    /// Classifies outside the lock and logs the result. A failing remote
    /// classifier falls back to the rule-based baseline with a warning.
    pub fn analyze(&self, session: &SessionId, actor: &str) -> Result<ImportSession, ServiceError> {
        let (s, transcript) = self.read(|st| -> Result<_, ServiceError> {
            let s = st.session(session)?.clone();
            let t = st.transcript(&s.transcript_id)?.clone();
            Ok((s, t))
        })?;
        let result = match s.prepare_analysis(&transcript, &self.gateway, Some(&self.gateway)) {
            Err(ImportError::ClassifierUnavailable(e)) => {
                let mut r = s.prepare_analysis(&transcript, &RuleBasedClassifier, Some(&self.gateway))?;
                r.warnings.insert(0, format!("remote classifier unavailable ({e}); used the rule-based baseline"));
                r
            }
            other => other?,
        };
        match self.execute(&Command::ApplyAnalysis { session_id: session.clone(), result, actor: actor.into() })? {
            Outcome::Import { session } => Ok(*session),
            o => unreachable!("apply_analysis produced {o:?}"),
        }
    }

    fn embedding_set(&self, discussion: &DiscussionId) -> Result<(Arc<EmbeddingSet>, Vec<String>), ServiceError> {
        let items = self.read(|s| clusterable_contributions(&s.graph, discussion))?;
        let key = text::short_digest(&serde_json::to_vec(&items).expect("items serialize"));
        let texts: Vec<String> = items.iter().map(|(_, t)| t.clone()).collect();
        if let Some((k, set)) = self.embeddings.lock().get(discussion) {
            if *k == key {
                return Ok((set.clone(), texts));
            }
        }
        self.embed_calls.fetch_add(1, Ordering::Relaxed);
        let set = Arc::new(embed_contributions(&items, &self.gateway)?);
        self.embeddings.lock().insert(discussion.clone(), (key, set.clone()));
        Ok((set, texts))
    }

    /// FCM at `k` over the discussion's Positions and Arguments. Embeddings,
    /// models and labels are cached, so repeated calls return identical
    /// payloads.
    pub fn clusters(&self, discussion: &DiscussionId, k: usize) -> Result<ClusterView, ServiceError> {
        fcm::check_k(k)?;
        let (set, texts) = self.embedding_set(discussion)?;
        let model = self.clusters.recluster(&set, k, discussion_seed(discussion))?;
        let label_key = (model.fingerprint(), k);
        let cached = self.labels.lock().get(&label_key).cloned();
        let labels = match cached {
            Some(l) => l,
            None => {
                let l = label_clusters(&model, &set, &texts, &self.gateway)?;
                self.labels.lock().entry(label_key).or_insert(l).clone()
            }
        };
        Ok(ClusterView {
            discussion_id: discussion.clone(),
            k,
            embedding_fingerprint: set.fingerprint(),
            ids: set.ids.clone(),
            hard_assignment: fcm::hard_assign(&model),
            model: (*model).clone(),
            labels,
        })
    }

    pub fn theme_map(&self, discussion: &DiscussionId) -> Result<ThemeMap, ServiceError> {
        let (set, _) = self.embedding_set(discussion)?;
        Ok(project_2d(&set)?)
    }

    pub fn contested(&self, discussion: &DiscussionId, top_n: usize) -> Result<Vec<ContestedPosition>, ServiceError> {
        Ok(self.read(|s| s.graph.contested_positions(discussion, top_n))?)
    }

    fn graph(&self) -> ArgumentGraph {
        self.read(|s| s.graph.clone())
    }

    /// Clusters, distills and logs recommendations for `k`.
    pub fn distill(&self, discussion: &DiscussionId, k: usize, threshold: Option<f64>) -> Result<Vec<PolicyRecommendation>, ServiceError> {
        let view = self.clusters(discussion, k)?;
        let (set, _) = self.embedding_set(discussion)?;
        let graph = self.graph();
        let at = self.stamp(self.seq() + 1);
        let d = distill_recommendations(&graph, discussion, &set, &view.model, &view.labels, &self.gateway, threshold, at)?;
        match self.execute(&Command::RecordRecommendations { discussion_id: discussion.clone(), k, distillation: d })? {
            Outcome::RecommendationsRecorded { recommendations, .. } => Ok(recommendations),
            o => unreachable!("record_recommendations produced {o:?}"),
        }
    }

    pub fn recommendations(&self, discussion: &DiscussionId) -> Result<Option<RecommendationRun>, ServiceError> {
        self.read(|s| {
            s.graph.discussion(discussion)?;
            Ok(s.recommendations.get(discussion).cloned())
        })
    }

    /// Report over the latest recorded recommendations (none if the
    /// discussion was never distilled).
    pub fn report(&self, discussion: &DiscussionId, style: ReportStyle) -> Result<DeliberationReport, ServiceError> {
        let (graph, recs, seq) = self.read(|s| {
            (s.graph.clone(), s.recommendations.get(discussion).map(|r| r.recommendations.clone()).unwrap_or_default(), s.seq)
        });
        Ok(generate_report(&graph, discussion, style, &recs, &self.gateway, self.stamp(seq))?)
    }

    /// Drafts and logs prompts for alerts with a linked segment; alerts
    /// without one are left for the facilitator.
    fn prompts_for(&self, event: &EventId, alerts: &[SpikeAlert]) -> Result<Vec<FacilitatorPrompt>, ServiceError> {
        let mut out = Vec::new();
        for a in alerts.iter().filter(|a| a.linked_segment.is_some()) {
            let drafted = self.read(|s| -> Result<_, ServiceError> {
                let ev = s.event(event)?;
                let Some(t) = ev.transcript() else { return Ok(None) };
                Ok(Some(generate_prompt(event, a, ev.deck(), t, &ev.live_series(), &self.gateway)))
            })?;
            match drafted {
                Some(Ok(p)) => {
                    if let Outcome::PromptRecorded { prompt, .. } = self.execute(&Command::RecordPrompt(p))? {
                        out.push(*prompt);
                    }
                }
                Some(Err(e)) => log::warn!("no prompt for {}: {e}", a.id),
                None => {}
            }
        }
        Ok(out)
    }

    /// Hot path: records one reflection and drafts prompts for any alert the
    /// sealed windows raised.
    pub fn reflect(&self, e: ReflectionEvent) -> Result<ReflectResult, ServiceError> {
        let event = e.event_id.clone();
        match self.execute(&Command::Reflect(e))? {
            Outcome::Reflection { admission, alerts } => {
                let prompts = self.prompts_for(&event, &alerts)?;
                Ok(ReflectResult { admission, alerts, prompts })
            }
            o => unreachable!("reflect produced {o:?}"),
        }
    }

    /// Closes an event. Without an explicit duration, a wall-clock event
    /// lasts until now and a trusted one until its last reflection.
    pub fn close_event(&self, event: &EventId, duration_ms: Option<u64>) -> Result<ReflectResult, ServiceError> {
        let duration_ms = match duration_ms {
            Some(d) => d,
            None => {
                let started = self.read(|s| s.event(event).map(|e| e.started_at()))?;
                match self.config.event_clock {
                    EventClock::Wall => (Utc::now() - started).num_milliseconds().max(0) as u64,
                    EventClock::Trusted => 0,
                }
            }
        };
        match self.execute(&Command::CloseEvent { event_id: event.clone(), duration_ms })? {
            Outcome::EventClosed { alerts } => {
                let prompts = self.prompts_for(event, &alerts)?;
                Ok(ReflectResult { admission: AdmissionKind::Accepted, alerts, prompts })
            }
            o => unreachable!("close_event produced {o:?}"),
        }
    }

    pub fn public_snapshot(&self, event: &EventId) -> Result<PublicSnapshot, ServiceError> {
        self.read(|s| Ok(s.event(event)?.public_snapshot()))
    }

    pub fn facilitator_snapshot(&self, event: &EventId) -> Result<FacilitatorSnapshot, ServiceError> {
        self.read(|s| Ok(s.event(event)?.facilitator_snapshot()))
    }

    pub fn event_running(&self, event: &EventId) -> Result<bool, ServiceError> {
        self.read(|s| Ok(s.event(event)?.status() == EventStatus::Running))
    }

    pub fn discussion_of_session(&self, session: &SessionId) -> Result<DiscussionId, ServiceError> {
        self.read(|s| Ok(s.session(session)?.target_discussion_id.clone()))
    }

    pub fn contribute(&self, new: crate::graph::NewContribution) -> Result<ContributionId, ServiceError> {
        match self.execute(&Command::AddContribution(new))? {
            Outcome::ContributionAdded { contribution_id } => Ok(contribution_id),
            o => unreachable!("add_contribution produced {o:?}"),
        }
    }
}

#[cfg(test)]
mod tests;
