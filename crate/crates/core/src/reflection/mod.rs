//! Live audience reflection: card decks, event ingestion with a reorder
//! buffer, windowed aggregation, spike alerts linked to the live transcript,
//! and facilitator prompts.

pub mod prompt;
pub mod series;
pub mod themes;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{CardId, EventId, ParticipantId, PromptId, Timestamp, TranscriptId};
use crate::text;
use crate::transcript::Transcript;

pub use prompt::{generate_prompt, FacilitatorPrompt, PromptGrounding, PromptKind};
pub use series::{aggregate, detect_spikes, EngagementSeries, SpikeAlert, SIGMA_FLOOR};
pub use themes::{extract_themes, keyword_themes, Theme, ThemeAnalysis};

pub const MIN_CARDS: usize = 2;
pub const MAX_CARDS: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReflectionError {
    #[error("unknown card {0}")]
    UnknownCard(CardId),
    #[error("event is closed")]
    EventClosed,
    #[error("event time {t_ms} ms rejected: {reason}")]
    ClockSkewExceeded { t_ms: u64, reason: String },
    #[error("series has {windows} windows, detection needs {need}")]
    SeriesTooShort { windows: usize, need: usize },
    #[error("invalid deck: {0}")]
    InvalidDeck(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("reflection addressed to event {0}")]
    WrongEvent(EventId),
    #[error("no transcript segments available")]
    NoSegments,
    #[error("grounding does not resolve: {0}")]
    UnresolvedGrounding(String),
    #[error("unknown prompt {0}")]
    UnknownPrompt(PromptId),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
}

impl ReflectionError {
    pub fn invariant(&self) -> &'static str {
        match self {
            ReflectionError::UnknownCard(_) => "reflection.card_in_deck",
            ReflectionError::EventClosed => "event.running",
            ReflectionError::ClockSkewExceeded { .. } => "reflection.clock_skew",
            ReflectionError::SeriesTooShort { .. } => "series.baseline_length",
            ReflectionError::InvalidDeck(_) => "deck.cards",
            ReflectionError::InvalidConfig(_) => "reflection.config",
            ReflectionError::WrongEvent(_) => "reflection.event_id",
            ReflectionError::NoSegments => "transcript.segments",
            ReflectionError::UnresolvedGrounding(_) => "prompt.grounding",
            ReflectionError::UnknownPrompt(_) => "prompt.exists",
            ReflectionError::Malformed { .. } => "reflection.wire_format",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, schemars::JsonSchema)]
pub enum CardCategory {
    Agree,
    Disagree,
    Emotion,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct Card {
    pub card_id: CardId,
    pub label: String,
    pub category: CardCategory,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectionDeck {
    pub id: String,
    pub event_id: EventId,
    pub cards: Vec<Card>,
}

impl ReflectionDeck {
    pub fn validate(&self) -> Result<(), ReflectionError> {
        if !(MIN_CARDS..=MAX_CARDS).contains(&self.cards.len()) {
            return Err(ReflectionError::InvalidDeck(format!(
                "{} cards; a deck holds {MIN_CARDS} to {MAX_CARDS}",
                self.cards.len()
            )));
        }
        let mut labels = BTreeSet::new();
        let mut ids = BTreeSet::new();
        for c in &self.cards {
            if c.label.trim().is_empty() || c.card_id.as_str().is_empty() {
                return Err(ReflectionError::InvalidDeck("cards need an id and a label".into()));
            }
            if !labels.insert(c.label.as_str()) {
                return Err(ReflectionError::InvalidDeck(format!("duplicate label {:?}", c.label)));
            }
            if !ids.insert(&c.card_id) {
                return Err(ReflectionError::InvalidDeck(format!("duplicate card id {}", c.card_id)));
            }
        }
        Ok(())
    }

    pub fn card(&self, id: &CardId) -> Option<&Card> {
        self.cards.iter().find(|c| &c.card_id == id)
    }

    pub fn card_ids(&self) -> impl Iterator<Item = CardId> + '_ {
        self.cards.iter().map(|c| c.card_id.clone())
    }
}

/// Wire format of one reflection.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReflectionEvent {
    pub event_id: EventId,
    pub participant: ParticipantId,
    pub card_id: CardId,
    pub t_ms: u64,
}

/// Newline-delimited events; blank lines are skipped.
pub fn parse_replay(ndjson: &str) -> Result<Vec<ReflectionEvent>, ReflectionError> {
    ndjson
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| ReflectionError::Malformed { line: i + 1, message: e.to_string() }))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, schemars::JsonSchema)]
pub struct SegmentRef {
    pub transcript_id: TranscriptId,
    pub segment_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReflectionConfig {
    pub window_ms: u64,
    pub baseline_n: usize,
    pub z_threshold: f64,
    /// Events older than the newest accepted event by more than this are
    /// rejected.
    pub reorder_ms: u64,
    /// Allowed lead of an event over the event clock.
    pub skew_ms: u64,
}

impl Default for ReflectionConfig {
    fn default() -> Self {
        Self { window_ms: 15_000, baseline_n: 10, z_threshold: 3.0, reorder_ms: 5_000, skew_ms: 5_000 }
    }
}

impl ReflectionConfig {
    pub fn validate(&self) -> Result<(), ReflectionError> {
        if self.window_ms == 0 {
            return Err(ReflectionError::InvalidConfig("window_ms must be > 0".into()));
        }
        if self.baseline_n == 0 {
            return Err(ReflectionError::InvalidConfig("baseline_n must be ≥ 1".into()));
        }
        if !self.z_threshold.is_finite() {
            return Err(ReflectionError::InvalidConfig("z_threshold must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
pub enum EventStatus {
    Running,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    Accept,
    /// Same (participant, card, t_ms) already recorded.
    Duplicate,
}

/// Persisted part of a live event; everything else is derived from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveEventRecord {
    pub id: EventId,
    pub title: String,
    pub deck: ReflectionDeck,
    pub config: ReflectionConfig,
    pub status: EventStatus,
    pub started_at: Timestamp,
    pub duration_ms: u64,
    pub transcript: Option<Transcript>,
    pub log: Vec<ReflectionEvent>,
    pub prompts: Vec<FacilitatorPrompt>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "LiveEventRecord", from = "LiveEventRecord")]
pub struct LiveEvent {
    record: LiveEventRecord,
    seen: BTreeSet<(ParticipantId, CardId, u64)>,
    max_t: Option<u64>,
    live: BTreeMap<CardId, Vec<u64>>,
    sealed: usize,
    alerts: Vec<SpikeAlert>,
}

impl From<LiveEvent> for LiveEventRecord {
    fn from(e: LiveEvent) -> Self {
        e.record
    }
}

impl From<LiveEventRecord> for LiveEvent {
    fn from(record: LiveEventRecord) -> Self {
        LiveEvent::rebuild(record)
    }
}

impl LiveEvent {
    pub fn new(
        id: EventId,
        title: String,
        deck: ReflectionDeck,
        config: ReflectionConfig,
        started_at: Timestamp,
    ) -> Result<Self, ReflectionError> {
        deck.validate()?;
        config.validate()?;
        if deck.event_id != id {
            return Err(ReflectionError::InvalidDeck(format!("deck belongs to event {}", deck.event_id)));
        }
        Ok(Self::rebuild(LiveEventRecord {
            id,
            title,
            deck,
            config,
            status: EventStatus::Running,
            started_at,
            duration_ms: 0,
            transcript: None,
            log: Vec::new(),
            prompts: Vec::new(),
        }))
    }

    /// Re-derives counts, dedup keys and alerts by replaying the log.
    fn rebuild(record: LiveEventRecord) -> Self {
        let log = record.log.clone();
        let closed = record.status == EventStatus::Closed;
        let mut ev = Self {
            record: LiveEventRecord { log: Vec::with_capacity(log.len()), status: EventStatus::Running, ..record },
            seen: BTreeSet::new(),
            max_t: None,
            live: BTreeMap::new(),
            sealed: 0,
            alerts: Vec::new(),
        };
        ev.live = ev.record.deck.card_ids().map(|c| (c, Vec::new())).collect();
        for e in log {
            ev.accept(e);
        }
        if closed {
            let d = ev.record.duration_ms;
            ev.close(d);
        }
        ev
    }

    pub fn id(&self) -> &EventId {
        &self.record.id
    }

    pub fn title(&self) -> &str {
        &self.record.title
    }

    pub fn deck(&self) -> &ReflectionDeck {
        &self.record.deck
    }

    pub fn config(&self) -> &ReflectionConfig {
        &self.record.config
    }

    pub fn status(&self) -> EventStatus {
        self.record.status
    }

    pub fn started_at(&self) -> Timestamp {
        self.record.started_at
    }

    pub fn transcript(&self) -> Option<&Transcript> {
        self.record.transcript.as_ref()
    }

    pub fn log(&self) -> &[ReflectionEvent] {
        &self.record.log
    }

    pub fn alerts(&self) -> &[SpikeAlert] {
        &self.alerts
    }

    pub fn prompts(&self) -> &[FacilitatorPrompt] {
        &self.record.prompts
    }

    pub fn prompt(&self, id: &PromptId) -> Option<&FacilitatorPrompt> {
        self.record.prompts.iter().find(|p| &p.id == id)
    }

    /// Windows whose detection has run; their counts are final.
    pub fn sealed_windows(&self) -> usize {
        self.sealed
    }

    pub fn alert(&self, id: &str) -> Option<&SpikeAlert> {
        self.alerts.iter().find(|a| a.id == id)
    }

    /// Checks a reflection without recording it. `now_ms` is the event clock;
    /// `None` skips the future-skew check (replays, trusted clocks).
    pub fn admit(&self, e: &ReflectionEvent, now_ms: Option<u64>) -> Result<Admission, ReflectionError> {
        if e.event_id != self.record.id {
            return Err(ReflectionError::WrongEvent(e.event_id.clone()));
        }
        if self.record.status == EventStatus::Closed {
            return Err(ReflectionError::EventClosed);
        }
        if self.record.deck.card(&e.card_id).is_none() {
            return Err(ReflectionError::UnknownCard(e.card_id.clone()));
        }
        let cfg = &self.record.config;
        if let Some(now) = now_ms {
            if e.t_ms > now.saturating_add(cfg.skew_ms) {
                return Err(ReflectionError::ClockSkewExceeded {
                    t_ms: e.t_ms,
                    reason: format!("ahead of event clock {now} ms by more than {} ms", cfg.skew_ms),
                });
            }
        }
        if self.seen.contains(&(e.participant.clone(), e.card_id.clone(), e.t_ms)) {
            return Ok(Admission::Duplicate);
        }
        if let Some(max) = self.max_t {
            if e.t_ms.saturating_add(cfg.reorder_ms) < max {
                return Err(ReflectionError::ClockSkewExceeded {
                    t_ms: e.t_ms,
                    reason: format!("older than the {} ms reorder buffer (latest {max} ms)", cfg.reorder_ms),
                });
            }
        }
        Ok(Admission::Accept)
    }

    /// Records an admitted reflection and returns alerts for windows the
    /// reorder buffer has just sealed.
    pub fn accept(&mut self, e: ReflectionEvent) -> Vec<SpikeAlert> {
        if !self.seen.insert((e.participant.clone(), e.card_id.clone(), e.t_ms)) {
            return Vec::new();
        }
        let window = self.record.config.window_ms;
        let w = (e.t_ms / window) as usize;
        let max_t = self.max_t.map_or(e.t_ms, |m| m.max(e.t_ms));
        self.max_t = Some(max_t);
        let n = (max_t / window) as usize + 1;
        for counts in self.live.values_mut() {
            if counts.len() < n {
                counts.resize(n, 0);
            }
        }
        if let Some(row) = self.live.get_mut(&e.card_id) {
            row[w] += 1;
        }
        self.record.log.push(e);
        let watermark = max_t.saturating_sub(self.record.config.reorder_ms);
        self.seal_through((watermark / window) as usize)
    }

    pub fn record(&mut self, e: ReflectionEvent, now_ms: Option<u64>) -> Result<(Admission, Vec<SpikeAlert>), ReflectionError> {
        match self.admit(&e, now_ms)? {
            Admission::Duplicate => Ok((Admission::Duplicate, Vec::new())),
            Admission::Accept => Ok((Admission::Accept, self.accept(e))),
        }
    }

    /// Runs detection on windows `sealed..upto` of the live series.
    fn seal_through(&mut self, upto: usize) -> Vec<SpikeAlert> {
        let upto = upto.min(self.live_windows());
        if upto <= self.sealed {
            return Vec::new();
        }
        let series = self.live_series();
        let cfg = self.record.config;
        let mut fresh = Vec::new();
        for w in self.sealed..upto {
            for mut a in series::detect_window(&series, w, cfg.baseline_n, cfg.z_threshold) {
                self.link(&mut a);
                fresh.push(a);
            }
        }
        self.sealed = upto;
        self.alerts.extend(fresh.iter().cloned());
        fresh
    }

    /// Attaches the overlapping transcript segment and the keyword theme
    /// containing it, using only the transcript available by window end.
    fn link(&self, alert: &mut SpikeAlert) {
        let Some(t) = &self.record.transcript else { return };
        let Some(i) = t.segment_overlapping(alert.window_start_ms, alert.window_end_ms) else { return };
        alert.linked_segment = Some(SegmentRef { transcript_id: t.id.clone(), segment_index: i });
        let prefix = t.prefix(alert.window_end_ms);
        alert.theme = keyword_themes(prefix)
            .into_iter()
            .find(|th| th.segments.contains(&i))
            .map(|th| th.theme)
            .or_else(|| themes::key_terms(prefix, &t.segments[i].speaker).into_iter().next());
    }

    fn live_windows(&self) -> usize {
        self.live.values().next().map_or(0, Vec::len)
    }

    /// Incrementally maintained counts at the configured window.
    pub fn live_series(&self) -> EngagementSeries {
        EngagementSeries { window_ms: self.record.config.window_ms, n_windows: self.live_windows(), counts: self.live.clone() }
    }

    /// Log re-aggregated at any window size.
    pub fn series(&self, window_ms: u64) -> Result<EngagementSeries, ReflectionError> {
        aggregate(&self.record.log, self.record.deck.card_ids(), window_ms, self.record.duration_ms)
    }

    /// Replaces the attached transcript. Alerts already raised keep their
    /// links.
    pub fn attach_transcript(&mut self, t: Transcript) {
        self.record.transcript = Some(t);
    }

    /// Stops ingestion and runs detection over every remaining window.
    pub fn close(&mut self, duration_ms: u64) -> Vec<SpikeAlert> {
        let d = duration_ms.max(self.max_t.map_or(0, |t| t + 1));
        self.record.duration_ms = d;
        self.record.status = EventStatus::Closed;
        let n = series::window_count(self.record.config.window_ms, d, self.max_t);
        for counts in self.live.values_mut() {
            counts.resize(n, 0);
        }
        self.seal_through(n)
    }

    /// Stores a drafted prompt; its alert must exist. Re-adding an id is a
    /// no-op.
    pub fn add_prompt(&mut self, p: FacilitatorPrompt) -> Result<bool, ReflectionError> {
        if self.alert(&p.grounding.alert_id).is_none() {
            return Err(ReflectionError::UnresolvedGrounding(format!("unknown alert {}", p.grounding.alert_id)));
        }
        if p.event_id != self.record.id {
            return Err(ReflectionError::WrongEvent(p.event_id.clone()));
        }
        if self.prompt(&p.id).is_some() {
            return Ok(false);
        }
        self.record.prompts.push(p);
        Ok(true)
    }

    pub fn deliver_prompt(&mut self, id: &PromptId) -> Result<&FacilitatorPrompt, ReflectionError> {
        let p = self.record.prompts.iter_mut().find(|p| &p.id == id).ok_or_else(|| ReflectionError::UnknownPrompt(id.clone()))?;
        p.delivered = true;
        Ok(p)
    }

    pub fn public_snapshot(&self) -> PublicSnapshot {
        let s = self.live_series();
        PublicSnapshot {
            event_id: self.record.id.clone(),
            title: self.record.title.clone(),
            status: self.record.status,
            cards: self.record.deck.cards.clone(),
            window_ms: s.window_ms,
            n_windows: s.n_windows,
            total_reflections: s.total(),
            counts: s.counts,
        }
    }

    pub fn facilitator_snapshot(&self) -> FacilitatorSnapshot {
        FacilitatorSnapshot {
            public: self.public_snapshot(),
            transcript_id: self.record.transcript.as_ref().map(|t| t.id.clone()),
            sealed_windows: self.sealed,
            alerts: self.alerts.clone(),
            prompts: self.record.prompts.clone(),
        }
    }

    /// Invariant violations, for store verification.
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        let id = &self.record.id;
        if let Err(e) = self.record.deck.validate() {
            out.push(format!("event {id}: {e}"));
        }
        let s = self.live_series();
        if s.total() != self.record.log.len() as u64 {
            out.push(format!("event {id}: counts {} != accepted {}", s.total(), self.record.log.len()));
        }
        for e in &self.record.log {
            if self.record.deck.card(&e.card_id).is_none() {
                out.push(format!("event {id}: reflection on unknown card {}", e.card_id));
            }
        }
        for a in &self.alerts {
            if a.z_score < a.threshold {
                out.push(format!("event {id}: alert {} below threshold", a.id));
            }
            if let (Some(r), Some(t)) = (&a.linked_segment, &self.record.transcript) {
                match t.segments.get(r.segment_index) {
                    Some(seg) if seg.start_ms < a.window_end_ms && seg.end_ms > a.window_start_ms => {}
                    _ => out.push(format!("event {id}: alert {} linked segment does not overlap its window", a.id)),
                }
            }
        }
        for p in &self.record.prompts {
            if self.alert(&p.grounding.alert_id).is_none() {
                out.push(format!("event {id}: prompt {} grounded on unknown alert", p.id));
            }
        }
        out
    }

    /// Digest of the reflection log, handy for comparing replays.
    pub fn log_digest(&self) -> String {
        text::short_digest(&serde_json::to_vec(&self.record.log).expect("log serializes"))
    }
}

/// Audience-facing view. Carries no alert or prompt data by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PublicSnapshot {
    pub event_id: EventId,
    pub title: String,
    pub status: EventStatus,
    pub cards: Vec<Card>,
    pub window_ms: u64,
    pub n_windows: usize,
    pub total_reflections: u64,
    pub counts: BTreeMap<CardId, Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct FacilitatorSnapshot {
    #[serde(flatten)]
    pub public: PublicSnapshot,
    pub transcript_id: Option<TranscriptId>,
    pub sealed_windows: usize,
    pub alerts: Vec<SpikeAlert>,
    pub prompts: Vec<FacilitatorPrompt>,
}
