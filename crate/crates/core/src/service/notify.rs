//! Push notifications: per-topic seq-numbered channels with a bounded backlog
//! for resume.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::hash::Hash;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::broadcast;

use crate::distill::PolicyRecommendation;
use crate::ids::{CardId, ContributionId, DiscussionId, EventId, PromptId, RecommendationId, SessionId};
use crate::import::ImportState;
use crate::reflection::{FacilitatorPrompt, SpikeAlert};

/// Messages kept per topic for resume, and per-subscriber buffer.
pub const BACKLOG: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DiscussionUpdate {
    ContributionAdded { contribution_id: ContributionId },
    ImportState { session_id: SessionId, state: ImportState },
    Merged { session_id: SessionId, contributions: Vec<ContributionId> },
    Recommendations { k: usize, recommendation_ids: Vec<RecommendationId> },
}

impl DiscussionUpdate {
    pub fn recommendations(k: usize, recs: &[PolicyRecommendation]) -> Self {
        DiscussionUpdate::Recommendations { k, recommendation_ids: recs.iter().map(|r| r.id.clone()).collect() }
    }
}

/// Audience stream. Deliberately has no variant able to carry an alert or a
/// prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PublicUpdate {
    WindowSealed { window_index: usize, window_start_ms: u64, window_end_ms: u64, counts: BTreeMap<CardId, u64> },
    Closed { total_reflections: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FacilitatorUpdate {
    WindowSealed { window_index: usize, window_start_ms: u64, window_end_ms: u64, counts: BTreeMap<CardId, u64> },
    Alert { alert: SpikeAlert },
    Prompt { prompt: FacilitatorPrompt },
    PromptDelivered { prompt_id: PromptId },
    Closed { total_reflections: u64 },
}

impl From<&PublicUpdate> for FacilitatorUpdate {
    fn from(u: &PublicUpdate) -> Self {
        match u.clone() {
            PublicUpdate::WindowSealed { window_index, window_start_ms, window_end_ms, counts } => {
                FacilitatorUpdate::WindowSealed { window_index, window_start_ms, window_end_ms, counts }
            }
            PublicUpdate::Closed { total_reflections } => FacilitatorUpdate::Closed { total_reflections },
        }
    }
}

/// Everything one applied command wants pushed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Notices {
    pub discussion: Vec<(DiscussionId, DiscussionUpdate)>,
    pub public: Vec<(EventId, PublicUpdate)>,
    pub facilitator: Vec<(EventId, FacilitatorUpdate)>,
}

impl Notices {
    /// Public updates are mirrored to the facilitator stream.
    pub fn event_public(&mut self, event: &EventId, u: PublicUpdate) {
        self.facilitator.push((event.clone(), FacilitatorUpdate::from(&u)));
        self.public.push((event.clone(), u));
    }

    pub fn is_empty(&self) -> bool {
        self.discussion.is_empty() && self.public.is_empty() && self.facilitator.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct Message<T> {
    /// Per-topic, starts at 1, no gaps.
    pub seq: u64,
    /// Log record that caused the update.
    pub log_seq: u64,
    pub update: T,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NotifyError {
    #[error("resume point {requested} is older than the retained backlog (oldest {oldest})")]
    ResumeGap { requested: u64, oldest: u64 },
    #[error("subscriber fell behind by {0} messages; resume from the last seq")]
    SlowConsumer(u64),
}

struct Channel<T> {
    next_seq: u64,
    backlog: VecDeque<Message<T>>,
    tx: broadcast::Sender<Message<T>>,
}

impl<T: Clone> Channel<T> {
    fn new() -> Self {
        Self { next_seq: 1, backlog: VecDeque::new(), tx: broadcast::channel(BACKLOG).0 }
    }
}

pub struct Subscription<T> {
    pub backlog: Vec<Message<T>>,
    pub live: broadcast::Receiver<Message<T>>,
}

impl<T: Clone> Subscription<T> {
    /// Backlog first, then live messages; `Ok(None)` when the hub is gone.
    pub async fn next(&mut self) -> Result<Option<Message<T>>, NotifyError> {
        if !self.backlog.is_empty() {
            return Ok(Some(self.backlog.remove(0)));
        }
        match self.live.recv().await {
            Ok(m) => Ok(Some(m)),
            Err(broadcast::error::RecvError::Closed) => Ok(None),
            Err(broadcast::error::RecvError::Lagged(n)) => Err(NotifyError::SlowConsumer(n)),
        }
    }

    /// Non-blocking drain of what is available now.
    pub fn drain(&mut self) -> Result<Vec<Message<T>>, NotifyError> {
        let mut out = std::mem::take(&mut self.backlog);
        loop {
            match self.live.try_recv() {
                Ok(m) => out.push(m),
                Err(broadcast::error::TryRecvError::Empty | broadcast::error::TryRecvError::Closed) => return Ok(out),
                Err(broadcast::error::TryRecvError::Lagged(n)) => return Err(NotifyError::SlowConsumer(n)),
            }
        }
    }
}

pub struct Topics<K, T> {
    channels: Mutex<HashMap<K, Channel<T>>>,
}

impl<K: Eq + Hash + Clone, T: Clone> Topics<K, T> {
    fn new() -> Self {
        Self { channels: Mutex::new(HashMap::new()) }
    }

    fn publish(&self, key: &K, log_seq: u64, update: T) {
        let mut map = self.channels.lock();
        let ch = map.entry(key.clone()).or_insert_with(Channel::new);
        let msg = Message { seq: ch.next_seq, log_seq, update };
        ch.next_seq += 1;
        if ch.backlog.len() == BACKLOG {
            ch.backlog.pop_front();
        }
        ch.backlog.push_back(msg.clone());
        // no receivers is fine
        let _ = ch.tx.send(msg);
    }

    /// Subscribes and returns retained messages with seq > `after`.
    pub fn subscribe(&self, key: &K, after: Option<u64>) -> Result<Subscription<T>, NotifyError> {
        let mut map = self.channels.lock();
        let ch = map.entry(key.clone()).or_insert_with(Channel::new);
        let backlog = match after {
            None => Vec::new(),
            Some(last) => {
                let oldest = ch.backlog.front().map_or(ch.next_seq, |m| m.seq);
                if last + 1 < oldest {
                    return Err(NotifyError::ResumeGap { requested: last, oldest });
                }
                ch.backlog.iter().filter(|m| m.seq > last).cloned().collect()
            }
        };
        Ok(Subscription { backlog, live: ch.tx.subscribe() })
    }

    pub fn last_seq(&self, key: &K) -> u64 {
        self.channels.lock().get(key).map_or(0, |c| c.next_seq - 1)
    }
}

pub struct Hub {
    pub discussion: Topics<DiscussionId, DiscussionUpdate>,
    pub public: Topics<EventId, PublicUpdate>,
    pub facilitator: Topics<EventId, FacilitatorUpdate>,
}

impl Default for Hub {
    fn default() -> Self {
        Self { discussion: Topics::new(), public: Topics::new(), facilitator: Topics::new() }
    }
}

impl Hub {
    pub fn publish(&self, log_seq: u64, notices: Notices) {
        for (k, u) in notices.discussion {
            self.discussion.publish(&k, log_seq, u);
        }
        for (k, u) in notices.public {
            self.public.publish(&k, log_seq, u);
        }
        for (k, u) in notices.facilitator {
            self.facilitator.publish(&k, log_seq, u);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn closed(n: u64) -> PublicUpdate {
        PublicUpdate::Closed { total_reflections: n }
    }

    #[test]
    fn resume_starts_after_last_seq() {
        let hub = Hub::default();
        let ev: EventId = "e".into();
        for i in 0..5 {
            hub.public.publish(&ev, i, closed(i));
        }
        let mut sub = hub.public.subscribe(&ev, Some(3)).unwrap();
        let got: Vec<u64> = sub.drain().unwrap().iter().map(|m| m.seq).collect();
        assert_eq!(got, [4, 5]);
        hub.public.publish(&ev, 9, closed(9));
        assert_eq!(sub.drain().unwrap()[0].seq, 6);
    }

    #[test]
    fn resume_gap_detected() {
        let hub = Hub::default();
        let ev: EventId = "e".into();
        for i in 0..(BACKLOG as u64 + 10) {
            hub.public.publish(&ev, i, closed(i));
        }
        assert!(matches!(hub.public.subscribe(&ev, Some(2)), Err(NotifyError::ResumeGap { .. })));
        assert_eq!(hub.public.subscribe(&ev, Some(10)).unwrap().backlog.len(), BACKLOG);
    }

    #[test]
    fn slow_consumer_reported() {
        let hub = Hub::default();
        let ev: EventId = "e".into();
        let mut sub = hub.public.subscribe(&ev, None).unwrap();
        for i in 0..(BACKLOG as u64 + 1) {
            hub.public.publish(&ev, i, closed(i));
        }
        assert!(matches!(sub.drain(), Err(NotifyError::SlowConsumer(1))));
    }

    #[test]
    fn public_updates_mirror_to_facilitator() {
        let mut n = Notices::default();
        n.event_public(&"e".into(), closed(3));
        assert_eq!(n.facilitator, vec![("e".into(), FacilitatorUpdate::Closed { total_reflections: 3 })]);
    }
}
