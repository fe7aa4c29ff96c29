//! Mutations and their log records.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::distill::Distillation;
use crate::graph::{NewContribution, Phase};
use crate::ids::{ContributionId, DiscussionId, EventId, ParticipantId, PromptId, SessionId, Timestamp, TranscriptId};
use crate::import::{AnalysisResult, PatchOp};
use crate::reflection::{FacilitatorPrompt, ReflectionConfig, ReflectionDeck, ReflectionEvent};
use crate::transcript::TranscriptInput;

use super::ServiceError;

/// Every state change. Gateway output is part of the payload so a replay
/// never calls the gateway.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum Command {
    CreateDiscussion { title: String, focal_question: String, author: ParticipantId },
    AddContribution(NewContribution),
    Endorse { contribution_id: ContributionId, participant: ParticipantId },
    AdvancePhase { discussion_id: DiscussionId, phase: Phase },
    RegisterTranscript(TranscriptInput),
    CreateImport { transcript_id: TranscriptId, discussion_id: DiscussionId, actor: String },
    ApplyAnalysis { session_id: SessionId, result: AnalysisResult, actor: String },
    EditDraft { session_id: SessionId, patch: Vec<PatchOp>, curator: String },
    Approve { session_id: SessionId, curator: String },
    Reject { session_id: SessionId, curator: String, reason: String },
    Merge { session_id: SessionId, actor: String },
    RecordRecommendations { discussion_id: DiscussionId, k: usize, distillation: Distillation },
    CreateEvent { event_id: EventId, title: String, deck: ReflectionDeck, config: ReflectionConfig },
    AttachEventTranscript { event_id: EventId, transcript_id: TranscriptId },
    Reflect(ReflectionEvent),
    RecordPrompt(FacilitatorPrompt),
    DeliverPrompt { event_id: EventId, prompt_id: PromptId, actor: String },
    CloseEvent { event_id: EventId, duration_ms: u64 },
}

impl Command {
    pub fn kind(&self) -> &'static str {
        match self {
            Command::CreateDiscussion { .. } => "create_discussion",
            Command::AddContribution(_) => "add_contribution",
            Command::Endorse { .. } => "endorse",
            Command::AdvancePhase { .. } => "advance_phase",
            Command::RegisterTranscript(_) => "register_transcript",
            Command::CreateImport { .. } => "create_import",
            Command::ApplyAnalysis { .. } => "apply_analysis",
            Command::EditDraft { .. } => "edit_draft",
            Command::Approve { .. } => "approve",
            Command::Reject { .. } => "reject",
            Command::Merge { .. } => "merge",
            Command::RecordRecommendations { .. } => "record_recommendations",
            Command::CreateEvent { .. } => "create_event",
            Command::AttachEventTranscript { .. } => "attach_event_transcript",
            Command::Reflect(_) => "reflect",
            Command::RecordPrompt(_) => "record_prompt",
            Command::DeliverPrompt { .. } => "deliver_prompt",
            Command::CloseEvent { .. } => "close_event",
        }
    }
}

/// One line of the append-only log. `payload` is canonical JSON (sorted
/// keys, no insignificant whitespace).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventLogRecord {
    pub seq: u64,
    pub kind: String,
    pub payload: Value,
    pub ts: Timestamp,
}

impl EventLogRecord {
    pub fn new(seq: u64, ts: Timestamp, cmd: &Command) -> Self {
        let mut v = serde_json::to_value(cmd).expect("commands serialize");
        let payload = v.get_mut("payload").map(Value::take).unwrap_or(Value::Null);
        Self { seq, kind: cmd.kind().into(), payload, ts }
    }

    pub fn command(&self) -> Result<Command, ServiceError> {
        let mut obj = serde_json::Map::new();
        obj.insert("kind".into(), Value::String(self.kind.clone()));
        obj.insert("payload".into(), self.payload.clone());
        serde_json::from_value(Value::Object(obj))
            .map_err(|e| ServiceError::CorruptLog(format!("record {}: {e}", self.seq)))
    }

    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("records serialize");
        s.push('\n');
        s
    }
}
