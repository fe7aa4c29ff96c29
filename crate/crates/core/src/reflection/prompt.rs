//! Facilitator questions drafted from spike alerts.

use serde::{Deserialize, Serialize};

use super::series::{EngagementSeries, SpikeAlert};
use super::{CardCategory, ReflectionDeck, ReflectionError, SegmentRef};
use crate::gateway::{bindings, Gateway};
use crate::ids::{CardId, EventId, PromptId};
use crate::transcript::Transcript;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, schemars::JsonSchema)]
pub enum PromptKind {
    Open,
    Clarifying,
    Provocative,
}

impl PromptKind {
    pub const ALL: [PromptKind; 3] = [PromptKind::Open, PromptKind::Clarifying, PromptKind::Provocative];

    /// Disagreement asks for clarification, agreement invites deepening,
    /// emotional and custom cards provoke.
    pub fn for_category(category: CardCategory) -> Self {
        match category {
            CardCategory::Disagree => PromptKind::Clarifying,
            CardCategory::Agree => PromptKind::Open,
            CardCategory::Emotion | CardCategory::Custom => PromptKind::Provocative,
        }
    }

    pub fn word(self) -> &'static str {
        match self {
            PromptKind::Open => "open",
            PromptKind::Clarifying => "clarifying",
            PromptKind::Provocative => "provocative",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct PromptGrounding {
    pub alert_id: String,
    pub card_id: CardId,
    pub window_index: usize,
    pub theme: Option<String>,
    pub segment_refs: Vec<SegmentRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct FacilitatorPrompt {
    pub id: PromptId,
    pub event_id: EventId,
    pub kind: PromptKind,
    pub text: String,
    pub instruction: String,
    pub grounding: PromptGrounding,
    /// Only a facilitator flips this; prompts are never auto-delivered.
    pub delivered: bool,
    /// Gateway failed; `text` is the templated extractive question.
    pub fallback: bool,
}

pub fn instruction(kind: PromptKind, card_label: &str) -> String {
    format!(
        "Based on the speaker's point and the audience's strong '{card_label}' reflection, generate a {} question for the facilitator to ask.",
        kind.word()
    )
}

pub fn fallback_text(card_label: &str, speaker: &str, theme: &str) -> String {
    format!("The audience strongly signaled {card_label} during {speaker}'s point on {theme} — could the panel respond?")
}

/// Reflection counts of the alert's window, alert card first.
pub fn aggregate_text(alert: &SpikeAlert, deck: &ReflectionDeck, series: &EngagementSeries) -> String {
    let label = |c: &CardId| deck.card(c).map_or_else(|| c.to_string(), |c| c.label.clone());
    let mut lines = vec![format!(
        "'{}': {} reflections in this window (trailing mean {:.2}, z = {:.2})",
        label(&alert.card_id),
        alert.count,
        alert.baseline_mean,
        alert.z_score
    )];
    for card in &deck.cards {
        if card.card_id == alert.card_id {
            continue;
        }
        let n = series.counts.get(&card.card_id).and_then(|v| v.get(alert.window_index)).copied().unwrap_or(0);
        lines.push(format!("'{}': {n}", card.label));
    }
    lines.join("\n")
}

pub fn prompt_id(alert: &SpikeAlert) -> PromptId {
    format!("prompt-{}", alert.id).into()
}

/// Renders the facilitator template from the linked segment, the window's
/// reflection aggregate and the kind instruction.
pub fn generate_prompt(
    event_id: &EventId,
    alert: &SpikeAlert,
    deck: &ReflectionDeck,
    transcript: &Transcript,
    series: &EngagementSeries,
    gateway: &Gateway,
) -> Result<FacilitatorPrompt, ReflectionError> {
    let card = deck.card(&alert.card_id).ok_or_else(|| ReflectionError::UnknownCard(alert.card_id.clone()))?;
    let seg_ref = alert.linked_segment.clone().ok_or(ReflectionError::UnresolvedGrounding("alert has no linked segment".into()))?;
    if seg_ref.transcript_id != transcript.id {
        return Err(ReflectionError::UnresolvedGrounding(format!("alert links transcript {}", seg_ref.transcript_id)));
    }
    let segment = transcript
        .segments
        .get(seg_ref.segment_index)
        .ok_or_else(|| ReflectionError::UnresolvedGrounding(format!("segment {} missing", seg_ref.segment_index)))?;
    let kind = PromptKind::for_category(card.category);
    let instruction = instruction(kind, &card.label);
    let b = bindings([
        ("speaker", segment.speaker.clone()),
        ("segment", segment.text.clone()),
        ("aggregate", aggregate_text(alert, deck, series)),
        ("instruction", instruction.clone()),
    ]);
    let theme = alert.theme.clone().unwrap_or_else(|| "this topic".into());
    let (text, fallback) = match gateway.complete("facilitator_question", &b) {
        Ok(t) if !t.trim().is_empty() => (t.trim().to_string(), false),
        other => {
            if let Err(e) = other {
                log::warn!("facilitator question fell back to template: {e}");
            }
            (fallback_text(&card.label, &segment.speaker, &theme), true)
        }
    };
    Ok(FacilitatorPrompt {
        id: prompt_id(alert),
        event_id: event_id.clone(),
        kind,
        text,
        instruction,
        grounding: PromptGrounding {
            alert_id: alert.id.clone(),
            card_id: alert.card_id.clone(),
            window_index: alert.window_index,
            theme: alert.theme.clone(),
            segment_refs: vec![seg_ref],
        },
        delivered: false,
        fallback,
    })
}
