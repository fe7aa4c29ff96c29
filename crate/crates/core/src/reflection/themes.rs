//! Themes of a (possibly partial) live transcript and per-speaker summaries.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::prompt::PromptKind;
use super::ReflectionError;
use crate::gateway::{bindings, Gateway};
use crate::text;
use crate::transcript::Segment;

pub const MAX_THEMES: usize = 5;
/// One theme per this many segments, up to [`MAX_THEMES`].
pub const SEGMENTS_PER_THEME: usize = 4;
pub const KEY_TERMS: usize = 5;
const EXCERPT_CHARS: usize = 200;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Theme {
    pub theme: String,
    pub segments: Vec<usize>,
    /// Speaker → what they said on the theme.
    pub per_speaker_positions: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DraftQuestion {
    pub kind: PromptKind,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeakerSummary {
    pub speaker: String,
    pub key_positions: String,
    pub key_terms: Vec<String>,
    /// One question of each kind aimed at this speaker.
    pub questions: Vec<DraftQuestion>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThemeAnalysis {
    pub themes: Vec<Theme>,
    pub speakers: Vec<SpeakerSummary>,
    /// Some part fell back to keyword statistics after a gateway failure.
    pub low_fidelity: bool,
}

fn first_sentence(t: &str) -> String {
    let end = t.char_indices().find(|(_, c)| matches!(c, '.' | '!' | '?')).map_or(t.len(), |(i, c)| i + c.len_utf8());
    text::truncate_chars(t[..end].trim(), EXCERPT_CHARS)
}

fn speaker_words(segments: &[Segment]) -> BTreeSet<String> {
    segments.iter().flat_map(|s| text::tokens(&s.speaker)).collect()
}

/// Speaker → first sentence of their first segment among `indices`.
fn positions_on(segments: &[Segment], indices: &[usize]) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for &i in indices {
        let s = &segments[i];
        out.entry(s.speaker.clone()).or_insert_with(|| first_sentence(&s.text));
    }
    out
}

/// Keyword-frequency themes: content words ranked by the number of segments
/// using them, then total count, then alphabetically; a candidate whose
/// segment set mostly repeats an earlier theme's is skipped.
pub fn keyword_themes(segments: &[Segment]) -> Vec<Theme> {
    let skip = speaker_words(segments);
    let mut seg_sets: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
    let mut totals: BTreeMap<String, usize> = BTreeMap::new();
    for (i, s) in segments.iter().enumerate() {
        for t in text::content_tokens(&s.text) {
            if skip.contains(&t) {
                continue;
            }
            *totals.entry(t.clone()).or_default() += 1;
            seg_sets.entry(t).or_default().insert(i);
        }
    }
    let non_empty = segments.iter().filter(|s| !s.text.trim().is_empty()).count();
    if non_empty == 0 {
        return Vec::new();
    }
    let wanted = non_empty.div_ceil(SEGMENTS_PER_THEME).clamp(1, MAX_THEMES);
    let mut ranked: Vec<(&String, &BTreeSet<usize>)> = seg_sets.iter().collect();
    ranked.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(totals[b.0].cmp(&totals[a.0])).then(a.0.cmp(b.0)));

    let mut picked: Vec<(&String, &BTreeSet<usize>)> = Vec::new();
    for (tok, set) in ranked {
        if picked.len() == wanted {
            break;
        }
        let overlaps = picked.iter().any(|(_, p)| {
            let inter = p.intersection(set).count() as f64;
            let union = p.union(set).count() as f64;
            inter / union >= 0.8
        });
        if !overlaps {
            picked.push((tok, set));
        }
    }
    if picked.is_empty() {
        let all: Vec<usize> = (0..segments.len()).filter(|&i| !segments[i].text.trim().is_empty()).collect();
        return vec![Theme { theme: "general discussion".into(), per_speaker_positions: positions_on(segments, &all), segments: all }];
    }
    picked
        .into_iter()
        .map(|(tok, set)| {
            let idx: Vec<usize> = set.iter().copied().collect();
            Theme { theme: tok.clone(), per_speaker_positions: positions_on(segments, &idx), segments: idx }
        })
        .collect()
}

/// Most frequent content words of one speaker.
pub fn key_terms(segments: &[Segment], speaker: &str) -> Vec<String> {
    let skip = speaker_words(segments);
    let mut freq: BTreeMap<String, usize> = BTreeMap::new();
    for s in segments.iter().filter(|s| s.speaker == speaker) {
        for t in text::content_tokens(&s.text) {
            if !skip.contains(&t) {
                *freq.entry(t).or_default() += 1;
            }
        }
    }
    let mut v: Vec<(String, usize)> = freq.into_iter().collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    v.into_iter().take(KEY_TERMS).map(|(t, _)| t).collect()
}

#[derive(Deserialize)]
struct RemoteTheme {
    theme: String,
    segments: Vec<usize>,
}

fn remote_themes(segments: &[Segment], gateway: &Gateway) -> Result<Vec<Theme>, String> {
    let listing: Vec<String> = segments.iter().enumerate().map(|(i, s)| format!("{i}. {}: {}", s.speaker, s.text)).collect();
    let reply = gateway
        .complete("thematic_analysis", &bindings([("transcript", listing.join("\n"))]))
        .map_err(|e| e.to_string())?;
    let parsed: Vec<RemoteTheme> = serde_json::from_str(reply.trim()).map_err(|e| format!("unparseable themes: {e}"))?;
    if parsed.is_empty() {
        return Err("no themes returned".into());
    }
    parsed
        .into_iter()
        .map(|t| {
            let mut idx = t.segments;
            idx.sort_unstable();
            idx.dedup();
            if t.theme.trim().is_empty() || idx.is_empty() || idx.iter().any(|&i| i >= segments.len()) {
                return Err(format!("theme {:?} has invalid segment references", t.theme));
            }
            Ok(Theme { theme: t.theme.trim().to_string(), per_speaker_positions: positions_on(segments, &idx), segments: idx })
        })
        .collect()
}

fn fallback_question(kind: PromptKind, speaker: &str, theme: &str) -> String {
    match kind {
        PromptKind::Open => format!("{speaker}, how do you see {theme} developing from here?"),
        PromptKind::Clarifying => format!("{speaker}, could you clarify what you meant about {theme}?"),
        PromptKind::Provocative => format!("{speaker}, what would change your mind about {theme}?"),
    }
}

/// Themes with segment attributions plus per-speaker summaries and question
/// sets. The mock gateway (and any remote failure) uses keyword statistics
/// for the themes.
pub fn extract_themes(segments: &[Segment], gateway: &Gateway) -> Result<ThemeAnalysis, ReflectionError> {
    if segments.is_empty() {
        return Err(ReflectionError::NoSegments);
    }
    let mut low_fidelity = false;
    let themes = if gateway.is_mock() {
        keyword_themes(segments)
    } else {
        remote_themes(segments, gateway).unwrap_or_else(|e| {
            log::warn!("thematic analysis fell back to keywords: {e}");
            low_fidelity = true;
            keyword_themes(segments)
        })
    };

    let mut order: Vec<&str> = Vec::new();
    for s in segments {
        if !order.contains(&s.speaker.as_str()) {
            order.push(&s.speaker);
        }
    }
    let mut speakers = Vec::with_capacity(order.len());
    for speaker in order {
        let said: Vec<&str> = segments.iter().filter(|s| s.speaker == speaker).map(|s| s.text.as_str()).collect();
        let terms = key_terms(segments, speaker);
        let key_positions = match gateway.complete("speaker_positions", &bindings([("speaker", speaker.into()), ("text", said.join("\n"))])) {
            Ok(t) => t.trim().to_string(),
            Err(e) => {
                log::warn!("speaker summary for {speaker} fell back to key terms: {e}");
                low_fidelity = true;
                format!("Key terms: {}", terms.join(", "))
            }
        };
        let own: BTreeSet<usize> = segments.iter().enumerate().filter(|(_, s)| s.speaker == speaker).map(|(i, _)| i).collect();
        let theme = themes.iter().find(|t| t.segments.iter().any(|i| own.contains(i)));
        let theme_label = theme.map_or_else(|| terms.first().cloned().unwrap_or_else(|| "this topic".into()), |t| t.theme.clone());
        let excerpt = theme.and_then(|t| t.per_speaker_positions.get(speaker).cloned()).unwrap_or_else(|| first_sentence(said[0]));
        let mut questions = Vec::with_capacity(3);
        for kind in PromptKind::ALL {
            let text = match gateway.complete(
                "theme_question",
                &bindings([("theme", theme_label.clone()), ("kind", kind.word().into()), ("excerpt", excerpt.clone())]),
            ) {
                Ok(t) => t.trim().to_string(),
                Err(_) => {
                    low_fidelity = true;
                    fallback_question(kind, speaker, &theme_label)
                }
            };
            questions.push(DraftQuestion { kind, text });
        }
        speakers.push(SpeakerSummary { speaker: speaker.into(), key_positions, key_terms: terms, questions });
    }
    Ok(ThemeAnalysis { themes, speakers, low_fidelity })
}
