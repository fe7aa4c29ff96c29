//! Diarized transcripts: the ingestion format shared by file upload, the CLI
//! and live events.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::TranscriptId;
use crate::text;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub speaker: String,
    pub start_ms: u64,
    pub end_ms: u64,
    pub text: String,
}

impl Segment {
    pub fn char_len(&self) -> usize {
        text::char_len(&self.text)
    }
}

/// Wire format for transcript upload: `{event_title, language, segments}`.
/// Unknown fields are rejected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranscriptInput {
    pub event_title: String,
    pub language: String,
    pub segments: Vec<Segment>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub id: TranscriptId,
    pub event_title: String,
    pub language: String,
    pub segments: Vec<Segment>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TranscriptError {
    #[error("malformed transcript json: {0}")]
    Malformed(String),
    #[error("segment {index}: end_ms must exceed start_ms")]
    EmptyInterval { index: usize },
    #[error("segment {index}: segments must be ordered by start_ms")]
    Unordered { index: usize },
    #[error("segment {index}: overlaps previous segment of speaker {speaker}")]
    SpeakerOverlap { index: usize, speaker: String },
    #[error("language tag {0:?} is not a BCP-47 tag")]
    BadLanguage(String),
}

impl TranscriptInput {
    pub fn from_json(bytes: &[u8]) -> Result<Self, TranscriptError> {
        serde_json::from_slice(bytes).map_err(|e| TranscriptError::Malformed(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), TranscriptError> {
        validate_language(&self.language)?;
        validate_segments(&self.segments)
    }

    pub fn into_transcript(self, id: TranscriptId) -> Transcript {
        Transcript {
            id,
            event_title: self.event_title,
            language: self.language,
            segments: self.segments,
        }
    }
}

impl Transcript {
    pub fn validate(&self) -> Result<(), TranscriptError> {
        validate_language(&self.language)?;
        validate_segments(&self.segments)
    }

    /// Segments starting before `until_ms`; the part of a live transcript
    /// available at that moment.
    pub fn prefix(&self, until_ms: u64) -> &[Segment] {
        let n = self.segments.iter().take_while(|s| s.start_ms < until_ms).count();
        &self.segments[..n]
    }

    /// Segment with the largest overlap with `[start_ms, end_ms)`; earliest
    /// index wins ties. `None` when nothing overlaps.
    pub fn segment_overlapping(&self, start_ms: u64, end_ms: u64) -> Option<usize> {
        let mut best: Option<(usize, u64)> = None;
        for (i, s) in self.segments.iter().enumerate() {
            let lo = s.start_ms.max(start_ms);
            let hi = s.end_ms.min(end_ms);
            if hi > lo {
                let ov = hi - lo;
                if best.is_none_or(|(_, b)| ov > b) {
                    best = Some((i, ov));
                }
            }
        }
        best.map(|(i, _)| i)
    }
}

fn validate_language(tag: &str) -> Result<(), TranscriptError> {
    let ok = !tag.is_empty()
        && tag.split('-').enumerate().all(|(i, part)| {
            let len_ok = if i == 0 { (2..=8).contains(&part.len()) } else { (1..=8).contains(&part.len()) };
            len_ok && part.chars().all(|c| c.is_ascii_alphanumeric())
        })
        && tag.split('-').next().is_some_and(|p| p.chars().all(|c| c.is_ascii_alphabetic()));
    if ok {
        Ok(())
    } else {
        Err(TranscriptError::BadLanguage(tag.to_string()))
    }
}

fn validate_segments(segments: &[Segment]) -> Result<(), TranscriptError> {
    let mut last_end: BTreeMap<&str, u64> = BTreeMap::new();
    let mut prev_start = 0;
    for (index, s) in segments.iter().enumerate() {
        if s.end_ms <= s.start_ms {
            return Err(TranscriptError::EmptyInterval { index });
        }
        if s.start_ms < prev_start {
            return Err(TranscriptError::Unordered { index });
        }
        prev_start = s.start_ms;
        if let Some(&end) = last_end.get(s.speaker.as_str()) {
            if s.start_ms < end {
                return Err(TranscriptError::SpeakerOverlap { index, speaker: s.speaker.clone() });
            }
        }
        last_end.insert(&s.speaker, s.end_ms);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(speaker: &str, start: u64, end: u64) -> Segment {
        Segment { speaker: speaker.into(), start_ms: start, end_ms: end, text: "x".into() }
    }

    #[test]
    fn parses_wire_format() {
        let json = br#"{"event_title":"T","language":"en-GB","segments":[
            {"speaker":"A","start_ms":0,"end_ms":10,"text":"hi"}]}"#;
        let t = TranscriptInput::from_json(json).unwrap();
        t.validate().unwrap();
        assert_eq!(t.segments[0].text, "hi");
    }

    #[test]
    fn rejects_unknown_fields() {
        let json = br#"{"event_title":"T","language":"en","segments":[],"extra":1}"#;
        assert!(matches!(TranscriptInput::from_json(json), Err(TranscriptError::Malformed(_))));
    }

    #[test]
    fn segment_rules() {
        let base = |segments| TranscriptInput { event_title: "t".into(), language: "en".into(), segments };
        assert_eq!(base(vec![seg("A", 5, 5)]).validate(), Err(TranscriptError::EmptyInterval { index: 0 }));
        assert_eq!(
            base(vec![seg("A", 5, 9), seg("B", 1, 3)]).validate(),
            Err(TranscriptError::Unordered { index: 1 })
        );
        assert!(matches!(
            base(vec![seg("A", 0, 10), seg("A", 5, 12)]).validate(),
            Err(TranscriptError::SpeakerOverlap { index: 1, .. })
        ));
        // different speakers may overlap (crosstalk)
        base(vec![seg("A", 0, 10), seg("B", 5, 12)]).validate().unwrap();
    }

    #[test]
    fn language_tags() {
        assert!(validate_language("en").is_ok());
        assert!(validate_language("pt-BR").is_ok());
        assert!(validate_language("zh-Hant-TW").is_ok());
        assert!(validate_language("").is_err());
        assert!(validate_language("e").is_err());
        assert!(validate_language("en_GB").is_err());
    }

    #[test]
    fn overlap_lookup() {
        let t = Transcript {
            id: "t".into(),
            event_title: "e".into(),
            language: "en".into(),
            segments: vec![seg("A", 0, 10_000), seg("B", 10_000, 30_000)],
        };
        assert_eq!(t.segment_overlapping(0, 15_000), Some(0));
        assert_eq!(t.segment_overlapping(15_000, 30_000), Some(1));
        assert_eq!(t.segment_overlapping(30_000, 45_000), None);
        assert_eq!(t.prefix(10_000).len(), 1);
    }
}
