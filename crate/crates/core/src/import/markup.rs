use serde::{Deserialize, Serialize};

use crate::graph::CharRange;
use crate::transcript::Segment;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Component {
    Claim,
    Premise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RelationKind {
    Supports,
    Attacks,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Relation {
    pub target: usize,
    #[serde(rename = "type")]
    pub kind: RelationKind,
}

/// One argumentative span inside a transcript segment. `id` is the span's
/// index in the markup list; relations point at other ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentMarkup {
    pub id: usize,
    pub segment_index: usize,
    pub char_range: CharRange,
    pub component: Component,
    pub confidence: f64,
    pub relations: Vec<Relation>,
}

pub fn validate_markup(markup: &[ComponentMarkup], segments: &[Segment]) -> Result<(), String> {
    for (i, m) in markup.iter().enumerate() {
        if m.id != i {
            return Err(format!("markup {i}: id {} out of sequence", m.id));
        }
        let seg = segments
            .get(m.segment_index)
            .ok_or_else(|| format!("markup {i}: segment {} does not exist", m.segment_index))?;
        if !m.char_range.within(seg.char_len()) {
            return Err(format!(
                "markup {i}: char_range [{}, {}) outside segment {} of length {}",
                m.char_range.start,
                m.char_range.end,
                m.segment_index,
                seg.char_len()
            ));
        }
        if !(0.0..=1.0).contains(&m.confidence) {
            return Err(format!("markup {i}: confidence {} outside [0, 1]", m.confidence));
        }
        for r in &m.relations {
            if r.target == i {
                return Err(format!("markup {i}: self relation"));
            }
            if r.target >= markup.len() {
                return Err(format!("markup {i}: relation to unknown markup {}", r.target));
            }
        }
    }
    Ok(())
}
