//! Draft IBIS trees assembled from component markup, and the curator patch
//! language applied to them.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::graph::{check_shape, CharRange, ContributionKind, GraphError, Provenance, ProvenanceSource, Stance};
use crate::ids::{ParticipantId, SessionId};
use crate::text;
use crate::transcript::Transcript;

use super::markup::{Component, ComponentMarkup, RelationKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DraftNodeId(pub u32);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DraftNode {
    pub id: DraftNodeId,
    pub kind: ContributionKind,
    pub stance: Stance,
    pub text: String,
    pub author: ParticipantId,
    pub parent: Option<DraftNodeId>,
    pub provenance: Provenance,
    /// Markup span the node was derived from; `None` for the working Issue
    /// and curator inserts.
    pub markup_id: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DraftIbis {
    pub nodes: Vec<DraftNode>,
    next_id: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum PatchOp {
    Retype { node: DraftNodeId, kind: ContributionKind, stance: Stance },
    Retext { node: DraftNodeId, text: String },
    Reparent { node: DraftNodeId, parent: Option<DraftNodeId> },
    /// Removes the node and all of its descendants.
    Delete { node: DraftNodeId },
    Insert {
        kind: ContributionKind,
        stance: Stance,
        text: String,
        author: ParticipantId,
        parent: Option<DraftNodeId>,
        segment_index: usize,
        char_range: CharRange,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchOutcome {
    pub removed: usize,
    pub inserted: Vec<DraftNodeId>,
}

impl DraftIbis {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: DraftNodeId) -> Option<&DraftNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    fn node_mut(&mut self, id: DraftNodeId) -> Result<&mut DraftNode, String> {
        self.nodes.iter_mut().find(|n| n.id == id).ok_or_else(|| format!("unknown draft node {}", id.0))
    }

    fn push(&mut self, mut node: DraftNode) -> DraftNodeId {
        let id = DraftNodeId(self.next_id);
        self.next_id += 1;
        node.id = id;
        self.nodes.push(node);
        id
    }

    pub fn count(&self, kind: ContributionKind) -> usize {
        self.nodes.iter().filter(|n| n.kind == kind).count()
    }

    /// Builds the draft: the working Issue, one Position per Claim, an Argument
    /// per Premise (stance from its Supports/Attacks relation to a Claim, loose
    /// Premises as Pro under the nearest preceding Claim). Returns the draft and
    /// warnings about markup that could not be placed.
    pub fn assemble(
        transcript: &Transcript,
        markup: &[ComponentMarkup],
        issue_text: &str,
        session: &SessionId,
    ) -> (DraftIbis, Vec<String>) {
        let mut draft = DraftIbis::default();
        let mut warnings = Vec::new();
        let Some((first_idx, first)) = transcript.segments.iter().enumerate().find(|(_, s)| s.char_len() > 0) else {
            if !transcript.segments.is_empty() {
                warnings.push("transcript has no non-empty segment; draft left empty".into());
            }
            return (draft, warnings);
        };
        let span = |seg: usize, range: CharRange| Provenance::span(transcript.id.clone(), seg, range, Some(session.clone()));
        let issue = draft.push(DraftNode {
            id: DraftNodeId(0),
            kind: ContributionKind::Issue,
            stance: Stance::None,
            text: issue_text.to_string(),
            author: first.speaker.as_str().into(),
            parent: None,
            provenance: span(first_idx, CharRange::new(0, first.char_len())),
            markup_id: None,
        });

        let span_text = |m: &ComponentMarkup| {
            text::char_slice(&transcript.segments[m.segment_index].text, m.char_range.start, m.char_range.end)
                .unwrap_or_default()
                .to_string()
        };
        let speaker = |m: &ComponentMarkup| ParticipantId::from(transcript.segments[m.segment_index].speaker.as_str());

        let mut by_markup: BTreeMap<usize, DraftNodeId> = BTreeMap::new();
        let mut claims: Vec<&ComponentMarkup> = markup.iter().filter(|m| m.component == Component::Claim).collect();
        claims.sort_by_key(|m| (m.segment_index, m.char_range.start, m.id));
        for m in &claims {
            let id = draft.push(DraftNode {
                id: DraftNodeId(0),
                kind: ContributionKind::Position,
                stance: Stance::None,
                text: span_text(m),
                author: speaker(m),
                parent: Some(issue),
                provenance: span(m.segment_index, m.char_range),
                markup_id: Some(m.id),
            });
            by_markup.insert(m.id, id);
        }

        let mut premises: Vec<&ComponentMarkup> = markup.iter().filter(|m| m.component == Component::Premise).collect();
        premises.sort_by_key(|m| (m.segment_index, m.char_range.start, m.id));
        // premise → premise relations may nest one level, so resolve in passes
        let mut pending = premises;
        loop {
            let mut next = Vec::new();
            let before = pending.len();
            for m in pending {
                let related = m.relations.iter().find_map(|r| {
                    let target = markup.get(r.target)?;
                    let parent = *by_markup.get(&target.id)?;
                    let stance = match r.kind {
                        RelationKind::Supports => Stance::Pro,
                        RelationKind::Attacks => Stance::Con,
                    };
                    Some((parent, stance))
                });
                let waits_on_unplaced = m.relations.iter().any(|r| {
                    markup.get(r.target).is_some_and(|t| t.component == Component::Premise && !by_markup.contains_key(&t.id))
                });
                let placement = match related {
                    Some(p) => Some(p),
                    None if waits_on_unplaced => {
                        next.push(m);
                        continue;
                    }
                    None => claims
                        .iter()
                        .rev()
                        .find(|c| (c.segment_index, c.char_range.start) < (m.segment_index, m.char_range.start))
                        .map(|c| (by_markup[&c.id], Stance::Pro)),
                };
                let Some((parent, stance)) = placement else {
                    warnings.push(format!("premise markup {} has no preceding claim; not placed", m.id));
                    continue;
                };
                let parent_depth = draft.argument_depth(parent).unwrap_or(usize::MAX);
                let parent_kind = draft.node(parent).map(|n| n.kind);
                let parent = if parent_kind == Some(ContributionKind::Argument) && parent_depth >= 2 {
                    // too deep: hang it from the grandparent instead
                    draft.node(parent).and_then(|n| n.parent).unwrap_or(parent)
                } else {
                    parent
                };
                let id = draft.push(DraftNode {
                    id: DraftNodeId(0),
                    kind: ContributionKind::Argument,
                    stance,
                    text: span_text(m),
                    author: speaker(m),
                    parent: Some(parent),
                    provenance: span(m.segment_index, m.char_range),
                    markup_id: Some(m.id),
                });
                by_markup.insert(m.id, id);
            }
            if next.is_empty() {
                break;
            }
            if next.len() == before {
                for m in next {
                    warnings.push(format!("premise markup {} only relates to unplaced premises; not placed", m.id));
                }
                break;
            }
            pending = next;
        }
        (draft, warnings)
    }

    fn argument_depth(&self, id: DraftNodeId) -> Result<usize, String> {
        let mut depth = 0;
        let mut seen = BTreeSet::new();
        let mut cur = self.node(id).ok_or_else(|| format!("unknown draft node {}", id.0))?;
        while cur.kind == ContributionKind::Argument {
            if !seen.insert(cur.id) {
                return Err("cycle in draft".into());
            }
            depth += 1;
            let Some(p) = cur.parent else { return Err(format!("argument {} has no parent", cur.id.0)) };
            cur = self.node(p).ok_or_else(|| format!("draft node {} has dangling parent", cur.id.0))?;
        }
        Ok(depth)
    }

    /// Nodes ordered parents-before-children.
    pub fn topological(&self) -> Vec<&DraftNode> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut placed: BTreeSet<DraftNodeId> = BTreeSet::new();
        while out.len() < self.nodes.len() {
            let before = out.len();
            for n in &self.nodes {
                if !placed.contains(&n.id) && n.parent.is_none_or(|p| placed.contains(&p)) {
                    placed.insert(n.id);
                    out.push(n);
                }
            }
            if out.len() == before {
                break; // only reachable for invalid drafts
            }
        }
        out
    }

    /// Same rules as the live graph, plus: every node carries a valid
    /// transcript span.
    pub fn validate(&self, transcript: &Transcript) -> Result<(), String> {
        let ids: BTreeSet<DraftNodeId> = self.nodes.iter().map(|n| n.id).collect();
        if ids.len() != self.nodes.len() {
            return Err("duplicate draft node ids".into());
        }
        let transcripts = BTreeMap::from([(transcript.id.clone(), transcript.clone())]);
        for n in &self.nodes {
            if n.text.trim().is_empty() {
                return Err(format!("node {}: empty text", n.id.0));
            }
            let mut seen = BTreeSet::from([n.id]);
            let mut cur = n;
            while let Some(p) = cur.parent {
                if !seen.insert(p) {
                    return Err(format!("node {}: {}", n.id.0, GraphError::CycleDetected));
                }
                cur = self.node(p).ok_or_else(|| format!("node {}: parent {} missing", n.id.0, p.0))?;
            }
            let parent = match n.parent {
                None => None,
                Some(p) => Some((self.node(p).expect("checked above").kind, self.argument_depth(p)?)),
            };
            check_shape(n.kind, n.stance, parent).map_err(|e| format!("node {}: {e}", n.id.0))?;
            if n.provenance.source != ProvenanceSource::TranscriptSpan {
                return Err(format!("node {}: draft nodes need transcript provenance", n.id.0));
            }
            if n.provenance.transcript_id.as_ref() != Some(&transcript.id) {
                return Err(format!("node {}: provenance names another transcript", n.id.0));
            }
            n.provenance.validate(&transcripts).map_err(|e| format!("node {}: {e}", n.id.0))?;
        }
        Ok(())
    }

    /// Applies all ops or none.
    pub fn apply_patch(
        &mut self,
        ops: &[PatchOp],
        transcript: &Transcript,
        session: &SessionId,
    ) -> Result<PatchOutcome, String> {
        let mut work = self.clone();
        let mut outcome = PatchOutcome::default();
        for (i, op) in ops.iter().enumerate() {
            work.apply_op(op, transcript, session, &mut outcome).map_err(|e| format!("op {i}: {e}"))?;
        }
        work.validate(transcript)?;
        *self = work;
        Ok(outcome)
    }

    fn apply_op(
        &mut self,
        op: &PatchOp,
        transcript: &Transcript,
        session: &SessionId,
        outcome: &mut PatchOutcome,
    ) -> Result<(), String> {
        match op {
            PatchOp::Retype { node, kind, stance } => {
                let n = self.node_mut(*node)?;
                n.kind = *kind;
                n.stance = *stance;
            }
            PatchOp::Retext { node, text } => {
                self.node_mut(*node)?.text = text.clone();
            }
            PatchOp::Reparent { node, parent } => {
                if let Some(p) = parent {
                    self.node(*p).ok_or_else(|| format!("unknown draft node {}", p.0))?;
                }
                self.node_mut(*node)?.parent = *parent;
            }
            PatchOp::Delete { node } => {
                self.node(*node).ok_or_else(|| format!("unknown draft node {}", node.0))?;
                let mut doomed = BTreeSet::from([*node]);
                loop {
                    let grown: Vec<DraftNodeId> = self
                        .nodes
                        .iter()
                        .filter(|n| !doomed.contains(&n.id) && n.parent.is_some_and(|p| doomed.contains(&p)))
                        .map(|n| n.id)
                        .collect();
                    if grown.is_empty() {
                        break;
                    }
                    doomed.extend(grown);
                }
                self.nodes.retain(|n| !doomed.contains(&n.id));
                outcome.removed += doomed.len();
            }
            PatchOp::Insert { kind, stance, text, author, parent, segment_index, char_range } => {
                if let Some(p) = parent {
                    self.node(*p).ok_or_else(|| format!("unknown draft node {}", p.0))?;
                }
                let id = self.push(DraftNode {
                    id: DraftNodeId(0),
                    kind: *kind,
                    stance: *stance,
                    text: text.clone(),
                    author: author.clone(),
                    parent: *parent,
                    provenance: Provenance::span(transcript.id.clone(), *segment_index, *char_range, Some(session.clone())),
                    markup_id: None,
                });
                outcome.inserted.push(id);
            }
        }
        Ok(())
    }
}
