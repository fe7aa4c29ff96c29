//! IBIS argument graph: discussions organised as focal Issue → Positions →
//! pro/con Arguments, with provenance on every node.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{ContributionId, DiscussionId, IdMint, ParticipantId, SessionId, Timestamp, TranscriptId};
use crate::text;
use crate::transcript::Transcript;

/// Maximum number of Argument levels below a Position.
pub const MAX_ARGUMENT_DEPTH: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    Open,
    Analyzing,
    Reporting,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ContributionKind {
    Issue,
    Position,
    Argument,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stance {
    Pro,
    Con,
    None,
}

/// Half-open character range `[start, end)`; serialized as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct CharRange {
    pub start: usize,
    pub end: usize,
}

impl CharRange {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn within(&self, len: usize) -> bool {
        self.start < self.end && self.end <= len
    }
}

impl From<[usize; 2]> for CharRange {
    fn from(a: [usize; 2]) -> Self {
        Self { start: a[0], end: a[1] }
    }
}

impl From<CharRange> for [usize; 2] {
    fn from(r: CharRange) -> Self {
        [r.start, r.end]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProvenanceSource {
    OnlinePost,
    TranscriptSpan,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub source: ProvenanceSource,
    pub transcript_id: Option<TranscriptId>,
    pub segment_index: Option<usize>,
    pub char_range: Option<CharRange>,
    pub import_session_id: Option<SessionId>,
}

impl Provenance {
    pub fn online() -> Self {
        Self {
            source: ProvenanceSource::OnlinePost,
            transcript_id: None,
            segment_index: None,
            char_range: None,
            import_session_id: None,
        }
    }

    pub fn span(transcript_id: TranscriptId, segment_index: usize, range: CharRange, session: Option<SessionId>) -> Self {
        Self {
            source: ProvenanceSource::TranscriptSpan,
            transcript_id: Some(transcript_id),
            segment_index: Some(segment_index),
            char_range: Some(range),
            import_session_id: session,
        }
    }

    /// Checks the field-presence rules and, for transcript spans, that the
    /// range lies inside the referenced segment.
    pub fn validate(&self, transcripts: &BTreeMap<TranscriptId, Transcript>) -> Result<(), GraphError> {
        match self.source {
            ProvenanceSource::OnlinePost => {
                if self.transcript_id.is_some() || self.segment_index.is_some() || self.char_range.is_some() {
                    return Err(GraphError::InvalidProvenance("online post carries transcript fields".into()));
                }
                Ok(())
            }
            ProvenanceSource::TranscriptSpan => {
                let (Some(tid), Some(seg), Some(range)) = (&self.transcript_id, self.segment_index, self.char_range) else {
                    return Err(GraphError::InvalidProvenance("transcript span missing transcript fields".into()));
                };
                let transcript = transcripts
                    .get(tid)
                    .ok_or_else(|| GraphError::Integrity(format!("dangling transcript id {tid}")))?;
                let segment = transcript
                    .segments
                    .get(seg)
                    .ok_or_else(|| GraphError::Integrity(format!("transcript {tid} has no segment {seg}")))?;
                if !range.within(segment.char_len()) {
                    return Err(GraphError::InvalidProvenance(format!(
                        "char_range [{}, {}) outside segment {seg} of length {}",
                        range.start,
                        range.end,
                        segment.char_len()
                    )));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Discussion {
    pub id: DiscussionId,
    pub title: String,
    pub focal_question: ContributionId,
    pub phase: Phase,
    pub created_at: Timestamp,
    pub members: BTreeSet<ParticipantId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contribution {
    pub id: ContributionId,
    pub discussion_id: DiscussionId,
    pub kind: ContributionKind,
    pub stance: Stance,
    pub text: String,
    pub author: ParticipantId,
    pub parent: Option<ContributionId>,
    pub provenance: Provenance,
    pub created_at: Timestamp,
    pub endorsements: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewContribution {
    pub discussion_id: DiscussionId,
    pub kind: ContributionKind,
    pub stance: Stance,
    pub text: String,
    pub author: ParticipantId,
    pub parent: Option<ContributionId>,
    pub provenance: Provenance,
}

/// Who is inserting. Merges from an approved import may write into a
/// discussion that has left the Open phase (but not a Closed one).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertMode {
    Participant,
    Merge,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("unknown discussion {0}")]
    UnknownDiscussion(DiscussionId),
    #[error("unknown contribution {0}")]
    UnknownContribution(ContributionId),
    #[error("{kind:?} cannot be placed under {parent:?}")]
    InvalidParentKind { kind: ContributionKind, parent: Option<ContributionKind> },
    #[error("arguments need a Pro or Con stance")]
    StanceRequired,
    #[error("{0:?} must not carry a stance")]
    StanceNotAllowed(ContributionKind),
    #[error("argument nesting deeper than {MAX_ARGUMENT_DEPTH} levels below a position")]
    DepthExceeded,
    #[error("parent chain forms a cycle")]
    CycleDetected,
    #[error("discussion is in phase {0:?}; contributions require Open")]
    NotOpen(Phase),
    #[error("discussion is closed")]
    Closed,
    #[error("contribution text must be non-empty")]
    EmptyText,
    #[error("parent belongs to a different discussion")]
    ForeignParent,
    #[error("phase may only move forward ({from:?} -> {to:?} refused)")]
    PhaseRegression { from: Phase, to: Phase },
    #[error("invalid provenance: {0}")]
    InvalidProvenance(String),
    #[error("integrity error: {0}")]
    Integrity(String),
}

impl GraphError {
    /// Name of the violated invariant, used in API error bodies.
    pub fn invariant(&self) -> &'static str {
        match self {
            GraphError::UnknownDiscussion(_) | GraphError::UnknownContribution(_) => "exists",
            GraphError::InvalidParentKind { .. } => "contribution.parent_kind",
            GraphError::StanceRequired | GraphError::StanceNotAllowed(_) => "contribution.stance",
            GraphError::DepthExceeded => "contribution.argument_depth",
            GraphError::CycleDetected => "graph.forest",
            GraphError::NotOpen(_) | GraphError::Closed => "discussion.phase_open",
            GraphError::EmptyText => "contribution.text_nonempty",
            GraphError::ForeignParent => "contribution.same_discussion",
            GraphError::PhaseRegression { .. } => "discussion.phase_forward",
            GraphError::InvalidProvenance(_) => "provenance.fields",
            GraphError::Integrity(_) => "provenance.resolvable",
        }
    }
}

/// Shape rules shared by the live graph and import drafts. `parent` is the
/// parent's kind plus, for Arguments, its depth below the Position.
/// Returns the new node's argument depth (0 for non-arguments).
pub fn check_shape(
    kind: ContributionKind,
    stance: Stance,
    parent: Option<(ContributionKind, usize)>,
) -> Result<usize, GraphError> {
    use ContributionKind::*;
    match kind {
        Issue => {
            if stance != Stance::None {
                return Err(GraphError::StanceNotAllowed(Issue));
            }
            match parent {
                None => Ok(0),
                Some((p, _)) => Err(GraphError::InvalidParentKind { kind, parent: Some(p) }),
            }
        }
        Position => {
            if stance != Stance::None {
                return Err(GraphError::StanceNotAllowed(Position));
            }
            match parent {
                Some((Issue, _)) => Ok(0),
                other => Err(GraphError::InvalidParentKind { kind, parent: other.map(|p| p.0) }),
            }
        }
        Argument => {
            let depth = match parent {
                Some((Position, _)) => 1,
                Some((Argument, d)) => d + 1,
                other => return Err(GraphError::InvalidParentKind { kind, parent: other.map(|p| p.0) }),
            };
            if stance == Stance::None {
                return Err(GraphError::StanceRequired);
            }
            if depth > MAX_ARGUMENT_DEPTH {
                return Err(GraphError::DepthExceeded);
            }
            Ok(depth)
        }
    }
}

/// contested(pro, con) = (min/max) · ln(1 + pro + con); 0 when a side is empty.
pub fn contestedness(pro: usize, con: usize) -> f64 {
    let (lo, hi) = (pro.min(con), pro.max(con));
    if lo == 0 {
        return 0.0;
    }
    (lo as f64 / hi as f64) * ((1 + pro + con) as f64).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContestedPosition {
    pub position_id: ContributionId,
    pub score: f64,
    pub pro: usize,
    pub con: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "link", rename_all = "snake_case")]
pub enum ProvenanceLink {
    Author { participant: ParticipantId },
    TranscriptSegment {
        transcript_id: TranscriptId,
        segment_index: usize,
        char_range: CharRange,
        speaker: String,
        excerpt: String,
    },
    ImportSession { session_id: SessionId },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceChain {
    pub contribution_id: ContributionId,
    pub links: Vec<ProvenanceLink>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArgumentGraph {
    discussions: BTreeMap<DiscussionId, Discussion>,
    contributions: BTreeMap<ContributionId, Contribution>,
    children: BTreeMap<ContributionId, Vec<ContributionId>>,
    endorsers: BTreeMap<ContributionId, BTreeSet<ParticipantId>>,
    transcripts: BTreeMap<TranscriptId, Transcript>,
}

impl ArgumentGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn discussion(&self, id: &DiscussionId) -> Result<&Discussion, GraphError> {
        self.discussions.get(id).ok_or_else(|| GraphError::UnknownDiscussion(id.clone()))
    }

    pub fn discussions(&self) -> impl Iterator<Item = &Discussion> {
        self.discussions.values()
    }

    pub fn contribution(&self, id: &ContributionId) -> Result<&Contribution, GraphError> {
        self.contributions.get(id).ok_or_else(|| GraphError::UnknownContribution(id.clone()))
    }

    pub fn transcripts(&self) -> &BTreeMap<TranscriptId, Transcript> {
        &self.transcripts
    }

    pub fn transcript(&self, id: &TranscriptId) -> Option<&Transcript> {
        self.transcripts.get(id)
    }

    pub fn register_transcript(&mut self, transcript: Transcript) {
        self.transcripts.insert(transcript.id.clone(), transcript);
    }

    /// Contributions of a discussion in creation order.
    pub fn contributions_of<'a>(&'a self, discussion: &'a DiscussionId) -> impl Iterator<Item = &'a Contribution> + 'a {
        self.contributions.values().filter(move |c| &c.discussion_id == discussion)
    }

    pub fn children(&self, id: &ContributionId) -> &[ContributionId] {
        self.children.get(id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn create_discussion(
        &mut self,
        mint: &mut IdMint,
        title: &str,
        focal_question: &str,
        author: ParticipantId,
        at: Timestamp,
    ) -> Result<DiscussionId, GraphError> {
        if focal_question.trim().is_empty() {
            return Err(GraphError::EmptyText);
        }
        let id: DiscussionId = mint.mint_id();
        let focal: ContributionId = mint.mint_id();
        self.discussions.insert(
            id.clone(),
            Discussion {
                id: id.clone(),
                title: title.to_string(),
                focal_question: focal.clone(),
                phase: Phase::Open,
                created_at: at,
                members: BTreeSet::from([author.clone()]),
            },
        );
        self.contributions.insert(
            focal.clone(),
            Contribution {
                id: focal,
                discussion_id: id.clone(),
                kind: ContributionKind::Issue,
                stance: Stance::None,
                text: focal_question.to_string(),
                author,
                parent: None,
                provenance: Provenance::online(),
                created_at: at,
                endorsements: 0,
            },
        );
        Ok(id)
    }

    pub fn advance_phase(&mut self, id: &DiscussionId, to: Phase) -> Result<(), GraphError> {
        let d = self.discussions.get_mut(id).ok_or_else(|| GraphError::UnknownDiscussion(id.clone()))?;
        if to <= d.phase {
            return Err(GraphError::PhaseRegression { from: d.phase, to });
        }
        d.phase = to;
        Ok(())
    }

    /// Argument depth below the nearest Position (0 for Issues and Positions).
    pub fn argument_depth(&self, id: &ContributionId) -> Result<usize, GraphError> {
        let mut depth = 0;
        let mut seen = BTreeSet::new();
        let mut cur = self.contribution(id)?;
        while cur.kind == ContributionKind::Argument {
            if !seen.insert(cur.id.clone()) {
                return Err(GraphError::CycleDetected);
            }
            depth += 1;
            let parent = cur.parent.as_ref().ok_or(GraphError::InvalidParentKind {
                kind: ContributionKind::Argument,
                parent: None,
            })?;
            cur = self.contribution(parent)?;
        }
        Ok(depth)
    }

    /// Validates a candidate insert without mutating anything.
    pub fn check_insert(&self, new: &NewContribution, mode: InsertMode) -> Result<(), GraphError> {
        let discussion = self.discussion(&new.discussion_id)?;
        match (discussion.phase, mode) {
            (Phase::Closed, _) => return Err(GraphError::Closed),
            (Phase::Open, _) | (_, InsertMode::Merge) => {}
            (p, InsertMode::Participant) => return Err(GraphError::NotOpen(p)),
        }
        if new.text.trim().is_empty() {
            return Err(GraphError::EmptyText);
        }
        let parent = match &new.parent {
            None => None,
            Some(pid) => {
                let p = self.contribution(pid)?;
                if p.discussion_id != new.discussion_id {
                    return Err(GraphError::ForeignParent);
                }
                // walking to a root proves the ancestor chain is acyclic
                self.root_of(pid)?;
                Some((p.kind, self.argument_depth(pid)?))
            }
        };
        check_shape(new.kind, new.stance, parent)?;
        new.provenance.validate(&self.transcripts)?;
        Ok(())
    }

    pub fn add_contribution(
        &mut self,
        mint: &mut IdMint,
        new: NewContribution,
        mode: InsertMode,
        at: Timestamp,
    ) -> Result<ContributionId, GraphError> {
        self.check_insert(&new, mode)?;
        let id: ContributionId = mint.mint_id();
        if let Some(p) = &new.parent {
            self.children.entry(p.clone()).or_default().push(id.clone());
        }
        if let Some(d) = self.discussions.get_mut(&new.discussion_id) {
            d.members.insert(new.author.clone());
        }
        self.contributions.insert(
            id.clone(),
            Contribution {
                id: id.clone(),
                discussion_id: new.discussion_id,
                kind: new.kind,
                stance: new.stance,
                text: new.text,
                author: new.author,
                parent: new.parent,
                provenance: new.provenance,
                created_at: at,
                endorsements: 0,
            },
        );
        Ok(id)
    }

    /// One endorsement per participant; repeats are no-ops. Returns the count.
    pub fn endorse(&mut self, id: &ContributionId, participant: ParticipantId) -> Result<u64, GraphError> {
        let c = self.contributions.get_mut(id).ok_or_else(|| GraphError::UnknownContribution(id.clone()))?;
        let set = self.endorsers.entry(id.clone()).or_default();
        if set.insert(participant) {
            c.endorsements += 1;
        }
        Ok(c.endorsements)
    }

    fn root_of(&self, id: &ContributionId) -> Result<ContributionId, GraphError> {
        let mut seen = BTreeSet::new();
        let mut cur = self.contribution(id)?;
        loop {
            if !seen.insert(cur.id.clone()) {
                return Err(GraphError::CycleDetected);
            }
            match &cur.parent {
                None => return Ok(cur.id.clone()),
                Some(p) => cur = self.contribution(p)?,
            }
        }
    }

    /// Author link, plus transcript span and import session for imported
    /// nodes. Dangling references surface as `Integrity` errors.
    pub fn provenance_trace(&self, id: &ContributionId) -> Result<ProvenanceChain, GraphError> {
        let c = self.contribution(id)?;
        let mut links = vec![ProvenanceLink::Author { participant: c.author.clone() }];
        if c.provenance.source == ProvenanceSource::TranscriptSpan {
            c.provenance.validate(&self.transcripts)?;
            let tid = c.provenance.transcript_id.clone().expect("validated");
            let seg_idx = c.provenance.segment_index.expect("validated");
            let range = c.provenance.char_range.expect("validated");
            let seg = &self.transcripts[&tid].segments[seg_idx];
            let excerpt = text::char_slice(&seg.text, range.start, range.end).unwrap_or_default().to_string();
            links.push(ProvenanceLink::TranscriptSegment {
                transcript_id: tid,
                segment_index: seg_idx,
                char_range: range,
                speaker: seg.speaker.clone(),
                excerpt,
            });
            if let Some(s) = &c.provenance.import_session_id {
                links.push(ProvenanceLink::ImportSession { session_id: s.clone() });
            }
        }
        Ok(ProvenanceChain { contribution_id: id.clone(), links })
    }

    /// Direct Pro/Con argument counts of a position.
    pub fn stance_counts(&self, position: &ContributionId) -> (usize, usize) {
        let mut pro = 0;
        let mut con = 0;
        for child in self.children(position) {
            if let Some(c) = self.contributions.get(child) {
                match c.stance {
                    Stance::Pro => pro += 1,
                    Stance::Con => con += 1,
                    Stance::None => {}
                }
            }
        }
        (pro, con)
    }

    fn latest_activity(&self, id: &ContributionId) -> (Timestamp, ContributionId) {
        let mut best = match self.contributions.get(id) {
            Some(c) => (c.created_at, c.id.clone()),
            None => return (Timestamp::MIN_UTC, id.clone()),
        };
        for child in self.children(id) {
            let cand = self.latest_activity(child);
            if cand > best {
                best = cand;
            }
        }
        best
    }

    /// Ranks positions so that a caller-supplied filter picks the candidates.
    fn rank_positions<'a>(&'a self, positions: impl Iterator<Item = &'a Contribution>) -> Vec<ContestedPosition> {
        let mut scored: Vec<(ContestedPosition, (Timestamp, ContributionId))> = positions
            .map(|p| {
                let (pro, con) = self.stance_counts(&p.id);
                (
                    ContestedPosition { position_id: p.id.clone(), score: contestedness(pro, con), pro, con },
                    self.latest_activity(&p.id),
                )
            })
            .collect();
        scored.sort_by(|(a, ra), (b, rb)| b.score.total_cmp(&a.score).then_with(|| rb.cmp(ra)));
        scored.into_iter().map(|(c, _)| c).collect()
    }

    /// Positions with at least one argument, most contested first; ties go to
    /// the most recent activity.
    pub fn contested_positions(&self, discussion: &DiscussionId, top_n: usize) -> Result<Vec<ContestedPosition>, GraphError> {
        self.discussion(discussion)?;
        let positions = self
            .contributions_of(discussion)
            .filter(|c| c.kind == ContributionKind::Position && !self.children(&c.id).is_empty());
        let mut ranked = self.rank_positions(positions);
        ranked.truncate(top_n);
        Ok(ranked)
    }

    /// Positions directly under an Issue, ranked like `contested_positions`.
    pub fn ranked_positions_under(&self, issue: &ContributionId) -> Result<Vec<ContestedPosition>, GraphError> {
        let issue_node = self.contribution(issue)?;
        if issue_node.kind != ContributionKind::Issue {
            return Err(GraphError::InvalidParentKind { kind: ContributionKind::Position, parent: Some(issue_node.kind) });
        }
        let positions = self.children(issue).iter().filter_map(|id| self.contributions.get(id));
        Ok(self.rank_positions(positions))
    }

    /// Re-checks every stored invariant; returns human-readable violations.
    pub fn validate_all(&self) -> Vec<String> {
        let mut out = Vec::new();
        for d in self.discussions.values() {
            match self.contributions.get(&d.focal_question) {
                Some(c) if c.kind == ContributionKind::Issue && c.parent.is_none() => {}
                _ => out.push(format!("discussion {}: focal question is not a root Issue", d.id)),
            }
        }
        for c in self.contributions.values() {
            if !self.discussions.contains_key(&c.discussion_id) {
                out.push(format!("contribution {}: unknown discussion", c.id));
            }
            if c.text.trim().is_empty() {
                out.push(format!("contribution {}: empty text", c.id));
            }
            if let Err(e) = self.root_of(&c.id) {
                out.push(format!("contribution {}: {e}", c.id));
                continue;
            }
            let parent = match &c.parent {
                None => None,
                Some(p) => match (self.contributions.get(p), self.argument_depth(p)) {
                    (Some(pc), Ok(d)) => Some((pc.kind, d)),
                    _ => {
                        out.push(format!("contribution {}: unresolved parent", c.id));
                        continue;
                    }
                },
            };
            if let Err(e) = check_shape(c.kind, c.stance, parent) {
                out.push(format!("contribution {}: {e}", c.id));
            }
            if let Err(e) = c.provenance.validate(&self.transcripts) {
                out.push(format!("contribution {}: {e}", c.id));
            }
            let endorsers = self.endorsers.get(&c.id).map_or(0, |s| s.len() as u64);
            if endorsers != c.endorsements {
                out.push(format!("contribution {}: endorsement count drift", c.id));
            }
        }
        for (parent, kids) in &self.children {
            for k in kids {
                if self.contributions.get(k).and_then(|c| c.parent.as_ref()) != Some(parent) {
                    out.push(format!("child index: {k} not a child of {parent}"));
                }
            }
        }
        out
    }

    /// Test hook: inserts a contribution verbatim, bypassing validation, to
    /// build corrupted fixtures.
    #[doc(hidden)]
    pub fn insert_unchecked(&mut self, c: Contribution) {
        if let Some(p) = &c.parent {
            self.children.entry(p.clone()).or_default().push(c.id.clone());
        }
        self.contributions.insert(c.id.clone(), c);
    }
}
