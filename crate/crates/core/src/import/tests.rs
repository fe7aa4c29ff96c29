use std::sync::Arc;

use proptest::prelude::*;
use serde_json::json;

use super::*;
use crate::gateway::{CassetteTransport, GatewayConfig, GatewayError, GatewayMode};
use crate::graph::{CharRange, Provenance, ProvenanceLink, Stance};
use crate::ids::{ClockMode, ParticipantId};
use crate::transcript::{Segment, TranscriptInput};

const FOOD: &str = include_str!("../../tests/fixtures/food_workshop_transcript.json");

fn ts(n: u64) -> Timestamp {
    ClockMode::Logical.stamp(n)
}

fn food_transcript() -> Transcript {
    TranscriptInput::from_json(FOOD.as_bytes()).unwrap().into_transcript("t-food".into())
}

fn transcript(segments: &[(&str, &str)]) -> Transcript {
    Transcript {
        id: "t1".into(),
        event_title: "How should cities feed themselves?".into(),
        language: "en".into(),
        segments: segments
            .iter()
            .enumerate()
            .map(|(i, (s, t))| Segment {
                speaker: (*s).into(),
                start_ms: i as u64 * 1000,
                end_ms: i as u64 * 1000 + 900,
                text: (*t).into(),
            })
            .collect(),
    }
}

fn session_for(t: &Transcript) -> ImportSession {
    ImportSession::new("s1".into(), t.id.clone(), "d1".into(), "curator", ts(1))
}

fn under_review(t: &Transcript) -> ImportSession {
    let mut s = session_for(t);
    s.analyze_transcript(t, &RuleBasedClassifier, None, "curator", ts(2)).unwrap();
    s
}

/// Session forced into `state` for transition tests.
fn session_in(state: ImportState) -> ImportSession {
    let t = transcript(&[("A", "We should ban X because it harms Y")]);
    let mut s = session_for(&t);
    let path: &[ImportState] = match state {
        ImportState::Uploaded => &[],
        ImportState::Analyzed => &[ImportState::Analyzed],
        ImportState::UnderReview => &[ImportState::Analyzed, ImportState::UnderReview],
        ImportState::Approved => &[ImportState::Analyzed, ImportState::UnderReview, ImportState::Approved],
        ImportState::Rejected => &[ImportState::Analyzed, ImportState::UnderReview, ImportState::Rejected],
        ImportState::Merged => &[ImportState::Analyzed, ImportState::UnderReview, ImportState::Approved, ImportState::Merged],
    };
    for (i, st) in path.iter().enumerate() {
        s.transition(*st, "curator", ts(2 + i as u64)).unwrap();
    }
    s
}

#[test]
fn exhaustive_transition_matrix() {
    for from in ImportState::ALL {
        for to in ImportState::ALL {
            let mut s = session_in(from);
            let before = serde_json::to_vec(&s).unwrap();
            let r = s.transition(to, "x", ts(99));
            if from.can_transition(to) {
                assert!(r.is_ok(), "{from:?} -> {to:?} should be legal");
            } else {
                assert!(matches!(r, Err(ImportError::WrongState { .. })), "{from:?} -> {to:?}");
                assert_eq!(serde_json::to_vec(&s).unwrap(), before, "{from:?} -> {to:?} mutated session");
            }
        }
    }
    let legal = ImportState::ALL
        .iter()
        .flat_map(|a| ImportState::ALL.iter().map(move |b| (*a, *b)))
        .filter(|(a, b)| a.can_transition(*b))
        .count();
    assert_eq!(legal, 5);
}

#[test]
fn approve_reject_state_rules() {
    let t = transcript(&[("A", "We should ban X because it harms Y")]);
    let mut s = under_review(&t);
    assert_eq!(s.approve("c", ts(3)).unwrap(), ImportState::Approved);

    let mut s = session_for(&t);
    assert!(matches!(s.approve("c", ts(3)), Err(ImportError::WrongState { state: ImportState::Uploaded, .. })));

    let mut s = under_review(&t);
    s.reject("c", "off topic", ts(3)).unwrap();
    assert_eq!(s.rejection_reason.as_deref(), Some("off topic"));
    assert!(matches!(s.approve("c", ts(4)), Err(ImportError::WrongState { state: ImportState::Rejected, .. })));
}

#[test]
fn analysis_only_once() {
    let t = transcript(&[("A", "We should ban X because it harms Y")]);
    let mut s = under_review(&t);
    assert!(matches!(
        s.analyze_transcript(&t, &RuleBasedClassifier, None, "c", ts(5)),
        Err(ImportError::WrongState { .. })
    ));
}

#[test]
fn because_fixture_draft_shape() {
    let t = transcript(&[("A", "We should ban X because it harms Y")]);
    let s = under_review(&t);
    assert_eq!(s.state, ImportState::UnderReview);
    let kinds: Vec<_> = s.draft.nodes.iter().map(|n| (n.kind, n.stance, n.text.as_str())).collect();
    assert_eq!(
        kinds,
        vec![
            (ContributionKind::Issue, Stance::None, "How should cities feed themselves?"),
            (ContributionKind::Position, Stance::None, "We should ban X"),
            (ContributionKind::Argument, Stance::Pro, "it harms Y"),
        ]
    );
    let audit: Vec<&str> = s.audit.iter().map(|a| a.action.as_str()).collect();
    assert_eq!(audit, vec!["uploaded", "analyzed", "underreview"]);
}

#[test]
fn empty_transcript_advances_with_warning() {
    let t = transcript(&[]);
    let s = under_review(&t);
    assert!(s.draft.is_empty());
    assert_eq!(s.state, ImportState::UnderReview);
    assert!(!s.warnings.is_empty());
}

#[test]
fn remote_classifier_failure_keeps_session_uploaded() {
    let cassette = Arc::new(CassetteTransport::new());
    cassette.always("classify", Err("connection refused".into()));
    let gw = Gateway::with_transport(
        GatewayConfig { mode: GatewayMode::Remote, endpoint: "http://x".into(), max_retries: 0, backoff_base_ms: 0, ..Default::default() },
        Some(cassette),
    )
    .unwrap();
    let t = transcript(&[("A", "We should ban X because it harms Y")]);
    let mut s = session_for(&t);
    let before = s.clone();
    let err = s.analyze_transcript(&t, &gw, None, "c", ts(2)).unwrap_err();
    assert!(matches!(err, ImportError::ClassifierUnavailable(_)));
    assert_eq!(s, before);
    // retry with the baseline succeeds
    s.analyze_transcript(&t, &RuleBasedClassifier, None, "c", ts(3)).unwrap();
}

#[test]
fn recorded_classifier_responses() {
    let cassette = Arc::new(CassetteTransport::new());
    cassette.push(
        "classify",
        Ok(json!({"spans": [
            {"segment_index": 0, "start": 0, "end": 15, "component": "Claim", "confidence": 0.93},
            {"segment_index": 0, "start": 24, "end": 34, "component": "Premise", "confidence": 0.88,
             "relations": [{"target": 0, "type": "Supports"}]}
        ]})),
    );
    cassette.push(
        "classify",
        Ok(json!({"spans": [{"segment_index": 0, "start": 20, "end": 99, "component": "Claim", "confidence": 0.9}]})),
    );
    let gw = Gateway::with_transport(
        GatewayConfig { mode: GatewayMode::Remote, endpoint: "http://x".into(), max_retries: 0, backoff_base_ms: 0, ..Default::default() },
        Some(cassette.clone()),
    )
    .unwrap();
    let t = transcript(&[("A", "We should ban X because it harms Y")]);
    let m = gw.classify_spans(&t.segments).unwrap();
    markup::validate_markup(&m, &t.segments).unwrap();
    assert_eq!(m[1].relations[0].kind, RelationKind::Supports);
    // out-of-bounds span is an integrity error, not clipped
    let err = gw.classify_spans(&t.segments).unwrap_err();
    assert!(matches!(err, GatewayError::Integrity(_)));
    assert_eq!(cassette.requests()[0].1["segments"][0]["speaker"], "A");
}

#[test]
fn mock_gateway_classifier_matches_baseline() {
    let t = food_transcript();
    assert_eq!(Gateway::mock().classify_spans(&t.segments).unwrap(), RuleBasedClassifier.markup(&t.segments));
}

#[test]
fn remote_summarizer_sets_working_issue() {
    let cassette = Arc::new(CassetteTransport::new());
    cassette.always("completions", Ok(json!({"text": "How do we cut food waste?"})));
    let gw = Gateway::with_transport(
        GatewayConfig { mode: GatewayMode::Remote, endpoint: "http://x".into(), backoff_base_ms: 0, ..Default::default() },
        Some(cassette),
    )
    .unwrap();
    let t = transcript(&[("A", "We should ban X because it harms Y")]);
    let s = session_for(&t);
    let r = s.prepare_analysis(&t, &RuleBasedClassifier, Some(&gw)).unwrap();
    assert_eq!(r.issue_text, "How do we cut food waste?");
    let r = s.prepare_analysis(&t, &RuleBasedClassifier, Some(&Gateway::mock())).unwrap();
    assert_eq!(r.issue_text, t.event_title);
}

#[test]
fn food_fixture_draft_golden() {
    let t = food_transcript();
    assert_eq!(t.segments.len(), 20);
    let speakers: std::collections::BTreeSet<_> = t.segments.iter().map(|s| s.speaker.as_str()).collect();
    assert_eq!(speakers.len(), 3);
    let s = {
        let mut s = ImportSession::new("s-food".into(), t.id.clone(), "d1".into(), "curator", ts(1));
        s.analyze_transcript(&t, &RuleBasedClassifier, None, "curator", ts(2)).unwrap();
        s
    };
    assert!(s.draft.count(ContributionKind::Issue) >= 1);
    assert!(s.draft.count(ContributionKind::Position) >= 2);
    assert!(s.draft.count(ContributionKind::Argument) >= 2);
    let rendered = serde_json::to_string_pretty(&s.draft).unwrap() + "\n";
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/golden/food_draft.json");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(std::path::Path::new(path).parent().unwrap()).unwrap();
        std::fs::write(path, &rendered).unwrap();
    }
    let golden = std::fs::read_to_string(path).expect("golden file; run with UPDATE_GOLDEN=1 to create");
    assert_eq!(rendered, golden);
}

#[test]
fn baseline_analysis_is_byte_deterministic() {
    let t = food_transcript();
    let run = || {
        let mut s = ImportSession::new("s".into(), t.id.clone(), "d".into(), "c", ts(1));
        s.analyze_transcript(&t, &RuleBasedClassifier, None, "c", ts(2)).unwrap();
        serde_json::to_vec(&s.draft).unwrap()
    };
    assert_eq!(run(), run());
}

fn node_by_text(d: &DraftIbis, text: &str) -> DraftNodeId {
    d.nodes.iter().find(|n| n.text == text).unwrap_or_else(|| panic!("no node {text:?}")).id
}

#[test]
fn retype_keeps_provenance() {
    let t = transcript(&[("A", "We should ban X because it harms Y")]);
    let mut s = under_review(&t);
    let arg = node_by_text(&s.draft, "it harms Y");
    let prov = s.draft.node(arg).unwrap().provenance.clone();
    s.edit_draft(&t, "c", &[PatchOp::Retype { node: arg, kind: ContributionKind::Argument, stance: Stance::Con }], ts(3))
        .unwrap();
    let n = s.draft.node(arg).unwrap();
    assert_eq!(n.stance, Stance::Con);
    assert_eq!(n.provenance, prov);
    s.edit_draft(&t, "c", &[PatchOp::Retext { node: arg, text: "it harms children".into() }], ts(4)).unwrap();
    assert_eq!(s.draft.node(arg).unwrap().provenance, prov);
    assert_eq!(s.audit.len(), 5);
}

#[test]
fn cyclic_reparent_rejected_atomically() {
    let t = transcript(&[("A", "We should ban X because it harms Y. But it is cheap.")]);
    let mut s = under_review(&t);
    let before = s.draft.clone();
    let pro = node_by_text(&s.draft, "it harms Y");
    let con = node_by_text(&s.draft, "it is cheap");
    let patch = vec![
        PatchOp::Retext { node: pro, text: "changed".into() },
        PatchOp::Reparent { node: pro, parent: Some(con) },
        PatchOp::Reparent { node: con, parent: Some(pro) },
    ];
    let err = s.edit_draft(&t, "c", &patch, ts(3)).unwrap_err();
    assert!(matches!(err, ImportError::PatchBreaksInvariant(_)));
    assert_eq!(s.draft, before);
}

#[test]
fn delete_position_removes_subtree() {
    let t = transcript(&[(
        "A",
        "We should tax sugar because it causes obesity. But it hurts the poor. It also funds clinics.",
    )]);
    let mut s = under_review(&t);
    let pos = node_by_text(&s.draft, "We should tax sugar");
    // one extra nested argument to make 1 position + 3 arguments
    let con = node_by_text(&s.draft, "it hurts the poor");
    s.edit_draft(
        &t,
        "c",
        &[PatchOp::Insert {
            kind: ContributionKind::Argument,
            stance: Stance::Con,
            text: "clinics are already funded".into(),
            author: "curator".into(),
            parent: Some(node_by_text(&s.draft, "It also funds clinics")),
            segment_index: 0,
            char_range: CharRange::new(0, 5),
        }],
        ts(3),
    )
    .unwrap();
    assert!(s.draft.node(con).is_some());
    let positions_args = s.draft.nodes.iter().filter(|n| n.kind != ContributionKind::Issue).count();
    assert_eq!(positions_args, 5);
    let out = s.edit_draft(&t, "c", &[PatchOp::Delete { node: pos }], ts(4)).unwrap();
    assert_eq!(out.removed, 5);
    assert_eq!(s.draft.len(), 1);
}

#[test]
fn delete_position_with_three_arguments_counts_four() {
    let t = transcript(&[("A", "We should tax sugar because it causes obesity. But it hurts the poor. It also funds clinics.")]);
    let mut s = under_review(&t);
    let pos = node_by_text(&s.draft, "We should tax sugar");
    assert_eq!(s.draft.nodes.iter().filter(|n| n.parent == Some(pos)).count(), 3);
    let out = s.edit_draft(&t, "c", &[PatchOp::Delete { node: pos }], ts(3)).unwrap();
    assert_eq!(out.removed, 4);
}

#[test]
fn insert_requires_valid_span() {
    let t = transcript(&[("A", "We should ban X because it harms Y")]);
    let mut s = under_review(&t);
    let pos = node_by_text(&s.draft, "We should ban X");
    let bad = PatchOp::Insert {
        kind: ContributionKind::Argument,
        stance: Stance::Pro,
        text: "x".into(),
        author: "c".into(),
        parent: Some(pos),
        segment_index: 0,
        char_range: CharRange::new(30, 80),
    };
    assert!(matches!(s.edit_draft(&t, "c", &[bad], ts(3)), Err(ImportError::PatchBreaksInvariant(_))));
}

fn discussion_with(question: &str) -> (ArgumentGraph, DiscussionId) {
    let mut g = ArgumentGraph::new();
    let mut mint = IdMint::new(ts(1), 1);
    let d = g.create_discussion(&mut mint, "Food", question, "admin".into(), ts(1)).unwrap();
    (g, d)
}

fn approved_for(t: &Transcript, d: &DiscussionId) -> ImportSession {
    let mut s = ImportSession::new("s1".into(), t.id.clone(), d.clone(), "c", ts(2));
    s.analyze_transcript(t, &RuleBasedClassifier, None, "c", ts(3)).unwrap();
    s.approve("c", ts(4)).unwrap();
    s
}

#[test]
fn merge_threads_matching_issue() {
    let t = transcript(&[("A", "We should ban X because it harms Y")]);
    let (mut g, d) = discussion_with("how should cities feed themselves");
    g.register_transcript(t.clone());
    let focal = g.discussion(&d).unwrap().focal_question.clone();
    let mut s = approved_for(&t, &d);
    let mut mint = IdMint::new(ts(5), 5);
    let ids = s.merge_into_discussion(&mut g, &mut mint, "c", ts(5)).unwrap();
    assert_eq!(ids.len(), s.draft.len());
    assert_eq!(ids[0].1, focal);
    let issues = g.contributions_of(&d).filter(|c| c.kind == ContributionKind::Issue).count();
    assert_eq!(issues, 1);
    let pos = g.contribution(&ids[1].1).unwrap();
    assert_eq!(pos.parent.as_ref(), Some(&focal));
    assert_eq!(s.state, ImportState::Merged);
    assert!(g.validate_all().is_empty());

    // every merged node traces back to a valid span
    for (_, cid) in &ids[1..] {
        let chain = g.provenance_trace(cid).unwrap();
        assert!(chain.links.iter().any(|l| matches!(l, ProvenanceLink::TranscriptSegment { .. })));
        assert!(chain.links.iter().any(|l| matches!(l, ProvenanceLink::ImportSession { .. })));
    }
    let arg = g.provenance_trace(&ids[2].1).unwrap();
    match &arg.links[1] {
        ProvenanceLink::TranscriptSegment { segment_index, char_range, excerpt, .. } => {
            assert_eq!(*segment_index, 0);
            assert_eq!(*char_range, CharRange::new(24, 34));
            assert_eq!(excerpt, "it harms Y");
        }
        other => panic!("unexpected link {other:?}"),
    }

    let mut mint = IdMint::new(ts(6), 6);
    assert!(matches!(s.merge_into_discussion(&mut g, &mut mint, "c", ts(6)), Err(ImportError::WrongState { .. })));
}

#[test]
fn merge_distinct_issue_creates_new_issue() {
    let t = transcript(&[("A", "We should ban X because it harms Y")]);
    let (mut g, d) = discussion_with("What is the future of urban transport?");
    g.register_transcript(t.clone());
    let mut s = approved_for(&t, &d);
    let mut mint = IdMint::new(ts(5), 5);
    let ids = s.merge_into_discussion(&mut g, &mut mint, "c", ts(5)).unwrap();
    let issues = g.contributions_of(&d).filter(|c| c.kind == ContributionKind::Issue).count();
    assert_eq!(issues, 2);
    assert!(g.contribution(&ids[0].1).unwrap().parent.is_none());
}

#[test]
fn merge_into_closed_discussion_fails() {
    let t = transcript(&[("A", "We should ban X because it harms Y")]);
    let (mut g, d) = discussion_with("how should cities feed themselves");
    g.register_transcript(t.clone());
    g.advance_phase(&d, Phase::Closed).unwrap();
    let mut s = approved_for(&t, &d);
    let before = g.clone();
    let mut mint = IdMint::new(ts(5), 5);
    assert_eq!(s.merge_into_discussion(&mut g, &mut mint, "c", ts(5)), Err(ImportError::TargetDiscussionClosed));
    assert_eq!(g, before);
    assert_eq!(s.state, ImportState::Approved);
}

#[test]
fn merge_allowed_after_open_phase() {
    let t = transcript(&[("A", "We should ban X because it harms Y")]);
    let (mut g, d) = discussion_with("how should cities feed themselves");
    g.register_transcript(t.clone());
    g.advance_phase(&d, Phase::Reporting).unwrap();
    let mut s = approved_for(&t, &d);
    let mut mint = IdMint::new(ts(5), 5);
    s.merge_into_discussion(&mut g, &mut mint, "c", ts(5)).unwrap();
    // participants still cannot post
    let mut mint = IdMint::new(ts(6), 6);
    let err = g
        .add_contribution(
            &mut mint,
            crate::graph::NewContribution {
                discussion_id: d.clone(),
                kind: ContributionKind::Position,
                stance: Stance::None,
                text: "late".into(),
                author: ParticipantId::from("u"),
                parent: Some(g.discussion(&d).unwrap().focal_question.clone()),
                provenance: Provenance::online(),
            },
            InsertMode::Participant,
            ts(6),
        )
        .unwrap_err();
    assert_eq!(err, GraphError::NotOpen(Phase::Reporting));
}

fn arb_op(n_nodes: u32, seg_len: usize) -> impl Strategy<Value = PatchOp> {
    let node = (0..n_nodes + 2).prop_map(DraftNodeId);
    let kind = prop_oneof![Just(ContributionKind::Issue), Just(ContributionKind::Position), Just(ContributionKind::Argument)];
    let stance = prop_oneof![Just(Stance::Pro), Just(Stance::Con), Just(Stance::None)];
    let parent = proptest::option::of((0..n_nodes + 2).prop_map(DraftNodeId));
    prop_oneof![
        (node.clone(), kind.clone(), stance.clone()).prop_map(|(node, kind, stance)| PatchOp::Retype { node, kind, stance }),
        (node.clone(), prop_oneof![Just(String::new()), Just("edited".to_string())])
            .prop_map(|(node, text)| PatchOp::Retext { node, text }),
        (node.clone(), parent.clone()).prop_map(|(node, parent)| PatchOp::Reparent { node, parent }),
        node.clone().prop_map(|node| PatchOp::Delete { node }),
        (kind, stance, parent, 0..seg_len + 3, 0..seg_len + 3).prop_map(|(kind, stance, parent, a, b)| PatchOp::Insert {
            kind,
            stance,
            text: "inserted".into(),
            author: "c".into(),
            parent,
            segment_index: 0,
            char_range: CharRange::new(a.min(b), a.max(b)),
        }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn patches_are_atomic(ops in proptest::collection::vec(arb_op(6, 40), 1..6)) {
        let t = transcript(&[("A", "We should tax sugar because it causes obesity. But it hurts the poor. It also funds clinics.")]);
        let mut s = under_review(&t);
        let before = s.draft.clone();
        match s.edit_draft(&t, "c", &ops, ts(9)) {
            Ok(_) => prop_assert!(s.draft.validate(&t).is_ok()),
            Err(_) => prop_assert_eq!(&s.draft, &before),
        }
    }
}
