use std::collections::BTreeSet;
use std::fs;

use super::notify::{DiscussionUpdate, FacilitatorUpdate, PublicUpdate};
use super::*;
use crate::distill::OriginatingContext;
use crate::graph::{ContributionKind, NewContribution, Provenance, ProvenanceSource, Stance};
use crate::import::ImportState;
use crate::reflection::{Card, CardCategory, ReflectionConfig, ReflectionDeck};

const FIXTURE: &[u8] = include_bytes!("../../tests/fixtures/food_workshop_transcript.json");

fn disk(dir: &std::path::Path) -> ServiceConfig {
    ServiceConfig { data_dir: Some(dir.to_path_buf()), ..ServiceConfig::default().deterministic() }
}

fn deck(event: &str) -> ReflectionDeck {
    ReflectionDeck {
        id: "deck".into(),
        event_id: event.into(),
        cards: vec![
            Card { card_id: "agree".into(), label: "I agree".into(), category: CardCategory::Agree },
            Card { card_id: "nope".into(), label: "It will not work".into(), category: CardCategory::Disagree },
        ],
    }
}

fn create_event(p: &Platform, id: &str) {
    p.execute(&Command::CreateEvent { event_id: id.into(), title: "Panel".into(), deck: deck(id), config: ReflectionConfig::default() })
        .unwrap();
}

fn reflection(event: &str, who: &str, card: &str, t: u64) -> ReflectionEvent {
    ReflectionEvent { event_id: event.into(), participant: who.into(), card_id: card.into(), t_ms: t }
}

/// ingest → analyze → approve → merge, returning the discussion.
fn imported(p: &Platform) -> DiscussionId {
    let d = p.create_discussion("Food", "How should cities feed themselves?", "host").unwrap();
    let t = p.upload_transcript(TranscriptInput::from_json(FIXTURE).unwrap()).unwrap();
    let s = p.start_import(&t, &d, "curator").unwrap();
    assert_eq!(p.analyze(&s, "curator").unwrap().state, ImportState::UnderReview);
    p.execute(&Command::Approve { session_id: s.clone(), curator: "curator".into() }).unwrap();
    p.execute(&Command::Merge { session_id: s, actor: "curator".into() }).unwrap();
    d
}

#[test]
fn pipeline_provenance_resolves() {
    let p = Platform::in_memory_mock();
    let d = imported(&p);
    let recs = p.distill(&d, 4, None).unwrap();
    assert!(!recs.is_empty());
    let state = p.state();
    for r in &recs {
        let mut union = BTreeSet::new();
        for c in &r.supporting_claims {
            let node = state.graph.contribution(&c.contribution_id).unwrap();
            let pv = &node.provenance;
            if pv.source == ProvenanceSource::TranscriptSpan {
                union.insert(OriginatingContext {
                    transcript_id: pv.transcript_id.clone().unwrap(),
                    segment_index: pv.segment_index.unwrap(),
                    char_range: pv.char_range.unwrap(),
                });
            }
        }
        assert_eq!(r.originating_contexts.iter().cloned().collect::<BTreeSet<_>>(), union);
    }
    let report = p.report(&d, ReportStyle::Analytical).unwrap();
    assert!(report.all_links().all(|id| state.graph.contribution(id).is_ok()));
    assert!(p.verify().is_empty(), "{:?}", p.verify());
}

#[test]
fn cluster_requests_share_embeddings() {
    let p = Platform::in_memory_mock();
    let d = imported(&p);
    let a = p.clusters(&d, 5).unwrap();
    for k in 2..=8 {
        p.clusters(&d, k).unwrap();
    }
    assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&p.clusters(&d, 5).unwrap()).unwrap());
    assert_eq!(p.embedding_calls(), 1);
    assert!(matches!(p.clusters(&d, 9), Err(ServiceError::Insight(_))));
    // a new contribution invalidates the embedding cache
    let pos = a.ids[0].clone();
    p.contribute(NewContribution {
        discussion_id: d.clone(),
        kind: ContributionKind::Argument,
        stance: Stance::Pro,
        text: "Rooftop gardens also cool buildings.".into(),
        author: "ana".into(),
        parent: Some(pos),
        provenance: Provenance::online(),
    })
    .ok();
    p.clusters(&d, 3).unwrap();
    assert!(p.embedding_calls() <= 2);
}

#[test]
fn failed_commands_do_not_log_or_advance() {
    let dir = tempfile::tempdir().unwrap();
    let p = Platform::open(disk(dir.path())).unwrap();
    let d = p.create_discussion("T", "Q?", "host").unwrap();
    let before = p.seq();
    let bad = p.contribute(NewContribution {
        discussion_id: d,
        kind: ContributionKind::Argument,
        stance: Stance::Pro,
        text: "orphan".into(),
        author: "x".into(),
        parent: None,
        provenance: Provenance::online(),
    });
    assert!(matches!(bad, Err(ServiceError::Graph(_))));
    assert_eq!(p.seq(), before);
    create_event(&p, "ev");
    p.reflect(reflection("ev", "a", "agree", 5)).unwrap();
    let dup = p.reflect(reflection("ev", "a", "agree", 5)).unwrap();
    assert_eq!(dup.admission, AdmissionKind::Duplicate);
    assert_eq!(p.seq(), before + 2);
    let log = fs::read_to_string(dir.path().join("log").join(format!("{:020}.ndjson", 1))).unwrap();
    assert_eq!(log.lines().count() as u64, p.seq());
}

fn hundred_records(p: &Platform) {
    let start = p.seq();
    create_event(p, "ev");
    for i in 0..99u64 {
        p.reflect(reflection("ev", &format!("p{i}"), if i % 7 == 0 { "nope" } else { "agree" }, i * 400)).unwrap();
    }
    assert_eq!(p.seq(), start + 100);
}

#[test]
fn crash_recovery_restores_state() {
    let dir = tempfile::tempdir().unwrap();
    let before = {
        let p = Platform::open(disk(dir.path())).unwrap();
        hundred_records(&p);
        p.state()
    };
    let p = Platform::open(disk(dir.path())).unwrap();
    assert_eq!(p.state(), before);
    assert_eq!(p.recovery().replayed, 100);
    assert_eq!(p.recovery().dropped_bytes, 0);
}

#[test]
fn torn_tail_recovers_to_last_complete_record() {
    let dir = tempfile::tempdir().unwrap();
    let at_99 = {
        let p = Platform::open(disk(dir.path())).unwrap();
        create_event(&p, "ev");
        for i in 0..98u64 {
            p.reflect(reflection("ev", &format!("p{i}"), "agree", i * 400)).unwrap();
        }
        let s = p.state();
        p.reflect(reflection("ev", "last", "agree", 98 * 400)).unwrap();
        s
    };
    let seg = dir.path().join("log").join(format!("{:020}.ndjson", 1));
    let bytes = fs::read(&seg).unwrap();
    let cut = bytes.len() - 20;
    fs::write(&seg, &bytes[..cut]).unwrap();
    let p = Platform::open(disk(dir.path())).unwrap();
    assert_eq!(p.seq(), 99);
    assert_eq!(p.state(), at_99);
    assert!(p.recovery().dropped_bytes > 0);
    // appends continue on a clean line
    p.reflect(reflection("ev", "again", "agree", 98 * 400)).unwrap();
    drop(p);
    assert_eq!(Platform::open(disk(dir.path())).unwrap().seq(), 100);
}

#[test]
fn corruption_before_the_tail_is_fatal() {
    let dir = tempfile::tempdir().unwrap();
    {
        let p = Platform::open(disk(dir.path())).unwrap();
        create_event(&p, "ev");
        p.reflect(reflection("ev", "a", "agree", 1)).unwrap();
        p.reflect(reflection("ev", "b", "agree", 2)).unwrap();
    }
    let seg = dir.path().join("log").join(format!("{:020}.ndjson", 1));
    let text = fs::read_to_string(&seg).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[1] = "{not json";
    fs::write(&seg, lines.join("\n") + "\n").unwrap();
    assert!(matches!(Platform::open(disk(dir.path())), Err(ServiceError::CorruptLog(_))));
}

#[test]
fn snapshot_with_empty_log() {
    let dir = tempfile::tempdir().unwrap();
    let before = {
        let p = Platform::open(disk(dir.path())).unwrap();
        hundred_records(&p);
        p.snapshot_now().unwrap();
        p.state()
    };
    fs::remove_dir_all(dir.path().join("log")).unwrap();
    let p = Platform::open(disk(dir.path())).unwrap();
    assert_eq!(p.recovery().snapshot_seq, Some(100));
    assert_eq!(p.recovery().replayed, 0);
    assert_eq!(p.state(), before);
}

#[test]
fn periodic_snapshots_then_tail_replay() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ServiceConfig { snapshot_every: 30, ..disk(dir.path()) };
    let before = {
        let p = Platform::open(cfg.clone()).unwrap();
        hundred_records(&p);
        p.state()
    };
    let p = Platform::open(cfg).unwrap();
    assert_eq!(p.recovery().snapshot_seq, Some(90));
    assert_eq!(p.recovery().replayed, 10);
    assert_eq!(p.state(), before);
}

#[test]
fn notifications_follow_the_views() {
    let p = Platform::in_memory_mock();
    let d = p.create_discussion("Food", "How should cities feed themselves?", "host").unwrap();
    let mut curator = p.hub().discussion.subscribe(&d, Some(0)).unwrap();
    let t = p.upload_transcript(TranscriptInput::from_json(FIXTURE).unwrap()).unwrap();
    let s = p.start_import(&t, &d, "curator").unwrap();
    p.analyze(&s, "curator").unwrap();
    p.execute(&Command::Approve { session_id: s.clone(), curator: "c".into() }).unwrap();
    let states: Vec<ImportState> = curator
        .drain()
        .unwrap()
        .into_iter()
        .filter_map(|m| match m.update {
            DiscussionUpdate::ImportState { state, .. } => Some(state),
            _ => None,
        })
        .collect();
    assert_eq!(states, [ImportState::Uploaded, ImportState::UnderReview, ImportState::Approved]);

    create_event(&p, "ev");
    let ev: EventId = "ev".into();
    let mut public = p.hub().public.subscribe(&ev, Some(0)).unwrap();
    let mut fac = p.hub().facilitator.subscribe(&ev, Some(0)).unwrap();
    for w in 0..11u64 {
        p.reflect(reflection("ev", &format!("b{w}"), "agree", w * 15_000 + 1)).unwrap();
    }
    for i in 0..20u64 {
        p.reflect(reflection("ev", &format!("s{i}"), "nope", 10 * 15_000 + 100 + i)).unwrap();
    }
    p.close_event(&ev, Some(11 * 15_000)).unwrap();
    let fac_msgs = fac.drain().unwrap();
    assert!(fac_msgs.iter().any(|m| matches!(m.update, FacilitatorUpdate::Alert { .. })));
    let pub_msgs = public.drain().unwrap();
    assert!(matches!(pub_msgs.last().unwrap().update, PublicUpdate::Closed { total_reflections: 31 }));
    let text = serde_json::to_string(&pub_msgs).unwrap();
    assert!(!text.contains("alert") && !text.contains("prompt"));
    // resume picks up right after the given seq
    let resumed = p.hub().public.subscribe(&ev, Some(3)).unwrap();
    assert_eq!(resumed.backlog[0].seq, 4);
}

#[test]
fn wall_clock_rejects_future_reflections() {
    let cfg = ServiceConfig { event_clock: EventClock::Wall, ..ServiceConfig::default() };
    let p = Platform::with_gateway(cfg, Gateway::mock()).unwrap();
    create_event(&p, "ev");
    let r = p.reflect(reflection("ev", "a", "agree", 3_600_000));
    assert!(matches!(r, Err(ServiceError::Reflection(crate::reflection::ReflectionError::ClockSkewExceeded { .. }))));
    p.reflect(reflection("ev", "a", "agree", 10)).unwrap();
}

#[test]
fn replay_is_a_pure_function_of_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let p = Platform::open(disk(dir.path())).unwrap();
    let d = imported(&p);
    p.distill(&d, 3, None).unwrap();
    hundred_records(&p);
    let loaded = Store::load(dir.path(), false).unwrap();
    let a = replay(PlatformState::default(), &loaded.records).unwrap();
    let b = replay(PlatformState::default(), &loaded.records).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, p.state());
}
