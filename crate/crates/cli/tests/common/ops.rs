//! Randomized operation sequences through the HTTP API. Each sequence
//! starts from the arcs the replayed mini-season extracts, then applies
//! extraction-style commits (new arcs, continued arcs), merges and edits.
//! After every step all stored arcs must validate, embeddings must match
//! the arcs exactly, and rejected requests must change nothing.
use std::collections::BTreeSet;
use std::sync::OnceLock;

use arcmem_cli::server::{router, AppState};
use arcmem_cli::Services;
use arcmem_core::gateway::GatewayMode;
use arcmem_core::memory::{QueryFilter, TargetKind};
use arcmem_core::{ArcType, Character, NarrativeArc};
use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use proptest::prelude::*;
use proptest::sample::Index;
use serde_json::{json, Value};
use tower::ServiceExt;

pub struct Seed {
    pub arcs: Vec<NarrativeArc>,
    pub characters: Vec<Character>,
}

pub fn seed() -> &'static Seed {
    static SEED: OnceLock<Seed> = OnceLock::new();
    SEED.get_or_init(|| {
        let ws = tempfile::tempdir().unwrap();
        let run = super::golden_run(ws.path(), &super::fixtures_dir(), None).unwrap();
        let rel = &run.services.memory.relational;
        Seed {
            arcs: rel.list_arcs(&Default::default()).unwrap(),
            characters: rel.list_characters(&super::series()).unwrap(),
        }
    })
}

#[derive(Debug, Clone)]
pub enum Content {
    Valid,
    Placeholder,
    Empty,
}

#[derive(Debug, Clone)]
pub enum Op {
    /// What the pipeline does for a draft with no match.
    Create { arc_type: ArcType, episodes: BTreeSet<u32>, mains: Vec<Index>, title: u8 },
    /// What the pipeline does for a draft linked to a stored arc.
    Continue { arc: Index, episode: u32, content: Content },
    Merge { keep: Index, absorb: Index },
    EditTitle { arc: Index, blank: bool },
    EditType { arc: Index, arc_type: ArcType },
    EditMains { arc: Index, mains: Vec<Index> },
    EditProgression { arc: Index, which: Index, content: Content },
    DeleteProgression { arc: Index, which: Index },
    DeleteArc { arc: Index },
}

fn arc_type() -> impl Strategy<Value = ArcType> {
    prop_oneof![Just(ArcType::Anthology), Just(ArcType::Soap), Just(ArcType::GenreSpecific)]
}

fn content() -> impl Strategy<Value = Content> {
    prop_oneof![6 => Just(Content::Valid), 1 => Just(Content::Placeholder), 1 => Just(Content::Empty)]
}

pub fn op() -> impl Strategy<Value = Op> {
    let idx = any::<Index>;
    prop_oneof![
        3 => (arc_type(), proptest::collection::btree_set(1u32..=5, 1..=3), proptest::collection::vec(idx(), 1..=3), 0u8..4)
            .prop_map(|(arc_type, episodes, mains, title)| Op::Create { arc_type, episodes, mains, title }),
        3 => (idx(), 1u32..=5, content()).prop_map(|(arc, episode, content)| Op::Continue { arc, episode, content }),
        3 => (idx(), idx()).prop_map(|(keep, absorb)| Op::Merge { keep, absorb }),
        1 => (idx(), any::<bool>()).prop_map(|(arc, blank)| Op::EditTitle { arc, blank }),
        2 => (idx(), arc_type()).prop_map(|(arc, arc_type)| Op::EditType { arc, arc_type }),
        1 => (idx(), proptest::collection::vec(idx(), 0..=2)).prop_map(|(arc, mains)| Op::EditMains { arc, mains }),
        2 => (idx(), idx(), content()).prop_map(|(arc, which, content)| Op::EditProgression { arc, which, content }),
        1 => (idx(), idx()).prop_map(|(arc, which)| Op::DeleteProgression { arc, which }),
        1 => idx().prop_map(|arc| Op::DeleteArc { arc }),
    ]
}

fn lines(c: &Content) -> Value {
    match c {
        Content::Valid => json!(["Someone does something.", "It matters."]),
        Content::Placeholder => json!(["Then {name} leaves."]),
        Content::Empty => json!([]),
    }
}

pub struct World {
    _dir: tempfile::TempDir,
    state: AppState,
    app: Router,
}

pub fn world() -> World {
    let dir = tempfile::tempdir().unwrap();
    let config = super::config(&dir.path().join("ws"), &dir.path().join("fixtures"), GatewayMode::Replay);
    let svc = Services::open_in_memory(config, None).unwrap();
    let s = seed();
    svc.memory.relational.save_characters(&s.characters).unwrap();
    for a in &s.arcs {
        svc.memory.commit_arc(a, svc.embedder.as_ref()).unwrap();
    }
    let state = AppState::new(svc);
    World { _dir: dir, app: router(state.clone()), state }
}

pub async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn arcs(state: &AppState) -> Vec<NarrativeArc> {
    let mut a = state.svc.memory.relational.list_arcs(&Default::default()).unwrap();
    a.sort_by(|x, y| x.arc_id.cmp(&y.arc_id));
    a
}

pub fn check_invariants(state: &AppState) -> Result<(), TestCaseError> {
    let mem = &state.svc.memory;
    let stored = arcs(state);
    for a in &stored {
        let v = mem.validate_arc_in_store(a).unwrap();
        prop_assert!(v.is_empty(), "{} invalid: {:?}", a.arc_id, v);
        if a.arc_type == ArcType::Anthology {
            prop_assert_eq!(a.episodes().len(), 1);
        }
    }
    let records = mem.vectors.records(&QueryFilter::default());
    for a in &stored {
        let own: Vec<_> = records.iter().filter(|r| r.arc_id.as_ref() == Some(&a.arc_id)).collect();
        let summaries = own.iter().filter(|r| r.target_kind == TargetKind::ArcSummary).count();
        let progs: BTreeSet<_> = own
            .iter()
            .filter(|r| r.target_kind == TargetKind::Progression)
            .map(|r| r.target_id.clone())
            .collect();
        let want: BTreeSet<_> = a.progressions.iter().map(|p| p.progression_id.as_str().to_string()).collect();
        prop_assert_eq!(summaries, 1);
        prop_assert_eq!(progs, want);
    }
    prop_assert!(records
        .iter()
        .all(|r| r.arc_id.as_ref().is_some_and(|id| stored.iter().any(|a| &a.arc_id == id))));
    Ok(())
}

pub async fn apply(w: &World, op: &Op) -> Result<(), TestCaseError> {
    let before = arcs(&w.state);
    let chars = &seed().characters;
    let pick = |i: &Index| &before[i.index(before.len())];
    let uri_of = |a: &NarrativeArc| format!("/api/arcs/{}", a.arc_id);

    let (status, body) = match op {
        Op::Create { arc_type, episodes, mains, title } => {
            let mains: Vec<_> = mains.iter().map(|i| &chars[i.index(chars.len())].character_id).collect();
            let body = json!({
                "series": super::SERIES,
                "title": format!("Storyline {title}"),
                "description": "A storyline found in the plot.",
                "arc_type": arc_type,
                "main_characters": mains,
                "progressions": episodes.iter().map(|e| json!({
                    "episode": format!("S01E{e:02}"),
                    "content": ["Someone does something."],
                })).collect::<Vec<_>>(),
            });
            let (s, b) = call(&w.app, Method::POST, "/api/arcs", Some(body)).await;
            let dup_main = mains.iter().collect::<BTreeSet<_>>().len() < mains.len();
            let multi_anthology = *arc_type == ArcType::Anthology && episodes.len() > 1;
            prop_assert_eq!(s == StatusCode::CREATED, !dup_main && !multi_anthology, "{:?} -> {} {}", op, s, b);
            (s, b)
        }
        _ if before.is_empty() => return Ok(()),
        Op::Continue { arc, episode, content } => {
            let a = pick(arc);
            let ep = format!("S01E{episode:02}");
            let r = call(&w.app, Method::POST, &format!("{}/progressions", uri_of(a)), Some(json!({"episode": ep, "content": lines(content)}))).await;
            let exists = a.episodes().iter().any(|e| e.episode() == *episode);
            let anthology_spill = a.arc_type == ArcType::Anthology;
            let ok = !exists && !anthology_spill && matches!(content, Content::Valid);
            prop_assert_eq!(r.0 == StatusCode::CREATED, ok, "{:?} -> {} {}", op, r.0, r.1);
            if exists {
                prop_assert_eq!(r.0, StatusCode::CONFLICT);
            }
            r
        }
        Op::Merge { keep, absorb } => {
            let (k, a) = (pick(keep), pick(absorb));
            let r = call(&w.app, Method::POST, "/api/arcs/merge", Some(json!({"keep_id": k.arc_id, "absorb_id": a.arc_id}))).await;
            if k.arc_id == a.arc_id {
                prop_assert_eq!(r.0, StatusCode::CONFLICT);
            } else {
                let union: BTreeSet<_> = k.episodes().union(&a.episodes()).copied().collect();
                if k.arc_type == ArcType::Anthology && union.len() > 1 {
                    prop_assert_eq!(r.0, StatusCode::BAD_REQUEST);
                }
                if r.0 == StatusCode::OK {
                    let merged = w.state.svc.memory.relational.load_arc(&k.arc_id).unwrap();
                    prop_assert_eq!(merged.episodes(), union);
                    prop_assert!(w.state.svc.memory.relational.find_arc(&a.arc_id).unwrap().is_none());
                    for p in &merged.progressions {
                        let mut want: Vec<String> = k.progression_for(p.episode).map(|q| q.content.clone()).unwrap_or_default();
                        want.extend(a.progression_for(p.episode).map(|q| q.content.clone()).unwrap_or_default());
                        prop_assert_eq!(&p.content, &want);
                    }
                }
            }
            r
        }
        Op::EditTitle { arc, blank } => {
            let a = pick(arc);
            let title = if *blank { " " } else { "Renamed storyline" };
            let r = call(&w.app, Method::PATCH, &uri_of(a), Some(json!({"title": title}))).await;
            if *blank {
                prop_assert_eq!(r.0, StatusCode::BAD_REQUEST);
                prop_assert_eq!(&r.1["error"]["code"], "EMPTY_TITLE");
            } else {
                prop_assert_eq!(r.0, StatusCode::OK);
            }
            r
        }
        Op::EditType { arc, arc_type } => {
            let a = pick(arc);
            let r = call(&w.app, Method::PATCH, &uri_of(a), Some(json!({"arc_type": arc_type}))).await;
            let bad = *arc_type == ArcType::Anthology && a.episodes().len() > 1;
            prop_assert_eq!(r.0 == StatusCode::OK, !bad, "{:?} -> {} {}", op, r.0, r.1);
            r
        }
        Op::EditMains { arc, mains } => {
            let a = pick(arc);
            let mains: Vec<_> = mains.iter().map(|i| &chars[i.index(chars.len())].character_id).collect();
            call(&w.app, Method::PATCH, &uri_of(a), Some(json!({"main_characters": mains}))).await
        }
        Op::EditProgression { arc, which, content } => {
            let a = pick(arc);
            let p = &a.progressions[which.index(a.progressions.len())];
            let r = call(&w.app, Method::PATCH, &format!("{}/progressions/{}", uri_of(a), p.episode), Some(json!({"content": lines(content)}))).await;
            prop_assert_eq!(r.0 == StatusCode::OK, matches!(content, Content::Valid), "{:?} -> {}", op, r.0);
            r
        }
        Op::DeleteProgression { arc, which } => {
            let a = pick(arc);
            let p = &a.progressions[which.index(a.progressions.len())];
            let r = call(&w.app, Method::DELETE, &format!("{}/progressions/{}", uri_of(a), p.episode), None).await;
            prop_assert_eq!(r.0 == StatusCode::OK, a.progressions.len() > 1);
            r
        }
        Op::DeleteArc { arc } => {
            let a = pick(arc);
            let r = call(&w.app, Method::DELETE, &uri_of(a), None).await;
            prop_assert_eq!(r.0, StatusCode::OK);
            prop_assert!(w.state.svc.memory.relational.find_arc(&a.arc_id).unwrap().is_none());
            r
        }
    };
    prop_assert!(!status.is_server_error(), "{:?} -> {} {}", op, status, body);
    if !status.is_success() {
        prop_assert!(body["error"]["code"].is_string());
        prop_assert_eq!(arcs(&w.state), before, "rejected {:?} changed the store", op);
    }
    check_invariants(&w.state)
}

/// Runs one sequence on a fresh store seeded from the replayed season.
pub fn run_sequence(ops: &[Op]) -> Result<(), TestCaseError> {
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
    rt.block_on(async {
        let w = world();
        check_invariants(&w.state)?;
        for op in ops {
            apply(&w, op).await?;
        }
        Ok(())
    })
}

pub fn sequences() -> impl Strategy<Value = Vec<Op>> {
    proptest::collection::vec(op(), 1..12)
}
