//! Gateway modes, schema repair and the shipped fixture corpus.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use arcmem_core::gateway::{
    fingerprint, ids, vars, FixtureStore, Gateway, GatewayError, GatewayMode, PromptCatalog,
    ScriptedProvider, UnreachableProvider, Variables,
};

fn resolve_vars(target: &str) -> Variables {
    vars([("context", "(none)".to_string()), ("target", target.to_string())])
}

fn gateway(mode: GatewayMode, provider: Arc<dyn arcmem_core::gateway::ChatProvider>, dir: &std::path::Path) -> Gateway {
    Gateway::new(mode, Arc::new(PromptCatalog::shipped()), Some(provider), FixtureStore::new(dir))
}

#[test]
fn invalid_first_answer_is_repaired_with_one_retry() {
    let dir = tempfile::tempdir().unwrap();
    let turn = Arc::new(AtomicUsize::new(0));
    let t = turn.clone();
    let provider = Arc::new(ScriptedProvider::new(move |req| {
        match t.fetch_add(1, Ordering::SeqCst) {
            0 => {
                assert_eq!(req.attempt, 0);
                Ok(r#"{"sentences": ["wrong shape"]}"#.into())
            }
            _ => {
                assert_eq!(req.attempt, 1);
                assert!(req.rendered_text.contains("previous reply was rejected"));
                Ok("Sure! ```json\n{\"sentence\": \"Nora leaves.\"}\n```".into())
            }
        }
    }));
    let gw = gateway(GatewayMode::Live, provider.clone(), dir.path());
    let c = gw.complete_structured(ids::RESOLVE_PRONOUNS, &resolve_vars("She leaves.")).unwrap();
    assert_eq!(c.retries, 1);
    assert!(!c.replayed);
    assert_eq!(c.value["sentence"], "Nora leaves.");
    assert_eq!(provider.calls(), 2);
    let stats = gw.stats();
    assert_eq!((stats.requests, stats.provider_calls, stats.retries), (1, 2, 1));
    // Live mode never writes fixtures.
    assert!(FixtureStore::new(dir.path()).load_all().unwrap().is_empty());
}

#[test]
fn persistent_garbage_exhausts_retries() {
    let dir = tempfile::tempdir().unwrap();
    let provider = Arc::new(ScriptedProvider::new(|_| Ok("not json at all".into())));
    let gw = gateway(GatewayMode::Live, provider.clone(), dir.path()).with_max_retries(2);
    let err = gw.complete_structured(ids::RESOLVE_PRONOUNS, &resolve_vars("She waits.")).unwrap_err();
    assert!(matches!(err, GatewayError::SchemaViolation { attempts: 3, .. }), "{err}");
    assert!(!err.is_unavailable());
    assert_eq!(provider.calls(), 3);
}

#[test]
fn recorded_answers_replay_without_the_network() {
    let dir = tempfile::tempdir().unwrap();
    let provider = Arc::new(ScriptedProvider::new(|req| {
        let target = &req.variables["target"];
        Ok(serde_json::json!({ "sentence": target.replace("She", "Nora") }).to_string())
    }));
    let recorder = gateway(GatewayMode::Record, provider.clone(), dir.path());
    let targets = ["She runs.", "She stops.", "She smiles."];
    let recorded: Vec<_> = targets
        .iter()
        .map(|t| recorder.complete_structured(ids::RESOLVE_PRONOUNS, &resolve_vars(t)).unwrap())
        .collect();
    assert_eq!(provider.calls(), 3);

    let offline = Arc::new(UnreachableProvider::new());
    let replayer = gateway(GatewayMode::Replay, offline.clone(), dir.path());
    for (t, rec) in targets.iter().zip(&recorded) {
        let c = replayer.complete_structured(ids::RESOLVE_PRONOUNS, &resolve_vars(t)).unwrap();
        assert!(c.replayed);
        assert_eq!(c.value, rec.value);
        assert_eq!(c.fingerprint, rec.fingerprint);
    }
    assert_eq!(offline.calls(), 0);
    let stats = replayer.stats();
    assert_eq!((stats.requests, stats.replay_hits, stats.provider_calls), (3, 3, 0));

    // A prompt that was never recorded is a miss, not a network call.
    let err = replayer
        .complete_structured(ids::RESOLVE_PRONOUNS, &resolve_vars("She hides."))
        .unwrap_err();
    assert_eq!(err.code(), "REPLAY_MISS");
    assert!(err.is_unavailable());
    assert_eq!(offline.calls(), 0);
}

#[test]
fn live_mode_without_provider_is_unavailable() {
    let dir = tempfile::tempdir().unwrap();
    let gw = Gateway::new(GatewayMode::Live, Arc::new(PromptCatalog::shipped()), None, FixtureStore::new(dir.path()));
    let err = gw.complete_structured(ids::RESOLVE_PRONOUNS, &resolve_vars("She goes.")).unwrap_err();
    assert!(matches!(err, GatewayError::Unavailable));
}

#[test]
fn rendering_is_strict_about_variables() {
    let gw = Gateway::replay("does-not-exist");
    let missing = vars([("target", "x".to_string())]);
    assert_eq!(gw.render(ids::RESOLVE_PRONOUNS, &missing).unwrap_err().code(), "MISSING_VARIABLE");
    let mut extra = resolve_vars("x");
    extra.insert("bonus".into(), "y".into());
    assert_eq!(gw.render(ids::RESOLVE_PRONOUNS, &extra).unwrap_err().code(), "UNUSED_VARIABLE");
    assert_eq!(gw.render("nope", &extra).unwrap_err().code(), "UNKNOWN_TEMPLATE");
}

fn repo_fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/llm")
}

#[test]
fn shipped_fixtures_cover_every_template_and_validate() {
    let catalog = PromptCatalog::shipped();
    let fixtures = FixtureStore::new(repo_fixtures()).load_all().unwrap();
    assert!(!fixtures.is_empty());
    for f in &fixtures {
        let t = catalog.get(&f.template_id).unwrap();
        assert_eq!(f.template_version, t.version, "{}", f.fingerprint);
        assert_eq!(fingerprint(&f.template_id, f.template_version, &f.rendered_text), f.fingerprint);
        t.schema()
            .validate(&f.parsed)
            .unwrap_or_else(|e| panic!("{} ({}): {e:?}", f.fingerprint, f.template_id));
    }
    for t in catalog.iter() {
        assert!(
            fixtures.iter().any(|f| f.template_id == t.template_id),
            "no fixture for {}",
            t.template_id
        );
    }
    assert_eq!(catalog.len(), 13);
}
