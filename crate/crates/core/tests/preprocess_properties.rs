//! Preprocessing: what the pronoun resolver actually sends, name
//! substitution against a regex oracle, and duplicate-character scoring.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use arcmem_core::gateway::{
    FixtureStore, Gateway, GatewayMode, LlmRequest, PromptCatalog, ScriptedProvider,
};
use arcmem_core::memory::RelationalStore;
use arcmem_core::preprocess::{
    find_residual_surfaces, resolve_pronouns, substitute_names, suggest_duplicate_characters,
    DocStatus, EpisodeDocument, Normalization,
};
use arcmem_core::{Character, CharacterId, EpisodeKey, SeriesId};
use proptest::prelude::*;
use regex::Regex;

fn series() -> SeriesId {
    "prop-show".parse().unwrap()
}

fn simplified_doc(sentences: Vec<String>) -> EpisodeDocument {
    let mut doc = EpisodeDocument::from_text(series(), EpisodeKey::new(1, 1).unwrap(), sentences.join(" "));
    doc.simplified = sentences;
    doc.status = DocStatus::Simplified;
    doc
}

/// Runs the resolver over `n` sentences that all contain a pronoun and
/// returns the context each request carried, in order.
fn contexts_seen(n: usize, window: usize) -> (Vec<(String, String)>, EpisodeDocument) {
    let seen: Arc<Mutex<Vec<(String, String)>>> = Arc::default();
    let log = seen.clone();
    let provider = Arc::new(ScriptedProvider::new(move |req: &LlmRequest| {
        let context = req.variables["context"].clone();
        let target = req.variables["target"].clone();
        log.lock().unwrap().push((context, target.clone()));
        let sentence = target.replace(" she ", " Nora ");
        Ok(serde_json::json!({ "sentence": sentence }).to_string())
    }));
    let dir = tempfile::tempdir().unwrap();
    let gateway = Gateway::new(
        GatewayMode::Live,
        Arc::new(PromptCatalog::shipped()),
        Some(provider.clone()),
        FixtureStore::new(dir.path()),
    );
    let sentences = (0..n).map(|i| format!("At step {i} she works.")).collect();
    let doc = resolve_pronouns(simplified_doc(sentences), &gateway, window).unwrap();
    assert_eq!(provider.calls(), n);
    let out = seen.lock().unwrap().clone();
    (out, doc)
}

#[test]
fn resolver_sends_at_most_fourteen_prior_sentences() {
    let (seen, doc) = contexts_seen(40, 15);
    assert_eq!(seen.len(), 40);
    assert_eq!(seen[0].0, "(none)");
    for (i, (context, target)) in seen.iter().enumerate().skip(1) {
        let lines: Vec<&str> = context.lines().collect();
        assert!(lines.len() <= 14, "request {i} carried {} lines", lines.len());
        assert!(lines.len() + 1 <= 15);
        assert_eq!(lines.len(), i.min(14));
        // Context is the already-resolved text immediately before the target.
        let start = i - lines.len();
        assert_eq!(lines, doc.resolved[start..i].iter().map(String::as_str).collect::<Vec<_>>());
        assert!(!context.contains(target.as_str()));
        assert!(lines.iter().all(|l| !l.contains(" she ")));
    }
    assert_eq!(doc.status, DocStatus::Resolved);
    assert!(doc.resolved.iter().all(|s| s.contains("Nora")));
}

#[test]
fn smaller_window_shrinks_context() {
    let (seen, _) = contexts_seen(12, 4);
    assert!(seen.iter().skip(1).all(|(c, _)| c.lines().count() <= 3));
    assert_eq!(seen[11].0.lines().count(), 3);
}

#[test]
fn sentences_without_pronouns_are_not_sent() {
    let provider = Arc::new(ScriptedProvider::new(|_| Err("should not be called".into())));
    let dir = tempfile::tempdir().unwrap();
    let gateway = Gateway::new(
        GatewayMode::Live,
        Arc::new(PromptCatalog::shipped()),
        Some(provider.clone()),
        FixtureStore::new(dir.path()),
    );
    let doc = simplified_doc(vec!["Nora works.".into(), "Sheila rests.".into()]);
    let doc = resolve_pronouns(doc, &gateway, 15).unwrap();
    assert_eq!(provider.calls(), 0);
    assert_eq!(doc.resolved, doc.simplified);
}

const FIRST: &[&str] = &["Nora", "Elias", "Theo", "Marta", "Ana", "Jo", "Sam", "Lena", "Ike", "Ruth"];
const LAST: &[&str] = &["Vale", "Reed", "Marsh", "Okafor", "Chen", "Price", "Brandt", "Frost", "Kim", "Lund"];

#[derive(Debug, Clone)]
struct Cast {
    /// (first, last) per character; firsts and lasts are all distinct.
    people: Vec<(String, String)>,
}

fn cast() -> impl Strategy<Value = Cast> {
    (
        Just(FIRST.to_vec()).prop_shuffle(),
        Just(LAST.to_vec()).prop_shuffle(),
        2usize..6,
    )
        .prop_map(|(f, l, n)| Cast {
            people: f.iter().zip(l.iter()).take(n).map(|(a, b)| (a.to_string(), b.to_string())).collect(),
        })
}

fn normalization(cast: &Cast) -> Normalization {
    let mut n = Normalization::default();
    for (first, last) in &cast.people {
        let id = CharacterId::derive(&series(), &format!("{first} {last}")).unwrap();
        for surface in [first.clone(), last.clone(), format!("Dr. {last}")] {
            n.surface_map.insert(surface, id.clone());
        }
        n.preferred_names.insert(id, format!("{first} {last}"));
    }
    n
}

/// Text pieces: every surface, the full names, and near-misses that must
/// never be rewritten.
fn pieces(cast: &Cast) -> Vec<String> {
    let mut out = vec!["the".to_string(), "meets".into(), "and".into(), ",".into(), ".".into(), "'s".into()];
    for (first, last) in &cast.people {
        out.push(first.clone());
        out.push(last.clone());
        out.push(format!("Dr. {last}"));
        out.push(format!("{first} {last}"));
        out.push(format!("{first}ville"));
        out.push(format!("Mc{last}"));
        out.push(first.to_lowercase());
    }
    out
}

fn oracle(text: &str, names: &BTreeMap<String, String>) -> String {
    let mut keys: Vec<String> = names.keys().cloned().chain(names.values().cloned()).collect();
    keys.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
    keys.dedup();
    let alternation = keys.iter().map(|k| regex::escape(k)).collect::<Vec<_>>().join("|");
    let re = Regex::new(&format!(r"\b(?:{alternation})\b")).unwrap();
    re.replace_all(text, |c: &regex::Captures| {
        let m = &c[0];
        names.get(m).cloned().unwrap_or_else(|| m.to_string())
    })
    .into_owned()
}

fn joined(tokens: &[String]) -> String {
    let mut s = String::new();
    for t in tokens {
        if !(s.is_empty() || t == "." || t == "," || t == "'s") {
            s.push(' ');
        }
        s.push_str(t);
    }
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn substitution_matches_word_boundary_oracle(
        (cast, picks) in cast().prop_flat_map(|c| {
            let n = pieces(&c).len();
            (Just(c), proptest::collection::vec(proptest::collection::vec(0..n, 1..14), 1..6))
        })
    ) {
        let norm = normalization(&cast);
        let names = norm.name_map();
        let all = pieces(&cast);
        let sentences: Vec<String> = picks
            .iter()
            .map(|p| joined(&p.iter().map(|&i| all[i].clone()).collect::<Vec<_>>()))
            .collect();
        let mut doc = simplified_doc(sentences.clone());
        doc.resolved = sentences.clone();
        doc.status = DocStatus::Resolved;
        let doc = substitute_names(doc, &norm).unwrap();
        prop_assert_eq!(doc.status, DocStatus::Normalized);
        for (before, after) in sentences.iter().zip(&doc.normalized) {
            prop_assert_eq!(after, &oracle(before, &names));
            prop_assert!(find_residual_surfaces(after, &names).is_empty(), "residue in {:?}", after);
        }
        // Applying it twice changes nothing.
        let mut again = doc.clone();
        again.resolved = doc.normalized.clone();
        let again = substitute_names(again, &norm).unwrap();
        prop_assert_eq!(again.normalized, doc.normalized);
    }
}

#[test]
fn substitution_respects_word_boundaries() {
    let cast = Cast {
        people: vec![("Nora".into(), "Vale".into()), ("Theo".into(), "Marsh".into())],
    };
    let norm = normalization(&cast);
    let mut doc = simplified_doc(vec![]);
    doc.resolved = vec![
        "Nora meets Dr. Marsh in Noraville.".into(),
        "Nora Vale thanks Theo's mother, and Valerie waves.".into(),
    ];
    doc.status = DocStatus::Resolved;
    let doc = substitute_names(doc, &norm).unwrap();
    assert_eq!(
        doc.normalized,
        vec![
            "Nora Vale meets Theo Marsh in Noraville.".to_string(),
            "Nora Vale thanks Theo Marsh's mother, and Valerie waves.".to_string(),
        ]
    );
}

#[test]
fn frost_pair_scores_exactly_one_half() {
    let store = RelationalStore::in_memory().unwrap();
    let s = series();
    let frost = Character::new(CharacterId::derive(&s, "frost").unwrap(), s.clone(), "Frost", ["Dr. Frost".to_string()]);
    let jerry = Character::new(CharacterId::derive(&s, "jerry frost").unwrap(), s.clone(), "Jerry Frost", []);
    let nora = Character::new(CharacterId::derive(&s, "nora vale").unwrap(), s.clone(), "Nora Vale", []);
    store.save_characters(&[frost.clone(), jerry.clone(), nora]).unwrap();

    // {frost} vs {jerry, frost}: 1 / 2; the honorific is not a token.
    let at_half = suggest_duplicate_characters(&store, &s, 0.5).unwrap();
    assert_eq!(at_half.len(), 1);
    assert_eq!(at_half[0].score, 0.5);
    let pair = [at_half[0].first.clone(), at_half[0].second.clone()];
    assert!(pair.contains(&frost.character_id) && pair.contains(&jerry.character_id));

    assert!(suggest_duplicate_characters(&store, &s, 0.51).unwrap().is_empty());
}
