//! A deterministic stand-in for the chat model, driven by a hand-written
//! script of what a careful reader would answer for each episode. It is how
//! the bundled replay fixtures are authored, and it lets tests run the
//! whole pipeline offline.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::catalog::ids;
use super::provider::{ChatProvider, ChatReply, LlmRequest};
use crate::model::{ArcType, EpisodeKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    F,
    M,
    X,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptCharacter {
    pub preferred: String,
    pub surfaces: Vec<String>,
    pub gender: Gender,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptArc {
    pub title: String,
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arc_type: Option<ArcType>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptMerge {
    pub a: String,
    pub b: String,
    pub title: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptDuplicate {
    pub keep: String,
    pub drop: String,
    pub arc_type: ArcType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptDetails {
    pub main: Vec<String>,
    #[serde(default)]
    pub interfering: Vec<String>,
    pub utterances: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptRoles {
    pub main: Vec<String>,
    #[serde(default)]
    pub interfering: Vec<String>,
}

/// Answers for one episode. Storylines are keyed by title.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeScript {
    /// Raw sentence → simple sentences. Unlisted sentences pass unchanged.
    pub rewrites: BTreeMap<String, Vec<String>>,
    /// Target sentence → resolved sentence, overriding the name heuristic.
    pub pronouns: BTreeMap<String, String>,
    pub threads: Vec<String>,
    pub anthology: Vec<ScriptArc>,
    pub serial: Vec<ScriptArc>,
    /// Known storyline title → this episode's developments. Flagged arcs
    /// not listed here are reported absent.
    pub continues: BTreeMap<String, String>,
    pub merges: Vec<ScriptMerge>,
    pub duplicates: Vec<ScriptDuplicate>,
    pub details: BTreeMap<String, ScriptDetails>,
    pub off_topic: BTreeMap<String, Vec<String>>,
    pub roles: BTreeMap<String, ScriptRoles>,
    /// Title → reason for the final reviewer to reject it.
    pub reject: BTreeMap<String, String>,
    /// (new draft title, stored arc title) pairs that are one storyline.
    pub same_storyline: Vec<(String, String)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NarrativeScript {
    pub characters: Vec<ScriptCharacter>,
    pub episodes: BTreeMap<EpisodeKey, EpisodeScript>,
}

impl NarrativeScript {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

/// Chat provider answering from a [`NarrativeScript`]. The caller says
/// which episode is being processed with [`set_episode`](Self::set_episode);
/// simplification requests name their episode themselves.
pub struct ScriptedNarrator {
    script: NarrativeScript,
    episode: Mutex<Option<EpisodeKey>>,
    calls: Mutex<BTreeMap<String, usize>>,
}

fn var<'a>(req: &'a LlmRequest, name: &str) -> Result<&'a str, String> {
    req.variables
        .get(name)
        .map(String::as_str)
        .ok_or_else(|| format!("{}: no variable {name}", req.template_id))
}

/// Strips a leading "N. " or "[N] " marker.
fn strip_marker(line: &str) -> &str {
    let t = line.trim();
    if let Some(rest) = t.strip_prefix('[') {
        if let Some(end) = rest.find("] ") {
            return &rest[end + 2..];
        }
    }
    match t.find(". ") {
        Some(i) if t[..i].chars().all(|c| c.is_ascii_digit()) && i > 0 => &t[i + 2..],
        _ => t,
    }
}

/// Title out of a "[i] (Type) Title: description" listing line.
fn listed_title(line: &str) -> Option<(usize, String)> {
    let rest = line.strip_prefix('[')?;
    let close = rest.find(']')?;
    let index = rest[..close].parse().ok()?;
    let after = rest[close + 1..].trim_start();
    let after = after.strip_prefix('(')?;
    let after = &after[after.find(')')? + 1..];
    let title = after.trim_start().split(": ").next()?.trim();
    Some((index, title.to_string()))
}

fn brief_title(brief: &str) -> Option<&str> {
    brief.lines().find_map(|l| l.strip_prefix("Title: ")).map(str::trim)
}

fn names_list(s: &str) -> Vec<String> {
    if s.trim() == "(none)" {
        return Vec::new();
    }
    s.split("; ").map(|n| n.trim().to_string()).filter(|n| !n.is_empty()).collect()
}

/// Words after which "her" is an object rather than a possessive.
const OBJECT_FOLLOWERS: &[&str] = &[
    "that", "to", "and", "about", "with", "in", "on", "at", "for", "from", "into", "again",
    "back", "away", "up", "down", "off", "out", "the", "a", "an", "what", "how", "why", "if",
    "when", "but", "or", "as", "before", "after",
];

impl ScriptedNarrator {
    pub fn new(script: NarrativeScript) -> Self {
        Self {
            script,
            episode: Mutex::new(None),
            calls: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn set_episode(&self, episode: EpisodeKey) {
        *self.episode.lock().expect("narrator lock") = Some(episode);
    }

    /// Requests answered so far, per template.
    pub fn calls(&self) -> BTreeMap<String, usize> {
        self.calls.lock().expect("narrator lock").clone()
    }

    fn episode(&self) -> Result<&EpisodeScript, String> {
        let key = self
            .episode
            .lock()
            .expect("narrator lock")
            .ok_or("narrator: no episode set")?;
        self.script
            .episodes
            .get(&key)
            .ok_or_else(|| format!("narrator: no script for {key}"))
    }

    fn answer(&self, req: &LlmRequest) -> Result<Value, String> {
        match req.template_id.as_str() {
            ids::SIMPLIFY_PLOT => {
                let key: EpisodeKey = var(req, "episode")?.parse().map_err(|e| format!("{e}"))?;
                self.set_episode(key);
                let ep = self.episode()?;
                let mut out = Vec::new();
                for line in var(req, "sentences")?.lines() {
                    let s = strip_marker(line);
                    match ep.rewrites.get(s) {
                        Some(r) => out.extend(r.iter().cloned()),
                        None => out.push(s.to_string()),
                    }
                }
                Ok(json!({ "sentences": out }))
            }
            ids::RESOLVE_PRONOUNS => {
                let target = var(req, "target")?;
                if let Some(r) = self.episode()?.pronouns.get(target) {
                    return Ok(json!({ "sentence": r }));
                }
                let context = var(req, "context")?;
                let context = if context == "(none)" { "" } else { context };
                Ok(json!({ "sentence": self.resolve(context, target) }))
            }
            ids::REFINE_ENTITIES => Ok(self.refine(var(req, "candidates")?, var(req, "plot")?)),
            ids::AGENT1_THREAD_CUES => Ok(json!({ "threads": self.episode()?.threads })),
            ids::AGENT2_ANTHOLOGY => {
                let arcs: Vec<Value> = self
                    .episode()?
                    .anthology
                    .iter()
                    .map(|a| json!({"title": a.title, "description": a.description, "arc_type": "Anthology"}))
                    .collect();
                Ok(json!({ "arcs": arcs }))
            }
            ids::AGENT3_SERIAL => {
                let ep = self.episode()?;
                let mut validations = Vec::new();
                for line in var(req, "flagged")?.lines() {
                    let Some(rest) = line.strip_prefix("- [") else { continue };
                    let Some(close) = rest.find("] ") else { continue };
                    let arc_id = &rest[..close];
                    let after = &rest[close + 2..];
                    let title = after.rsplit_once(" (").map_or(after, |(t, _)| t).trim();
                    let dev = ep.continues.get(title);
                    validations.push(json!({
                        "arc_id": arc_id,
                        "present": dev.is_some(),
                        "developments": dev.cloned().unwrap_or_default(),
                    }));
                }
                let new_arcs: Vec<Value> = ep
                    .serial
                    .iter()
                    .map(|a| {
                        json!({
                            "title": a.title,
                            "description": a.description,
                            "arc_type": a.arc_type.unwrap_or(ArcType::Soap),
                        })
                    })
                    .collect();
                Ok(json!({ "new_arcs": new_arcs, "validations": validations }))
            }
            ids::AGENT4_OVERLAP => {
                let a = brief_title(var(req, "arc_a")?).unwrap_or_default();
                let b = brief_title(var(req, "arc_b")?).unwrap_or_default();
                let hit = self
                    .episode()?
                    .merges
                    .iter()
                    .find(|m| (m.a == a && m.b == b) || (m.a == b && m.b == a));
                Ok(match hit {
                    Some(m) => json!({
                        "same_storyline": true,
                        "merged": {"title": m.title, "description": m.description},
                        "reason": "Both describe the same storyline.",
                    }),
                    None => json!({"same_storyline": false, "merged": null, "reason": "Different storylines."}),
                })
            }
            ids::AGENT5_DEDUP => {
                let listed: Vec<(usize, String)> =
                    var(req, "drafts")?.lines().filter_map(listed_title).collect();
                let find = |t: &str| listed.iter().find(|(_, x)| x == t).map(|(i, _)| *i);
                let mut dups = Vec::new();
                for d in &self.episode()?.duplicates {
                    if let (Some(k), Some(dr)) = (find(&d.keep), find(&d.drop)) {
                        dups.push(json!({
                            "keep": k, "drop": dr, "arc_type": d.arc_type,
                            "reason": "The same story drafted twice.",
                        }));
                    }
                }
                Ok(json!({ "duplicates": dups }))
            }
            ids::AGENT6_ENHANCE => {
                let title = var(req, "title")?;
                let d = self
                    .episode()?
                    .details
                    .get(title)
                    .ok_or_else(|| format!("narrator: no details for {title:?}"))?;
                Ok(json!({
                    "main_characters": d.main,
                    "interfering_characters": d.interfering,
                    "utterances": d.utterances,
                }))
            }
            ids::AGENT7_VERIFY => {
                let title = var(req, "title")?;
                let drop: BTreeSet<&str> = self
                    .episode()?
                    .off_topic
                    .get(title)
                    .map(|v| v.iter().map(String::as_str).collect())
                    .unwrap_or_default();
                let keep: Vec<usize> = var(req, "utterances")?
                    .lines()
                    .enumerate()
                    .filter(|(_, l)| !drop.contains(strip_marker(l)))
                    .map(|(i, _)| i)
                    .collect();
                Ok(json!({ "keep": keep }))
            }
            ids::AGENT8_ROLES => {
                let title = var(req, "title")?;
                Ok(match self.episode()?.roles.get(title) {
                    Some(r) => json!({"main_characters": r.main, "interfering_characters": r.interfering}),
                    None => json!({
                        "main_characters": names_list(var(req, "main")?),
                        "interfering_characters": names_list(var(req, "interfering")?),
                    }),
                })
            }
            ids::AGENT9_FINAL_REVIEW => {
                let ep = self.episode()?;
                let verdicts: Vec<Value> = var(req, "drafts")?
                    .lines()
                    .filter_map(listed_title)
                    .map(|(index, title)| match ep.reject.get(&title) {
                        Some(reason) => json!({"index": index, "accept": false, "reason": reason}),
                        None => json!({"index": index, "accept": true, "reason": "Consistent."}),
                    })
                    .collect();
                Ok(json!({ "verdicts": verdicts }))
            }
            ids::SAME_STORYLINE => {
                let draft = var(req, "draft_title")?;
                let cand = var(req, "candidate_title")?;
                let same = self
                    .episode()?
                    .same_storyline
                    .iter()
                    .any(|(d, c)| d == draft && c == cand);
                Ok(json!({
                    "same_storyline": same,
                    "reason": if same { "The same ongoing story." } else { "A different story." },
                }))
            }
            other => Err(format!("narrator: unknown template {other}")),
        }
    }

    /// Groups candidate surfaces by scripted character; the rest are
    /// rejected. With no candidates, finds the characters in the plot.
    fn refine(&self, candidates: &str, plot: &str) -> Value {
        let listed: Vec<&str> = candidates
            .lines()
            .filter_map(|l| l.strip_prefix("- "))
            .map(str::trim)
            .collect();
        let mut claimed = BTreeSet::new();
        let mut characters = Vec::new();
        for c in &self.script.characters {
            let surfaces: Vec<&String> = c
                .surfaces
                .iter()
                .filter(|s| {
                    if listed.is_empty() {
                        plot.contains(s.as_str())
                    } else {
                        listed.contains(&s.as_str())
                    }
                })
                .collect();
            if surfaces.is_empty() {
                continue;
            }
            claimed.extend(surfaces.iter().map(|s| s.as_str()));
            characters.push(json!({"preferred": c.preferred, "surfaces": surfaces}));
        }
        let rejected: Vec<&str> = listed.iter().copied().filter(|s| !claimed.contains(s)).collect();
        json!({ "characters": characters, "rejected": rejected })
    }

    /// Most recent mention of a character of `gender` in `text`, as the
    /// surface used there.
    fn last_mention(&self, text: &str, gender: Gender) -> Option<String> {
        let mut best: Option<(usize, usize, &str)> = None;
        for c in self.script.characters.iter().filter(|c| c.gender == gender) {
            for s in &c.surfaces {
                for (pos, _) in text.match_indices(s.as_str()) {
                    let bounded_before = !text[..pos].chars().last().is_some_and(char::is_alphanumeric);
                    let bounded_after = !text[pos + s.len()..].chars().next().is_some_and(char::is_alphanumeric);
                    if !(bounded_before && bounded_after) {
                        continue;
                    }
                    let end = pos + s.len();
                    // Latest end wins; at equal ends the longer surface.
                    if best.map_or(true, |(e, l, _)| end > e || (end == e && s.len() > l)) {
                        best = Some((end, s.len(), s.as_str()));
                    }
                }
            }
        }
        best.map(|(_, _, s)| s.to_string())
    }

    /// Replaces he/him/his/she/her by the most recent matching name in the
    /// context and the target up to the pronoun.
    fn resolve(&self, context: &str, target: &str) -> String {
        let words: Vec<&str> = target.split(' ').collect();
        let mut out = Vec::with_capacity(words.len());
        let mut offset = 0;
        for (i, w) in words.iter().enumerate() {
            let start = w.find(|c: char| c.is_alphabetic()).unwrap_or(0);
            let core_len = w[start..].find(|c: char| !c.is_alphabetic()).unwrap_or(w.len() - start);
            let core = &w[start..start + core_len];
            let (lead, tail) = (&w[..start], &w[start + core_len..]);
            let gender = match core.to_lowercase().as_str() {
                "he" | "him" | "his" => Some(Gender::M),
                "she" | "her" => Some(Gender::F),
                _ => None,
            };
            let prefix = format!("{context}\n{}", &target[..offset]);
            let name = gender.and_then(|g| self.last_mention(&prefix, g));
            let replaced = match (name, core.to_lowercase().as_str()) {
                (Some(n), "his") => format!("{lead}{n}'s{tail}"),
                (Some(n), "her") => {
                    let next = words.get(i + 1).map(|x| x.trim_matches(|c: char| !c.is_alphabetic()).to_lowercase());
                    let possessive = tail.is_empty()
                        && next.is_some_and(|x| !x.is_empty() && !OBJECT_FOLLOWERS.contains(&x.as_str()));
                    if possessive {
                        format!("{lead}{n}'s{tail}")
                    } else {
                        format!("{lead}{n}{tail}")
                    }
                }
                (Some(n), _) => format!("{lead}{n}{tail}"),
                (None, _) => w.to_string(),
            };
            out.push(replaced);
            offset += w.len() + 1;
        }
        out.join(" ")
    }
}

impl ChatProvider for ScriptedNarrator {
    fn name(&self) -> &str {
        "scripted-narrator"
    }

    fn complete(&self, request: &LlmRequest) -> Result<ChatReply, String> {
        *self
            .calls
            .lock()
            .expect("narrator lock")
            .entry(request.template_id.clone())
            .or_default() += 1;
        let value = self.answer(request)?;
        Ok(ChatReply {
            raw_text: serde_json::to_string(&value).map_err(|e| e.to_string())?,
            meta: json!({"provider": "scripted-narrator"}),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn narrator() -> ScriptedNarrator {
        ScriptedNarrator::new(NarrativeScript {
            characters: vec![
                ScriptCharacter {
                    preferred: "Nora Vale".into(),
                    surfaces: vec!["Nora Vale".into(), "Nora".into()],
                    gender: Gender::F,
                },
                ScriptCharacter {
                    preferred: "Sam Okafor".into(),
                    surfaces: vec!["Sam Okafor".into(), "Sam".into()],
                    gender: Gender::M,
                },
            ],
            episodes: BTreeMap::new(),
        })
    }

    #[test]
    fn heuristic_pronouns() {
        let n = narrator();
        assert_eq!(
            n.resolve("Sam waits for Nora.", "He kisses her and takes her hand."),
            "Sam kisses Nora and takes Nora's hand."
        );
        assert_eq!(n.resolve("", "Nora begins her third year."), "Nora begins Nora's third year.");
        assert_eq!(n.resolve("", "They leave."), "They leave.");
    }

    #[test]
    fn listing_parsers() {
        assert_eq!(
            listed_title("[2] (Soap) A title: with a description: here"),
            Some((2, "A title".to_string()))
        );
        assert_eq!(strip_marker("12. Some text. More."), "Some text. More.");
        assert_eq!(strip_marker("0. x"), "x");
    }

    #[test]
    fn refine_groups_candidates() {
        let v = narrator().refine("- Nora\n- Sam Okafor\n- Harbor General", "");
        assert_eq!(v["characters"].as_array().unwrap().len(), 2);
        assert_eq!(v["rejected"], json!(["Harbor General"]));
    }
}
