//! Replay fixtures: one JSON file per request fingerprint.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::GatewayError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub fingerprint: String,
    pub template_id: String,
    pub template_version: u32,
    pub rendered_text: String,
    pub raw_text: String,
    pub parsed: Value,
}

/// Directory of fixtures with an in-memory read cache. Reads share a lock;
/// writes are serialized.
#[derive(Debug)]
pub struct FixtureStore {
    dir: PathBuf,
    cache: RwLock<HashMap<String, Fixture>>,
    write_lock: Mutex<()>,
}

impl FixtureStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            cache: RwLock::new(HashMap::new()),
            write_lock: Mutex::new(()),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, fingerprint: &str) -> PathBuf {
        self.dir.join(format!("{fingerprint}.json"))
    }

    pub fn get(&self, fingerprint: &str) -> Result<Option<Fixture>, GatewayError> {
        if let Some(f) = self.cache.read().expect("fixture cache poisoned").get(fingerprint) {
            return Ok(Some(f.clone()));
        }
        let path = self.path_for(fingerprint);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(GatewayError::Fixture(format!("{}: {e}", path.display()))),
        };
        let fixture: Fixture = serde_json::from_slice(&bytes)
            .map_err(|e| GatewayError::Fixture(format!("{}: {e}", path.display())))?;
        if fixture.fingerprint != fingerprint {
            return Err(GatewayError::Fixture(format!(
                "{} holds fingerprint {}",
                path.display(),
                fixture.fingerprint
            )));
        }
        self.cache
            .write()
            .expect("fixture cache poisoned")
            .insert(fingerprint.to_string(), fixture.clone());
        Ok(Some(fixture))
    }

    pub fn put(&self, fixture: &Fixture) -> Result<(), GatewayError> {
        let _guard = self.write_lock.lock().expect("fixture write lock poisoned");
        let io = |e: std::io::Error| GatewayError::Fixture(format!("{}: {e}", self.dir.display()));
        fs::create_dir_all(&self.dir).map_err(io)?;
        let path = self.path_for(&fixture.fingerprint);
        let tmp = path.with_extension("json.tmp");
        let mut text = serde_json::to_string_pretty(fixture)
            .map_err(|e| GatewayError::Fixture(e.to_string()))?;
        text.push('\n');
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(text.as_bytes()).map_err(io)?;
        drop(f);
        fs::rename(&tmp, &path).map_err(io)?;
        self.cache
            .write()
            .expect("fixture cache poisoned")
            .insert(fixture.fingerprint.clone(), fixture.clone());
        Ok(())
    }

    /// Every fixture in the directory, sorted by fingerprint.
    pub fn load_all(&self) -> Result<Vec<Fixture>, GatewayError> {
        let entries = match fs::read_dir(&self.dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(GatewayError::Fixture(format!("{}: {e}", self.dir.display()))),
        };
        let mut out = Vec::new();
        for entry in entries {
            let path = entry
                .map_err(|e| GatewayError::Fixture(e.to_string()))?
                .path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let Some(fp) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            if let Some(f) = self.get(fp)? {
                out.push(f);
            }
        }
        out.sort_by(|a, b| a.fingerprint.cmp(&b.fingerprint));
        Ok(out)
    }
}
