//! Relational long-term memory: arcs, progressions, utterances and
//! characters in a single-file SQLite database. Deleting an arc cascades to
//! its progressions, utterances and character links.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::{Mutex, MutexGuard};

use rusqlite::{params, Connection, OptionalExtension};
use serde::{Deserialize, Serialize};

use super::MemoryError;
use crate::model::{
    normalize_appellation, ArcId, ArcType, Character, CharacterId, EpisodeKey, NarrativeArc,
    Progression, ProgressionId, SeriesId,
};

const SCHEMA: &str = r#"
CREATE TABLE IF NOT EXISTS characters (
    character_id   TEXT PRIMARY KEY,
    series         TEXT NOT NULL,
    preferred_name TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS appellations (
    character_id TEXT NOT NULL REFERENCES characters(character_id) ON DELETE CASCADE,
    series       TEXT NOT NULL,
    name         TEXT NOT NULL,
    norm         TEXT NOT NULL,
    UNIQUE (series, norm)
);
CREATE TABLE IF NOT EXISTS arcs (
    arc_id      TEXT PRIMARY KEY,
    series      TEXT NOT NULL,
    title       TEXT NOT NULL,
    description TEXT NOT NULL,
    arc_type    TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS arc_main_characters (
    arc_id       TEXT NOT NULL REFERENCES arcs(arc_id) ON DELETE CASCADE,
    position     INTEGER NOT NULL,
    character_id TEXT NOT NULL REFERENCES characters(character_id),
    PRIMARY KEY (arc_id, position)
);
CREATE TABLE IF NOT EXISTS progressions (
    progression_id TEXT PRIMARY KEY,
    arc_id         TEXT NOT NULL REFERENCES arcs(arc_id) ON DELETE CASCADE,
    series         TEXT NOT NULL,
    season         INTEGER NOT NULL,
    episode        INTEGER NOT NULL,
    UNIQUE (arc_id, season, episode)
);
CREATE TABLE IF NOT EXISTS utterances (
    progression_id TEXT NOT NULL REFERENCES progressions(progression_id) ON DELETE CASCADE,
    ordinal        INTEGER NOT NULL,
    text           TEXT NOT NULL,
    PRIMARY KEY (progression_id, ordinal)
);
CREATE TABLE IF NOT EXISTS progression_interfering (
    progression_id TEXT NOT NULL REFERENCES progressions(progression_id) ON DELETE CASCADE,
    position       INTEGER NOT NULL,
    character_id   TEXT NOT NULL REFERENCES characters(character_id),
    PRIMARY KEY (progression_id, position)
);
CREATE TABLE IF NOT EXISTS processed_episodes (
    series  TEXT NOT NULL,
    season  INTEGER NOT NULL,
    episode INTEGER NOT NULL,
    result  TEXT NOT NULL,
    PRIMARY KEY (series, season, episode)
);
"#;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ArcListFilter {
    pub series: Option<SeriesId>,
    pub arc_type: Option<ArcType>,
    pub character: Option<CharacterId>,
}

pub struct RelationalStore {
    conn: Mutex<Connection>,
}

impl RelationalStore {
    pub fn open(path: &Path) -> Result<Self, MemoryError> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        Self::init(Connection::open(path)?)
    }

    pub fn in_memory() -> Result<Self, MemoryError> {
        Self::init(Connection::open_in_memory()?)
    }

    fn init(conn: Connection) -> Result<Self, MemoryError> {
        conn.pragma_update(None, "foreign_keys", "ON")?;
        conn.execute_batch(SCHEMA)?;
        Ok(Self {
            conn: Mutex::new(conn),
        })
    }

    fn conn(&self) -> MutexGuard<'_, Connection> {
        self.conn.lock().expect("relational store lock poisoned")
    }

    /// Inserts or replaces an arc with all of its progressions.
    pub fn save_arc(&self, arc: &NarrativeArc) -> Result<(), MemoryError> {
        let mut conn = self.conn();
        let tx = conn.transaction()?;
        write_arc(&tx, arc)?;
        tx.commit()?;
        Ok(())
    }

    pub fn find_arc(&self, arc_id: &ArcId) -> Result<Option<NarrativeArc>, MemoryError> {
        read_arc(&self.conn(), arc_id)
    }

    pub fn load_arc(&self, arc_id: &ArcId) -> Result<NarrativeArc, MemoryError> {
        self.find_arc(arc_id)?
            .ok_or_else(|| MemoryError::UnknownArc(arc_id.clone()))
    }

    /// Arcs passing `filter`, ordered by (series, title, arc_id).
    pub fn list_arcs(&self, filter: &ArcListFilter) -> Result<Vec<NarrativeArc>, MemoryError> {
        let conn = self.conn();
        let ids: Vec<ArcId> = {
            let mut stmt = conn.prepare(
                "SELECT arc_id FROM arcs
                 WHERE (?1 IS NULL OR series = ?1) AND (?2 IS NULL OR arc_type = ?2)
                 ORDER BY series, title, arc_id",
            )?;
            let rows = stmt.query_map(
                params![
                    filter.series.as_ref().map(SeriesId::as_str),
                    filter.arc_type.map(|t| t.as_str())
                ],
                |r| r.get::<_, String>(0),
            )?;
            rows.map(|r| r.map(ArcId::from_raw))
                .collect::<Result<_, _>>()?
        };
        let mut out = Vec::with_capacity(ids.len());
        for id in ids {
            if let Some(arc) = read_arc(&conn, &id)? {
                if let Some(c) = &filter.character {
                    if !arc.character_refs().contains(c) {
                        continue;
                    }
                }
                out.push(arc);
            }
        }
        Ok(out)
    }

    /// Deletes the arc and, by cascade, its progressions and utterances.
    /// Returns the deleted arc.
    pub fn delete_arc(&self, arc_id: &ArcId) -> Result<NarrativeArc, MemoryError> {
        let mut conn = self.conn();
        let tx = conn.transaction()?;
        let arc = read_arc(&tx, arc_id)?.ok_or_else(|| MemoryError::UnknownArc(arc_id.clone()))?;
        tx.execute("DELETE FROM arcs WHERE arc_id = ?1", params![arc_id.as_str()])?;
        tx.commit()?;
        Ok(arc)
    }

    pub fn count_progressions(&self) -> Result<usize, MemoryError> {
        let conn = self.conn();
        let n: i64 = conn.query_row("SELECT COUNT(*) FROM progressions", [], |r| r.get(0))?;
        Ok(n as usize)
    }

    pub fn count_utterances(&self) -> Result<usize, MemoryError> {
        let conn = self.conn();
        let n: i64 = conn.query_row("SELECT COUNT(*) FROM utterances", [], |r| r.get(0))?;
        Ok(n as usize)
    }

    /// Inserts or replaces a character. Fails when one of its appellations
    /// already belongs to another character of the same series.
    pub fn save_character(&self, character: &Character) -> Result<(), MemoryError> {
        let mut conn = self.conn();
        let tx = conn.transaction()?;
        write_character(&tx, character)?;
        tx.commit()?;
        Ok(())
    }

    /// Saves several characters atomically.
    pub fn save_characters(&self, characters: &[Character]) -> Result<(), MemoryError> {
        let mut conn = self.conn();
        let tx = conn.transaction()?;
        for c in characters {
            write_character(&tx, c)?;
        }
        tx.commit()?;
        Ok(())
    }

    pub fn find_character(&self, id: &CharacterId) -> Result<Option<Character>, MemoryError> {
        read_character(&self.conn(), id)
    }

    pub fn load_character(&self, id: &CharacterId) -> Result<Character, MemoryError> {
        self.find_character(id)?
            .ok_or_else(|| MemoryError::UnknownCharacter(id.clone()))
    }

    /// Characters of a series ordered by (preferred name, id).
    pub fn list_characters(&self, series: &SeriesId) -> Result<Vec<Character>, MemoryError> {
        let conn = self.conn();
        let ids: Vec<CharacterId> = {
            let mut stmt = conn.prepare(
                "SELECT character_id FROM characters WHERE series = ?1
                 ORDER BY preferred_name, character_id",
            )?;
            let rows = stmt.query_map(params![series.as_str()], |r| r.get::<_, String>(0))?;
            rows.map(|r| r.map(CharacterId::from_raw))
                .collect::<Result<_, _>>()?
        };
        let mut out = Vec::with_capacity(ids.len());
        for id in ids {
            out.extend(read_character(&conn, &id)?);
        }
        Ok(out)
    }

    pub fn list_series(&self) -> Result<Vec<SeriesId>, MemoryError> {
        let conn = self.conn();
        let mut stmt = conn.prepare(
            "SELECT series FROM arcs UNION SELECT series FROM characters ORDER BY 1",
        )?;
        let rows = stmt.query_map([], |r| r.get::<_, String>(0))?;
        let mut out = Vec::new();
        for r in rows {
            out.push(SeriesId::new(r?).map_err(|e| MemoryError::Corrupt(e.to_string()))?);
        }
        Ok(out)
    }

    /// Case-insensitive appellation lookup within a series.
    pub fn find_character_by_appellation(
        &self,
        series: &SeriesId,
        name: &str,
    ) -> Result<Option<Character>, MemoryError> {
        let conn = self.conn();
        let id: Option<String> = conn
            .query_row(
                "SELECT character_id FROM appellations WHERE series = ?1 AND norm = ?2",
                params![series.as_str(), normalize_appellation(name)],
                |r| r.get(0),
            )
            .optional()?;
        match id {
            Some(id) => read_character(&conn, &CharacterId::from_raw(id)),
            None => Ok(None),
        }
    }

    /// Ids among `ids` that have no character row.
    pub fn missing_characters(
        &self,
        ids: impl IntoIterator<Item = CharacterId>,
    ) -> Result<Vec<CharacterId>, MemoryError> {
        let conn = self.conn();
        let mut out = Vec::new();
        for id in ids {
            if !character_exists(&conn, &id)? {
                out.push(id);
            }
        }
        Ok(out)
    }

    /// Folds `drop_id` into `keep_id`: appellations are unioned, every arc
    /// and progression reference is rewritten, then `drop_id` is deleted.
    pub fn merge_characters(
        &self,
        keep_id: &CharacterId,
        drop_id: &CharacterId,
    ) -> Result<Character, MemoryError> {
        if keep_id == drop_id {
            return Err(MemoryError::Conflict(format!(
                "cannot merge character {keep_id} into itself"
            )));
        }
        let mut conn = self.conn();
        let tx = conn.transaction()?;
        let mut keep = read_character(&tx, keep_id)?
            .ok_or_else(|| MemoryError::UnknownCharacter(keep_id.clone()))?;
        let dropped = read_character(&tx, drop_id)?
            .ok_or_else(|| MemoryError::UnknownCharacter(drop_id.clone()))?;
        if keep.series != dropped.series {
            return Err(MemoryError::Conflict(format!(
                "characters {keep_id} and {drop_id} belong to different series"
            )));
        }
        for name in &dropped.appellations {
            if let Some(owner) = appellation_owner(&tx, &keep.series, name)? {
                if owner != *keep_id && owner != *drop_id {
                    return Err(MemoryError::AppellationTaken {
                        appellation: name.clone(),
                        owner,
                    });
                }
            }
        }

        let affected: Vec<ArcId> = {
            let mut stmt = tx.prepare(
                "SELECT arc_id FROM arc_main_characters WHERE character_id = ?1
                 UNION
                 SELECT p.arc_id FROM progression_interfering i
                   JOIN progressions p ON p.progression_id = i.progression_id
                   WHERE i.character_id = ?1
                 ORDER BY 1",
            )?;
            let rows = stmt.query_map(params![drop_id.as_str()], |r| r.get::<_, String>(0))?;
            rows.map(|r| r.map(ArcId::from_raw))
                .collect::<Result<_, _>>()?
        };
        for arc_id in affected {
            let Some(mut arc) = read_arc(&tx, &arc_id)? else {
                continue;
            };
            arc.main_characters = rewrite_refs(&arc.main_characters, drop_id, keep_id);
            for p in &mut arc.progressions {
                p.interfering_characters = rewrite_refs(&p.interfering_characters, drop_id, keep_id);
            }
            write_arc(&tx, &arc)?;
        }

        tx.execute(
            "DELETE FROM characters WHERE character_id = ?1",
            params![drop_id.as_str()],
        )?;
        for name in &dropped.appellations {
            keep.add_appellation(name);
        }
        write_character(&tx, &keep)?;
        tx.commit()?;
        Ok(keep)
    }

    pub fn mark_processed(
        &self,
        series: &SeriesId,
        episode: EpisodeKey,
        result_json: &str,
    ) -> Result<(), MemoryError> {
        self.conn().execute(
            "INSERT OR REPLACE INTO processed_episodes (series, season, episode, result)
             VALUES (?1, ?2, ?3, ?4)",
            params![series.as_str(), episode.season(), episode.episode(), result_json],
        )?;
        Ok(())
    }

    pub fn unmark_processed(&self, series: &SeriesId, episode: EpisodeKey) -> Result<(), MemoryError> {
        self.conn().execute(
            "DELETE FROM processed_episodes WHERE series = ?1 AND season = ?2 AND episode = ?3",
            params![series.as_str(), episode.season(), episode.episode()],
        )?;
        Ok(())
    }

    pub fn processed_result(
        &self,
        series: &SeriesId,
        episode: EpisodeKey,
    ) -> Result<Option<String>, MemoryError> {
        Ok(self
            .conn()
            .query_row(
                "SELECT result FROM processed_episodes
                 WHERE series = ?1 AND season = ?2 AND episode = ?3",
                params![series.as_str(), episode.season(), episode.episode()],
                |r| r.get(0),
            )
            .optional()?)
    }

    pub fn processed_episodes(&self, series: &SeriesId) -> Result<BTreeSet<EpisodeKey>, MemoryError> {
        let conn = self.conn();
        let mut stmt = conn.prepare(
            "SELECT season, episode FROM processed_episodes WHERE series = ?1",
        )?;
        let rows = stmt.query_map(params![series.as_str()], |r| {
            Ok((r.get::<_, u32>(0)?, r.get::<_, u32>(1)?))
        })?;
        let mut out = BTreeSet::new();
        for r in rows {
            let (s, e) = r?;
            out.insert(EpisodeKey::new(s, e).map_err(|e| MemoryError::Corrupt(e.to_string()))?);
        }
        Ok(out)
    }
}

fn rewrite_refs(ids: &[CharacterId], from: &CharacterId, to: &CharacterId) -> Vec<CharacterId> {
    let mut seen = BTreeSet::new();
    ids.iter()
        .map(|id| if id == from { to.clone() } else { id.clone() })
        .filter(|id| seen.insert(id.clone()))
        .collect()
}

fn character_exists(conn: &Connection, id: &CharacterId) -> Result<bool, MemoryError> {
    Ok(conn
        .query_row(
            "SELECT 1 FROM characters WHERE character_id = ?1",
            params![id.as_str()],
            |_| Ok(()),
        )
        .optional()?
        .is_some())
}

fn appellation_owner(
    conn: &Connection,
    series: &SeriesId,
    name: &str,
) -> Result<Option<CharacterId>, MemoryError> {
    Ok(conn
        .query_row(
            "SELECT character_id FROM appellations WHERE series = ?1 AND norm = ?2",
            params![series.as_str(), normalize_appellation(name)],
            |r| r.get::<_, String>(0),
        )
        .optional()?
        .map(CharacterId::from_raw))
}

fn write_character(conn: &Connection, c: &Character) -> Result<(), MemoryError> {
    for name in &c.appellations {
        if let Some(owner) = appellation_owner(conn, &c.series, name)? {
            if owner != c.character_id {
                return Err(MemoryError::AppellationTaken {
                    appellation: name.clone(),
                    owner,
                });
            }
        }
    }
    conn.execute(
        "INSERT INTO characters (character_id, series, preferred_name) VALUES (?1, ?2, ?3)
         ON CONFLICT(character_id) DO UPDATE SET series = excluded.series,
                                                preferred_name = excluded.preferred_name",
        params![c.character_id.as_str(), c.series.as_str(), c.preferred_name],
    )?;
    conn.execute(
        "DELETE FROM appellations WHERE character_id = ?1",
        params![c.character_id.as_str()],
    )?;
    for name in &c.appellations {
        conn.execute(
            "INSERT INTO appellations (character_id, series, name, norm) VALUES (?1, ?2, ?3, ?4)",
            params![
                c.character_id.as_str(),
                c.series.as_str(),
                name,
                normalize_appellation(name)
            ],
        )?;
    }
    Ok(())
}

fn read_character(conn: &Connection, id: &CharacterId) -> Result<Option<Character>, MemoryError> {
    let row: Option<(String, String)> = conn
        .query_row(
            "SELECT series, preferred_name FROM characters WHERE character_id = ?1",
            params![id.as_str()],
            |r| Ok((r.get(0)?, r.get(1)?)),
        )
        .optional()?;
    let Some((series, preferred)) = row else {
        return Ok(None);
    };
    let mut stmt = conn.prepare("SELECT name FROM appellations WHERE character_id = ?1")?;
    let names = stmt
        .query_map(params![id.as_str()], |r| r.get::<_, String>(0))?
        .collect::<Result<Vec<_>, _>>()?;
    let series = SeriesId::new(series).map_err(|e| MemoryError::Corrupt(e.to_string()))?;
    Ok(Some(Character::new(id.clone(), series, preferred, names)))
}

fn write_arc(conn: &Connection, arc: &NarrativeArc) -> Result<(), MemoryError> {
    let missing: Vec<CharacterId> = arc
        .character_refs()
        .into_iter()
        .filter(|id| !matches!(character_exists(conn, id), Ok(true)))
        .collect();
    if !missing.is_empty() {
        return Err(MemoryError::DanglingCharacters(missing));
    }
    conn.execute("DELETE FROM arcs WHERE arc_id = ?1", params![arc.arc_id.as_str()])?;
    conn.execute(
        "INSERT INTO arcs (arc_id, series, title, description, arc_type) VALUES (?1, ?2, ?3, ?4, ?5)",
        params![
            arc.arc_id.as_str(),
            arc.series.as_str(),
            arc.title,
            arc.description,
            arc.arc_type.as_str()
        ],
    )?;
    for (pos, c) in arc.main_characters.iter().enumerate() {
        conn.execute(
            "INSERT INTO arc_main_characters (arc_id, position, character_id) VALUES (?1, ?2, ?3)",
            params![arc.arc_id.as_str(), pos as i64, c.as_str()],
        )?;
    }
    for p in &arc.progressions {
        conn.execute(
            "INSERT INTO progressions (progression_id, arc_id, series, season, episode)
             VALUES (?1, ?2, ?3, ?4, ?5)",
            params![
                p.progression_id.as_str(),
                arc.arc_id.as_str(),
                p.series.as_str(),
                p.episode.season(),
                p.episode.episode()
            ],
        )?;
        for (ordinal, text) in p.content.iter().enumerate() {
            conn.execute(
                "INSERT INTO utterances (progression_id, ordinal, text) VALUES (?1, ?2, ?3)",
                params![p.progression_id.as_str(), ordinal as i64, text],
            )?;
        }
        for (pos, c) in p.interfering_characters.iter().enumerate() {
            conn.execute(
                "INSERT INTO progression_interfering (progression_id, position, character_id)
                 VALUES (?1, ?2, ?3)",
                params![p.progression_id.as_str(), pos as i64, c.as_str()],
            )?;
        }
    }
    Ok(())
}

fn read_arc(conn: &Connection, arc_id: &ArcId) -> Result<Option<NarrativeArc>, MemoryError> {
    let row: Option<(String, String, String, String)> = conn
        .query_row(
            "SELECT series, title, description, arc_type FROM arcs WHERE arc_id = ?1",
            params![arc_id.as_str()],
            |r| Ok((r.get(0)?, r.get(1)?, r.get(2)?, r.get(3)?)),
        )
        .optional()?;
    let Some((series, title, description, arc_type)) = row else {
        return Ok(None);
    };
    let corrupt = |e: crate::model::ModelError| MemoryError::Corrupt(e.to_string());
    let series = SeriesId::new(series).map_err(corrupt)?;
    let arc_type: ArcType = arc_type.parse().map_err(corrupt)?;

    let main_characters = {
        let mut stmt = conn.prepare(
            "SELECT character_id FROM arc_main_characters WHERE arc_id = ?1 ORDER BY position",
        )?;
        let rows = stmt.query_map(params![arc_id.as_str()], |r| r.get::<_, String>(0))?;
        rows.map(|r| r.map(CharacterId::from_raw))
            .collect::<Result<Vec<_>, _>>()?
    };

    let prog_rows: Vec<(String, String, u32, u32)> = {
        let mut stmt = conn.prepare(
            "SELECT progression_id, series, season, episode FROM progressions
             WHERE arc_id = ?1 ORDER BY season, episode",
        )?;
        let rows = stmt.query_map(params![arc_id.as_str()], |r| {
            Ok((r.get(0)?, r.get(1)?, r.get(2)?, r.get(3)?))
        })?;
        rows.collect::<Result<_, _>>()?
    };
    let mut progressions = Vec::with_capacity(prog_rows.len());
    for (pid, pseries, season, episode) in prog_rows {
        let content = {
            let mut stmt = conn
                .prepare("SELECT text FROM utterances WHERE progression_id = ?1 ORDER BY ordinal")?;
            let rows = stmt.query_map(params![pid], |r| r.get::<_, String>(0))?;
            rows.collect::<Result<Vec<_>, _>>()?
        };
        let interfering = {
            let mut stmt = conn.prepare(
                "SELECT character_id FROM progression_interfering
                 WHERE progression_id = ?1 ORDER BY position",
            )?;
            let rows = stmt.query_map(params![pid], |r| r.get::<_, String>(0))?;
            rows.map(|r| r.map(CharacterId::from_raw))
                .collect::<Result<Vec<_>, _>>()?
        };
        progressions.push(Progression {
            progression_id: ProgressionId::from_raw(pid),
            arc_id: arc_id.clone(),
            series: SeriesId::new(pseries).map_err(corrupt)?,
            episode: EpisodeKey::new(season, episode).map_err(corrupt)?,
            content,
            interfering_characters: interfering,
        });
    }

    Ok(Some(NarrativeArc {
        arc_id: arc_id.clone(),
        series,
        title,
        description,
        arc_type,
        main_characters,
        progressions,
    }))
}
