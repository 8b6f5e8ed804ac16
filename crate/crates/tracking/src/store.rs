//! Embedded relational store: pipes, rules and events in one SQLite file.

use std::path::Path;

use rusqlite::{params, Connection, OptionalExtension};

use crate::error::{Error, Result};
use crate::model::{Event, PipeRecord, Rule, RuleKind};

const SCHEMA: &str = "
CREATE TABLE IF NOT EXISTS pipes (
    pipe_id     TEXT PRIMARY KEY,
    record      TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS rules (
    rule_id     TEXT PRIMARY KEY,
    kind        TEXT NOT NULL,
    params      TEXT NOT NULL,
    enabled     INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS events (
    event_id    INTEGER PRIMARY KEY,
    pipe_id     TEXT NOT NULL,
    kind        TEXT NOT NULL,
    from_zone   TEXT,
    to_zone     TEXT,
    t           INTEGER NOT NULL,
    payload     TEXT NOT NULL
);
CREATE INDEX IF NOT EXISTS events_by_pipe ON events (pipe_id, t);
";

pub struct Store {
    conn: Connection,
}

impl Store {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Self::init(Connection::open(path)?)
    }

    pub fn in_memory() -> Result<Self> {
        Self::init(Connection::open_in_memory()?)
    }

    fn init(conn: Connection) -> Result<Self> {
        conn.execute_batch(SCHEMA)?;
        Ok(Self { conn })
    }

    pub fn upsert_pipe(&self, record: &PipeRecord) -> Result<()> {
        self.conn.execute(
            "INSERT INTO pipes (pipe_id, record) VALUES (?1, ?2)
             ON CONFLICT (pipe_id) DO UPDATE SET record = excluded.record",
            params![record.pipe_id, serde_json::to_string(record)?],
        )?;
        Ok(())
    }

    pub fn get_pipe(&self, pipe_id: &str) -> Result<Option<PipeRecord>> {
        let text: Option<String> = self
            .conn
            .query_row("SELECT record FROM pipes WHERE pipe_id = ?1", [pipe_id], |r| r.get(0))
            .optional()?;
        Ok(text.map(|t| serde_json::from_str(&t)).transpose()?)
    }

    pub fn pipes(&self) -> Result<Vec<PipeRecord>> {
        let mut stmt = self.conn.prepare("SELECT record FROM pipes ORDER BY pipe_id")?;
        let rows = stmt.query_map([], |r| r.get::<_, String>(0))?;
        let mut out = Vec::new();
        for text in rows {
            out.push(serde_json::from_str(&text?)?);
        }
        Ok(out)
    }

    pub fn upsert_rule(&self, rule: &Rule) -> Result<()> {
        self.conn.execute(
            "INSERT INTO rules (rule_id, kind, params, enabled) VALUES (?1, ?2, ?3, ?4)
             ON CONFLICT (rule_id) DO UPDATE SET
                kind = excluded.kind, params = excluded.params, enabled = excluded.enabled",
            params![
                rule.rule_id,
                rule.kind.as_str(),
                serde_json::to_string(&rule.params)?,
                rule.enabled
            ],
        )?;
        Ok(())
    }

    pub fn rules(&self) -> Result<Vec<Rule>> {
        let mut stmt = self
            .conn
            .prepare("SELECT rule_id, kind, params, enabled FROM rules ORDER BY rule_id")?;
        let rows = stmt.query_map([], |r| {
            Ok((
                r.get::<_, String>(0)?,
                r.get::<_, String>(1)?,
                r.get::<_, String>(2)?,
                r.get::<_, bool>(3)?,
            ))
        })?;
        let mut out = Vec::new();
        for row in rows {
            let (rule_id, kind, params, enabled) = row?;
            let kind = RuleKind::parse(&kind)
                .ok_or_else(|| Error::Invalid(vec![format!("rules.kind: unknown `{kind}` for {rule_id}")]))?;
            out.push(Rule {
                rule_id,
                kind,
                params: serde_json::from_str(&params)?,
                enabled,
            });
        }
        Ok(out)
    }

    pub fn insert_event(&self, e: &Event) -> Result<()> {
        self.conn.execute(
            "INSERT INTO events (event_id, pipe_id, kind, from_zone, to_zone, t, payload)
             VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7)",
            params![
                e.event_id as i64,
                e.pipe_id,
                e.kind.as_str(),
                e.from_zone,
                e.to_zone,
                e.t,
                serde_json::to_string(&e.payload)?
            ],
        )?;
        Ok(())
    }

    /// Events with id above `after`, optionally for one pipe, oldest first.
    pub fn events(&self, after: u64, pipe_id: Option<&str>, limit: usize) -> Result<Vec<Event>> {
        let mut stmt = self.conn.prepare(
            "SELECT event_id, pipe_id, kind, from_zone, to_zone, t, payload FROM events
             WHERE event_id > ?1 AND (?2 IS NULL OR pipe_id = ?2)
             ORDER BY event_id LIMIT ?3",
        )?;
        let rows = stmt.query_map(params![after as i64, pipe_id, limit as i64], |r| {
            Ok((
                r.get::<_, i64>(0)?,
                r.get::<_, String>(1)?,
                r.get::<_, String>(2)?,
                r.get::<_, Option<String>>(3)?,
                r.get::<_, Option<String>>(4)?,
                r.get::<_, i64>(5)?,
                r.get::<_, String>(6)?,
            ))
        })?;
        let mut out = Vec::new();
        for row in rows {
            let (id, pipe_id, kind, from_zone, to_zone, t, payload) = row?;
            let kind = RuleKind::parse(&kind)
                .ok_or_else(|| Error::Invalid(vec![format!("events.kind: unknown `{kind}` for {id}")]))?;
            out.push(Event {
                event_id: id as u64,
                pipe_id,
                kind,
                from_zone,
                to_zone,
                t,
                payload: serde_json::from_str(&payload)?,
            });
        }
        Ok(out)
    }

    pub fn max_event_id(&self) -> Result<u64> {
        let id: Option<i64> = self.conn.query_row("SELECT MAX(event_id) FROM events", [], |r| r.get(0))?;
        Ok(id.unwrap_or(0) as u64)
    }
}

/// Source of descriptive pipe data, standing in for the plant's ERP/MES.
pub trait PipeInfoSource {
    fn load(&self) -> Result<Vec<PipeRecord>>;
}

/// Pipe information from a JSON array of records.
#[derive(Debug, Clone)]
pub struct FilePipeInfo {
    path: std::path::PathBuf,
}

impl FilePipeInfo {
    pub fn new(path: impl Into<std::path::PathBuf>) -> Self {
        Self { path: path.into() }
    }
}

impl PipeInfoSource for FilePipeInfo {
    fn load(&self) -> Result<Vec<PipeRecord>> {
        let text = std::fs::read_to_string(&self.path)?;
        let records: Vec<PipeRecord> = serde_json::from_str(&text)?;
        let mut problems = Vec::new();
        for (i, r) in records.iter().enumerate() {
            if let Err(Error::Invalid(fields)) = r.validate() {
                problems.extend(fields.into_iter().map(|f| format!("[{i}] {f}")));
            }
        }
        if problems.is_empty() {
            Ok(records)
        } else {
            Err(Error::Invalid(problems))
        }
    }
}
