//! Zone resolution with hysteresis, business rules and the pipe registry.

use std::collections::{BTreeMap, HashMap, HashSet};

use pipetrack_core::{resolve_zone, FloorMap, Position};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::history::{DwellRow, History, Residence, DEFAULT_GAP_MS};
use crate::model::{Event, PipeRecord, Rule, RuleKind};

pub const DEFAULT_HYSTERESIS_M: f64 = 1.0;
/// Fixes older than this no longer count towards occupancy.
pub const DEFAULT_STALENESS_MS: i64 = 60 * 60 * 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub hysteresis_m: f64,
    pub staleness_ms: i64,
    pub gap_ms: i64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            hysteresis_m: DEFAULT_HYSTERESIS_M,
            staleness_ms: DEFAULT_STALENESS_MS,
            gap_ms: DEFAULT_GAP_MS,
        }
    }
}

/// A zone change that has started but is not yet deep enough to accept.
#[derive(Debug, Clone, PartialEq)]
struct Candidate {
    zone: Option<String>,
    entered: i64,
}

#[derive(Debug, Clone, Default)]
struct Tracking {
    /// Set once the first fix placed the pipe.
    placed: bool,
    candidate: Option<Candidate>,
    visit_start: i64,
    dwell_fired: HashSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Occupancy {
    pub zone: String,
    pub count: usize,
    /// Pipes whose recorded zone matches but whose last fix is stale.
    pub stale: Vec<String>,
}

/// Where every registered pipe currently is.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OccupancySummary {
    pub zones: BTreeMap<String, usize>,
    pub outside: usize,
    /// Never located, or last fix stale.
    pub untracked: usize,
}

#[derive(Debug, Clone)]
pub struct Engine {
    map: FloorMap,
    cfg: EngineConfig,
    pipes: BTreeMap<String, PipeRecord>,
    rules: Vec<Rule>,
    tracking: HashMap<String, Tracking>,
    history: History,
    /// Occupancy rules currently above threshold, by (rule, zone).
    above: HashSet<(String, String)>,
    next_event_id: u64,
    now: i64,
}

impl Engine {
    pub fn new(map: FloorMap, cfg: EngineConfig) -> Self {
        Self {
            map,
            cfg,
            pipes: BTreeMap::new(),
            rules: vec![Rule::any_transition()],
            tracking: HashMap::new(),
            history: History::new(cfg.gap_ms),
            above: HashSet::new(),
            next_event_id: 1,
            now: i64::MIN,
        }
    }

    /// Continues event numbering after previously persisted events.
    pub fn with_next_event_id(mut self, id: u64) -> Self {
        self.next_event_id = id.max(1);
        self
    }

    pub fn map(&self) -> &FloorMap {
        &self.map
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    /// Latest fix time seen, ms.
    pub fn now(&self) -> i64 {
        self.now
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn set_rules(&mut self, rules: Vec<Rule>) -> Result<()> {
        for r in &rules {
            r.validate()?;
        }
        self.rules = rules;
        Ok(())
    }

    pub fn upsert_rule(&mut self, rule: Rule) -> Result<()> {
        rule.validate()?;
        match self.rules.iter_mut().find(|r| r.rule_id == rule.rule_id) {
            Some(slot) => *slot = rule,
            None => self.rules.push(rule),
        }
        Ok(())
    }

    pub fn pipes(&self) -> impl Iterator<Item = &PipeRecord> {
        self.pipes.values()
    }

    pub fn pipe(&self, pipe_id: &str) -> Option<&PipeRecord> {
        self.pipes.get(pipe_id)
    }

    /// Inserts or replaces the descriptive part of a record. Location state
    /// already tracked for the pipe is kept. Returns whether anything changed.
    pub fn upsert_pipe(&mut self, record: PipeRecord) -> Result<bool> {
        record.validate()?;
        match self.pipes.get_mut(&record.pipe_id) {
            Some(existing) => {
                let merged = PipeRecord {
                    current_zone: existing.current_zone.clone(),
                    last_position: existing.last_position.or(record.last_position),
                    ..record
                };
                let changed = *existing != merged;
                *existing = merged;
                Ok(changed)
            }
            None => {
                if let Some(p) = record.last_position {
                    self.tracking.entry(record.pipe_id.clone()).or_default().placed = true;
                    self.now = self.now.max(p.epoch);
                }
                self.pipes.insert(record.pipe_id.clone(), record);
                Ok(true)
            }
        }
    }

    fn emit(&mut self, pipe_id: &str, kind: RuleKind, from: Option<String>, to: Option<String>, t: i64) -> Event {
        let id = self.next_event_id;
        self.next_event_id += 1;
        Event {
            event_id: id,
            pipe_id: pipe_id.to_string(),
            kind,
            from_zone: from,
            to_zone: to,
            t,
            payload: BTreeMap::new(),
        }
    }

    /// How far `p` has moved into `target` (or, for outside, away from the
    /// zone it left).
    fn penetration(&self, p: &Position, from: Option<&str>, target: Option<&str>) -> f64 {
        match (target, from) {
            (Some(z), _) => self.map.zone(z).map_or(f64::INFINITY, |z| z.depth(p.x, p.y)),
            (None, Some(z)) => self.map.zone(z).map_or(f64::INFINITY, |z| z.distance_outside(p.x, p.y)),
            (None, None) => f64::INFINITY,
        }
    }

    /// Applies one fix. Unknown pipes get an unregistered stub.
    ///
    /// A zone change is accepted once the fix lies at least the hysteresis
    /// margin inside the new zone; the emitted transition carries the time
    /// of the first fix of the uninterrupted run that led there.
    ///
    /// Degenerate fixes lie on the array, not at the tag: they move the
    /// reported position but never place the pipe or feed hysteresis.
    pub fn process_position(&mut self, pipe_id: &str, p: Position) -> Vec<Event> {
        let t = p.epoch;
        self.now = self.now.max(t);
        let raw = resolve_zone(&self.map, &p).map(|z| z.id.clone());
        let record = self
            .pipes
            .entry(pipe_id.to_string())
            .or_insert_with(|| PipeRecord::stub(pipe_id));
        let current = record.current_zone.clone();
        record.last_position = Some(p);
        let state = self.tracking.entry(pipe_id.to_string()).or_default();
        let mut events = Vec::new();
        if p.degenerate {
            if state.placed {
                self.history
                    .record(pipe_id, Residence::from_zone(current.as_deref()), t, None);
                events.extend(self.check_dwell(pipe_id, t));
            }
            return events;
        }

        if !state.placed {
            state.placed = true;
            state.visit_start = t;
            record.current_zone = raw.clone();
            self.history.record(pipe_id, Residence::from_zone(raw.as_deref()), t, None);
            events.extend(self.check_occupancy(pipe_id, raw.as_deref(), t));
            events.extend(self.check_dwell(pipe_id, t));
            return events;
        }

        let mut accepted = None;
        if raw == current {
            state.candidate = None;
        } else {
            let entered = match &state.candidate {
                Some(c) if c.zone == raw => c.entered,
                _ => t,
            };
            state.candidate = Some(Candidate {
                zone: raw.clone(),
                entered,
            });
            if self.penetration(&p, current.as_deref(), raw.as_deref()) >= self.cfg.hysteresis_m {
                accepted = Some(entered);
            }
        }

        match accepted {
            Some(entered) => {
                let state = self.tracking.get_mut(pipe_id).expect("inserted above");
                state.candidate = None;
                state.visit_start = entered;
                state.dwell_fired.clear();
                self.pipes.get_mut(pipe_id).expect("inserted above").current_zone = raw.clone();
                self.history
                    .record(pipe_id, Residence::from_zone(raw.as_deref()), t, Some(entered));
                let matched: Vec<String> = self
                    .rules
                    .iter()
                    .filter(|r| {
                        r.enabled
                            && r.kind == RuleKind::ZoneTransition
                            && (r.watches(current.as_deref()) || r.watches(raw.as_deref()))
                    })
                    .map(|r| r.rule_id.clone())
                    .collect();
                if !matched.is_empty() {
                    let mut ev = self.emit(pipe_id, RuleKind::ZoneTransition, current.clone(), raw.clone(), entered);
                    ev.payload.insert("rules".into(), matched.into());
                    ev.payload.insert("x".into(), p.x.into());
                    ev.payload.insert("y".into(), p.y.into());
                    events.push(ev);
                }
                for zone in [current.as_deref(), raw.as_deref()] {
                    events.extend(self.check_occupancy(pipe_id, zone, t));
                }
            }
            None => {
                self.history
                    .record(pipe_id, Residence::from_zone(current.as_deref()), t, None);
            }
        }
        events.extend(self.check_dwell(pipe_id, t));
        events
    }

    /// Held while a zone change is pending: if it is accepted it is dated
    /// back to the start of its run, and a dwell event after that instant
    /// would precede it in the stream.
    fn check_dwell(&mut self, pipe_id: &str, t: i64) -> Vec<Event> {
        let zone = self.pipes[pipe_id].current_zone.clone();
        let state = &self.tracking[pipe_id];
        if state.candidate.is_some() {
            return Vec::new();
        }
        let stay = t - state.visit_start;
        let due: Vec<(String, i64)> = self
            .rules
            .iter()
            .filter(|r| r.enabled && r.kind == RuleKind::DwellThreshold && zone.is_some() && r.watches(zone.as_deref()))
            .filter(|r| !state.dwell_fired.contains(&r.rule_id))
            .filter_map(|r| r.params.duration_ms.map(|d| (r.rule_id.clone(), d)))
            .filter(|&(_, d)| stay >= d)
            .collect();
        let mut out = Vec::new();
        for (rule_id, duration) in due {
            self.tracking
                .get_mut(pipe_id)
                .expect("present")
                .dwell_fired
                .insert(rule_id.clone());
            let mut ev = self.emit(pipe_id, RuleKind::DwellThreshold, zone.clone(), zone.clone(), t);
            ev.payload.insert("rule_id".into(), rule_id.into());
            ev.payload.insert("duration_ms".into(), duration.into());
            ev.payload.insert("dwell_ms".into(), stay.into());
            out.push(ev);
        }
        out
    }

    fn check_occupancy(&mut self, pipe_id: &str, zone: Option<&str>, t: i64) -> Vec<Event> {
        let Some(zone) = zone else { return Vec::new() };
        let count = self.count_in(zone, self.now);
        let rules: Vec<(String, usize)> = self
            .rules
            .iter()
            .filter(|r| r.enabled && r.kind == RuleKind::OccupancyThreshold && r.watches(Some(zone)))
            .filter_map(|r| r.params.count.map(|c| (r.rule_id.clone(), c)))
            .collect();
        let mut out = Vec::new();
        for (rule_id, threshold) in rules {
            let key = (rule_id.clone(), zone.to_string());
            if count >= threshold {
                if self.above.insert(key) {
                    let mut ev = self.emit(pipe_id, RuleKind::OccupancyThreshold, None, Some(zone.to_string()), t);
                    ev.payload.insert("rule_id".into(), rule_id.into());
                    ev.payload.insert("count".into(), count.into());
                    ev.payload.insert("threshold".into(), threshold.into());
                    out.push(ev);
                }
            } else {
                self.above.remove(&key);
            }
        }
        out
    }

    fn is_stale(&self, record: &PipeRecord, now: i64) -> bool {
        record
            .last_seen()
            .is_none_or(|seen| now.saturating_sub(seen) > self.cfg.staleness_ms)
    }

    fn count_in(&self, zone: &str, now: i64) -> usize {
        self.pipes
            .values()
            .filter(|r| r.current_zone.as_deref() == Some(zone) && !self.is_stale(r, now))
            .count()
    }

    /// Pipes currently in `zone`, excluding those whose last fix is older
    /// than the staleness horizon relative to `now`.
    pub fn occupancy(&self, zone: &str, now: i64) -> Result<Occupancy> {
        if self.map.zone(zone).is_none() {
            return Err(Error::NotFound(format!("zone `{zone}`")));
        }
        let stale = self
            .pipes
            .values()
            .filter(|r| r.current_zone.as_deref() == Some(zone) && self.is_stale(r, now))
            .map(|r| r.pipe_id.clone())
            .collect();
        Ok(Occupancy {
            zone: zone.to_string(),
            count: self.count_in(zone, now),
            stale,
        })
    }

    pub fn occupancy_summary(&self, now: i64) -> OccupancySummary {
        let mut s = OccupancySummary::default();
        for z in &self.map.zones {
            s.zones.insert(z.id.clone(), 0);
        }
        for r in self.pipes.values() {
            if self.is_stale(r, now) {
                s.untracked += 1;
            } else {
                match &r.current_zone {
                    Some(z) => *s.zones.entry(z.clone()).or_default() += 1,
                    None => s.outside += 1,
                }
            }
        }
        s
    }

    pub fn dwell_for_pipe(&self, pipe_id: &str, from: i64, to: i64) -> Result<Vec<DwellRow>> {
        if !self.pipes.contains_key(pipe_id) {
            return Err(Error::NotFound(format!("pipe `{pipe_id}`")));
        }
        Ok(self.history.dwell_for_pipe(pipe_id, from, to))
    }

    pub fn dwell_for_zone(&self, zone: &str, from: i64, to: i64) -> Result<DwellRow> {
        if self.map.zone(zone).is_none() {
            return Err(Error::NotFound(format!("zone `{zone}`")));
        }
        Ok(self.history.dwell_for_zone(zone, from, to))
    }
}
