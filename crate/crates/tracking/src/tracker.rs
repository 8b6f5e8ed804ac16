//! Single-writer pipeline from raw samples to fixes, zone state and events.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;
use std::time::Instant;

use pipetrack_core::ingest::{RssSample, TagWindow, Windower};
use pipetrack_core::{FloorMap, PipelineSpec, Position, PositionEstimator, RangeEstimator};
use serde::{Deserialize, Serialize};

use crate::cluster::{cluster_positions, Cluster};
use crate::config::ServiceConfig;
use crate::engine::{Engine, OccupancySummary};
use crate::error::Result;
use crate::history::History;
use crate::model::{Event, PipeRecord, Rule};
use crate::store::{PipeInfoSource, Store};

/// Events retained in memory for the query API.
const EVENT_RING: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionUpdate {
    pub pipe_id: String,
    pub x: f64,
    pub y: f64,
    /// `None` while outside every zone.
    pub zone: Option<String>,
    /// Window start of the fix, ms.
    pub t: i64,
    pub residual: f64,
    pub antennas: usize,
    pub degenerate: bool,
    /// Combined range per reader that heard the pipe, meters.
    #[serde(default)]
    pub ranges: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StreamMessage {
    Position(PositionUpdate),
    Clusters { t: i64, clusters: Vec<Cluster> },
    Event(Event),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Stats {
    pub samples: u64,
    pub invalid_samples: u64,
    pub late_samples: u64,
    pub windows: u64,
    pub fixes: u64,
    pub events: u64,
    /// Samples per wall-clock second over the last completed second.
    pub samples_per_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneView {
    pub id: String,
    pub name: String,
    pub polygon: Vec<[f64; 2]>,
    pub occupancy: usize,
}

/// Immutable view published after every batch of updates.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub map: Arc<FloorMap>,
    pub pipes: Vec<PipeRecord>,
    pub zones: Vec<ZoneView>,
    pub summary: OccupancySummary,
    pub clusters: Vec<Cluster>,
    pub events: Arc<Vec<Event>>,
    pub rules: Vec<Rule>,
    pub history: Arc<History>,
    pub stats: Stats,
    pub staleness_ms: i64,
    /// Latest fix time, ms.
    pub now: i64,
}

impl Snapshot {
    pub fn pipe(&self, pipe_id: &str) -> Option<&PipeRecord> {
        self.pipes.iter().find(|p| p.pipe_id == pipe_id)
    }

    pub fn tracked_pipes(&self) -> usize {
        self.pipes
            .iter()
            .filter(|p| {
                p.last_seen()
                    .is_some_and(|seen| self.now.saturating_sub(seen) <= self.staleness_ms)
            })
            .count()
    }
}

struct Rate {
    since: Instant,
    count: u64,
    last: f64,
}

pub struct Tracker {
    cfg: ServiceConfig,
    map: Arc<FloorMap>,
    windower: Windower,
    positions: HashMap<String, PositionEstimator>,
    ranges: HashMap<(String, String), RangeEstimator>,
    engine: Engine,
    store: Option<Store>,
    events: Arc<Vec<Event>>,
    stats: Stats,
    rate: Rate,
}

impl Tracker {
    pub fn new(cfg: ServiceConfig, map: FloorMap) -> Result<Self> {
        cfg.validate()?;
        let counts = map
            .arrays
            .iter()
            .map(|a| (a.reader_id.clone(), a.antennas.len()))
            .collect();
        let windower = Windower::new(cfg.epoch_ms)
            .with_reorder_epochs(cfg.reorder_epochs)
            .with_antenna_counts(counts);
        let mut engine = Engine::new(map.clone(), cfg.engine());
        engine.set_rules(cfg.rules.clone())?;
        Ok(Self {
            map: Arc::new(map),
            windower,
            positions: HashMap::new(),
            ranges: HashMap::new(),
            engine,
            store: None,
            events: Arc::new(Vec::new()),
            stats: Stats::default(),
            rate: Rate {
                since: Instant::now(),
                count: 0,
                last: 0.0,
            },
            cfg,
        })
    }

    /// Attaches persistent storage: restores pipes, rules and event
    /// numbering, seeding the rules table from the config when empty.
    pub fn with_store(mut self, store: Store) -> Result<Self> {
        let rules = store.rules()?;
        if rules.is_empty() {
            for r in self.engine.rules() {
                store.upsert_rule(r)?;
            }
        } else {
            self.engine.set_rules(rules)?;
        }
        for p in store.pipes()? {
            self.engine.upsert_pipe(p)?;
        }
        let next = store.max_event_id()? + 1;
        self.engine = self.engine.clone().with_next_event_id(next);
        self.events = Arc::new(store.events(next.saturating_sub(EVENT_RING as u64 + 1), None, EVENT_RING)?);
        self.store = Some(store);
        Ok(self)
    }

    /// Loads descriptive records from an external pipe-information source.
    pub fn import_pipes(&mut self, source: &dyn PipeInfoSource) -> Result<usize> {
        let records = source.load()?;
        let n = records.len();
        for r in records {
            self.upsert_pipe(r)?;
        }
        Ok(n)
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn stats(&self) -> Stats {
        self.stats
    }

    pub fn upsert_pipe(&mut self, record: PipeRecord) -> Result<()> {
        let id = record.pipe_id.clone();
        if self.engine.upsert_pipe(record)? {
            self.persist_pipe(&id)?;
        }
        Ok(())
    }

    pub fn upsert_rule(&mut self, rule: Rule) -> Result<()> {
        self.engine.upsert_rule(rule.clone())?;
        if let Some(store) = &self.store {
            store.upsert_rule(&rule)?;
        }
        Ok(())
    }

    fn persist_pipe(&self, pipe_id: &str) -> Result<()> {
        if let (Some(store), Some(record)) = (&self.store, self.engine.pipe(pipe_id)) {
            store.upsert_pipe(record)?;
        }
        Ok(())
    }

    fn count_rate(&mut self) {
        self.rate.count += 1;
        let elapsed = self.rate.since.elapsed().as_secs_f64();
        if elapsed >= 1.0 {
            self.rate.last = self.rate.count as f64 / elapsed;
            self.rate.count = 0;
            self.rate.since = Instant::now();
        }
        self.stats.samples_per_s = self.rate.last;
    }

    /// Feeds one sample; returns the updates of every window it released.
    pub fn ingest(&mut self, sample: &RssSample) -> Vec<StreamMessage> {
        self.stats.samples += 1;
        self.count_rate();
        let windows = self.windower.push(sample);
        self.stats.invalid_samples = self.windower.invalid();
        self.stats.late_samples = self.windower.late_dropped();
        self.process(windows)
    }

    /// Releases every open window.
    pub fn flush(&mut self) -> Vec<StreamMessage> {
        let windows = self.windower.flush();
        self.process(windows)
    }

    fn process(&mut self, windows: Vec<TagWindow>) -> Vec<StreamMessage> {
        if windows.is_empty() {
            return Vec::new();
        }
        let mut out = Vec::new();
        let mut latest = i64::MIN;
        for w in windows {
            self.stats.windows += 1;
            latest = latest.max(w.epoch);
            out.extend(self.process_window(&w));
        }
        out.push(StreamMessage::Clusters {
            t: latest,
            clusters: self.clusters(),
        });
        out
    }

    fn process_window(&mut self, w: &TagWindow) -> Vec<StreamMessage> {
        let filter = self.cfg.filtered.then_some(self.cfg.processing.kalman);
        let est = self
            .positions
            .entry(w.tag_id.clone())
            .or_insert_with(|| PositionEstimator::new(None, filter));
        let Some(fix) = est.locate(&self.map, &self.cfg.model, w) else {
            return Vec::new();
        };
        let ranges = self.reader_ranges(w);
        self.stats.fixes += 1;
        let before = self.engine.pipe(&w.tag_id).map(|p| p.current_zone.clone());
        let events = self.engine.process_position(&w.tag_id, fix);
        let record = self.engine.pipe(&w.tag_id).expect("created by process_position");
        let zone = record.current_zone.clone();
        if before.as_ref() != Some(&zone) {
            if let Err(e) = self.persist_pipe(&w.tag_id) {
                tracing::warn!(pipe = %w.tag_id, "cannot persist pipe: {e}");
            }
        }
        let mut out = vec![StreamMessage::Position(position_update(&w.tag_id, &fix, zone, ranges))];
        for ev in events {
            self.stats.events += 1;
            if let Some(store) = &self.store {
                if let Err(e) = store.insert_event(&ev) {
                    tracing::warn!(event = ev.event_id, "cannot persist event: {e}");
                }
            }
            let ring = Arc::make_mut(&mut self.events);
            if ring.len() >= EVENT_RING {
                ring.remove(0);
            }
            ring.push(ev.clone());
            out.push(StreamMessage::Event(ev));
        }
        out
    }

    fn reader_ranges(&mut self, w: &TagWindow) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        for (reader, v) in &w.vectors {
            let spec = PipelineSpec::new(self.cfg.technique, v.antenna_count(), self.cfg.filtered);
            let est = self
                .ranges
                .entry((w.tag_id.clone(), reader.clone()))
                .or_insert_with(|| RangeEstimator::new(spec, self.cfg.processing));
            match est.push(v) {
                Ok(Some(rss)) => {
                    out.insert(reader.clone(), self.cfg.model.invert_distance(rss));
                }
                Ok(None) => {}
                Err(e) => tracing::debug!(tag = %w.tag_id, %reader, "no combined range: {e}"),
            }
        }
        out
    }

    fn live_positions(&self) -> Vec<(String, [f64; 2])> {
        let now = self.engine.now();
        self.engine
            .pipes()
            .filter_map(|p| {
                let pos = p.last_position?;
                (now.saturating_sub(pos.epoch) <= self.cfg.staleness_ms).then(|| (p.pipe_id.clone(), [pos.x, pos.y]))
            })
            .collect()
    }

    pub fn clusters(&self) -> Vec<Cluster> {
        cluster_positions(&self.live_positions(), self.cfg.cluster_radius_m)
    }

    pub fn snapshot(&self) -> Snapshot {
        let now = self.engine.now();
        let summary = self.engine.occupancy_summary(now);
        let zones = self
            .map
            .zones
            .iter()
            .map(|z| ZoneView {
                id: z.id.clone(),
                name: z.name.clone(),
                polygon: z.polygon.clone(),
                occupancy: summary.zones.get(&z.id).copied().unwrap_or(0),
            })
            .collect();
        Snapshot {
            map: Arc::clone(&self.map),
            pipes: self.engine.pipes().cloned().collect(),
            zones,
            summary,
            clusters: self.clusters(),
            events: Arc::clone(&self.events),
            rules: self.engine.rules().to_vec(),
            history: Arc::new(self.engine.history().clone()),
            stats: self.stats,
            staleness_ms: self.cfg.staleness_ms,
            now,
        }
    }

    /// Writes the latest location of every pipe to the store.
    pub fn checkpoint(&self) -> Result<()> {
        if let Some(store) = &self.store {
            for p in self.engine.pipes() {
                store.upsert_pipe(p)?;
            }
        }
        Ok(())
    }
}

fn position_update(pipe_id: &str, p: &Position, zone: Option<String>, ranges: BTreeMap<String, f64>) -> PositionUpdate {
    PositionUpdate {
        pipe_id: pipe_id.to_string(),
        x: p.x,
        y: p.y,
        zone,
        t: p.epoch,
        residual: p.residual,
        antennas: p.source_antenna_count,
        degenerate: p.degenerate,
        ranges,
    }
}
