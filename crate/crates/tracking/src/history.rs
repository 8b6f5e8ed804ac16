//! Residence history: contiguous intervals a pipe spent in one place.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

/// Gaps longer than this between fixes count as untracked time.
pub const DEFAULT_GAP_MS: i64 = 5 * 60 * 1000;

pub const OUTSIDE: &str = "outside";
pub const UNTRACKED: &str = "untracked";

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Residence {
    Zone(String),
    Outside,
    Untracked,
}

impl Residence {
    pub fn from_zone(zone: Option<&str>) -> Self {
        zone.map_or(Residence::Outside, |z| Residence::Zone(z.to_string()))
    }

    pub fn label(&self) -> &str {
        match self {
            Residence::Zone(z) => z,
            Residence::Outside => OUTSIDE,
            Residence::Untracked => UNTRACKED,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub residence: Residence,
    pub start: i64,
    /// Time of the last fix attributed to this segment.
    pub end: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DwellRow {
    pub zone: String,
    pub total_ms: i64,
    pub visits: usize,
}

#[derive(Debug, Clone, Default)]
pub struct History {
    gap_ms: i64,
    segments: HashMap<String, Vec<Segment>>,
}

impl History {
    pub fn new(gap_ms: i64) -> Self {
        Self {
            gap_ms,
            segments: HashMap::new(),
        }
    }

    pub fn gap_ms(&self) -> i64 {
        self.gap_ms
    }

    pub fn contains(&self, pipe_id: &str) -> bool {
        self.segments.contains_key(pipe_id)
    }

    pub fn segments(&self, pipe_id: &str) -> &[Segment] {
        self.segments.get(pipe_id).map_or(&[], Vec::as_slice)
    }

    /// Records a fix at `t` attributed to `residence`. `since` is the time
    /// the pipe entered `residence` when that differs from the current
    /// segment (the transition timestamp).
    pub fn record(&mut self, pipe_id: &str, residence: Residence, t: i64, since: Option<i64>) {
        let gap = self.gap_ms;
        let segs = self.segments.entry(pipe_id.to_string()).or_default();
        let Some(last) = segs.last_mut() else {
            segs.push(Segment { residence, start: t, end: t });
            return;
        };
        if t < last.end {
            return;
        }
        if t - last.end > gap {
            let from = last.end;
            segs.push(Segment {
                residence: Residence::Untracked,
                start: from,
                end: t,
            });
            segs.push(Segment { residence, start: t, end: t });
            return;
        }
        if last.residence == residence {
            last.end = t;
            return;
        }
        let boundary = since.unwrap_or(t).clamp(last.start, t);
        last.end = boundary;
        segs.push(Segment {
            residence,
            start: boundary,
            end: t,
        });
    }

    /// Segments clipped to `[from, to)`. Time before the first fix is
    /// untracked; the open tail after the last fix stays with the current
    /// residence for up to the gap limit and is untracked beyond it.
    fn clipped(&self, pipe_id: &str, from: i64, to: i64) -> Vec<(Residence, i64)> {
        let segs = self.segments(pipe_id);
        let mut out = Vec::new();
        let mut push = |r: &Residence, a: i64, b: i64| {
            let (a, b) = (a.max(from), b.min(to));
            if b > a {
                out.push((r.clone(), b - a));
            }
        };
        let first = segs.first().map_or(to, |s| s.start);
        push(&Residence::Untracked, from, first);
        for (i, s) in segs.iter().enumerate() {
            let end = segs.get(i + 1).map_or(s.end, |n| n.start);
            push(&s.residence, s.start, end);
        }
        if let Some(last) = segs.last() {
            let held = last.end + self.gap_ms;
            push(&last.residence, last.end, held.min(to));
            push(&Residence::Untracked, held, to);
        }
        out
    }

    /// Per-residence totals for one pipe over `[from, to)`.
    pub fn dwell_for_pipe(&self, pipe_id: &str, from: i64, to: i64) -> Vec<DwellRow> {
        let mut acc: BTreeMap<Residence, (i64, usize)> = BTreeMap::new();
        for (r, ms) in self.clipped(pipe_id, from, to) {
            let e = acc.entry(r).or_default();
            e.0 += ms;
            e.1 += 1;
        }
        acc.into_iter()
            .map(|(r, (total_ms, visits))| DwellRow {
                zone: r.label().to_string(),
                total_ms,
                visits,
            })
            .collect()
    }

    /// Total over all pipes of the time spent in `zone` within `[from, to)`.
    pub fn dwell_for_zone(&self, zone: &str, from: i64, to: i64) -> DwellRow {
        let target = Residence::Zone(zone.to_string());
        let mut row = DwellRow {
            zone: zone.to_string(),
            total_ms: 0,
            visits: 0,
        };
        for pipe in self.segments.keys() {
            for (r, ms) in self.clipped(pipe, from, to) {
                if r == target {
                    row.total_ms += ms;
                    row.visits += 1;
                }
            }
        }
        row
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zone(z: &str) -> Residence {
        Residence::Zone(z.into())
    }

    #[test]
    fn single_zone_covers_range() {
        let mut h = History::new(DEFAULT_GAP_MS);
        for t in (0..=10_000).step_by(500) {
            h.record("p", zone("cutting"), t, None);
        }
        let rows = h.dwell_for_pipe("p", 0, 10_000);
        assert_eq!(
            rows,
            vec![DwellRow {
                zone: "cutting".into(),
                total_ms: 10_000,
                visits: 1
            }]
        );
    }

    #[test]
    fn transition_partitions_range() {
        let mut h = History::new(DEFAULT_GAP_MS);
        for t in (0..=4_000).step_by(500) {
            h.record("p", zone("cutting"), t, None);
        }
        // Entered bending at 3000 but confirmed at 4500.
        for t in (4_500..=10_000).step_by(500) {
            h.record("p", zone("bending"), t, Some(3_000));
        }
        let rows = h.dwell_for_pipe("p", 0, 10_000);
        let get = |z: &str| rows.iter().find(|r| r.zone == z).unwrap().total_ms;
        assert_eq!(get("cutting"), 3_000);
        assert_eq!(get("bending"), 7_000);
        assert_eq!(rows.iter().map(|r| r.total_ms).sum::<i64>(), 10_000);
    }

    #[test]
    fn long_gap_is_untracked() {
        let mut h = History::new(DEFAULT_GAP_MS);
        h.record("p", zone("cutting"), 0, None);
        h.record("p", zone("cutting"), 60_000, None);
        h.record("p", zone("cutting"), 660_000, None);
        h.record("p", zone("cutting"), 720_000, None);
        let rows = h.dwell_for_pipe("p", 0, 720_000);
        let get = |z: &str| rows.iter().find(|r| r.zone == z).unwrap();
        assert_eq!(get(UNTRACKED).total_ms, 600_000);
        assert_eq!(get("cutting").total_ms, 120_000);
        assert_eq!(get("cutting").visits, 2);
    }

    #[test]
    fn open_tail_goes_untracked_after_gap() {
        let mut h = History::new(1_000);
        h.record("p", Residence::Outside, 0, None);
        let rows = h.dwell_for_pipe("p", 0, 5_000);
        let get = |z: &str| rows.iter().find(|r| r.zone == z).unwrap().total_ms;
        assert_eq!(get(OUTSIDE), 1_000);
        assert_eq!(get(UNTRACKED), 4_000);
    }

    #[test]
    fn zone_totals_sum_over_pipes() {
        let mut h = History::new(DEFAULT_GAP_MS);
        for p in ["a", "b"] {
            h.record(p, zone("welding"), 0, None);
            h.record(p, zone("welding"), 2_000, None);
        }
        let row = h.dwell_for_zone("welding", 0, 2_000);
        assert_eq!(row.total_ms, 4_000);
        assert_eq!(row.visits, 2);
    }
}
