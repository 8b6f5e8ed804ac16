//! Ready-made scenarios: the workshop floor and the two ranging benches.

use crate::channel::PathLossModel;
use crate::locate::{AntennaArray, FloorMap, Geometry, Zone};

use super::{Scenario, TagClass, Trajectory, Waypoint};

/// Long-range passive class.
pub const EXO800: &str = "exo800";
/// Durable passive class.
pub const DURA1500: &str = "dura1500";
/// Battery-assisted class.
pub const ACTIVE: &str = "active";

pub const PASSIVE_MODEL: PathLossModel = PathLossModel {
    rss_d0: -54.5,
    n: 1.8638,
    sigma: 0.0,
    d0: 1.0,
};

pub const ACTIVE_MODEL: PathLossModel = PathLossModel {
    rss_d0: -56.5,
    n: 1.8261,
    sigma: 0.0,
    d0: 1.0,
};

/// Shadowing that puts 4-antenna selection combining near 0.7 m of mean
/// range error on the passive bench.
pub const PASSIVE_BENCH_SIGMA: f64 = 1.5;
pub const ACTIVE_BENCH_SIGMA: f64 = 2.0;
/// Dwell per bench station, ms.
pub const BENCH_DWELL_MS: i64 = 120_000;

pub const WORKSHOP_ZONES: [(&str, &str, f64, f64); 7] = [
    ("reception", "Reception", 0.0, 20.0),
    ("cutting", "Cutting", 20.0, 50.0),
    ("bending", "Bending", 50.0, 80.0),
    ("manufacturing", "Manufacturing", 80.0, 130.0),
    ("cleaning", "Cleaning", 130.0, 150.0),
    ("welding", "Welding", 150.0, 180.0),
    ("warehouse", "Warehouse", 180.0, 205.0),
];

pub fn exo800(sigma: f64) -> TagClass {
    TagClass::new(EXO800, 12.0, PASSIVE_MODEL.with_sigma(sigma))
}

pub fn dura1500(sigma: f64) -> TagClass {
    TagClass::new(DURA1500, 15.0, PASSIVE_MODEL.with_sigma(sigma))
}

pub fn active(sigma: f64) -> TagClass {
    TagClass::new(ACTIVE, 30.0, ACTIVE_MODEL.with_sigma(sigma))
}

/// Four-antenna linear array along the main aisle, straddling the
/// cutting/bending boundary at x = 50 m and facing the aisle.
pub fn cutting_bending_array() -> AntennaArray {
    AntennaArray::new(
        "line-cb",
        Geometry::Linear,
        vec![[48.5, 3.0, 1.0], [49.5, 3.0, 1.0], [50.5, 3.0, 1.0], [51.5, 3.0, 1.0]],
    )
    .with_facing([0.0, 1.0])
}

/// 205 m × 17 m workshop with seven process zones along its length.
pub fn workshop_map() -> FloorMap {
    let zones = WORKSHOP_ZONES
        .iter()
        .map(|&(id, name, x0, x1)| Zone::rect(id, name, x0, 0.0, x1, 17.0))
        .collect();
    let mut map = FloorMap {
        width: 205.0,
        height: 17.0,
        zones,
        arrays: vec![
            cutting_bending_array(),
            AntennaArray::new(
                "ell-bm",
                Geometry::LShaped,
                vec![[78.0, 17.0, 2.0], [80.0, 17.0, 2.0], [82.0, 17.0, 2.0], [82.0, 15.0, 2.0]],
            ),
        ],
        tag_height: 1.0,
    };
    map.prepare().expect("preset map is valid");
    map
}

/// The workshop with a handful of pipes moving through the process chain.
pub fn workshop(seed: u64) -> Scenario {
    let lane = |id: &str, class: &str, y: f64, start: i64, xs: &[f64]| {
        let waypoints = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| Waypoint::new(start + i as i64 * 20_000, x, y))
            .collect();
        Trajectory::new(id, class, waypoints)
    };
    Scenario {
        floor_map: workshop_map(),
        tag_classes: vec![exo800(2.0), dura1500(2.0), active(2.0)],
        tags: vec![
            lane("P-1001", EXO800, 4.0, 0, &[10.0, 22.0, 40.0, 60.0, 75.0]),
            lane("P-1002", DURA1500, 8.5, 5_000, &[15.0, 30.0, 48.0, 56.0, 84.0]),
            lane("P-1003", ACTIVE, 6.0, 10_000, &[45.0, 55.0, 70.0, 81.0]),
            Trajectory::stationary("P-1004", EXO800, 85.0, 14.0),
        ],
        angle_coverage: vec![],
        epoch_ms: 500,
        seed,
    }
}

/// Single pipe pushed along the aisle past the cutting/bending array at
/// [`CROSSING_SPEED`], from 3 m before the boundary to 3 m after it.
pub fn crossing(seed: u64) -> Scenario {
    let mut s = workshop(seed);
    s.tag_classes = vec![exo800(CROSSING_SIGMA)];
    s.tags = vec![crossing_trajectory()];
    s
}

pub const CROSSING_SIGMA: f64 = 1.0;
pub const CROSSING_SPEED: f64 = 1.0;
pub const CROSSING_Y: f64 = 4.0;
/// Departure time; the crossing coincides with a sampling instant.
pub const CROSSING_START_MS: i64 = 2_000;
/// Covers the approach, the crossing and a short rest after it.
pub const CROSSING_DURATION_MS: i64 = 12_000;

pub fn crossing_trajectory() -> Trajectory {
    let travel = (6.0 / CROSSING_SPEED * 1000.0) as i64;
    Trajectory::new(
        "P-2001",
        EXO800,
        vec![
            Waypoint::new(0, 47.0, CROSSING_Y),
            Waypoint::new(CROSSING_START_MS, 47.0, CROSSING_Y),
            Waypoint::new(CROSSING_START_MS + travel, 53.0, CROSSING_Y),
        ],
    )
}

/// Ground-truth time at which the crossing pipe reaches x = 50 m.
pub fn crossing_time() -> i64 {
    CROSSING_START_MS + (3.0 / CROSSING_SPEED * 1000.0) as i64
}

fn bench_map(antennas: usize) -> FloorMap {
    let spacing = 0.5;
    let x0 = 10.0 - spacing * (antennas as f64 - 1.0) / 2.0;
    let ants = (0..antennas).map(|i| [x0 + i as f64 * spacing, 0.0, 1.0]).collect();
    let mut map = FloorMap {
        width: 20.0,
        height: 20.0,
        zones: vec![Zone::rect("bench", "Bench", 0.0, 0.0, 20.0, 20.0)],
        arrays: vec![AntennaArray::new("bench", Geometry::Linear, ants).with_facing([0.0, 1.0])],
        tag_height: 1.0,
    };
    map.prepare().expect("bench map is valid");
    map
}

/// Cart stepping away from the array one meter at a time, dwelling at each
/// station.
fn stepping(tag_id: &str, class: &str, stations: std::ops::RangeInclusive<u32>) -> Trajectory {
    let mut waypoints = Vec::new();
    for (i, d) in stations.enumerate() {
        let start = i as i64 * BENCH_DWELL_MS;
        waypoints.push(Waypoint::new(start, 10.0, d as f64));
        waypoints.push(Waypoint::new(start + BENCH_DWELL_MS - 1, 10.0, d as f64));
    }
    Trajectory::new(tag_id, class, waypoints)
}

/// Passive tag on a 4-antenna linear array, 1 m to 12 m.
pub fn passive_bench(seed: u64) -> Scenario {
    Scenario {
        floor_map: bench_map(4),
        tag_classes: vec![exo800(PASSIVE_BENCH_SIGMA)],
        tags: vec![stepping("bench-tag", EXO800, 1..=12)],
        angle_coverage: vec![],
        epoch_ms: 500,
        seed,
    }
}

/// Active tag on a 2-antenna array, 1 m to 17 m.
pub fn active_bench(seed: u64) -> Scenario {
    Scenario {
        floor_map: bench_map(2),
        tag_classes: vec![active(ACTIVE_BENCH_SIGMA)],
        tags: vec![stepping("bench-tag", ACTIVE, 1..=17)],
        angle_coverage: vec![],
        epoch_ms: 500,
        seed,
    }
}

/// Named presets for the command line.
pub fn by_name(name: &str, seed: u64) -> Option<Scenario> {
    match name {
        "workshop" => Some(workshop(seed)),
        "crossing" => Some(crossing(seed)),
        "passive-bench" => Some(passive_bench(seed)),
        "active-bench" => Some(active_bench(seed)),
        _ => None,
    }
}

pub const NAMES: [&str; 4] = ["workshop", "crossing", "passive-bench", "active-bench"];
