use pipetrack_core::locate::multilaterate;
use pipetrack_core::{resolve_zone, AntennaArray, FloorMap, Geometry, Position, Zone};
use proptest::prelude::*;

fn area2(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    /// Points are convex combinations of the antennas, so they lie in the hull.
    #[test]
    fn noiseless_ranges_recover_points_in_the_hull(
        ants in prop::collection::vec((0.0..30.0f64, 0.0..30.0f64, 0.0..3.0f64), 3..7),
        weights in prop::collection::vec(0.01..1.0f64, 7),
    ) {
        let antennas: Vec<[f64; 3]> = ants.iter().map(|&(x, y, z)| [x, y, z]).collect();
        let mut spread: f64 = 0.0;
        for a in &antennas {
            for b in &antennas {
                for c in &antennas {
                    spread = spread.max(area2(*a, *b, *c).abs());
                }
            }
        }
        prop_assume!(spread > 20.0);
        let w = &weights[..antennas.len()];
        let total: f64 = w.iter().sum();
        let px = antennas.iter().zip(w).map(|(a, w)| a[0] * w).sum::<f64>() / total;
        let py = antennas.iter().zip(w).map(|(a, w)| a[1] * w).sum::<f64>() / total;
        let h = 1.0;
        let ranges: Vec<Option<f64>> = antennas
            .iter()
            .map(|a| Some(((a[0] - px).powi(2) + (a[1] - py).powi(2) + (a[2] - h).powi(2)).sqrt()))
            .collect();
        let array = AntennaArray::new("r", Geometry::Custom, antennas);
        let fix = multilaterate(&array, &ranges, h).unwrap();
        prop_assert!(fix.distance_to(px, py) < 1e-6, "fix ({}, {}) vs ({px}, {py})", fix.x, fix.y);
        prop_assert!(fix.residual < 1e-6);
        prop_assert!(!fix.degenerate);
    }

    #[test]
    fn shared_edges_belong_to_the_first_zone(y in 0.0..10.0f64, split in 1.0..19.0f64) {
        let map = FloorMap {
            width: 20.0,
            height: 10.0,
            zones: vec![
                Zone::rect("left", "Left", 0.0, 0.0, split, 10.0),
                Zone::rect("right", "Right", split, 0.0, 20.0, 10.0),
            ],
            arrays: vec![],
            tag_height: 0.0,
        };
        let z = resolve_zone(&map, &Position::at(split, y, 0)).map(|z| z.id.as_str());
        prop_assert_eq!(z, Some("left"));
        let z = resolve_zone(&map, &Position::at(split + 1e-9, y, 0)).map(|z| z.id.as_str());
        prop_assert_eq!(z, Some("right"));
        prop_assert!(resolve_zone(&map, &Position::at(20.5, y, 0)).is_none());
    }
}
