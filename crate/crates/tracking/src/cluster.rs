//! Greedy centroid clustering of pipe positions for display.

use serde::{Deserialize, Serialize};

pub const DEFAULT_RADIUS_M: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub centroid: [f64; 2],
    pub members: Vec<String>,
}

/// Seeds a cluster at each unassigned position in input order and keeps
/// absorbing unassigned positions within `radius` of the running centroid
/// until nothing changes. Members are never released once absorbed, so the
/// result depends on input order; identical input yields identical output.
pub fn cluster_positions(positions: &[(String, [f64; 2])], radius: f64) -> Vec<Cluster> {
    assert!(radius > 0.0, "cluster radius must be positive");
    let mut assigned = vec![false; positions.len()];
    let mut out = Vec::new();
    for seed in 0..positions.len() {
        if assigned[seed] {
            continue;
        }
        assigned[seed] = true;
        let mut members = vec![seed];
        let mut centroid = positions[seed].1;
        loop {
            let mut grew = false;
            for (i, (_, p)) in positions.iter().enumerate() {
                if !assigned[i] && (p[0] - centroid[0]).hypot(p[1] - centroid[1]) <= radius {
                    assigned[i] = true;
                    members.push(i);
                    grew = true;
                }
            }
            if !grew {
                break;
            }
            let n = members.len() as f64;
            centroid = [
                members.iter().map(|&i| positions[i].1[0]).sum::<f64>() / n,
                members.iter().map(|&i| positions[i].1[1]).sum::<f64>() / n,
            ];
        }
        out.push(Cluster {
            centroid,
            members: members.into_iter().map(|i| positions[i].0.clone()).collect(),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(xs: &[(&str, f64, f64)]) -> Vec<(String, [f64; 2])> {
        xs.iter().map(|&(id, x, y)| (id.to_string(), [x, y])).collect()
    }

    #[test]
    fn near_pair_merges() {
        let c = cluster_positions(&pts(&[("a", 0.0, 0.0), ("b", 1.0, 0.0)]), DEFAULT_RADIUS_M);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].members, ["a", "b"]);
        assert_eq!(c[0].centroid, [0.5, 0.0]);
    }

    #[test]
    fn far_pair_stays_apart() {
        let c = cluster_positions(&pts(&[("a", 0.0, 0.0), ("b", 5.0, 0.0)]), DEFAULT_RADIUS_M);
        assert_eq!(c.len(), 2);
        assert!(c.iter().all(|c| c.members.len() == 1));
    }

    #[test]
    fn chain_splits_by_input_order() {
        // Seed a at 0 absorbs b (1.5); centroid 0.75 is 2.25 from c.
        let forward = pts(&[("a", 0.0, 0.0), ("b", 1.5, 0.0), ("c", 3.0, 0.0), ("d", 4.5, 0.0)]);
        let c = cluster_positions(&forward, DEFAULT_RADIUS_M);
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].members, ["a", "b"]);
        assert_eq!(c[1].members, ["c", "d"]);
        assert_eq!(c[1].centroid, [3.75, 0.0]);

        // Seed b at 1.5 absorbs a and c; centroid 1.5 is 3 from d.
        let shuffled = pts(&[("b", 1.5, 0.0), ("d", 4.5, 0.0), ("a", 0.0, 0.0), ("c", 3.0, 0.0)]);
        let c = cluster_positions(&shuffled, DEFAULT_RADIUS_M);
        assert_eq!(c[0].members, ["b", "a", "c"]);
        assert_eq!(c[1].members, ["d"]);
        assert_eq!(cluster_positions(&shuffled, DEFAULT_RADIUS_M), c);
    }

    #[test]
    fn empty_input() {
        assert!(cluster_positions(&[], 2.0).is_empty());
    }
}
