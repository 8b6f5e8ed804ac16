use serde::{Deserialize, Serialize};

use crate::locate::Geometry;

/// Readability grid for one tag class in front of one array geometry.
///
/// Angles are measured from the array axis: 90° is straight ahead along the
/// facing direction, 180° is along the array. Anything behind the array is
/// unreadable. Row `i` covers distances up to `distances[i]`; a tag farther
/// than the last row is unreadable. Cells are `G` (readable) or `R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleTable {
    pub tag_class: String,
    pub geometry: Geometry,
    pub distances: Vec<f64>,
    pub angles: Vec<f64>,
    pub rows: Vec<String>,
}

const ANGLES: [f64; 6] = [180.0, 160.0, 135.0, 130.0, 110.0, 90.0];
const DISTANCES: [f64; 16] = [
    0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0, 13.0, 14.0, 15.0,
];

impl AngleTable {
    fn measured(tag_class: &str, geometry: Geometry, rows: [&str; 16]) -> Self {
        Self {
            tag_class: tag_class.into(),
            geometry,
            distances: DISTANCES.to_vec(),
            angles: ANGLES.to_vec(),
            rows: rows.iter().map(|r| r.to_string()).collect(),
        }
    }

    /// Long-range passive tag in front of a linear array.
    pub fn exo800_linear(tag_class: &str) -> Self {
        let mut rows = ["RRRRGG"; 16];
        rows[0] = "GGGGGG";
        rows[1] = "RGGGGG";
        rows[2..5].fill("RRGGGG");
        rows[13] = "RRRRGR";
        rows[14..].fill("RRRRRR");
        Self::measured(tag_class, Geometry::Linear, rows)
    }

    /// Long-range passive tag in front of an L-shaped array.
    pub fn exo800_l_shaped(tag_class: &str) -> Self {
        let mut rows = ["RRRRRR"; 16];
        rows[..7].fill("GGGGGG");
        rows[7] = "GRRGRG";
        rows[8] = "RRRGRR";
        Self::measured(tag_class, Geometry::LShaped, rows)
    }

    /// Durable metal-mount passive tag in front of a linear array.
    pub fn dura1500_linear(tag_class: &str) -> Self {
        let mut rows = ["RRRGGG"; 16];
        rows[..2].fill("GGGGGG");
        rows[2..5].fill("RRGGGG");
        rows[12..14].fill("RRRGRG");
        rows[14..].fill("RRRRRG");
        Self::measured(tag_class, Geometry::Linear, rows)
    }

    pub(crate) fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.rows.len() != self.distances.len() {
            out.push(format!(
                "{} rows for {} distances",
                self.rows.len(),
                self.distances.len()
            ));
        }
        if self.distances.windows(2).any(|w| w[1] <= w[0]) {
            out.push("distances must strictly increase".into());
        }
        for (i, r) in self.rows.iter().enumerate() {
            if r.chars().count() != self.angles.len() || r.chars().any(|c| c != 'G' && c != 'R') {
                out.push(format!("row {i} must hold {} cells of G or R", self.angles.len()));
            }
        }
        out
    }

    /// Whether a tag at `angle` degrees and `distance` meters is readable.
    pub fn readable(&self, angle: f64, distance: f64) -> bool {
        if !(90.0..=180.0).contains(&angle) || self.angles.is_empty() {
            return false;
        }
        let Some(row) = self.distances.iter().position(|&d| distance <= d + 1e-9) else {
            return false;
        };
        let col = self
            .angles
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - angle).abs().total_cmp(&(b.1 - angle).abs()))
            .map(|(i, _)| i)
            .expect("non-empty");
        self.rows[row].as_bytes().get(col) == Some(&b'G')
    }
}

/// Table angle of a tag at offset `rel` from an array facing `facing`:
/// 90° dead ahead, growing to 180° at the array axis and beyond behind it.
pub(crate) fn offset_angle(facing: [f64; 2], rel: [f64; 2]) -> f64 {
    let norm = facing[0].hypot(facing[1]) * rel[0].hypot(rel[1]);
    if norm == 0.0 {
        return 90.0;
    }
    let cos = ((facing[0] * rel[0] + facing[1] * rel[1]) / norm).clamp(-1.0, 1.0);
    90.0 + cos.acos().to_degrees()
}
