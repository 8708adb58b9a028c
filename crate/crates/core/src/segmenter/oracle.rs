//! Deterministic intensity-band segmenter for dark-lumen phantoms.

use serde::{Deserialize, Serialize};

use super::{LabelMask2D, BACKGROUND, LUMEN, WALL};
use crate::error::Result;
use crate::grid2d::{label_components, neighbors, Connectivity};
use crate::volume::CrossSection;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleParams {
    /// Pixels at or below this intensity are lumen candidates.
    pub t_low: f64,
    /// Pixels at or above this intensity are wall candidates.
    pub t_high: f64,
}

// Off the default phantom's two-tissue midpoints (200, 700).
impl Default for OracleParams {
    fn default() -> Self {
        Self {
            t_low: 190.0,
            t_high: 690.0,
        }
    }
}

impl OracleParams {
    /// Lumen growth stops at the midpoint of the two bands.
    pub fn t_split(&self) -> f64 {
        0.5 * (self.t_low + self.t_high)
    }
}

/// Band classification, then:
/// 1. keep the 4-connected lumen component nearest the image centre,
/// 2. grow it through transition pixels darker than the band midpoint,
/// 3. label unclassified pixels touching the lumen as wall (closes the
///    partial-volume gap between lumen and wall bands),
/// 4. keep 8-connected wall components that touch the lumen.
pub fn segment_oracle(cs: &CrossSection, params: &OracleParams) -> Result<LabelMask2D> {
    let (nu, nv) = cs.size;
    let n = nu * nv;
    let v = &cs.pixels;
    let lumen_cand: Vec<bool> = v.iter().map(|&x| x <= params.t_low).collect();
    let (ids, count) = label_components(&lumen_cand, nu, nv, Connectivity::Four);
    let mut labels = vec![BACKGROUND; n];
    if count == 0 {
        return LabelMask2D::new(cs.pose, cs.size, cs.spacing, labels);
    }

    // Distance of each component to the exact image centre (pixel units).
    let (ci, cj) = ((nu as f64 - 1.0) / 2.0, (nv as f64 - 1.0) / 2.0);
    let mut best = vec![f64::INFINITY; count + 1];
    for (p, &id) in ids.iter().enumerate() {
        if id != 0 {
            let d = ((p % nu) as f64 - ci).hypot((p / nu) as f64 - cj);
            if d < best[id as usize] {
                best[id as usize] = d;
            }
        }
    }
    let keep = (1..=count)
        .min_by(|&a, &b| best[a].total_cmp(&best[b]).then(a.cmp(&b)))
        .expect("count > 0") as u32;

    let mut lumen: Vec<bool> = ids.iter().map(|&id| id == keep).collect();
    let split = params.t_split();
    let mut frontier: Vec<usize> = (0..n).filter(|&p| lumen[p]).collect();
    while let Some(p) = frontier.pop() {
        for q in neighbors(p, nu, nv, Connectivity::Four) {
            if !lumen[q] && v[q] > params.t_low && v[q] < split {
                lumen[q] = true;
                frontier.push(q);
            }
        }
    }

    let touches_lumen =
        |p: usize, lumen: &[bool]| neighbors(p, nu, nv, Connectivity::Four).any(|q| lumen[q]);
    let wall_cand: Vec<bool> = (0..n)
        .map(|p| !lumen[p] && (v[p] >= params.t_high || touches_lumen(p, &lumen)))
        .collect();
    let (wall_ids, wall_count) = label_components(&wall_cand, nu, nv, Connectivity::Eight);
    let mut adjacent = vec![false; wall_count + 1];
    for p in 0..n {
        if wall_ids[p] != 0 && touches_lumen(p, &lumen) {
            adjacent[wall_ids[p] as usize] = true;
        }
    }
    for p in 0..n {
        if lumen[p] {
            labels[p] = LUMEN;
        } else if wall_ids[p] != 0 && adjacent[wall_ids[p] as usize] {
            labels[p] = WALL;
        }
    }
    LabelMask2D::new(cs.pose, cs.size, cs.spacing, labels)
}
