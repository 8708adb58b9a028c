//! Carotid centerline tree, arc-length utilities, twist-free frames, the
//! bifurcation axis and the cross-section sampling plan.

use std::path::Path;

use nalgebra::Isometry3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::PlanePose;
use crate::Vec3;

/// Junction points of the three branches must agree to this tolerance (mm).
pub const JUNCTION_TOL: f64 = 1e-6;
/// Cap on the central-difference half width used for tangents (mm).
pub const TANGENT_STEP_CAP: f64 = 1.0;
/// Longest step taken when propagating rotation-minimizing frames (mm).
const FRAME_SUBSTEP: f64 = 0.25;
/// Tolerance for arc-length grid arithmetic (mm).
const ARC_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct PolyLine3 {
    points: Vec<Vec3>,
    /// Cumulative arc length at each vertex.
    arcs: Vec<f64>,
}

impl PolyLine3 {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Geometry(format!(
                "polyline needs at least 2 points, got {}",
                points.len()
            )));
        }
        let mut arcs = Vec::with_capacity(points.len());
        arcs.push(0.0);
        for (k, w) in points.windows(2).enumerate() {
            let d = (w[1] - w[0]).norm();
            if !(d > 0.0) {
                return Err(Error::Geometry(format!(
                    "polyline points {k} and {} coincide",
                    k + 1
                )));
            }
            arcs.push(arcs[k] + d);
        }
        Ok(Self { points, arcs })
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn first(&self) -> Vec3 {
        self.points[0]
    }

    pub fn last(&self) -> Vec3 {
        self.points[self.points.len() - 1]
    }

    pub fn length(&self) -> f64 {
        self.arcs[self.arcs.len() - 1]
    }

    /// Index of the segment containing arc `s` (clamped to the line).
    fn segment_at(&self, s: f64) -> usize {
        let n = self.points.len();
        match self.arcs.binary_search_by(|a| a.total_cmp(&s)) {
            Ok(k) => k.min(n - 2),
            Err(k) => k.saturating_sub(1).min(n - 2),
        }
    }

    /// Point at arc length `s`, clamped to `[0, length]`.
    pub fn point_at(&self, s: f64) -> Vec3 {
        let s = s.clamp(0.0, self.length());
        let k = self.segment_at(s);
        let (a0, a1) = (self.arcs[k], self.arcs[k + 1]);
        let f = (s - a0) / (a1 - a0);
        self.points[k] + (self.points[k + 1] - self.points[k]) * f
    }

    fn check_arc(&self, s: f64) -> Result<()> {
        if !(-ARC_EPS..=self.length() + ARC_EPS).contains(&s) {
            return Err(Error::InvalidArgument(format!(
                "arc {s} outside [0, {}]",
                self.length()
            )));
        }
        Ok(())
    }

    /// Points at arcs `0, step, 2 step, ...` plus the original end point.
    pub fn resample(&self, step: f64) -> Result<PolyLine3> {
        let len = self.length();
        if !(step > 0.0) {
            return Err(Error::InvalidArgument(format!("resampling step must be > 0, got {step}")));
        }
        if step > len + ARC_EPS {
            return Err(Error::InvalidArgument(format!(
                "resampling step {step} exceeds polyline length {len}"
            )));
        }
        let count = (len / step + ARC_EPS).floor() as usize;
        let mut points: Vec<Vec3> = (0..=count).map(|k| self.point_at(k as f64 * step)).collect();
        if len - count as f64 * step > ARC_EPS {
            points.push(self.last());
        } else {
            *points.last_mut().expect("at least two points") = self.last();
        }
        PolyLine3::new(points)
    }

    /// Unit tangent by central differences with half width
    /// `min(1 mm, local vertex spacing)`, one-sided at the ends.
    pub fn tangent_at(&self, s: f64) -> Result<Vec3> {
        self.check_arc(s)?;
        let len = self.length();
        let s = s.clamp(0.0, len);
        let k = self.segment_at(s);
        let mut local = self.arcs[k + 1] - self.arcs[k];
        // On a vertex, both adjacent segments count as neighbours.
        if k > 0 && (s - self.arcs[k]).abs() <= ARC_EPS {
            local = local.min(self.arcs[k] - self.arcs[k - 1]);
        }
        let h = TANGENT_STEP_CAP.min(local);
        let (lo, hi) = (s - h, s + h);
        let d = match (lo >= 0.0, hi <= len) {
            (true, true) => self.point_at(hi) - self.point_at(lo),
            (false, true) => self.point_at(hi) - self.point_at(s),
            (true, false) => self.point_at(s) - self.point_at(lo),
            (false, false) => self.last() - self.first(),
        };
        d.try_normalize(1e-15)
            .ok_or_else(|| Error::Geometry(format!("degenerate tangent at arc {s}")))
    }

    /// Rotation-minimizing frames (double reflection) at the given arcs,
    /// seeded at arc 0 with the world axis least aligned with the tangent.
    /// Each pose is centred on the line with `normal` equal to the tangent.
    pub fn frames_along(&self, arcs: &[f64]) -> Result<Vec<PlanePose>> {
        for w in arcs.windows(2) {
            if w[1] < w[0] {
                return Err(Error::InvalidArgument("frame arcs must be sorted".into()));
            }
        }
        for &s in arcs {
            self.check_arc(s)?;
        }
        let mut out = Vec::with_capacity(arcs.len());
        let mut x = self.point_at(0.0);
        let mut t = self.tangent_at(0.0)?;
        let mut r = PlanePose::with_seed_axis(x, t)?.axis_u;
        let mut s = 0.0;
        for &target in arcs {
            let target = target.clamp(0.0, self.length());
            while target - s > ARC_EPS {
                let next = (s + FRAME_SUBSTEP).min(target);
                let x1 = self.point_at(next);
                let t1 = self.tangent_at(next)?;
                r = double_reflect(x, t, r, x1, t1);
                x = x1;
                t = t1;
                s = next;
            }
            out.push(PlanePose::from_normal(x, t, r)?);
        }
        Ok(out)
    }

    /// Crossings of the line with a plane (segment endpoints on the plane
    /// are reported once).
    pub fn intersect_plane(&self, pose: &PlanePose) -> Vec<Vec3> {
        let mut hits: Vec<Vec3> = Vec::new();
        for w in self.points.windows(2) {
            let (d0, d1) = (pose.signed_distance(&w[0]), pose.signed_distance(&w[1]));
            if d0 == 0.0 && d1 == 0.0 {
                continue;
            }
            if (d0 <= 0.0 && d1 >= 0.0) || (d0 >= 0.0 && d1 <= 0.0) {
                let f = d0 / (d0 - d1);
                let p = w[0] + (w[1] - w[0]) * f;
                if hits.iter().all(|h| (h - p).norm() > 1e-9) {
                    hits.push(p);
                }
            }
        }
        hits
    }

    pub fn transformed(&self, iso: &Isometry3<f64>) -> PolyLine3 {
        let points = self
            .points
            .iter()
            .map(|p| iso.transform_point(&(*p).into()).coords)
            .collect();
        PolyLine3::new(points).expect("rigid motion preserves validity")
    }
}

/// One step of the double-reflection rotation-minimizing frame update.
fn double_reflect(x0: Vec3, t0: Vec3, r0: Vec3, x1: Vec3, t1: Vec3) -> Vec3 {
    let v1 = x1 - x0;
    let c1 = v1.dot(&v1);
    if c1 <= f64::EPSILON {
        return r0;
    }
    let r_l = r0 - v1 * (2.0 / c1 * v1.dot(&r0));
    let t_l = t0 - v1 * (2.0 / c1 * v1.dot(&t0));
    let v2 = t1 - t_l;
    let c2 = v2.dot(&v2);
    let r1 = if c2 <= f64::EPSILON {
        r_l
    } else {
        r_l - v2 * (2.0 / c2 * v2.dot(&r_l))
    };
    // Re-project to stay exactly perpendicular to the tangent.
    (r1 - t1 * t1.dot(&r1)).normalize()
}

/// Which vessel segment a plane belongs to. Ordering drives plan sorting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Branch {
    #[serde(rename = "CCA")]
    Cca,
    #[serde(rename = "ICA")]
    Ica,
    #[serde(rename = "ECA")]
    Eca,
    #[serde(rename = "BIF")]
    Bif,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Cca => "CCA",
            Branch::Ica => "ICA",
            Branch::Eca => "ECA",
            Branch::Bif => "BIF",
        }
    }
}

impl std::fmt::Display for Branch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Branch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "CCA" => Ok(Branch::Cca),
            "ICA" => Ok(Branch::Ica),
            "ECA" => Ok(Branch::Eca),
            "BIF" => Ok(Branch::Bif),
            _ => Err(Error::InvalidArgument(format!("unknown vessel {s:?}"))),
        }
    }
}

/// CCA (proximal to distal, ending at the bifurcation) with ICA and ECA
/// both starting at the bifurcation point.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterlineTree {
    pub cca: PolyLine3,
    pub ica: PolyLine3,
    pub eca: PolyLine3,
}

#[derive(Serialize, Deserialize)]
struct CenterlineFile {
    cca: Vec<[f64; 3]>,
    ica: Vec<[f64; 3]>,
    eca: Vec<[f64; 3]>,
}

impl CenterlineTree {
    pub fn new(cca: PolyLine3, ica: PolyLine3, eca: PolyLine3) -> Result<Self> {
        let b = cca.last();
        for (name, line) in [("ica", &ica), ("eca", &eca)] {
            let gap = (line.first() - b).norm();
            if gap > JUNCTION_TOL {
                return Err(Error::Geometry(format!(
                    "{name} starts {gap:.3e} mm away from the bifurcation point"
                )));
            }
        }
        Ok(Self { cca, ica, eca })
    }

    pub fn bifurcation_point(&self) -> Vec3 {
        self.cca.last()
    }

    pub fn branch(&self, b: Branch) -> Option<&PolyLine3> {
        match b {
            Branch::Cca => Some(&self.cca),
            Branch::Ica => Some(&self.ica),
            Branch::Eca => Some(&self.eca),
            Branch::Bif => None,
        }
    }

    pub fn transformed(&self, iso: &Isometry3<f64>) -> CenterlineTree {
        CenterlineTree {
            cca: self.cca.transformed(iso),
            ica: self.ica.transformed(iso),
            eca: self.eca.transformed(iso),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: CenterlineFile = crate::io::read_json(path)?;
        let line = |pts: Vec<[f64; 3]>| PolyLine3::new(pts.into_iter().map(Vec3::from).collect());
        Self::new(line(file.cca)?, line(file.ica)?, line(file.eca)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let pts = |l: &PolyLine3| l.points().iter().map(|p| [p.x, p.y, p.z]).collect();
        let file = CenterlineFile {
            cca: pts(&self.cca),
            ica: pts(&self.ica),
            eca: pts(&self.eca),
        };
        crate::io::write_json(path, &file)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BifurcationAxis {
    pub origin: Vec3,
    pub direction: Vec3,
    pub extent: f64,
}

/// Axis from the bifurcation point towards the midpoint of the points
/// `branch_offset` mm along the ICA and ECA.
pub fn bifurcation_axis(tree: &CenterlineTree, branch_offset: f64) -> Result<BifurcationAxis> {
    if !(branch_offset > 0.0) {
        return Err(Error::InvalidArgument(format!("branch offset must be > 0, got {branch_offset}")));
    }
    for (name, line) in [("ICA", &tree.ica), ("ECA", &tree.eca)] {
        if line.length() < branch_offset {
            return Err(Error::Geometry(format!(
                "{name} is {:.3} mm long, shorter than the branch offset {branch_offset} mm",
                line.length()
            )));
        }
    }
    let origin = tree.bifurcation_point();
    let mid = (tree.ica.point_at(branch_offset) + tree.eca.point_at(branch_offset)) * 0.5;
    let d = mid - origin;
    let extent = d.norm();
    if extent < 1e-6 {
        return Err(Error::Geometry(
            "degenerate axis: branch midpoint coincides with the bifurcation point".into(),
        ));
    }
    Ok(BifurcationAxis {
        origin,
        direction: d / extent,
        extent,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanConfig {
    /// Spacing between consecutive cross-sections (mm).
    pub sd: f64,
    pub use_bifurcation_axis: bool,
    /// Arc distance from the bifurcation point treated as the bifurcation area (mm).
    pub bif_region: f64,
    /// Arc offset of the ICA/ECA points that define the bifurcation axis (mm).
    pub branch_offset: f64,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            sd: 0.6,
            use_bifurcation_axis: true,
            bif_region: 4.0,
            branch_offset: 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub pose: PlanePose,
    pub branch: Branch,
    /// Arc length along the branch, or the station along the bifurcation
    /// axis for `Bif` entries (negative values reach into the CCA).
    pub arc_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub entries: Vec<PlanEntry>,
    pub config: PlanConfig,
    pub axis: Option<BifurcationAxis>,
}

impl SamplingPlan {
    pub fn count(&self, branch: Branch) -> usize {
        self.entries.iter().filter(|e| e.branch == branch).count()
    }
}

fn arc_grid(len: f64, sd: f64, include_start: bool) -> Vec<f64> {
    let n = (len / sd + ARC_EPS).floor() as usize;
    let first = usize::from(!include_start);
    (first..=n).map(|k| k as f64 * sd).collect()
}

/// Cross-section poses every `sd` mm along each branch. With the
/// bifurcation axis enabled, planes within `bif_region` of the bifurcation
/// point are replaced by a stack perpendicular to the axis spanning
/// stations `-bif_region ..= extent`.
pub fn plan_cross_sections(tree: &CenterlineTree, cfg: &PlanConfig) -> Result<SamplingPlan> {
    if !(cfg.sd > 0.0 && cfg.sd <= 5.0) {
        return Err(Error::InvalidArgument(format!("sd must be in (0, 5] mm, got {}", cfg.sd)));
    }
    if !(cfg.bif_region > 0.0) {
        return Err(Error::InvalidArgument(format!("bif_region must be > 0, got {}", cfg.bif_region)));
    }
    for b in [Branch::Cca, Branch::Ica, Branch::Eca] {
        let len = tree.branch(b).expect("tree branch").length();
        if cfg.bif_region > len {
            return Err(Error::InvalidArgument(format!(
                "bif_region {} mm exceeds the {b} length {len:.3} mm",
                cfg.bif_region
            )));
        }
    }

    let mut entries = Vec::new();
    let cca_len = tree.cca.length();
    let keep = |dist_to_bif: f64| !cfg.use_bifurcation_axis || dist_to_bif > cfg.bif_region + ARC_EPS;

    let cca_arcs: Vec<f64> = arc_grid(cca_len, cfg.sd, true)
        .into_iter()
        .filter(|&s| keep(cca_len - s))
        .collect();
    push_branch(&mut entries, &tree.cca, Branch::Cca, &cca_arcs)?;
    for (b, line) in [(Branch::Ica, &tree.ica), (Branch::Eca, &tree.eca)] {
        let arcs: Vec<f64> = arc_grid(line.length(), cfg.sd, false)
            .into_iter()
            .filter(|&s| keep(s))
            .collect();
        push_branch(&mut entries, line, b, &arcs)?;
    }

    let axis = if cfg.use_bifurcation_axis {
        let axis = bifurcation_axis(tree, cfg.branch_offset)?;
        let span = cfg.bif_region + axis.extent;
        let n = (span / cfg.sd + ARC_EPS).floor() as usize;
        let template = PlanePose::with_seed_axis(axis.origin, axis.direction)?;
        for k in 0..=n {
            let t = -cfg.bif_region + k as f64 * cfg.sd;
            entries.push(PlanEntry {
                pose: template.recentered(axis.origin + axis.direction * t),
                branch: Branch::Bif,
                arc_s: t,
            });
        }
        Some(axis)
    } else {
        None
    };

    entries.sort_by(|a, b| a.branch.cmp(&b.branch).then(a.arc_s.total_cmp(&b.arc_s)));
    Ok(SamplingPlan {
        entries,
        config: *cfg,
        axis,
    })
}

fn push_branch(out: &mut Vec<PlanEntry>, line: &PolyLine3, branch: Branch, arcs: &[f64]) -> Result<()> {
    for (pose, &arc_s) in line.frames_along(arcs)?.into_iter().zip(arcs) {
        out.push(PlanEntry { pose, branch, arc_s });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn line(pts: &[[f64; 3]]) -> PolyLine3 {
        PolyLine3::new(pts.iter().map(|p| Vec3::from(*p)).collect()).unwrap()
    }

    /// Y-shaped tree: CCA along +z ending at the origin, branches in the xz
    /// plane at the given angles (degrees) from +z, ICA towards +x.
    pub(crate) fn y_tree(ica_deg: f64, eca_deg: f64, cca_len: f64, branch_len: f64) -> CenterlineTree {
        let dir = |deg: f64, sign: f64| {
            let r = deg.to_radians();
            Vec3::new(sign * r.sin(), 0.0, r.cos())
        };
        CenterlineTree::new(
            line(&[[0.0, 0.0, -cca_len], [0.0, 0.0, 0.0]]),
            PolyLine3::new(vec![Vec3::zeros(), dir(ica_deg, 1.0) * branch_len]).unwrap(),
            PolyLine3::new(vec![Vec3::zeros(), dir(eca_deg, -1.0) * branch_len]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn resample_straight_segment() {
        let l = line(&[[0.0, 0.0, 0.0], [0.0, 0.0, 12.0]]);
        let r = l.resample(0.6).unwrap();
        assert_eq!(r.points().len(), 21);
        for (k, p) in r.points().iter().enumerate() {
            assert_abs_diff_eq!(p.z, k as f64 * 0.6, epsilon = 1e-9);
        }
        let ends = l.resample(12.0).unwrap();
        assert_eq!(ends.points().len(), 2);
        assert!(l.resample(12.5).is_err());
        assert!(l.resample(0.0).is_err());
    }

    #[test]
    fn resample_l_shape_arc_bookkeeping() {
        let l = line(&[[0.0, 0.0, 0.0], [10.0, 0.0, 0.0], [10.0, 5.0, 0.0]]);
        let r = l.resample(1.0).unwrap();
        assert_eq!(r.points().len(), 16);
        assert!((r.points()[12] - Vec3::new(10.0, 2.0, 0.0)).norm() < 1e-12);
        assert_abs_diff_eq!(r.length(), l.length(), epsilon = 1e-9);
    }

    #[test]
    fn resample_keeps_non_divisible_endpoint() {
        let l = line(&[[0.0, 0.0, 0.0], [0.0, 0.0, 1.0]]);
        let r = l.resample(0.3).unwrap();
        assert_eq!(r.points().len(), 5);
        assert_eq!(r.last(), l.last());
    }

    #[test]
    fn tangent_straight_and_circle() {
        let l = line(&[[0.0, 0.0, 0.0], [0.0, 0.0, 10.0]]);
        for s in [0.0, 3.3, 10.0] {
            assert!((l.tangent_at(s).unwrap() - Vec3::z()).norm() < 1e-12);
        }
        assert!(l.tangent_at(10.5).is_err());

        let n = 90;
        let pts: Vec<Vec3> = (0..=n)
            .map(|k| {
                let a = PI / 2.0 * k as f64 / n as f64;
                Vec3::new(10.0 * a.cos(), 10.0 * a.sin(), 0.0)
            })
            .collect();
        let arc = PolyLine3::new(pts).unwrap();
        let t = arc.tangent_at(arc.length() / 2.0).unwrap();
        let expect = Vec3::new(-(0.5f64.sqrt()), 0.5f64.sqrt(), 0.0);
        assert!((t - expect).norm() <= 2e-2);
    }

    #[test]
    fn frames_on_straight_line_are_constant() {
        let l = line(&[[1.0, 2.0, 0.0], [1.0, 2.0, 10.0]]);
        let poses = l.frames_along(&[0.0, 2.5, 7.0, 10.0]).unwrap();
        for p in &poses {
            assert!(p.is_orthonormal(1e-9));
            assert!((p.normal - Vec3::z()).norm() < 1e-12);
            assert!((p.axis_u - poses[0].axis_u).norm() < 1e-12);
        }
        assert!(l.frames_along(&[3.0, 1.0]).is_err());
        assert!(l.frames_along(&[11.0]).is_err());
        let single = l.frames_along(&[4.0]).unwrap();
        assert_eq!(single.len(), 1);
        assert!((single[0].normal - l.tangent_at(4.0).unwrap()).norm() < 1e-12);
    }

    #[test]
    fn helix_frames_do_not_twist() {
        let (r, pitch) = (5.0, 3.0);
        let pts: Vec<Vec3> = (0..=800)
            .map(|k| {
                let a = 4.0 * PI * k as f64 / 800.0;
                Vec3::new(r * a.cos(), r * a.sin(), pitch * a / (2.0 * PI))
            })
            .collect();
        let helix = PolyLine3::new(pts).unwrap();
        let arcs: Vec<f64> = (0..60).map(|k| k as f64 * 0.5).collect();
        let poses = helix.frames_along(&arcs).unwrap();
        for w in poses.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            assert!(b.is_orthonormal(1e-9));
            // Minimal rotation taking a.normal onto b.normal, applied to a.axis_u.
            let axis = a.normal.cross(&b.normal);
            let moved = match axis.try_normalize(1e-15) {
                Some(k) => {
                    let ang = a.normal.dot(&b.normal).clamp(-1.0, 1.0).acos();
                    nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_unchecked(k), ang) * a.axis_u
                }
                None => a.axis_u,
            };
            let twist = moved.cross(&b.axis_u).dot(&b.normal).atan2(moved.dot(&b.axis_u));
            assert!(twist.abs() <= 1e-3, "twist {twist}");
        }
    }

    #[test]
    fn axis_symmetric_and_asymmetric() {
        let tree = y_tree(30.0, 30.0, 20.0, 20.0);
        let ax = bifurcation_axis(&tree, 4.0).unwrap();
        assert!((ax.direction - Vec3::z()).norm() < 1e-12);
        assert_abs_diff_eq!(ax.extent, 4.0 * 30f64.to_radians().cos(), epsilon = 1e-12);

        // ICA at +60 deg, ECA at -30 deg.
        let tree = y_tree(60.0, 30.0, 20.0, 20.0);
        let ax = bifurcation_axis(&tree, 4.0).unwrap();
        let ica = Vec3::new(4.0 * 0.866_025_403_784_438_6, 0.0, 4.0 * 0.5);
        let eca = Vec3::new(-4.0 * 0.5, 0.0, 4.0 * 0.866_025_403_784_438_6);
        let mid = (ica + eca) / 2.0;
        assert!((ax.direction - mid.normalize()).norm() < 1e-12);
        assert_abs_diff_eq!(ax.extent, mid.norm(), epsilon = 1e-12);
    }

    #[test]
    fn axis_errors() {
        let tree = y_tree(30.0, 30.0, 20.0, 3.0);
        assert!(bifurcation_axis(&tree, 4.0).is_err());
        // Branches folded straight back along each other's opposite.
        let folded = CenterlineTree::new(
            line(&[[0.0, 0.0, -10.0], [0.0, 0.0, 0.0]]),
            line(&[[0.0, 0.0, 0.0], [5.0, 0.0, 0.0]]),
            line(&[[0.0, 0.0, 0.0], [-5.0, 0.0, 0.0]]),
        )
        .unwrap();
        let err = bifurcation_axis(&folded, 4.0).unwrap_err();
        assert!(err.to_string().contains("degenerate axis"));
    }

    #[test]
    fn axis_is_rigidly_equivariant() {
        let tree = y_tree(40.0, 20.0, 20.0, 15.0);
        let iso = Isometry3::new(Vec3::new(3.0, -7.0, 11.0), Vec3::new(0.3, -1.1, 0.7));
        let a = bifurcation_axis(&tree, 4.0).unwrap();
        let b = bifurcation_axis(&tree.transformed(&iso), 4.0).unwrap();
        assert!((iso.transform_point(&a.origin.into()).coords - b.origin).norm() < 1e-9);
        assert!((iso.transform_vector(&a.direction) - b.direction).norm() < 1e-9);
        assert_abs_diff_eq!(a.extent, b.extent, epsilon = 1e-9);
    }

    #[test]
    fn junction_mismatch_rejected() {
        let r = CenterlineTree::new(
            line(&[[0.0, 0.0, -10.0], [0.0, 0.0, 0.0]]),
            line(&[[0.0, 0.0, 1e-3], [5.0, 0.0, 5.0]]),
            line(&[[0.0, 0.0, 0.0], [-5.0, 0.0, 5.0]]),
        );
        assert!(r.is_err());
    }

    #[test]
    fn straight_tree_plan_counts() {
        let tree = y_tree(0.0, 0.0, 12.0, 9.0);
        let cfg = PlanConfig {
            sd: 0.6,
            use_bifurcation_axis: false,
            ..PlanConfig::default()
        };
        let plan = plan_cross_sections(&tree, &cfg).unwrap();
        assert_eq!(plan.count(Branch::Cca), 21);
        assert_eq!(plan.count(Branch::Ica), 15);
        assert_eq!(plan.count(Branch::Eca), 15);
        assert_eq!(plan.count(Branch::Bif), 0);
        for e in &plan.entries {
            assert!((e.pose.normal - Vec3::z()).norm() < 1e-12);
        }
    }

    #[test]
    fn plan_spacing_and_sorting() {
        let tree = y_tree(25.0, 25.0, 30.0, 25.0);
        for flag in [false, true] {
            let cfg = PlanConfig {
                sd: 0.6,
                use_bifurcation_axis: flag,
                ..PlanConfig::default()
            };
            let plan = plan_cross_sections(&tree, &cfg).unwrap();
            for w in plan.entries.windows(2) {
                assert!(w[0].branch <= w[1].branch);
                if w[0].branch == w[1].branch {
                    assert_abs_diff_eq!(w[1].arc_s - w[0].arc_s, 0.6, epsilon = 1e-6);
                }
            }
            for e in &plan.entries {
                assert!(e.pose.is_orthonormal(1e-9));
            }
        }
    }

    #[test]
    fn bif_planes_follow_symmetric_axis() {
        let tree = y_tree(25.0, 25.0, 30.0, 25.0);
        let plan = plan_cross_sections(&tree, &PlanConfig::default()).unwrap();
        let bif: Vec<_> = plan.entries.iter().filter(|e| e.branch == Branch::Bif).collect();
        assert!(!bif.is_empty());
        for e in &bif {
            assert!((e.pose.normal - Vec3::z()).norm() < 1e-12);
        }
        assert_abs_diff_eq!(bif[0].arc_s, -4.0, epsilon = 1e-12);
        let extent = plan.axis.unwrap().extent;
        assert!(bif.last().unwrap().arc_s <= extent + 1e-9);
        // Branch planes stay strictly outside the region.
        for e in &plan.entries {
            match e.branch {
                Branch::Cca => assert!(tree.cca.length() - e.arc_s > 4.0),
                Branch::Ica | Branch::Eca => assert!(e.arc_s > 4.0),
                Branch::Bif => {}
            }
        }
    }

    #[test]
    fn plan_rejects_bad_config() {
        let tree = y_tree(25.0, 25.0, 30.0, 25.0);
        for cfg in [
            PlanConfig { sd: 0.0, ..Default::default() },
            PlanConfig { sd: 5.5, ..Default::default() },
            PlanConfig { bif_region: 0.0, ..Default::default() },
            PlanConfig { bif_region: 26.0, ..Default::default() },
        ] {
            assert!(plan_cross_sections(&tree, &cfg).is_err());
        }
    }

    /// Does the disk of `radius` around the pose centre meet `line`?
    fn disk_hits(pose: &PlanePose, radius: f64, line: &PolyLine3) -> bool {
        line.intersect_plane(pose)
            .iter()
            .any(|p| (p - pose.center).norm() <= radius)
    }

    #[test]
    fn centerline_planes_cut_the_other_branch_only_without_axis() {
        let tree = y_tree(25.0, 25.0, 30.0, 25.0);
        let lumen_r = 2.2;
        let foreign = |b: Branch| -> Vec<&PolyLine3> {
            match b {
                Branch::Cca => vec![&tree.ica, &tree.eca],
                Branch::Ica => vec![&tree.eca, &tree.cca],
                Branch::Eca => vec![&tree.ica, &tree.cca],
                Branch::Bif => vec![],
            }
        };
        let hits = |flag: bool| {
            let cfg = PlanConfig {
                use_bifurcation_axis: flag,
                ..PlanConfig::default()
            };
            let plan = plan_cross_sections(&tree, &cfg).unwrap();
            plan.entries
                .iter()
                .filter(|e| foreign(e.branch).iter().any(|l| disk_hits(&e.pose, lumen_r, l)))
                .count()
        };
        assert_eq!(hits(true), 0);
        assert!(hits(false) >= 1);
    }
}
