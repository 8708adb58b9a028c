//! Closed contours of 2D label masks, bifurcation wall merging, lifting to
//! oriented 3D samples, and the per-cross-section annotation file.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::centerline::Branch;
use crate::error::{Error, Result};
use crate::segmenter::{LabelMask2D, BACKGROUND, LUMEN, WALL};
use crate::volume::{pixel_to_uv, PlanePose};
use crate::Vec3;

/// Components with a smaller area (mm^2) are dropped as speckle.
pub const DEFAULT_MIN_AREA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContourKind {
    LumenBoundary,
    OuterWallBoundary,
}

/// Closed counter-clockwise polygon in plane (u, v) millimetres. The
/// closing edge from the last vertex back to the first is implicit.
#[derive(Debug, Clone, PartialEq)]
pub struct Contour2D {
    vertices: Vec<[f64; 2]>,
    kind: ContourKind,
}

impl Contour2D {
    /// Accepts either orientation and stores the polygon counter-clockwise.
    pub fn new(mut vertices: Vec<[f64; 2]>, kind: ContourKind) -> Result<Self> {
        if vertices.len() > 1 && vertices.first() == vertices.last() {
            vertices.pop();
        }
        if vertices.len() < 3 {
            return Err(Error::Geometry(format!(
                "contour needs at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        let area = signed_area(&vertices);
        if area == 0.0 || !area.is_finite() {
            return Err(Error::Geometry("contour encloses no area".into()));
        }
        if area < 0.0 {
            vertices.reverse();
        }
        Ok(Self { vertices, kind })
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn kind(&self) -> ContourKind {
        self.kind
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    pub fn perimeter(&self) -> f64 {
        self.edges().map(|(a, b)| dist(a, b)).sum()
    }

    pub fn centroid(&self) -> [f64; 2] {
        let a = self.area();
        let (mut cx, mut cy) = (0.0, 0.0);
        for (p, q) in self.edges() {
            let cross = p[0] * q[1] - q[0] * p[1];
            cx += (p[0] + q[0]) * cross;
            cy += (p[1] + q[1]) * cross;
        }
        [cx / (6.0 * a), cy / (6.0 * a)]
    }

    /// Edges including the closing one.
    pub fn edges(&self) -> impl Iterator<Item = ([f64; 2], [f64; 2])> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |k| (self.vertices[k], self.vertices[(k + 1) % n]))
    }

    /// Even-odd point-in-polygon test.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let mut inside = false;
        for (a, b) in self.edges() {
            if (a[1] > p[1]) != (b[1] > p[1]) {
                let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
                if p[0] < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// `count` points evenly spaced by arc length, starting at vertex 0.
    /// Point at arc length `s` from the first vertex, wrapping around.
    pub fn point_at_arc(&self, s: f64) -> [f64; 2] {
        let total = self.perimeter();
        let mut s = s.rem_euclid(total);
        for (a, b) in self.edges() {
            let len = dist(a, b);
            if s <= len && len > 0.0 {
                let f = s / len;
                return [a[0] + (b[0] - a[0]) * f, a[1] + (b[1] - a[1]) * f];
            }
            s -= len;
        }
        self.vertices()[0]
    }

    pub fn resample_count(&self, count: usize) -> Vec<[f64; 2]> {
        let total = self.perimeter();
        let step = total / count as f64;
        let mut out = Vec::with_capacity(count);
        let mut edges = self.edges();
        let (mut a, mut b) = edges.next().expect("at least three edges");
        let mut seg_start = 0.0;
        let mut seg_len = dist(a, b);
        for k in 0..count {
            let s = k as f64 * step;
            while s > seg_start + seg_len {
                seg_start += seg_len;
                match edges.next() {
                    Some((na, nb)) => {
                        a = na;
                        b = nb;
                        seg_len = dist(a, b);
                    }
                    None => break,
                }
            }
            let f = if seg_len > 0.0 { ((s - seg_start) / seg_len).clamp(0.0, 1.0) } else { 0.0 };
            out.push([a[0] + (b[0] - a[0]) * f, a[1] + (b[1] - a[1]) * f]);
        }
        out
    }

    /// No two non-adjacent edges intersect.
    pub fn is_simple(&self) -> bool {
        let e: Vec<_> = self.edges().collect();
        let n = e.len();
        for i in 0..n {
            for j in (i + 1)..n {
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                if segments_intersect(e[i].0, e[i].1, e[j].0, e[j].1) {
                    return false;
                }
            }
        }
        true
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub fn signed_area(v: &[[f64; 2]]) -> f64 {
    let n = v.len();
    0.5 * (0..n)
        .map(|k| {
            let (p, q) = (v[k], v[(k + 1) % n]);
            p[0] * q[1] - q[0] * p[1]
        })
        .sum::<f64>()
}

fn segments_intersect(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> bool {
    let orient = |a: [f64; 2], b: [f64; 2], c: [f64; 2]| (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

/// Contours of one cross-section.
#[derive(Debug, Clone, PartialEq)]
pub struct ContourSet {
    pub pose: PlanePose,
    pub lumen: Vec<Contour2D>,
    pub outer: Vec<Contour2D>,
}

impl ContourSet {
    pub fn empty(pose: PlanePose) -> Self {
        Self {
            pose,
            lumen: Vec::new(),
            outer: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.lumen.is_empty() && self.outer.is_empty()
    }

    /// Every lumen contour's centroid lies inside some outer contour.
    pub fn lumen_nested(&self) -> bool {
        self.lumen
            .iter()
            .all(|l| self.outer.iter().any(|o| o.contains(l.centroid())))
    }

    /// Boundaries of the wall region: lumen plus outer contours.
    pub fn wall_boundaries(&self) -> Vec<Contour2D> {
        self.lumen.iter().chain(&self.outer).cloned().collect()
    }

    /// Paint onto a grid by pixel-centre inclusion: inside an outer contour
    /// is wall, inside a lumen contour is lumen.
    pub fn rasterize(&self, size: (usize, usize), spacing: f64) -> LabelMask2D {
        let mut labels = vec![BACKGROUND; size.0 * size.1];
        for j in 0..size.1 {
            for i in 0..size.0 {
                let (u, v) = pixel_to_uv(i as f64, j as f64, size, spacing);
                let p = [u, v];
                labels[j * size.0 + i] = if self.lumen.iter().any(|c| c.contains(p)) {
                    LUMEN
                } else if self.outer.iter().any(|c| c.contains(p)) {
                    WALL
                } else {
                    BACKGROUND
                };
            }
        }
        LabelMask2D::new(self.pose, size, spacing, labels).expect("labels in range")
    }
}

/// Lumen and outer-wall contours with the default speckle filter.
pub fn mask_to_contours(mask: &LabelMask2D) -> ContourSet {
    mask_to_contours_with(mask, DEFAULT_MIN_AREA)
}

pub fn mask_to_contours_with(mask: &LabelMask2D, min_area: f64) -> ContourSet {
    let lumen: Vec<bool> = mask.labels().iter().map(|&l| l == LUMEN).collect();
    let solid: Vec<bool> = mask.labels().iter().map(|&l| l == LUMEN || l == WALL).collect();
    let to_contours = |ind: &[bool], kind| {
        isolines(ind, mask.size(), mask.spacing())
            .into_iter()
            .filter(|loop_| signed_area(loop_) >= min_area.max(f64::MIN_POSITIVE))
            .filter_map(|loop_| Contour2D::new(loop_, kind).ok())
            .collect::<Vec<_>>()
    };
    ContourSet {
        pose: *mask.pose(),
        lumen: to_contours(&lumen, ContourKind::LumenBoundary),
        outer: to_contours(&solid, ContourKind::OuterWallBoundary),
    }
}

/// Key of an edge midpoint on the padded node lattice: `(horizontal, i, j)`
/// for the edge from node (i, j) to (i+1, j) or from (i, j) to (i, j+1).
type EdgeKey = (bool, usize, usize);

/// Marching squares at the 0.5 level of a binary image. Loops are oriented
/// with the inside on the left, so outer boundaries come out
/// counter-clockwise and holes clockwise. Diagonal saddles are split,
/// matching 4-connectivity of the inside.
fn isolines(ind: &[bool], size: (usize, usize), spacing: f64) -> Vec<Vec<[f64; 2]>> {
    let (nu, nv) = size;
    // Node (i, j) of the padded lattice is pixel (i-1, j-1).
    let at = |i: usize, j: usize| -> bool {
        i >= 1 && j >= 1 && i <= nu && j <= nv && ind[(j - 1) * nu + (i - 1)]
    };
    let mut next: HashMap<EdgeKey, EdgeKey> = HashMap::new();
    for j in 0..=nv {
        for i in 0..=nu {
            let case = at(i, j) as u8
                | (at(i + 1, j) as u8) << 1
                | (at(i + 1, j + 1) as u8) << 2
                | (at(i, j + 1) as u8) << 3;
            let b = (true, i, j);
            let t = (true, i, j + 1);
            let l = (false, i, j);
            let r = (false, i + 1, j);
            let segs: &[(EdgeKey, EdgeKey)] = match case {
                1 => &[(b, l)],
                2 => &[(r, b)],
                3 => &[(r, l)],
                4 => &[(t, r)],
                5 => &[(b, l), (t, r)],
                6 => &[(t, b)],
                7 => &[(t, l)],
                8 => &[(l, t)],
                9 => &[(b, t)],
                10 => &[(r, b), (l, t)],
                11 => &[(r, t)],
                12 => &[(l, r)],
                13 => &[(b, r)],
                14 => &[(l, b)],
                _ => &[],
            };
            for &(from, to) in segs {
                next.insert(from, to);
            }
        }
    }

    let position = |k: EdgeKey| -> [f64; 2] {
        let (h, i, j) = k;
        let (pi, pj) = if h {
            (i as f64 - 0.5, j as f64 - 1.0)
        } else {
            (i as f64 - 1.0, j as f64 - 0.5)
        };
        let (u, v) = pixel_to_uv(pi, pj, size, spacing);
        [u, v]
    };

    // Deterministic traversal order.
    let mut starts: Vec<EdgeKey> = next.keys().copied().collect();
    starts.sort_unstable_by_key(|&(h, i, j)| (j, i, h));
    let mut visited = std::collections::HashSet::new();
    let mut loops = Vec::new();
    for start in starts {
        if visited.contains(&start) {
            continue;
        }
        let mut poly = Vec::new();
        let mut k = start;
        loop {
            visited.insert(k);
            poly.push(position(k));
            match next.get(&k) {
                Some(&n) if n == start => break,
                Some(&n) if !visited.contains(&n) => k = n,
                _ => break,
            }
        }
        if poly.len() >= 3 {
            loops.push(poly);
        }
    }
    loops
}

/// Union of lumens; walls joined and never covering lumen.
pub fn merge_wall_regions(a: &LabelMask2D, b: &LabelMask2D) -> Result<LabelMask2D> {
    if !a.same_geometry(b) {
        return Err(Error::Geometry("cannot merge masks with different geometry".into()));
    }
    let labels = a
        .labels()
        .iter()
        .zip(b.labels())
        .map(|(&x, &y)| {
            if x == LUMEN || y == LUMEN {
                LUMEN
            } else if x == WALL || y == WALL {
                WALL
            } else {
                BACKGROUND
            }
        })
        .collect();
    Ok(a.with_labels(labels))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solid {
    LumenSolid,
    OuterSolid,
}

/// Surface samples with outward unit normals. `weights` hold the surface
/// area (mm^2) each sample stands for.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientedPointCloud {
    pub surface: Solid,
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub weights: Vec<f64>,
}

impl OrientedPointCloud {
    pub fn new(surface: Solid) -> Self {
        Self {
            surface,
            points: Vec::new(),
            normals: Vec::new(),
            weights: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn push(&mut self, point: Vec3, normal: Vec3, weight: f64) {
        self.points.push(point);
        self.normals.push(normal.normalize());
        self.weights.push(weight);
    }

    pub fn extend(&mut self, other: &OrientedPointCloud) {
        self.points.extend_from_slice(&other.points);
        self.normals.extend_from_slice(&other.normals);
        self.weights.extend_from_slice(&other.weights);
    }

    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.points.first()?;
        Some(self.points.iter().fold((first, first), |(lo, hi), p| (lo.inf(p), hi.sup(p))))
    }
}

/// Which side of a terminal plane is outside the vessel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapSide {
    /// Outward is `+normal`.
    Positive,
    /// Outward is `-normal`.
    Negative,
}

/// Lift contours to world space as oriented samples spaced `step` mm along
/// each contour (at least 3 per contour). Lumen contours feed the lumen
/// solid and outer contours the outer solid. `sheet_spacing` is the
/// distance to neighbouring cross-sections and sets the sample weights.
/// With `cap`, the enclosed areas are also filled with samples whose
/// normals point out of the vessel end.
pub fn lift_and_sample(
    set: &ContourSet,
    step: f64,
    sheet_spacing: f64,
    cap: Option<CapSide>,
) -> Result<(OrientedPointCloud, OrientedPointCloud)> {
    if !(step > 0.0) || !(sheet_spacing > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "step and sheet spacing must be > 0, got {step} and {sheet_spacing}"
        )));
    }
    let mut lumen = OrientedPointCloud::new(Solid::LumenSolid);
    let mut outer = OrientedPointCloud::new(Solid::OuterSolid);
    for (contours, cloud) in [(&set.lumen, &mut lumen), (&set.outer, &mut outer)] {
        for c in contours {
            sample_contour(&set.pose, c, step, sheet_spacing, cloud)?;
            if let Some(side) = cap {
                sample_cap(&set.pose, c, step, side, cloud);
            }
        }
    }
    Ok((lumen, outer))
}

fn sample_contour(pose: &PlanePose, c: &Contour2D, step: f64, sheet: f64, cloud: &mut OrientedPointCloud) -> Result<()> {
    if c.vertices().len() < 3 {
        return Err(Error::Geometry("degenerate contour".into()));
    }
    let perimeter = c.perimeter();
    let count = ((perimeter / step).round() as usize).max(3);
    let pts = c.resample_count(count);
    let weight = perimeter / count as f64 * sheet;
    for k in 0..count {
        let prev = pts[(k + count - 1) % count];
        let next = pts[(k + 1) % count];
        let (tu, tv) = (next[0] - prev[0], next[1] - prev[1]);
        // Outward normal of a counter-clockwise polygon.
        let n = pose.axis_u * tv - pose.axis_v * tu;
        let n = n
            .try_normalize(1e-15)
            .ok_or_else(|| Error::Geometry("contour has coincident samples".into()))?;
        cloud.push(pose.uv_to_world(pts[k][0], pts[k][1]), n, weight);
    }
    Ok(())
}

fn sample_cap(pose: &PlanePose, c: &Contour2D, step: f64, side: CapSide, cloud: &mut OrientedPointCloud) {
    let normal = match side {
        CapSide::Positive => pose.normal,
        CapSide::Negative => -pose.normal,
    };
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for v in c.vertices() {
        for a in 0..2 {
            lo[a] = lo[a].min(v[a]);
            hi[a] = hi[a].max(v[a]);
        }
    }
    let mut any = false;
    let i0 = (lo[0] / step).floor() as i64;
    let j0 = (lo[1] / step).floor() as i64;
    let i1 = (hi[0] / step).ceil() as i64;
    let j1 = (hi[1] / step).ceil() as i64;
    for j in j0..=j1 {
        for i in i0..=i1 {
            let p = [i as f64 * step, j as f64 * step];
            if c.contains(p) {
                cloud.push(pose.uv_to_world(p[0], p[1]), normal, step * step);
                any = true;
            }
        }
    }
    if !any {
        let m = c.centroid();
        cloud.push(pose.uv_to_world(m[0], m[1]), normal, c.area());
    }
}

/// One expert-annotated cross-section.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub plane_id: u8,
    pub vessel: Branch,
    pub size: (usize, usize),
    pub spacing: f64,
    pub contours: ContourSet,
}

#[derive(Debug, Serialize, Deserialize)]
struct AnnotationFile {
    plane_id: u8,
    vessel: Branch,
    pose: PoseFile,
    spacing_mm: f64,
    size: [usize; 2],
    inner: Vec<[f64; 2]>,
    outer: Vec<[f64; 2]>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PoseFile {
    center: [f64; 3],
    axis_u: [f64; 3],
    axis_v: [f64; 3],
    normal: [f64; 3],
}

impl Annotation {
    pub fn load(path: &Path) -> Result<Self> {
        let f: AnnotationFile = crate::io::read_json(path)?;
        if !(1..=8).contains(&f.plane_id) {
            return Err(Error::Format(format!("{}: plane_id {} not in 1..8", path.display(), f.plane_id)));
        }
        if matches!(f.vessel, Branch::Bif) {
            return Err(Error::Format(format!("{}: vessel must be CCA, ICA or ECA", path.display())));
        }
        let pose = PlanePose {
            center: f.pose.center.into(),
            axis_u: f.pose.axis_u.into(),
            axis_v: f.pose.axis_v.into(),
            normal: f.pose.normal.into(),
        };
        if !pose.is_orthonormal(1e-6) {
            return Err(Error::Format(format!("{}: pose axes are not orthonormal", path.display())));
        }
        let contours = ContourSet {
            pose,
            lumen: vec![Contour2D::new(f.inner, ContourKind::LumenBoundary)?],
            outer: vec![Contour2D::new(f.outer, ContourKind::OuterWallBoundary)?],
        };
        Ok(Self {
            plane_id: f.plane_id,
            vessel: f.vessel,
            size: (f.size[0], f.size[1]),
            spacing: f.spacing_mm,
            contours,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let p = &self.contours.pose;
        let first = |cs: &[Contour2D]| -> Result<Vec<[f64; 2]>> {
            cs.first()
                .map(|c| c.vertices().to_vec())
                .ok_or_else(|| Error::InvalidArgument("annotation needs inner and outer contours".into()))
        };
        let f = AnnotationFile {
            plane_id: self.plane_id,
            vessel: self.vessel,
            pose: PoseFile {
                center: p.center.into(),
                axis_u: p.axis_u.into(),
                axis_v: p.axis_v.into(),
                normal: p.normal.into(),
            },
            spacing_mm: self.spacing,
            size: [self.size.0, self.size.1],
            inner: first(&self.contours.lumen)?,
            outer: first(&self.contours.outer)?,
        };
        crate::io::write_json(path, &f)
    }

    /// Expert labels on the annotation grid.
    pub fn rasterize(&self) -> LabelMask2D {
        self.contours.rasterize(self.size, self.spacing)
    }
}

/// Load every `*.json` annotation in a directory, sorted by file name.
pub fn load_annotations(dir: &Path) -> Result<Vec<(String, Annotation)>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let id = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            Annotation::load(&p).map(|a| (id, a))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pose() -> PlanePose {
        PlanePose::from_normal(Vec3::zeros(), Vec3::z(), Vec3::x()).unwrap()
    }

    /// Analytic annuli rasterized at pixel centres: (cu, cv, r_lumen, r_outer).
    pub(crate) fn annuli_mask(size: usize, spacing: f64, rings: &[(f64, f64, f64, f64)]) -> LabelMask2D {
        let mut labels = vec![BACKGROUND; size * size];
        for j in 0..size {
            for i in 0..size {
                let (u, v) = pixel_to_uv(i as f64, j as f64, (size, size), spacing);
                for &(cu, cv, rl, ro) in rings {
                    let r = (u - cu).hypot(v - cv);
                    if r <= rl {
                        labels[j * size + i] = LUMEN;
                    } else if r <= ro && labels[j * size + i] != LUMEN {
                        labels[j * size + i] = WALL;
                    }
                }
            }
        }
        LabelMask2D::new(pose(), (size, size), spacing, labels).unwrap()
    }

    #[test]
    fn annulus_contours_match_circles() {
        let m = annuli_mask(48, 0.3, &[(0.0, 0.0, 3.0, 5.0)]);
        let set = mask_to_contours(&m);
        assert_eq!(set.lumen.len(), 1);
        assert_eq!(set.outer.len(), 1);
        for (c, r) in [(&set.lumen[0], 3.0), (&set.outer[0], 5.0)] {
            assert!(c.area() > 0.0);
            assert!(c.is_simple());
            for v in c.vertices() {
                assert!((v[0].hypot(v[1]) - r).abs() <= 0.3, "vertex {v:?} vs r {r}");
            }
        }
        assert!(set.lumen_nested());
    }

    #[test]
    fn empty_mask_has_no_contours() {
        let m = LabelMask2D::empty(pose(), (10, 10), 0.3);
        assert!(mask_to_contours(&m).is_empty());
    }

    #[test]
    fn two_disjoint_annuli() {
        let m = annuli_mask(80, 0.3, &[(-5.0, 0.0, 2.0, 3.0), (5.5, 0.0, 1.5, 2.5)]);
        let set = mask_to_contours(&m);
        assert_eq!((set.lumen.len(), set.outer.len()), (2, 2));
    }

    #[test]
    fn speckle_is_dropped() {
        let mut labels = vec![BACKGROUND; 100];
        labels[55] = LUMEN;
        let m = LabelMask2D::new(pose(), (10, 10), 0.3, labels).unwrap();
        assert!(mask_to_contours(&m).is_empty());
        assert_eq!(mask_to_contours_with(&m, 0.0).lumen.len(), 1);
    }

    #[test]
    fn diagonal_pixels_stay_separate() {
        let mut labels = vec![BACKGROUND; 16];
        labels[5] = LUMEN;
        labels[10] = LUMEN;
        let m = LabelMask2D::new(pose(), (4, 4), 1.0, labels).unwrap();
        assert_eq!(mask_to_contours_with(&m, 0.0).lumen.len(), 2);
    }

    #[test]
    fn merge_rules() {
        let a = annuli_mask(40, 0.3, &[(-2.0, 0.0, 1.5, 2.5)]);
        let b = annuli_mask(40, 0.3, &[(2.0, 0.0, 1.5, 2.5)]);
        let m = merge_wall_regions(&a, &b).unwrap();
        // Lumen wins: a's wall over b's lumen becomes lumen.
        for p in 0..m.labels().len() {
            if b.labels()[p] == LUMEN {
                assert_eq!(m.labels()[p], LUMEN);
            }
        }
        let union = a.labels().iter().zip(b.labels()).filter(|(x, y)| **x == LUMEN || **y == LUMEN).count();
        assert_eq!(m.count(LUMEN), union);
        assert_eq!(m, merge_wall_regions(&b, &a).unwrap());
        assert_eq!(merge_wall_regions(&a, &a).unwrap(), a);

        let other = LabelMask2D::empty(pose(), (41, 40), 0.3);
        assert!(merge_wall_regions(&a, &other).is_err());
    }

    #[test]
    fn overlapping_annuli_merge_outer_contours() {
        let a = annuli_mask(60, 0.3, &[(-2.2, 0.0, 1.5, 2.6)]);
        let b = annuli_mask(60, 0.3, &[(2.2, 0.0, 1.5, 2.6)]);
        let before_outer = mask_to_contours(&a).outer.len() + mask_to_contours(&b).outer.len();
        let set = mask_to_contours(&merge_wall_regions(&a, &b).unwrap());
        assert_eq!(before_outer, 2);
        assert_eq!(set.outer.len(), 1);
        assert_eq!(set.lumen.len(), 2);
    }

    #[test]
    fn lift_unit_circle() {
        let verts: Vec<[f64; 2]> = (0..64)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / 64.0;
                [a.cos(), a.sin()]
            })
            .collect();
        let set = ContourSet {
            pose: pose(),
            lumen: vec![Contour2D::new(verts, ContourKind::LumenBoundary).unwrap()],
            outer: vec![],
        };
        let (lumen, outer) = lift_and_sample(&set, 0.1, 0.6, None).unwrap();
        assert!(outer.is_empty());
        assert!(lumen.len() >= 60);
        for (p, n) in lumen.points.iter().zip(&lumen.normals) {
            assert!(p.z.abs() < 1e-12);
            assert!((p.norm() - 1.0).abs() < 2e-3);
            assert!(n.dot(&Vec3::z()).abs() <= 1e-9);
            assert!(n.dot(&p.normalize()) > 0.99);
        }
        // Step longer than the perimeter still yields a triangle.
        let (coarse, _) = lift_and_sample(&set, 100.0, 0.6, None).unwrap();
        assert_eq!(coarse.len(), 3);
        // Caps add samples along the plane normal.
        let (capped, _) = lift_and_sample(&set, 0.1, 0.6, Some(CapSide::Negative)).unwrap();
        assert!(capped.normals.iter().any(|n| (n + Vec3::z()).norm() < 1e-12));
    }

    #[test]
    fn rasterize_round_trip_area() {
        let m = annuli_mask(60, 0.25, &[(0.3, -0.2, 3.0, 5.0)]);
        let set = mask_to_contours(&m);
        let again = set.rasterize(m.size(), m.spacing());
        let area = |mask: &LabelMask2D, l: u8| mask.count(l) as f64 * 0.25 * 0.25;
        for l in [LUMEN, WALL] {
            let perim = 2.0 * std::f64::consts::PI * 8.0;
            assert!((area(&m, l) - area(&again, l)).abs() <= 2.0 * 0.25 * perim);
        }
    }
}
