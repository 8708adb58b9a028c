//! Evaluation on sparse 2D expert cross-sections: plane post-processing,
//! contour distances, Dice, failed-slice detection and table aggregation.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::centerline::Branch;
use crate::contours::{mask_to_contours, Annotation, Contour2D, ContourSet};
use crate::error::{Error, Result};
use crate::grid2d::{distance_transform_sq, label_components, neighbors, Connectivity};
use crate::segmenter::{LabelMask2D, BACKGROUND, LUMEN, WALL};
use crate::volume::pixel_to_uv;

pub const DEFAULT_SAMPLE_STEP: f64 = 0.05;
pub const DEFAULT_FAILED_RADIUS: f64 = 5.0;

/// Keep only the vessel whose lumen centroid is nearest `center` (plane
/// mm coordinates):
/// - other lumen components become background,
/// - wall components touching only other lumens become background,
/// - remaining wall pixels at least as close to another lumen as to the
///   centre lumen become background.
///
/// Masks with at most one lumen component are returned unchanged.
pub fn postprocess_eval_plane(pred: &LabelMask2D, center: (f64, f64)) -> LabelMask2D {
    let (nu, nv) = pred.size();
    let lumen = pred.indicator(LUMEN);
    let (ids, count) = label_components(&lumen, nu, nv, Connectivity::Four);
    if count <= 1 {
        return pred.clone();
    }
    let keep = center_component(&ids, count, pred, center);

    let mut labels = pred.labels().to_vec();
    let center_lumen: Vec<bool> = ids.iter().map(|&id| id == keep).collect();
    let far_lumen: Vec<bool> = ids.iter().map(|&id| id != 0 && id != keep).collect();
    for (l, &far) in labels.iter_mut().zip(&far_lumen) {
        if far {
            *l = BACKGROUND;
        }
    }

    let wall = pred.indicator(WALL);
    let (wids, wcount) = label_components(&wall, nu, nv, Connectivity::Eight);
    let mut touches_center = vec![false; wcount + 1];
    let mut touches_far = vec![false; wcount + 1];
    for p in 0..labels.len() {
        if wids[p] == 0 {
            continue;
        }
        for q in neighbors(p, nu, nv, Connectivity::Eight) {
            touches_center[wids[p] as usize] |= center_lumen[q];
            touches_far[wids[p] as usize] |= far_lumen[q];
        }
    }
    let d_center = distance_transform_sq(&center_lumen, nu, nv);
    let d_far = distance_transform_sq(&far_lumen, nu, nv);
    for p in 0..labels.len() {
        let w = wids[p] as usize;
        if w == 0 {
            continue;
        }
        if (touches_far[w] && !touches_center[w]) || d_far[p] <= d_center[p] {
            labels[p] = BACKGROUND;
        }
    }
    LabelMask2D::new(*pred.pose(), pred.size(), pred.spacing(), labels).expect("labels in range")
}

fn center_component(ids: &[u32], count: usize, mask: &LabelMask2D, center: (f64, f64)) -> u32 {
    let mut sums = vec![(0.0, 0.0, 0usize); count + 1];
    let nu = mask.size().0;
    for (p, &id) in ids.iter().enumerate() {
        if id != 0 {
            let (u, v) = pixel_to_uv((p % nu) as f64, (p / nu) as f64, mask.size(), mask.spacing());
            let s = &mut sums[id as usize];
            s.0 += u;
            s.1 += v;
            s.2 += 1;
        }
    }
    (1..=count)
        .min_by(|&a, &b| {
            let d = |k: usize| {
                let (su, sv, n) = sums[k];
                (su / n as f64 - center.0).hypot(sv / n as f64 - center.1)
            };
            d(a).total_cmp(&d(b)).then(a.cmp(&b))
        })
        .expect("count > 0") as u32
}

/// `2|a ∩ b| / (|a| + |b|)`, 1 when both are empty.
pub fn dsc(a: &[bool], b: &[bool]) -> f64 {
    assert_eq!(a.len(), b.len(), "dsc on different grids");
    let (mut inter, mut total) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        inter += usize::from(x && y);
        total += usize::from(x) + usize::from(y);
    }
    if total == 0 {
        1.0
    } else {
        2.0 * inter as f64 / total as f64
    }
}

fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p[0] - a[0] - t * dx).hypot(p[1] - a[1] - t * dy)
}

/// Distance from a point to the nearest edge of any contour.
pub fn point_to_contours(p: [f64; 2], contours: &[Contour2D]) -> f64 {
    contours
        .iter()
        .flat_map(|c| c.edges())
        .map(|(a, b)| point_segment_distance(p, a, b))
        .fold(f64::INFINITY, f64::min)
}

/// Uniform bucket grid over contour edges for nearest-edge queries.
struct SegmentIndex {
    segments: Vec<([f64; 2], [f64; 2])>,
    origin: [f64; 2],
    cell: f64,
    dims: [usize; 2],
    buckets: Vec<Vec<u32>>,
}

impl SegmentIndex {
    fn new(contours: &[Contour2D]) -> Self {
        let segments: Vec<_> = contours.iter().flat_map(|c| c.edges()).collect();
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        let mut total = 0.0;
        for (a, b) in &segments {
            for q in [a, b] {
                for d in 0..2 {
                    lo[d] = lo[d].min(q[d]);
                    hi[d] = hi[d].max(q[d]);
                }
            }
            total += (b[0] - a[0]).hypot(b[1] - a[1]);
        }
        let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-9);
        let cell = (2.0 * total / segments.len() as f64).max(extent / 64.0);
        let dims = [0, 1].map(|d| (((hi[d] - lo[d]) / cell).floor() as usize + 1).min(1024));
        let mut buckets = vec![Vec::new(); dims[0] * dims[1]];
        let mut index = Self { segments, origin: lo, cell, dims, buckets: Vec::new() };
        for (k, (a, b)) in index.segments.iter().enumerate() {
            let (i0, j0) = index.cell_of([a[0].min(b[0]), a[1].min(b[1])]);
            let (i1, j1) = index.cell_of([a[0].max(b[0]), a[1].max(b[1])]);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    buckets[j * dims[0] + i].push(k as u32);
                }
            }
        }
        index.buckets = buckets;
        index
    }

    fn cell_of(&self, p: [f64; 2]) -> (usize, usize) {
        let c = |d: usize| (((p[d] - self.origin[d]) / self.cell).floor().max(0.0) as usize).min(self.dims[d] - 1);
        (c(0), c(1))
    }

    fn distance(&self, p: [f64; 2]) -> f64 {
        let (ci, cj) = self.cell_of(p);
        let mut best = f64::INFINITY;
        for r in 0.. {
            let (i0, i1) = (ci.saturating_sub(r), (ci + r).min(self.dims[0] - 1));
            let (j0, j1) = (cj.saturating_sub(r), (cj + r).min(self.dims[1] - 1));
            for j in j0..=j1 {
                for i in i0..=i1 {
                    if i != i0 && i != i1 && j != j0 && j != j1 {
                        continue;
                    }
                    for &k in &self.buckets[j * self.dims[0] + i] {
                        let (a, b) = self.segments[k as usize];
                        best = best.min(point_segment_distance(p, a, b));
                    }
                }
            }
            let covered = i0 == 0 && j0 == 0 && i1 == self.dims[0] - 1 && j1 == self.dims[1] - 1;
            // Anything not yet visited lies outside the examined square.
            let reach = [
                p[0] - (self.origin[0] + i0 as f64 * self.cell),
                self.origin[0] + (i1 + 1) as f64 * self.cell - p[0],
                p[1] - (self.origin[1] + j0 as f64 * self.cell),
                self.origin[1] + (j1 + 1) as f64 * self.cell - p[1],
            ];
            let open = [i0 > 0, i1 + 1 < self.dims[0], j0 > 0, j1 + 1 < self.dims[1]];
            let margin = reach.iter().zip(open).filter(|(_, o)| *o).map(|(&m, _)| m).fold(f64::INFINITY, f64::min);
            if covered || best <= margin {
                break;
            }
        }
        best
    }
}

fn check_nonempty(a: &[Contour2D], b: &[Contour2D]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("contour distance needs non-empty contour lists".into()));
    }
    Ok(())
}

fn check_step(step: f64) -> Result<()> {
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("sample step must be > 0, got {step}")));
    }
    Ok(())
}

/// Arc-length samples along every contour, about `step` apart (at least 3
/// per contour), with the spacing actually used.
fn samples(contours: &[Contour2D], step: f64) -> Vec<(Vec<[f64; 2]>, f64)> {
    contours
        .iter()
        .map(|c| {
            let perimeter = c.perimeter();
            let n = ((perimeter / step).ceil() as usize).max(3);
            let ds = perimeter / n as f64;
            (c.resample_count(n), ds)
        })
        .collect()
}

/// Arc-length parametrization with O(log n) lookup.
struct ArcParam {
    vertices: Vec<[f64; 2]>,
    cumulative: Vec<f64>,
}

impl ArcParam {
    fn new(c: &Contour2D) -> Self {
        let mut vertices = c.vertices().to_vec();
        vertices.push(vertices[0]);
        let mut cumulative = vec![0.0];
        for w in vertices.windows(2) {
            let last = *cumulative.last().expect("non-empty");
            cumulative.push(last + (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]));
        }
        Self { vertices, cumulative }
    }

    fn at(&self, s: f64) -> [f64; 2] {
        let total = *self.cumulative.last().expect("non-empty");
        let s = s.rem_euclid(total);
        let k = self.cumulative.partition_point(|&c| c <= s).clamp(1, self.vertices.len() - 1);
        let (a, b) = (self.vertices[k - 1], self.vertices[k]);
        let len = self.cumulative[k] - self.cumulative[k - 1];
        let f = if len > 0.0 { (s - self.cumulative[k - 1]) / len } else { 0.0 };
        [a[0] + (b[0] - a[0]) * f, a[1] + (b[1] - a[1]) * f]
    }
}

fn directed_mean(a: &[Contour2D], b: &SegmentIndex, step: f64) -> f64 {
    let (mut sum, mut count) = (0.0, 0usize);
    for (pts, _) in samples(a, step) {
        for p in pts {
            sum += b.distance(p);
            count += 1;
        }
    }
    sum / count as f64
}

/// Absolute accuracy of the refined Hausdorff maximum (mm).
const HD_TOLERANCE: f64 = 1e-3;

/// Directed maximum. Distance to `b` is 1-Lipschitz in arc length along
/// `a`, so the maximum over an arc with end values d0, d1 and length l is
/// at most (d0 + d1 + l) / 2; arcs whose bound beats the running best are
/// bisected.
fn directed_max(a: &[Contour2D], b: &SegmentIndex, step: f64) -> f64 {
    let sets = samples(a, step);
    let coarse: Vec<Vec<f64>> = sets.iter().map(|(pts, _)| pts.iter().map(|&p| b.distance(p)).collect()).collect();
    let mut best = coarse.iter().flatten().copied().fold(0.0, f64::max);
    for (c, ((_, ds), dist)) in a.iter().zip(sets.iter().zip(&coarse)) {
        let n = dist.len();
        let arc = ArcParam::new(c);
        let mut stack: Vec<(f64, f64, f64, f64)> =
            (0..n).map(|k| (k as f64 * ds, dist[k], (k + 1) as f64 * ds, dist[(k + 1) % n])).collect();
        while let Some((s0, d0, s1, d1)) = stack.pop() {
            if 0.5 * (d0 + d1 + (s1 - s0)) <= best + HD_TOLERANCE {
                continue;
            }
            let sm = 0.5 * (s0 + s1);
            let dm = b.distance(arc.at(sm));
            best = best.max(dm);
            stack.push((s0, d0, sm, dm));
            stack.push((sm, dm, s1, d1));
        }
    }
    best
}

/// Symmetric average contour distance (mm).
pub fn acd(a: &[Contour2D], b: &[Contour2D], sample_step: f64) -> Result<f64> {
    check_nonempty(a, b)?;
    check_step(sample_step)?;
    let (ia, ib) = (SegmentIndex::new(a), SegmentIndex::new(b));
    Ok(0.5 * (directed_mean(a, &ib, sample_step) + directed_mean(b, &ia, sample_step)))
}

/// Symmetric Hausdorff distance (mm).
pub fn hausdorff(a: &[Contour2D], b: &[Contour2D], sample_step: f64) -> Result<f64> {
    check_nonempty(a, b)?;
    check_step(sample_step)?;
    let (ia, ib) = (SegmentIndex::new(a), SegmentIndex::new(b));
    Ok(directed_max(a, &ib, sample_step).max(directed_max(b, &ia, sample_step)))
}

/// No lumen pixel within `radius` mm of `center` after post-processing.
pub fn detect_failed(pred: &LabelMask2D, center: (f64, f64), radius: f64) -> bool {
    let post = postprocess_eval_plane(pred, center);
    let (nu, _) = post.size();
    !post.labels().iter().enumerate().any(|(p, &l)| {
        if l != LUMEN {
            return false;
        }
        let (u, v) = pixel_to_uv((p % nu) as f64, (p / nu) as f64, post.size(), post.spacing());
        (u - center.0).hypot(v - center.1) <= radius
    })
}

/// One predicted cross-section against its expert annotation.
#[derive(Debug, Clone)]
pub struct EvalCase {
    pub case_id: String,
    pub plane_id: u8,
    pub vessel: Branch,
    pub pred: LabelMask2D,
    pub expert: ContourSet,
    pub expert_mask: LabelMask2D,
}

impl EvalCase {
    pub fn new(case_id: impl Into<String>, pred: LabelMask2D, annotation: &Annotation) -> Result<Self> {
        let expert_mask = annotation.rasterize();
        if !pred.same_geometry(&expert_mask) {
            return Err(Error::Geometry("prediction and annotation grids differ".into()));
        }
        Ok(Self {
            case_id: case_id.into(),
            plane_id: annotation.plane_id,
            vessel: annotation.vessel,
            pred,
            expert: annotation.contours.clone(),
            expert_mask,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructureMetrics {
    pub acd: f64,
    pub hd: f64,
    pub dsc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub case_id: String,
    pub plane_id: u8,
    pub vessel: Branch,
    pub lumen: Option<StructureMetrics>,
    pub wall: Option<StructureMetrics>,
    pub failed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalParams {
    pub failed_radius: f64,
    pub sample_step: f64,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            failed_radius: DEFAULT_FAILED_RADIUS,
            sample_step: DEFAULT_SAMPLE_STEP,
        }
    }
}

/// Post-process, check for failure, then Dice on label masks and contour
/// distances on the lumen boundary (lumen) and the outer wall boundary
/// (wall). A plane whose prediction yields no contour for a structure is
/// counted as failed.
pub fn evaluate_case(case: &EvalCase, params: &EvalParams) -> Result<MetricsRecord> {
    let failed_record = || MetricsRecord {
        case_id: case.case_id.clone(),
        plane_id: case.plane_id,
        vessel: case.vessel,
        lumen: None,
        wall: None,
        failed: true,
    };
    let center = (0.0, 0.0);
    let post = postprocess_eval_plane(&case.pred, center);
    if detect_failed(&post, center, params.failed_radius) {
        return Ok(failed_record());
    }
    let pred_set = mask_to_contours(&post);
    if pred_set.lumen.is_empty() || pred_set.outer.is_empty() || case.expert.lumen.is_empty() || case.expert.outer.is_empty() {
        return Ok(failed_record());
    }
    let step = params.sample_step;
    let structure = |label: u8, p: &[Contour2D], e: &[Contour2D]| -> Result<StructureMetrics> {
        Ok(StructureMetrics {
            acd: acd(p, e, step)?,
            hd: hausdorff(p, e, step)?,
            dsc: dsc(&post.indicator(label), &case.expert_mask.indicator(label)),
        })
    };
    Ok(MetricsRecord {
        case_id: case.case_id.clone(),
        plane_id: case.plane_id,
        vessel: case.vessel,
        lumen: Some(structure(LUMEN, &pred_set.lumen, &case.expert.lumen)?),
        wall: Some(structure(WALL, &pred_set.outer, &case.expert.outer)?),
        failed: false,
    })
}

/// Means (and medians) over non-failed records of one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub key: String,
    pub lumen_mean: [f64; 3],
    pub wall_mean: [f64; 3],
    pub lumen_median: [f64; 3],
    pub wall_median: [f64; 3],
    pub failed: usize,
    pub total: usize,
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// One row over all `records`; means ignore failed records.
pub fn aggregate_row<'a>(key: impl Into<String>, records: impl IntoIterator<Item = &'a MetricsRecord>) -> AggregateRow {
    let mut cols: [Vec<f64>; 6] = Default::default();
    let (mut failed, mut total) = (0, 0);
    for r in records {
        total += 1;
        match (&r.lumen, &r.wall) {
            (Some(l), Some(w)) if !r.failed => {
                for (k, v) in [l.acd, l.hd, l.dsc, w.acd, w.hd, w.dsc].into_iter().enumerate() {
                    cols[k].push(v);
                }
            }
            _ => failed += 1,
        }
    }
    let mean = |v: &Vec<f64>| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
    let means: Vec<f64> = cols.iter().map(mean).collect();
    let medians: Vec<f64> = cols.iter_mut().map(|c| median(c)).collect();
    AggregateRow {
        key: key.into(),
        lumen_mean: [means[0], means[1], means[2]],
        wall_mean: [means[3], means[4], means[5]],
        lumen_median: [medians[0], medians[1], medians[2]],
        wall_median: [medians[3], medians[4], medians[5]],
        failed,
        total,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupBy {
    Plane,
    Dataset,
    Config,
}

/// Plane rows `Plane 1` .. `Plane 8` followed by `All planes`.
pub fn aggregate_by_plane(records: &[MetricsRecord]) -> Vec<AggregateRow> {
    let mut rows: Vec<AggregateRow> = (1..=8u8)
        .map(|p| aggregate_row(format!("Plane {p}"), records.iter().filter(|r| r.plane_id == p)))
        .collect();
    rows.push(aggregate_row("All planes", records));
    rows
}

/// One row per named group, in the given order.
pub fn aggregate_groups(groups: &[(String, Vec<MetricsRecord>)]) -> Vec<AggregateRow> {
    groups.iter().map(|(k, recs)| aggregate_row(k.clone(), recs)).collect()
}

pub const METRIC_COLUMNS: [&str; 7] = [
    "Lumen mu(ACD)",
    "Lumen mu(HD)",
    "Lumen mu(DSC)",
    "Wall mu(ACD)",
    "Wall mu(HD)",
    "Wall mu(DSC)",
    "Failed Slices/Num Slices",
];

fn fmt3(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.3}")
    } else {
        String::new()
    }
}

fn metric_cells(r: &AggregateRow) -> Vec<String> {
    let mut cells: Vec<String> = r.lumen_mean.iter().chain(&r.wall_mean).map(|&v| fmt3(v)).collect();
    cells.push(format!("{}/{}", r.failed, r.total));
    cells
}

fn write_csv(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    crate::io::write_atomic(path, &bytes)
}

fn header_with(prefix: &[&'static str]) -> Vec<&'static str> {
    prefix.iter().copied().chain(METRIC_COLUMNS).collect()
}

/// Per-plane table: `Plane` then the metric columns.
pub fn write_plane_table(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    write_keyed_table(path, "Plane", rows)
}

/// Per-dataset table: `Dataset` then the metric columns.
pub fn write_dataset_table(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    write_keyed_table(path, "Dataset", rows)
}

fn write_keyed_table(path: &Path, key: &'static str, rows: &[AggregateRow]) -> Result<()> {
    write_csv(
        path,
        &header_with(&[key]),
        rows.iter().map(|r| std::iter::once(r.key.clone()).chain(metric_cells(r)).collect()),
    )
}

/// One configuration of the sampling ablation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub sd: f64,
    pub ba: bool,
    pub metrics: AggregateRow,
}

pub fn ablation_header() -> Vec<&'static str> {
    header_with(&["SD", "BA"])
}

pub fn write_ablation_table(path: &Path, rows: &[AblationRow]) -> Result<()> {
    write_csv(
        path,
        &ablation_header(),
        rows.iter().map(|r| {
            [format!("{}", r.sd), if r.ba { "yes".into() } else { "no".into() }]
                .into_iter()
                .chain(metric_cells(&r.metrics))
                .collect()
        }),
    )
}

fn parse_cell(s: &str, what: &str) -> Result<f64> {
    if s.trim().is_empty() {
        return Ok(f64::NAN);
    }
    s.trim().parse().map_err(|_| Error::Format(format!("bad {what} value {s:?}")))
}

fn parse_failed(s: &str) -> Result<(usize, usize)> {
    let (f, t) = s
        .split_once('/')
        .ok_or_else(|| Error::Format(format!("bad failed-slices cell {s:?}")))?;
    let parse = |x: &str| x.trim().parse::<usize>().map_err(|_| Error::Format(format!("bad failed-slices cell {s:?}")));
    Ok((parse(f)?, parse(t)?))
}

/// Read a table written by [`write_ablation_table`] (or transcribed in the
/// same layout).
pub fn read_ablation_table(path: &Path) -> Result<Vec<AblationRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != ablation_header() {
        return Err(Error::Format(format!("{}: unexpected header {header:?}", path.display())));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let sd = parse_cell(&rec[0], "SD")?;
        let ba = match rec[1].trim() {
            "yes" => true,
            "no" => false,
            other => return Err(Error::Format(format!("bad BA value {other:?}"))),
        };
        let v: Vec<f64> = (2..8).map(|k| parse_cell(&rec[k], METRIC_COLUMNS[k - 2])).collect::<Result<_>>()?;
        let (failed, total) = parse_failed(&rec[8])?;
        rows.push(AblationRow {
            sd,
            ba,
            metrics: AggregateRow {
                key: format!("{sd}/{}", &rec[1]),
                lumen_mean: [v[0], v[1], v[2]],
                wall_mean: [v[3], v[4], v[5]],
                lumen_median: [f64::NAN; 3],
                wall_median: [f64::NAN; 3],
                failed,
                total,
            },
        });
    }
    Ok(rows)
}

/// Model-selection order: lower failed fraction first, then lower mean
/// wall HD.
pub fn selection_order(a: &AggregateRow, b: &AggregateRow) -> std::cmp::Ordering {
    let frac = |r: &AggregateRow| if r.total == 0 { 1.0 } else { r.failed as f64 / r.total as f64 };
    frac(a)
        .total_cmp(&frac(b))
        .then_with(|| a.wall_mean[1].total_cmp(&b.wall_mean[1]))
}

/// First row that is minimal under [`selection_order`].
pub fn select_model(rows: &[AblationRow]) -> Option<&AblationRow> {
    rows.iter().reduce(|best, r| {
        if selection_order(&r.metrics, &best.metrics) == std::cmp::Ordering::Less {
            r
        } else {
            best
        }
    })
}

pub const CASE_COLUMNS: [&str; 10] = [
    "case_id", "plane_id", "vessel", "lumen_acd", "lumen_hd", "lumen_dsc", "wall_acd", "wall_hd", "wall_dsc", "failed",
];

fn fmt_full(v: f64) -> String {
    format!("{v:.6}")
}

pub fn write_case_csv(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    write_csv(
        path,
        &CASE_COLUMNS,
        records.iter().map(|r| {
            let mut row = vec![r.case_id.clone(), r.plane_id.to_string(), r.vessel.to_string()];
            for s in [&r.lumen, &r.wall] {
                match s {
                    Some(m) => row.extend([fmt_full(m.acd), fmt_full(m.hd), fmt_full(m.dsc)]),
                    None => row.extend([String::new(), String::new(), String::new()]),
                }
            }
            row.push(r.failed.to_string());
            row
        }),
    )
}

pub fn read_case_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CASE_COLUMNS {
        return Err(Error::Format(format!("{}: unexpected header {header:?}", path.display())));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let failed = match &rec[9] {
            "true" => true,
            "false" => false,
            other => return Err(Error::Format(format!("bad failed flag {other:?}"))),
        };
        let plane_id = rec[1].parse().map_err(|_| Error::Format(format!("bad plane_id {:?}", &rec[1])))?;
        let vessel: Branch = rec[2].parse()?;
        let structure = |k: usize| -> Result<Option<StructureMetrics>> {
            if rec[k].is_empty() {
                return Ok(None);
            }
            Ok(Some(StructureMetrics {
                acd: parse_cell(&rec[k], "acd")?,
                hd: parse_cell(&rec[k + 1], "hd")?,
                dsc: parse_cell(&rec[k + 2], "dsc")?,
            }))
        };
        out.push(MetricsRecord {
            case_id: rec[0].to_string(),
            plane_id,
            vessel,
            lumen: structure(3)?,
            wall: structure(6)?,
            failed,
        });
    }
    Ok(out)
}

/// Per-case CSVs grouped by file stem, sorted by name.
pub fn read_case_dir(dir: &Path) -> Result<BTreeMap<String, Vec<MetricsRecord>>> {
    let mut out = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for e in entries {
        let p = e.map_err(|e| Error::io(dir, e))?.path();
        if p.extension().is_some_and(|x| x == "csv") {
            let name = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            out.insert(name, read_case_csv(&p)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contours::ContourKind;
    use crate::volume::PlanePose;
    use crate::Vec3;

    fn pose() -> PlanePose {
        PlanePose::from_normal(Vec3::zeros(), Vec3::z(), Vec3::x()).unwrap()
    }

    fn circle(r: f64, n: usize) -> Contour2D {
        let pts = (0..n)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                [r * a.cos(), r * a.sin()]
            })
            .collect();
        Contour2D::new(pts, ContourKind::LumenBoundary).unwrap()
    }

    fn square(x0: f64, y0: f64, s: f64) -> Contour2D {
        Contour2D::new(vec![[x0, y0], [x0 + s, y0], [x0 + s, y0 + s], [x0, y0 + s]], ContourKind::LumenBoundary).unwrap()
    }

    #[test]
    fn dsc_cases() {
        assert_eq!(dsc(&[true, true, false], &[true, true, false]), 1.0);
        assert_eq!(dsc(&[true, false], &[false, true]), 0.0);
        assert_eq!(dsc(&[false; 4], &[false; 4]), 1.0);
        // 2x1 rectangle vs the same shifted by one pixel.
        assert_eq!(dsc(&[true, true, false], &[false, true, true]), 0.5);
    }

    #[test]
    fn concentric_circle_distances() {
        let a = [circle(5.0, 2048)];
        let b = [circle(6.0, 2048)];
        assert!((acd(&a, &b, 0.05).unwrap() - 1.0).abs() < 0.01);
        assert!((hausdorff(&a, &b, 0.05).unwrap() - 1.0).abs() < 0.01);
        assert!(acd(&a, &a, 0.05).unwrap().abs() < 1e-9);
        assert!(hausdorff(&a, &a, 0.05).unwrap().abs() < 1e-9);
    }

    #[test]
    fn shifted_square_hd() {
        // Directed max from the shifted square: its right edge is 0.5 off.
        let a = [square(0.0, 0.0, 1.0)];
        let b = [square(0.5, 0.0, 1.0)];
        assert!((hausdorff(&a, &b, 0.05).unwrap() - 0.5).abs() < 1e-9);
        assert!(acd(&a, &b, 0.05).unwrap() <= hausdorff(&a, &b, 0.05).unwrap());
        assert!(acd(&[], &b, 0.05).is_err());
    }

    fn mask_from(size: usize, spacing: f64, f: impl Fn(f64, f64) -> u8) -> LabelMask2D {
        let mut labels = Vec::new();
        for j in 0..size {
            for i in 0..size {
                let (u, v) = pixel_to_uv(i as f64, j as f64, (size, size), spacing);
                labels.push(f(u, v));
            }
        }
        LabelMask2D::new(pose(), (size, size), spacing, labels).unwrap()
    }

    fn ring(u: f64, v: f64, cu: f64, cv: f64, rl: f64, ro: f64) -> Option<u8> {
        let r = (u - cu).hypot(v - cv);
        if r <= rl {
            Some(LUMEN)
        } else if r <= ro {
            Some(WALL)
        } else {
            None
        }
    }

    #[test]
    fn single_annulus_unchanged() {
        let m = mask_from(60, 0.3, |u, v| ring(u, v, 0.0, 0.0, 3.0, 5.0).unwrap_or(BACKGROUND));
        assert_eq!(postprocess_eval_plane(&m, (0.0, 0.0)), m);
        assert!(!detect_failed(&m, (0.0, 0.0), 5.0));
    }

    #[test]
    fn far_annulus_removed() {
        let m = mask_from(80, 0.3, |u, v| {
            ring(u, v, 0.0, 0.0, 2.5, 3.5)
                .or_else(|| ring(u, v, 8.0, 0.0, 2.0, 3.0))
                .unwrap_or(BACKGROUND)
        });
        let out = postprocess_eval_plane(&m, (0.0, 0.0));
        let expect = mask_from(80, 0.3, |u, v| ring(u, v, 0.0, 0.0, 2.5, 3.5).unwrap_or(BACKGROUND));
        assert_eq!(out, expect);
        assert_eq!(postprocess_eval_plane(&out, (0.0, 0.0)), out);
    }

    #[test]
    fn failed_detection() {
        let empty = LabelMask2D::empty(pose(), (40, 40), 0.3);
        assert!(detect_failed(&empty, (0.0, 0.0), 5.0));
        let off = mask_from(80, 0.3, |u, v| ring(u, v, 8.0, 0.0, 1.5, 2.5).unwrap_or(BACKGROUND));
        assert!(detect_failed(&off, (0.0, 0.0), 5.0));
    }

    #[test]
    fn median_and_aggregate() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
        let rec = |plane: u8, v: f64, failed: bool| MetricsRecord {
            case_id: "c".into(),
            plane_id: plane,
            vessel: Branch::Ica,
            lumen: (!failed).then_some(StructureMetrics { acd: v, hd: 2.0 * v, dsc: 0.9 }),
            wall: (!failed).then_some(StructureMetrics { acd: v, hd: 3.0 * v, dsc: 0.8 }),
            failed,
        };
        let recs = vec![rec(1, 0.1, false), rec(1, 0.3, false), rec(2, 0.0, true)];
        let rows = aggregate_by_plane(&recs);
        assert_eq!(rows.len(), 9);
        assert_eq!(rows[8].key, "All planes");
        assert_eq!((rows[8].failed, rows[8].total), (1, 3));
        assert!((rows[8].lumen_mean[0] - 0.2).abs() < 1e-12);
        assert!(rows[1].lumen_mean[0].is_nan());
    }
}
