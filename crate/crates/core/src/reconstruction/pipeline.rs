//! End-to-end pseudo-label construction.

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

use super::mesh::{extract_isosurface, TriangleMesh};
use super::poisson::{poisson_indicator_on, GridSpec, PoissonParams};
use super::voxelize_solids;
use crate::centerline::{plan_cross_sections, Branch, CenterlineTree, PlanConfig, PlanEntry};
use crate::contours::{lift_and_sample, mask_to_contours_with, CapSide, ContourSet, OrientedPointCloud, Solid};
use crate::error::{Error, Result};
use crate::segmenter::{BifurcationRequest, LabelMask2D, SegmenterBackend, LUMEN};
use crate::volume::{uv_to_pixel, CrossSection, Volume3};
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub plan: PlanConfig,
    /// Grid spacing, margin and solver settings; `poisson.spacing` is the
    /// output voxel size.
    pub poisson: PoissonParams,
    pub section_size: (usize, usize),
    pub section_spacing: f64,
    /// Arc step for contour samples; defaults to `section_spacing`.
    pub contour_step: Option<f64>,
    pub min_area: f64,
    pub end_caps: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            plan: PlanConfig::default(),
            poisson: PoissonParams::default(),
            section_size: (80, 80),
            section_spacing: 0.3,
            contour_step: None,
            min_area: crate::contours::DEFAULT_MIN_AREA,
            end_caps: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum PlaneOutcome {
    Ok,
    /// The segmenter returned no lumen and no wall.
    Empty,
    /// The lumen covers where another vessel's centerline crosses the plane.
    ForeignLumen {
        #[serde(rename = "foreign_branch")]
        branch: Branch,
    },
    /// Labels present but every component was below the area threshold.
    NoContours,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneRecord {
    pub index: usize,
    pub branch: Branch,
    pub arc_s: f64,
    /// Within `bif_region` of the bifurcation point (always true for `Bif`).
    pub near_bifurcation: bool,
    #[serde(flatten)]
    pub outcome: PlaneOutcome,
}

impl PlaneRecord {
    pub fn failed(&self) -> bool {
        self.outcome != PlaneOutcome::Ok
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolidReport {
    pub samples: usize,
    pub iterations: usize,
    pub residual: f64,
}

/// Sidecar written next to every pseudo-label mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub version: String,
    pub sd: f64,
    pub use_bifurcation_axis: bool,
    pub bif_region: f64,
    pub branch_offset: f64,
    pub grid_spacing: f64,
    pub config: PipelineConfig,
    pub segmenter: SegmenterBackend,
    pub grid: GridSpec,
    pub planes: usize,
    pub failures: Vec<PlaneRecord>,
    pub lumen: SolidReport,
    pub outer: SolidReport,
}

#[derive(Debug, Clone)]
pub struct PseudoLabel {
    /// Labels {0, 1, 2} on the reconstruction grid.
    pub mask: Volume3,
    pub provenance: Provenance,
    pub planes: Vec<PlaneRecord>,
    pub contours: Vec<ContourSet>,
    pub lumen_mesh: TriangleMesh,
    pub outer_mesh: TriangleMesh,
}

impl PseudoLabel {
    pub fn failed_planes(&self) -> usize {
        self.planes.iter().filter(|p| p.failed()).count()
    }
}

/// Where each plan entry's masks live in the segmentation batch.
struct Job {
    entry: PlanEntry,
    first: usize,
    count: usize,
    bif: Option<BifurcationRequest>,
}

/// Sample, segment, contour, lift and reconstruct.
pub fn build_pseudolabel(
    volume: &Volume3,
    tree: &CenterlineTree,
    backend: &SegmenterBackend,
    cfg: &PipelineConfig,
) -> Result<PseudoLabel> {
    let plan = plan_cross_sections(tree, &cfg.plan)?;
    let size = cfg.section_size;
    let spacing = cfg.section_spacing;
    if size.0 < 2 || size.1 < 2 || !(spacing > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "cross-section size {size:?} / spacing {spacing} invalid"
        )));
    }
    let (lo, hi) = volume.world_bounds();
    let inside = |p: &Vec3| (0..3).all(|a| p[a] >= lo[a] && p[a] <= hi[a]);
    if !tree.cca.points().iter().chain(tree.ica.points()).chain(tree.eca.points()).all(inside) {
        warn!("centerline leaves the volume bounds");
    }

    // One batch for the whole artery.
    let half_fov = 0.5 * spacing * (size.0.max(size.1) - 1) as f64;
    let mut sections: Vec<CrossSection> = Vec::new();
    let mut jobs = Vec::with_capacity(plan.entries.len());
    for entry in &plan.entries {
        let first = sections.len();
        if entry.branch == Branch::Bif {
            let mut centers: Vec<Vec3> = Vec::new();
            for line in [&tree.cca, &tree.ica, &tree.eca] {
                let near = line
                    .intersect_plane(&entry.pose)
                    .into_iter()
                    .filter(|p| (p - entry.pose.center).norm() <= half_fov)
                    .min_by(|a, b| {
                        (a - entry.pose.center).norm().total_cmp(&(b - entry.pose.center).norm())
                    });
                if let Some(c) = near {
                    if centers.iter().all(|q| (q - c).norm() > 1e-6) {
                        centers.push(c);
                    }
                }
            }
            let opts: Vec<Option<Vec3>> = centers.into_iter().map(Some).collect();
            let req = BifurcationRequest::new(volume, &entry.pose, &opts, size, spacing)?;
            let count = req.sections.len();
            sections.extend(req.sections.iter().cloned());
            jobs.push(Job {
                entry: *entry,
                first,
                count,
                bif: Some(req),
            });
        } else {
            sections.push(volume.sample_plane(&entry.pose, size, spacing)?);
            jobs.push(Job {
                entry: *entry,
                first,
                count: 1,
                bif: None,
            });
        }
    }
    info!("segmenting {} cross-sections for {} planes", sections.len(), jobs.len());
    let masks = backend.segment_batch(&sections)?;

    let step = cfg.contour_step.unwrap_or(spacing);
    let cca_len = tree.cca.length();
    let mut records = Vec::with_capacity(jobs.len());
    let mut contour_sets = Vec::with_capacity(jobs.len());
    for (index, job) in jobs.iter().enumerate() {
        let e = &job.entry;
        let mask = match &job.bif {
            Some(req) => req.combine(&masks[job.first..job.first + job.count])?,
            None => masks[job.first].clone(),
        };
        let near_bifurcation = match e.branch {
            Branch::Bif => true,
            Branch::Cca => cca_len - e.arc_s <= cfg.plan.bif_region,
            Branch::Ica | Branch::Eca => e.arc_s <= cfg.plan.bif_region,
        };
        let mut outcome = if mask.is_empty() {
            PlaneOutcome::Empty
        } else if let Some(branch) = foreign_lumen(&mask, e, tree) {
            PlaneOutcome::ForeignLumen { branch }
        } else {
            PlaneOutcome::Ok
        };
        let mut set = ContourSet::empty(e.pose);
        if outcome == PlaneOutcome::Ok {
            set = mask_to_contours_with(&mask, cfg.min_area);
            if set.is_empty() {
                outcome = PlaneOutcome::NoContours;
            }
        }
        if outcome != PlaneOutcome::Ok {
            debug!("plane {index} ({} at {:.2} mm): {outcome:?}", e.branch, e.arc_s);
        }
        records.push(PlaneRecord {
            index,
            branch: e.branch,
            arc_s: e.arc_s,
            near_bifurcation,
            outcome,
        });
        contour_sets.push(set);
    }

    // Caps go on the outermost usable plane of each vessel end.
    let mut caps: Vec<(usize, CapSide)> = Vec::new();
    if cfg.end_caps {
        let usable = |b: Branch| records.iter().filter(move |r| r.branch == b && !r.failed()).map(|r| r.index);
        if let Some(i) = usable(Branch::Cca).min_by(|&a, &b| records[a].arc_s.total_cmp(&records[b].arc_s)) {
            caps.push((i, CapSide::Negative));
        }
        for b in [Branch::Ica, Branch::Eca] {
            if let Some(i) = usable(b).max_by(|&x, &y| records[x].arc_s.total_cmp(&records[y].arc_s)) {
                caps.push((i, CapSide::Positive));
            }
        }
    }

    let mut lumen_cloud = OrientedPointCloud::new(Solid::LumenSolid);
    let mut outer_cloud = OrientedPointCloud::new(Solid::OuterSolid);
    for (r, set) in records.iter().zip(&contour_sets) {
        if r.failed() {
            continue;
        }
        let cap = caps.iter().find(|c| c.0 == r.index).map(|c| c.1);
        let (l, o) = lift_and_sample(set, step, cfg.plan.sd, cap)?;
        lumen_cloud.extend(&l);
        outer_cloud.extend(&o);
    }

    if outer_cloud.is_empty() {
        return Err(Error::ZeroContours);
    }
    let (olo, ohi) = outer_cloud.bounds().expect("non-empty");
    let (lo, hi) = match lumen_cloud.bounds() {
        Some((llo, lhi)) => (olo.inf(&llo), ohi.sup(&lhi)),
        None => (olo, ohi),
    };
    let grid = GridSpec::covering(lo, hi, cfg.poisson.spacing, cfg.poisson.margin)?;
    info!(
        "reconstructing on {:?} nodes from {} lumen / {} outer samples",
        grid.dims,
        lumen_cloud.len(),
        outer_cloud.len()
    );
    let (lumen_sol, outer_sol) = rayon::join(
        || poisson_indicator_on(&grid, &lumen_cloud, &cfg.poisson),
        || poisson_indicator_on(&grid, &outer_cloud, &cfg.poisson),
    );
    let (lumen_sol, outer_sol) = (lumen_sol?, outer_sol?);
    let mask = voxelize_solids(&lumen_sol.chi, &outer_sol.chi, &grid)?;
    let lumen_mesh = extract_isosurface(&lumen_sol.chi, 0.0);
    let outer_mesh = extract_isosurface(&outer_sol.chi, 0.0);

    let provenance = Provenance {
        version: env!("CARGO_PKG_VERSION").to_string(),
        sd: cfg.plan.sd,
        use_bifurcation_axis: cfg.plan.use_bifurcation_axis,
        bif_region: cfg.plan.bif_region,
        branch_offset: cfg.plan.branch_offset,
        grid_spacing: cfg.poisson.spacing,
        config: *cfg,
        segmenter: backend.clone(),
        grid,
        planes: records.len(),
        failures: records.iter().filter(|r| r.failed()).copied().collect(),
        lumen: SolidReport {
            samples: lumen_cloud.len(),
            iterations: lumen_sol.report.iterations,
            residual: lumen_sol.report.residual,
        },
        outer: SolidReport {
            samples: outer_cloud.len(),
            iterations: outer_sol.report.iterations,
            residual: outer_sol.report.residual,
        },
    };
    Ok(PseudoLabel {
        mask,
        provenance,
        planes: records,
        contours: contour_sets,
        lumen_mesh,
        outer_mesh,
    })
}

/// First foreign branch whose centerline crosses the plane inside the
/// segmented lumen. Bifurcation-axis planes are meant to cut several
/// vessels and are never flagged.
pub fn foreign_lumen(mask: &LabelMask2D, entry: &PlanEntry, tree: &CenterlineTree) -> Option<Branch> {
    let foreign: &[Branch] = match entry.branch {
        Branch::Cca => &[Branch::Ica, Branch::Eca],
        Branch::Ica => &[Branch::Eca, Branch::Cca],
        Branch::Eca => &[Branch::Ica, Branch::Cca],
        Branch::Bif => &[],
    };
    let (nu, nv) = mask.size();
    for &b in foreign {
        let line = tree.branch(b).expect("vessel branch");
        for hit in line.intersect_plane(mask.pose()) {
            let (u, v) = mask.pose().world_to_uv(&hit);
            let (pi, pj) = uv_to_pixel(u, v, mask.size(), mask.spacing());
            let (i, j) = (pi.round(), pj.round());
            if i >= 0.0 && j >= 0.0 && (i as usize) < nu && (j as usize) < nv && mask.at(i as usize, j as usize) == LUMEN {
                return Some(b);
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plane_record_json_keeps_both_branches() {
        let r = PlaneRecord {
            index: 3,
            branch: Branch::Ica,
            arc_s: 4.2,
            near_bifurcation: false,
            outcome: PlaneOutcome::ForeignLumen { branch: Branch::Eca },
        };
        let text = serde_json::to_string(&r).unwrap();
        assert!(text.contains(r#""branch":"ICA""#), "{text}");
        assert!(text.contains(r#""foreign_branch":"ECA""#), "{text}");
        let back: PlaneRecord = serde_json::from_str(&text).unwrap();
        assert_eq!(back, r);
        assert!(back.failed());
    }
}
