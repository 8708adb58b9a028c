//! 2D cross-section segmentation behind a pluggable backend.
//!
//! The builtin backend is a deterministic intensity oracle for phantoms. The
//! external backend hands batches of cross-sections to another process (a
//! trained network wrapper) through files; see [`protocol`].

mod oracle;
pub mod protocol;

use std::path::PathBuf;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contours::merge_wall_regions;
use crate::error::{Error, Result};
use crate::volume::{uv_to_pixel, CrossSection, PlanePose, Volume3};
use crate::Vec3;

pub use oracle::{segment_oracle, OracleParams};

pub const BACKGROUND: u8 = 0;
pub const LUMEN: u8 = 1;
pub const WALL: u8 = 2;

/// 2D label image sharing the geometry of the cross-section it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMask2D {
    pose: PlanePose,
    size: (usize, usize),
    spacing: f64,
    labels: Vec<u8>,
}

impl LabelMask2D {
    pub fn new(pose: PlanePose, size: (usize, usize), spacing: f64, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != size.0 * size.1 {
            return Err(Error::InvalidArgument(format!(
                "mask has {} labels, size {size:?} needs {}",
                labels.len(),
                size.0 * size.1
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l > WALL) {
            return Err(Error::InvalidArgument(format!("label {bad} not in {{0,1,2}}")));
        }
        Ok(Self {
            pose,
            size,
            spacing,
            labels,
        })
    }

    pub fn empty(pose: PlanePose, size: (usize, usize), spacing: f64) -> Self {
        Self {
            pose,
            size,
            spacing,
            labels: vec![BACKGROUND; size.0 * size.1],
        }
    }

    pub fn pose(&self) -> &PlanePose {
        &self.pose
    }

    pub fn size(&self) -> (usize, usize) {
        self.size
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> u8 {
        self.labels[j * self.size.0 + i]
    }

    pub fn indicator(&self, label: u8) -> Vec<bool> {
        self.labels.iter().map(|&l| l == label).collect()
    }

    pub fn count(&self, label: u8) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.iter().all(|&l| l == BACKGROUND)
    }

    pub fn same_geometry(&self, other: &LabelMask2D) -> bool {
        self.size == other.size
            && (self.spacing - other.spacing).abs() <= 1e-12
            && self.pose.approx_eq(&other.pose, 1e-9)
    }

    pub(crate) fn with_labels(&self, labels: Vec<u8>) -> LabelMask2D {
        debug_assert_eq!(labels.len(), self.labels.len());
        LabelMask2D { labels, ..self.clone() }
    }

    /// Nearest-neighbour copy of this mask onto another grid lying in the
    /// same plane with the same orientation.
    pub fn reproject(&self, pose: &PlanePose, size: (usize, usize), spacing: f64) -> LabelMask2D {
        let mut labels = vec![BACKGROUND; size.0 * size.1];
        for j in 0..size.1 {
            for i in 0..size.0 {
                let w = pose.pixel_world(i, j, size, spacing);
                let (u, v) = self.pose.world_to_uv(&w);
                let (fi, fj) = uv_to_pixel(u, v, self.size, self.spacing);
                let (ri, rj) = (fi.round(), fj.round());
                if ri >= 0.0 && rj >= 0.0 && (ri as usize) < self.size.0 && (rj as usize) < self.size.1 {
                    labels[j * size.0 + i] = self.at(ri as usize, rj as usize);
                }
            }
        }
        LabelMask2D {
            pose: *pose,
            size,
            spacing,
            labels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalProcess {
    pub command: String,
    pub io_dir: PathBuf,
    #[serde(with = "secs")]
    pub timeout: Duration,
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_secs_f64(f64::deserialize(d)?))
    }
}

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SegmenterBackend {
    BuiltinOracle(OracleParams),
    ExternalProcess(ExternalProcess),
}

impl Default for SegmenterBackend {
    fn default() -> Self {
        SegmenterBackend::BuiltinOracle(OracleParams::default())
    }
}

impl SegmenterBackend {
    pub fn external(command: impl Into<String>, io_dir: impl Into<PathBuf>) -> Self {
        SegmenterBackend::ExternalProcess(ExternalProcess {
            command: command.into(),
            io_dir: io_dir.into(),
            timeout: DEFAULT_TIMEOUT,
        })
    }

    pub fn segment(&self, cs: &CrossSection) -> Result<LabelMask2D> {
        let mut out = self.segment_batch(std::slice::from_ref(cs))?;
        Ok(out.pop().expect("one mask per cross-section"))
    }

    /// Segment many cross-sections; external backends see one invocation.
    pub fn segment_batch(&self, sections: &[CrossSection]) -> Result<Vec<LabelMask2D>> {
        match self {
            SegmenterBackend::BuiltinOracle(params) => {
                sections.par_iter().map(|cs| segment_oracle(cs, params)).collect()
            }
            SegmenterBackend::ExternalProcess(ext) => {
                protocol::run_batch(&ext.command, &ext.io_dir, ext.timeout, sections)
            }
        }
    }
}

/// Cross-sections needed for one bifurcation-axis plane: one per vessel
/// centre, sharing the plane's orientation.
#[derive(Debug, Clone)]
pub struct BifurcationRequest {
    pub plane: PlanePose,
    pub size: (usize, usize),
    pub spacing: f64,
    pub sections: Vec<CrossSection>,
}

impl BifurcationRequest {
    /// Centres must lie within one pixel spacing of the plane; they are
    /// projected onto it. `None` centres (vessel not cut) are skipped.
    pub fn new(
        volume: &Volume3,
        plane: &PlanePose,
        centers: &[Option<Vec3>],
        size: (usize, usize),
        spacing: f64,
    ) -> Result<Self> {
        let mut sections = Vec::new();
        for c in centers.iter().flatten() {
            let d = plane.signed_distance(c);
            if d.abs() > spacing {
                return Err(Error::Geometry(format!(
                    "vessel centre lies {d:.3} mm off the bifurcation plane"
                )));
            }
            let on_plane = c - plane.normal * d;
            sections.push(volume.sample_plane(&plane.recentered(on_plane), size, spacing)?);
        }
        Ok(Self {
            plane: *plane,
            size,
            spacing,
            sections,
        })
    }

    /// Re-project each single-vessel mask onto the common plane grid and
    /// join their wall areas.
    pub fn combine(&self, masks: &[LabelMask2D]) -> Result<LabelMask2D> {
        let mut merged = LabelMask2D::empty(self.plane, self.size, self.spacing);
        for m in masks {
            let onto = m.reproject(&self.plane, self.size, self.spacing);
            merged = merge_wall_regions(&merged, &onto)?;
        }
        Ok(merged)
    }
}

/// Segment a bifurcation-axis plane by segmenting cross-sections centred on
/// the ICA and ECA separately and merging them on the common plane grid.
pub fn segment_bifurcation(
    backend: &SegmenterBackend,
    volume: &Volume3,
    plane: &PlanePose,
    ica_center: Option<Vec3>,
    eca_center: Option<Vec3>,
    size: (usize, usize),
    spacing: f64,
) -> Result<LabelMask2D> {
    let req = BifurcationRequest::new(volume, plane, &[ica_center, eca_center], size, spacing)?;
    let masks = backend.segment_batch(&req.sections)?;
    req.combine(&masks)
}
