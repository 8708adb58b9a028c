//! Analytic bifurcating-vessel phantoms with ground truth and sparse
//! expert-style annotations.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::centerline::{Branch, CenterlineTree, PolyLine3};
use crate::contours::{Annotation, Contour2D, ContourKind, ContourSet};
use crate::error::{Error, Result};
use crate::segmenter::{BACKGROUND, LUMEN, WALL};
use crate::volume::{save_volume, Affine3, DataType, Volume3};
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VesselRadii {
    pub lumen: f64,
    pub outer: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intensities {
    pub lumen: f64,
    pub wall: f64,
    pub background: f64,
}

impl Default for Intensities {
    fn default() -> Self {
        Self {
            lumen: 0.0,
            wall: 1000.0,
            background: 400.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub trunk: VesselRadii,
    pub ica: VesselRadii,
    pub eca: VesselRadii,
    /// Branch angles from the trunk direction (degrees); ICA towards +x.
    pub ica_angle_deg: f64,
    pub eca_angle_deg: f64,
    pub cca_length: f64,
    pub branch_length: f64,
    pub spacing: f64,
    /// Padding between the vessels and the volume border (mm).
    pub margin: f64,
    /// Length by which each tube continues past its centerline end (mm).
    pub end_overhang: f64,
    pub intensities: Intensities,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Sub-samples per axis for partial-volume intensities.
    pub supersample: usize,
    pub annotation_size: (usize, usize),
    pub annotation_spacing: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            trunk: VesselRadii { lumen: 3.0, outer: 4.0 },
            ica: VesselRadii { lumen: 2.2, outer: 3.2 },
            eca: VesselRadii { lumen: 1.8, outer: 2.8 },
            ica_angle_deg: 25.0,
            eca_angle_deg: 25.0,
            cca_length: 30.0,
            branch_length: 25.0,
            spacing: 0.6,
            margin: 10.0,
            end_overhang: 1.0,
            intensities: Intensities::default(),
            noise_sigma: 0.0,
            seed: 0,
            supersample: 3,
            annotation_size: (64, 64),
            annotation_spacing: 0.3,
        }
    }
}

impl PhantomSpec {
    /// Same radii on every branch; angle 0 gives a straight tube.
    pub fn straight(radii: VesselRadii, cca_length: f64, branch_length: f64, spacing: f64) -> Self {
        Self {
            trunk: radii,
            ica: radii,
            eca: radii,
            ica_angle_deg: 0.0,
            eca_angle_deg: 0.0,
            cca_length,
            branch_length,
            spacing,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("trunk", self.trunk), ("ica", self.ica), ("eca", self.eca)] {
            if !(r.lumen > 0.0 && r.outer > r.lumen) {
                return Err(Error::InvalidArgument(format!(
                    "{name} radii need outer > lumen > 0, got {} / {}",
                    r.lumen, r.outer
                )));
            }
        }
        for a in [self.ica_angle_deg, self.eca_angle_deg] {
            if !(0.0..=80.0).contains(&a) {
                return Err(Error::InvalidArgument(format!("branch angle {a} not in [0, 80] degrees")));
            }
        }
        let positive = [
            ("cca_length", self.cca_length),
            ("branch_length", self.branch_length),
            ("spacing", self.spacing),
            ("annotation_spacing", self.annotation_spacing),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.margin >= 0.0) || !(self.end_overhang >= 0.0) || !(self.noise_sigma >= 0.0) || self.supersample == 0 {
            return Err(Error::InvalidArgument(
                "margin, end_overhang, noise_sigma must be >= 0 and supersample >= 1".into(),
            ));
        }
        Ok(())
    }

    fn branch_dir(&self, b: Branch) -> Vec3 {
        let (deg, sign) = match b {
            Branch::Ica => (self.ica_angle_deg, 1.0),
            Branch::Eca => (self.eca_angle_deg, -1.0),
            _ => (0.0, 1.0),
        };
        let r = deg.to_radians();
        Vec3::new(sign * r.sin(), 0.0, r.cos())
    }

    /// CCA along +z ending at the origin; branches in the xz plane.
    pub fn tree(&self) -> Result<CenterlineTree> {
        CenterlineTree::new(
            PolyLine3::new(vec![Vec3::new(0.0, 0.0, -self.cca_length), Vec3::zeros()])?,
            PolyLine3::new(vec![Vec3::zeros(), self.branch_dir(Branch::Ica) * self.branch_length])?,
            PolyLine3::new(vec![Vec3::zeros(), self.branch_dir(Branch::Eca) * self.branch_length])?,
        )
    }

    fn tubes(&self) -> [Tube; 3] {
        [
            Tube {
                start: Vec3::new(0.0, 0.0, -self.cca_length - self.end_overhang),
                dir: Vec3::z(),
                length: self.cca_length + self.end_overhang,
                radii: self.trunk,
            },
            Tube {
                start: Vec3::zeros(),
                dir: self.branch_dir(Branch::Ica),
                length: self.branch_length + self.end_overhang,
                radii: self.ica,
            },
            Tube {
                start: Vec3::zeros(),
                dir: self.branch_dir(Branch::Eca),
                length: self.branch_length + self.end_overhang,
                radii: self.eca,
            },
        ]
    }

    /// Analytic label of a world point: lumen if inside any lumen tube or
    /// the junction ball, else wall if inside any outer tube or ball.
    pub fn label_at(&self, p: &Vec3) -> u8 {
        let tubes = self.tubes();
        let r2 = p.norm_squared();
        let in_lumen = r2 <= self.trunk.lumen * self.trunk.lumen || tubes.iter().any(|t| t.contains(p, t.radii.lumen));
        if in_lumen {
            return LUMEN;
        }
        let in_outer = r2 <= self.trunk.outer * self.trunk.outer || tubes.iter().any(|t| t.contains(p, t.radii.outer));
        if in_outer {
            WALL
        } else {
            BACKGROUND
        }
    }

    /// Volume lattice: symmetric about x = 0 and y = 0.
    pub fn grid(&self) -> Result<([usize; 3], Affine3)> {
        let pad = self.trunk.outer.max(self.ica.outer).max(self.eca.outer) + self.margin;
        let ends = [
            Vec3::new(0.0, 0.0, -self.cca_length - self.end_overhang),
            Vec3::zeros(),
            self.branch_dir(Branch::Ica) * (self.branch_length + self.end_overhang),
            self.branch_dir(Branch::Eca) * (self.branch_length + self.end_overhang),
        ];
        let half_x = ends.iter().map(|e| e.x.abs()).fold(0.0, f64::max) + pad;
        let half_y = pad;
        let z_lo = ends.iter().map(|e| e.z).fold(f64::INFINITY, f64::min) - pad;
        let z_hi = ends.iter().map(|e| e.z).fold(f64::NEG_INFINITY, f64::max) + pad;
        let h = self.spacing;
        let count = |ext: f64| (ext / h - 1e-9).ceil() as usize + 1;
        let dims = [count(2.0 * half_x), count(2.0 * half_y), count(z_hi - z_lo)];
        let origin = Vec3::new(-(((dims[0] - 1) as f64) * h) / 2.0, -(((dims[1] - 1) as f64) * h) / 2.0, z_lo);
        Ok((dims, Affine3::from_spacing([h; 3], origin)?))
    }

    /// Arc positions of the eight annotation planes, scaled from the
    /// default 30 mm trunk / 25 mm branch layout.
    pub fn annotation_stations(&self) -> [(u8, Branch, f64); 8] {
        let c = self.cca_length / 30.0;
        let b = self.branch_length / 25.0;
        [
            (1, Branch::Cca, self.cca_length - 20.0 * c),
            (2, Branch::Cca, self.cca_length - 10.0 * c),
            (3, Branch::Ica, 7.0 * b),
            (4, Branch::Ica, 10.0 * b),
            (5, Branch::Ica, 13.0 * b),
            (6, Branch::Ica, 16.0 * b),
            (7, Branch::Ica, 20.0 * b),
            (8, Branch::Eca, 10.0 * b),
        ]
    }
}

#[derive(Debug, Clone, Copy)]
struct Tube {
    start: Vec3,
    dir: Vec3,
    length: f64,
    radii: VesselRadii,
}

impl Tube {
    /// Finite cylinder with flat ends.
    fn contains(&self, p: &Vec3, r: f64) -> bool {
        let d = p - self.start;
        let t = d.dot(&self.dir);
        if !(0.0..=self.length).contains(&t) {
            return false;
        }
        (d - self.dir * t).norm_squared() <= r * r
    }
}

#[derive(Debug, Clone)]
pub struct PhantomBundle {
    pub spec: PhantomSpec,
    pub volume: Volume3,
    pub tree: CenterlineTree,
    /// Labels {0, 1, 2} on the volume lattice: lumen where at least half of
    /// the voxel's supersamples are lumen, else wall where at least half are
    /// lumen or wall.
    pub truth: Volume3,
    pub sparse: Vec<Annotation>,
}

const CIRCLE_VERTICES: usize = 128;

pub fn generate(spec: &PhantomSpec) -> Result<PhantomBundle> {
    spec.validate()?;
    let tree = spec.tree()?;
    let (dims, affine) = spec.grid()?;
    let h = spec.spacing;
    let ss = spec.supersample;
    let offsets: Vec<f64> = (0..ss).map(|k| ((k as f64 + 0.5) / ss as f64 - 0.5) * h).collect();
    let level = |l: u8| match l {
        LUMEN => spec.intensities.lumen,
        WALL => spec.intensities.wall,
        _ => spec.intensities.background,
    };
    let n_sub = (ss * ss * ss) as f64;

    let mut truth = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
    let mut data = Vec::with_capacity(truth.capacity());
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let c = affine.to_world(&Vec3::new(i as f64, j as f64, k as f64));
                let (mut acc, mut lumen, mut solid) = (0.0, 0usize, 0usize);
                for dz in &offsets {
                    for dy in &offsets {
                        for dx in &offsets {
                            let l = spec.label_at(&(c + Vec3::new(*dx, *dy, *dz)));
                            acc += level(l);
                            lumen += usize::from(l == LUMEN);
                            solid += usize::from(l != BACKGROUND);
                        }
                    }
                }
                let majority = |n: usize| 2 * n >= ss * ss * ss;
                let label = if majority(lumen) {
                    LUMEN
                } else if majority(solid) {
                    WALL
                } else {
                    BACKGROUND
                };
                truth.push(f64::from(label));
                data.push(acc / n_sub);
            }
        }
    }
    if spec.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        for v in &mut data {
            *v += noise.sample(&mut rng);
        }
    }
    for v in &mut data {
        *v = f64::from(*v as f32);
    }

    let volume = Volume3::new(dims, data, affine)?;
    let truth = Volume3::new(dims, truth, affine)?;
    let sparse = sparse_annotations(spec, &tree)?;
    Ok(PhantomBundle {
        spec: spec.clone(),
        volume,
        tree,
        truth,
        sparse,
    })
}

/// Exact circular contours of each annotated vessel's own tube on planes
/// perpendicular to its centerline.
pub fn sparse_annotations(spec: &PhantomSpec, tree: &CenterlineTree) -> Result<Vec<Annotation>> {
    let mut out = Vec::with_capacity(8);
    for (plane_id, vessel, arc) in spec.annotation_stations() {
        let line = tree.branch(vessel).expect("vessel branch");
        let pose = line.frames_along(&[arc])?[0];
        let radii = match vessel {
            Branch::Cca => spec.trunk,
            Branch::Ica => spec.ica,
            _ => spec.eca,
        };
        let circle = |r: f64| -> Vec<[f64; 2]> {
            (0..CIRCLE_VERTICES)
                .map(|k| {
                    let a = 2.0 * std::f64::consts::PI * k as f64 / CIRCLE_VERTICES as f64;
                    [r * a.cos(), r * a.sin()]
                })
                .collect()
        };
        out.push(Annotation {
            plane_id,
            vessel,
            size: spec.annotation_size,
            spacing: spec.annotation_spacing,
            contours: ContourSet {
                pose,
                lumen: vec![Contour2D::new(circle(radii.lumen), ContourKind::LumenBoundary)?],
                outer: vec![Contour2D::new(circle(radii.outer), ContourKind::OuterWallBoundary)?],
            },
        });
    }
    Ok(out)
}

/// Paths written by [`write_bundle`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomManifest {
    pub spec: PhantomSpec,
    pub volume: PathBuf,
    pub truth: PathBuf,
    pub centerline: PathBuf,
    pub annotations: Vec<PathBuf>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

/// Write `volume.rvol`, `truth.rvol`, `centerline.json`,
/// `annotations/plane_{k}.json` and `manifest.json` (paths relative to `dir`).
pub fn write_bundle(bundle: &PhantomBundle, dir: &Path) -> Result<PhantomManifest> {
    let ann_dir = dir.join("annotations");
    std::fs::create_dir_all(&ann_dir).map_err(|e| Error::io(&ann_dir, e))?;
    save_volume(&bundle.volume, &dir.join("volume.rvol"), DataType::F32)?;
    save_volume(&bundle.truth, &dir.join("truth.rvol"), DataType::U8)?;
    bundle.tree.save(&dir.join("centerline.json"))?;
    let mut annotations = Vec::new();
    for a in &bundle.sparse {
        let rel = PathBuf::from("annotations").join(format!("plane_{}.json", a.plane_id));
        a.save(&dir.join(&rel))?;
        annotations.push(rel);
    }
    let manifest = PhantomManifest {
        spec: bundle.spec.clone(),
        volume: "volume.rvol".into(),
        truth: "truth.rvol".into(),
        centerline: "centerline.json".into(),
        annotations,
    };
    crate::io::write_json(&dir.join(MANIFEST_NAME), &manifest)?;
    Ok(manifest)
}
