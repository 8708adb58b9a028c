//! Poisson reconstruction of the lumen and outer solids, iso-surfaces and
//! voxelization into 3D pseudo-labels.

pub mod cg;
pub mod mesh;
pub mod pipeline;
pub mod poisson;

pub use cg::SolveReport;
pub use mesh::{extract_isosurface, TriangleMesh};
pub use pipeline::{build_pseudolabel, PipelineConfig, PlaneOutcome, PlaneRecord, Provenance, PseudoLabel};
pub use poisson::{poisson_indicator, poisson_indicator_on, GridSpec, PoissonParams, PoissonSolution, ScalarGrid3};

use crate::error::{Error, Result};
use crate::segmenter::{BACKGROUND, LUMEN, WALL};
use crate::volume::Volume3;

/// Label each reference node: lumen where `chi_lumen < 0`, else wall where
/// `chi_outer < 0`, else background. Lumen wins, so lumen is always inside
/// the labelled solid. Fields on a different lattice are resampled
/// trilinearly; nodes outside a field's lattice count as outside it.
pub fn voxelize_solids(lumen: &ScalarGrid3, outer: &ScalarGrid3, reference: &GridSpec) -> Result<Volume3> {
    if !(reference.spacing > 0.0) {
        return Err(Error::InvalidArgument("reference grid spacing must be > 0".into()));
    }
    let value = |g: &ScalarGrid3, idx: usize, p: &crate::Vec3| -> f64 {
        if g.spec.approx_eq(reference, 1e-9) {
            g.values[idx]
        } else {
            g.sample(p).unwrap_or(f64::INFINITY)
        }
    };
    let [nx, ny, nz] = reference.dims;
    let mut labels = Vec::with_capacity(reference.len());
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let idx = reference.index(i, j, k);
                let p = reference.node(i, j, k);
                let l = if value(lumen, idx, &p) < 0.0 {
                    LUMEN
                } else if value(outer, idx, &p) < 0.0 {
                    WALL
                } else {
                    BACKGROUND
                };
                labels.push(f64::from(l));
            }
        }
    }
    Volume3::new(reference.dims, labels, reference.affine())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Vec3;

    fn count(v: &Volume3, l: u8) -> usize {
        v.data().iter().filter(|&&x| x == f64::from(l)).count()
    }

    #[test]
    fn concentric_cylinder_fields() {
        let spec = GridSpec::covering(Vec3::new(-6.0, -6.0, 0.0), Vec3::new(6.0, 6.0, 4.0), 0.3, 0.0).unwrap();
        let lumen = ScalarGrid3::from_fn(spec, |p| p.xy().norm() - 3.0);
        let outer = ScalarGrid3::from_fn(spec, |p| p.xy().norm() - 5.0);
        let v = voxelize_solids(&lumen, &outer, &spec).unwrap();
        for k in 0..spec.dims[2] {
            for j in 0..spec.dims[1] {
                for i in 0..spec.dims[0] {
                    let r = spec.node(i, j, k).xy().norm();
                    let l = v.get(i, j, k);
                    if r < 3.0 {
                        assert_eq!(l, 1.0);
                    } else if r < 5.0 {
                        assert_eq!(l, 2.0);
                    } else {
                        assert_eq!(l, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn empty_lumen_and_equal_fields() {
        let spec = GridSpec::new(Vec3::zeros(), 0.5, [8, 8, 8]).unwrap();
        let ball = ScalarGrid3::from_fn(spec, |p| (p - Vec3::repeat(1.75)).norm() - 1.2);
        let none = ScalarGrid3::from_fn(spec, |_| 1.0);
        let v = voxelize_solids(&none, &ball, &spec).unwrap();
        assert_eq!(count(&v, LUMEN), 0);
        assert!(count(&v, WALL) > 0);
        let v = voxelize_solids(&ball, &ball, &spec).unwrap();
        assert_eq!(count(&v, WALL), 0);
        assert!(count(&v, LUMEN) > 0);
    }

    #[test]
    fn resamples_foreign_lattice() {
        let coarse = GridSpec::new(Vec3::zeros(), 0.5, [9, 9, 9]).unwrap();
        let fine = GridSpec::new(Vec3::zeros(), 0.25, [17, 17, 17]).unwrap();
        let f = |p: Vec3| p.x - 2.1;
        let a = voxelize_solids(&ScalarGrid3::from_fn(coarse, f), &ScalarGrid3::from_fn(coarse, |_| 1.0), &fine).unwrap();
        let b = voxelize_solids(&ScalarGrid3::from_fn(fine, f), &ScalarGrid3::from_fn(fine, |_| 1.0), &fine).unwrap();
        assert_eq!(a.data(), b.data());
    }
}
