//! Screened Poisson indicator on a regular axis-aligned grid.

use serde::{Deserialize, Serialize};

use super::cg::{self, SolveReport};
use crate::contours::OrientedPointCloud;
use crate::error::{Error, Result};
use crate::volume::{Affine3, Volume3};
use crate::Vec3;

/// Axis-aligned node lattice: node (i, j, k) sits at `origin + spacing * (i, j, k)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: Vec3,
    pub spacing: f64,
    pub dims: [usize; 3],
}

impl GridSpec {
    pub fn new(origin: Vec3, spacing: f64, dims: [usize; 3]) -> Result<Self> {
        if !(spacing > 0.0) || !spacing.is_finite() {
            return Err(Error::InvalidArgument(format!("grid spacing must be > 0, got {spacing}")));
        }
        if dims.iter().any(|&d| d < 2) {
            return Err(Error::InvalidArgument(format!("grid dims must be >= 2, got {dims:?}")));
        }
        Ok(Self { origin, spacing, dims })
    }

    /// Smallest lattice covering `[lo - margin, hi + margin]` on every axis.
    pub fn covering(lo: Vec3, hi: Vec3, spacing: f64, margin: f64) -> Result<Self> {
        if !(margin >= 0.0) {
            return Err(Error::InvalidArgument(format!("margin must be >= 0, got {margin}")));
        }
        let origin = lo.add_scalar(-margin);
        let ext = hi - lo;
        let dims = [0, 1, 2].map(|a| ((ext[a] + 2.0 * margin) / spacing - 1e-9).ceil().max(1.0) as usize + 1);
        Self::new(origin, spacing, dims)
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn node(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + Vec3::new(i as f64, j as f64, k as f64) * self.spacing
    }

    /// Continuous lattice coordinates of a world point.
    pub fn to_lattice(&self, p: &Vec3) -> Vec3 {
        (p - self.origin) / self.spacing
    }

    pub fn affine(&self) -> Affine3 {
        Affine3::from_spacing([self.spacing; 3], self.origin).expect("positive spacing")
    }

    pub fn approx_eq(&self, other: &GridSpec, tol: f64) -> bool {
        self.dims == other.dims
            && (self.spacing - other.spacing).abs() <= tol
            && (self.origin - other.origin).norm() <= tol
    }

    /// Trilinear stencil of `p`: eight (node index, weight) pairs, or `None`
    /// when the stencil leaves the lattice.
    pub fn stencil(&self, p: &Vec3) -> Option<[(usize, f64); 8]> {
        let q = self.to_lattice(p);
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let f = q[a].floor();
            if !(f >= 0.0) || f as usize + 1 >= self.dims[a] {
                // Allow points exactly on the last node layer.
                if f as usize + 1 == self.dims[a] && q[a] == f {
                    base[a] = self.dims[a] - 2;
                    frac[a] = 1.0;
                    continue;
                }
                return None;
            }
            base[a] = f as usize;
            frac[a] = q[a] - f;
        }
        let mut out = [(0usize, 0.0); 8];
        for c in 0..8 {
            let (dx, dy, dz) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
            let w = (if dx == 1 { frac[0] } else { 1.0 - frac[0] })
                * (if dy == 1 { frac[1] } else { 1.0 - frac[1] })
                * (if dz == 1 { frac[2] } else { 1.0 - frac[2] });
            out[c] = (self.index(base[0] + dx, base[1] + dy, base[2] + dz), w);
        }
        Some(out)
    }
}

/// Scalar field on a [`GridSpec`] lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid3 {
    pub spec: GridSpec,
    pub values: Vec<f64>,
}

impl ScalarGrid3 {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::InvalidArgument(format!(
                "grid has {} nodes but {} values",
                spec.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("grid values must be finite".into()));
        }
        Ok(Self { spec, values })
    }

    pub fn from_fn(spec: GridSpec, f: impl Fn(Vec3) -> f64) -> Self {
        let [nx, ny, nz] = spec.dims;
        let mut values = Vec::with_capacity(spec.len());
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    values.push(f(spec.node(i, j, k)));
                }
            }
        }
        Self { spec, values }
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.spec.index(i, j, k)]
    }

    /// Trilinear value, `None` outside the lattice.
    pub fn sample(&self, p: &Vec3) -> Option<f64> {
        self.spec
            .stencil(p)
            .map(|st| st.iter().map(|&(n, w)| w * self.values[n]).sum())
    }

    pub fn to_volume(&self) -> Volume3 {
        Volume3::new(self.spec.dims, self.values.clone(), self.spec.affine()).expect("valid grid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoissonParams {
    pub spacing: f64,
    pub margin: f64,
    pub screening: f64,
    pub tolerance: f64,
    /// Defaults to ten times the node count.
    pub max_iterations: Option<usize>,
}

impl Default for PoissonParams {
    fn default() -> Self {
        Self {
            spacing: 0.3,
            margin: 3.0,
            screening: 4.0,
            tolerance: 1e-8,
            max_iterations: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PoissonSolution {
    /// Indicator: negative inside, zero on average at the samples.
    pub chi: ScalarGrid3,
    pub report: SolveReport,
}

/// Indicator on a grid covering the cloud's bounding box plus margin.
pub fn poisson_indicator(cloud: &OrientedPointCloud, params: &PoissonParams) -> Result<PoissonSolution> {
    check_cloud(cloud)?;
    let (lo, hi) = cloud.bounds().expect("non-empty cloud");
    let spec = GridSpec::covering(lo, hi, params.spacing, params.margin)?;
    poisson_indicator_on(&spec, cloud, params)
}

fn check_cloud(cloud: &OrientedPointCloud) -> Result<()> {
    let n = cloud.len();
    if n < 4 {
        return Err(Error::InsufficientPoints(n));
    }
    let mean = cloud.points.iter().sum::<Vec3>() / n as f64;
    let mut cov = nalgebra::Matrix3::<f64>::zeros();
    for p in &cloud.points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    let ev = cov.symmetric_eigenvalues();
    let (min, max) = (ev.min(), ev.max());
    if !(max > 0.0) || min <= max * 1e-12 {
        return Err(Error::Geometry("point cloud is coplanar".into()));
    }
    Ok(())
}

/// Indicator on a caller-supplied grid. Every sample must lie inside the
/// lattice.
///
/// Minimises `sum_edges (chi_j - chi_i - V_ij)^2 + screening * sum_n S_n chi_n^2`
/// where `V` is the splatted normal field (Gaussian-smoothed, sigma one
/// node) averaged onto lattice edges and `S` the splatted sample density.
/// The normal equations `(L + screening * S) chi = -div V` are solved by
/// preconditioned CG; boundaries are natural (Neumann).
pub fn poisson_indicator_on(spec: &GridSpec, cloud: &OrientedPointCloud, params: &PoissonParams) -> Result<PoissonSolution> {
    check_cloud(cloud)?;
    if !(params.screening > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "screening must be > 0, got {}",
            params.screening
        )));
    }
    let n = spec.len();
    let h = spec.spacing;
    let mut field = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut density = vec![0.0; n];
    for ((p, nrm), &area) in cloud.points.iter().zip(&cloud.normals).zip(&cloud.weights) {
        let st = spec.stencil(p).ok_or_else(|| {
            Error::Geometry(format!("sample ({:.3}, {:.3}, {:.3}) lies outside the grid", p.x, p.y, p.z))
        })?;
        let w = area / (h * h);
        for &(node, tw) in &st {
            for a in 0..3 {
                field[a][node] += tw * w * nrm[a];
            }
            density[node] += tw * w;
        }
    }
    for f in &mut field {
        gaussian_smooth(f, spec.dims, 1.0);
    }

    let [nx, ny, nz] = spec.dims;
    let strides = [1, nx, nx * ny];
    // b = -div V with V averaged onto edges.
    let mut b = vec![0.0; n];
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let p = spec.index(i, j, k);
                let at = [i, j, k];
                for a in 0..3 {
                    if at[a] + 1 < spec.dims[a] {
                        let q = p + strides[a];
                        let ve = 0.5 * (field[a][p] + field[a][q]);
                        b[q] += ve;
                        b[p] -= ve;
                    }
                }
            }
        }
    }

    let alpha = params.screening;
    let screen: Vec<f64> = density.iter().map(|d| alpha * d).collect();
    let mut diag = vec![0.0; n];
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let at = [i, j, k];
                let degree: usize = (0..3)
                    .map(|a| usize::from(at[a] > 0) + usize::from(at[a] + 1 < spec.dims[a]))
                    .sum();
                let p = spec.index(i, j, k);
                diag[p] = degree as f64 + screen[p];
            }
        }
    }

    let apply = |x: &[f64], out: &mut [f64]| apply_operator(x, out, spec.dims, &diag);
    let mut chi = vec![0.0; n];
    let max_it = params.max_iterations.unwrap_or(10 * n);
    let report = cg::solve(apply, &diag, &b, &mut chi, params.tolerance, max_it);
    if !report.converged {
        return Err(Error::NotConverged {
            iterations: report.iterations,
            residual: report.residual,
        });
    }

    let mut grid = ScalarGrid3 { spec: *spec, values: chi };
    let mean = cloud
        .points
        .iter()
        .map(|p| grid.sample(p).expect("sample inside grid"))
        .sum::<f64>()
        / cloud.len() as f64;
    for v in &mut grid.values {
        *v -= mean;
    }
    Ok(PoissonSolution { chi: grid, report })
}

/// `out = (L + S) x` where `diag` already holds degree + screening.
fn apply_operator(x: &[f64], out: &mut [f64], dims: [usize; 3], diag: &[f64]) {
    let [nx, ny, nz] = dims;
    let sy = nx;
    let sz = nx * ny;
    for k in 0..nz {
        for j in 0..ny {
            let row = j * sy + k * sz;
            for i in 0..nx {
                let p = row + i;
                let mut acc = diag[p] * x[p];
                if i > 0 {
                    acc -= x[p - 1];
                }
                if i + 1 < nx {
                    acc -= x[p + 1];
                }
                if j > 0 {
                    acc -= x[p - sy];
                }
                if j + 1 < ny {
                    acc -= x[p + sy];
                }
                if k > 0 {
                    acc -= x[p - sz];
                }
                if k + 1 < nz {
                    acc -= x[p + sz];
                }
                out[p] = acc;
            }
        }
    }
}

/// Separable Gaussian blur (sigma in nodes, kernel truncated at 3 sigma).
fn gaussian_smooth(values: &mut [f64], dims: [usize; 3], sigma: f64) {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = {
        let raw: Vec<f64> = (-radius..=radius)
            .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
            .collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / s).collect()
    };
    let strides = [1, dims[0], dims[0] * dims[1]];
    let mut tmp = vec![0.0; values.len()];
    for a in 0..3 {
        let len = dims[a] as isize;
        for (p, t) in tmp.iter_mut().enumerate() {
            let pos = ((p / strides[a]) % dims[a]) as isize;
            let mut acc = 0.0;
            for (kk, w) in kernel.iter().enumerate() {
                let q = pos + kk as isize - radius;
                if (0..len).contains(&q) {
                    acc += w * values[(p as isize + (q - pos) * strides[a] as isize) as usize];
                }
            }
            *t = acc;
        }
        values.copy_from_slice(&tmp);
    }
}
