//! Iso-surface extraction and triangle mesh utilities.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::poisson::ScalarGrid3;
use crate::error::Result;
use crate::Vec3;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    fn edge_counts(&self) -> HashMap<(u32, u32), (usize, usize)> {
        let mut edges: HashMap<(u32, u32), (usize, usize)> = HashMap::new();
        for t in &self.triangles {
            for e in 0..3 {
                let (a, b) = (t[e], t[(e + 1) % 3]);
                let entry = edges.entry((a.min(b), a.max(b))).or_default();
                if a < b {
                    entry.0 += 1;
                } else {
                    entry.1 += 1;
                }
            }
        }
        edges
    }

    /// Every edge is shared by exactly two triangles.
    pub fn is_closed(&self) -> bool {
        self.edge_counts().values().all(|&(f, r)| f + r == 2)
    }

    /// Each shared edge is traversed once in each direction.
    pub fn is_consistently_oriented(&self) -> bool {
        self.edge_counts().values().all(|&(f, r)| f == 1 && r == 1)
    }

    pub fn euler_characteristic(&self) -> i64 {
        let used: std::collections::HashSet<u32> = self.triangles.iter().flatten().copied().collect();
        used.len() as i64 - self.edge_counts().len() as i64 + self.triangles.len() as i64
    }

    pub fn triangle_area(&self, t: &[u32; 3]) -> f64 {
        let [a, b, c] = t.map(|i| self.vertices[i as usize]);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn area(&self) -> f64 {
        self.triangles.iter().map(|t| self.triangle_area(t)).sum()
    }

    /// Signed enclosed volume; positive for outward-facing triangles.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| self.vertices[i as usize]);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    /// Wavefront OBJ text (1-based indices).
    pub fn to_obj(&self) -> String {
        let mut s = String::with_capacity(self.vertices.len() * 40 + self.triangles.len() * 24);
        for v in &self.vertices {
            let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        }
        s
    }

    pub fn write_obj(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_obj().as_bytes())
    }
}

/// Cube corner `c` has offset (c & 1, (c >> 1) & 1, (c >> 2) & 1).
/// Six tetrahedra around the 0-7 diagonal (Kuhn triangulation); the split
/// is the same in every cube so shared faces match and the surface is
/// watertight.
const TETS: [[usize; 4]; 6] = [
    [0, 1, 3, 7],
    [0, 1, 5, 7],
    [0, 2, 3, 7],
    [0, 2, 6, 7],
    [0, 4, 5, 7],
    [0, 4, 6, 7],
];

/// Level set `chi == iso` by marching tetrahedra with linear edge
/// interpolation. Triangles face the side where `chi > iso`. Node values
/// exactly equal to `iso` are nudged to the positive side.
pub fn extract_isosurface(grid: &ScalarGrid3, iso: f64) -> TriangleMesh {
    let spec = grid.spec;
    let [nx, ny, nz] = spec.dims;
    let scale = grid.values.iter().fold(0.0f64, |m, v| m.max((v - iso).abs()));
    let nudge = if scale > 0.0 { scale * 1e-12 } else { f64::MIN_POSITIVE };
    let val = |n: usize| {
        let d = grid.values[n] - iso;
        if d == 0.0 {
            nudge
        } else {
            d
        }
    };

    let mut mesh = TriangleMesh::default();
    let mut cache: HashMap<(usize, usize), u32> = HashMap::new();
    let mut vertex = |a: usize, b: usize, mesh: &mut TriangleMesh| -> u32 {
        let key = (a.min(b), a.max(b));
        *cache.entry(key).or_insert_with(|| {
            let (va, vb) = (val(key.0), val(key.1));
            let t = va / (va - vb);
            let pa = node_pos(&spec, key.0);
            let pb = node_pos(&spec, key.1);
            mesh.vertices.push(pa + (pb - pa) * t);
            (mesh.vertices.len() - 1) as u32
        })
    };

    for k in 0..nz.saturating_sub(1) {
        for j in 0..ny.saturating_sub(1) {
            for i in 0..nx.saturating_sub(1) {
                let corners: [usize; 8] =
                    std::array::from_fn(|c| spec.index(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1)));
                let vals = corners.map(val);
                let pos = vals.iter().filter(|&&v| v > 0.0).count();
                if pos == 0 || pos == 8 {
                    continue;
                }
                for tet in &TETS {
                    let nodes = tet.map(|c| corners[c]);
                    let tv = tet.map(|c| vals[c]);
                    let inside: Vec<usize> = (0..4).filter(|&q| tv[q] < 0.0).collect();
                    let outside: Vec<usize> = (0..4).filter(|&q| tv[q] > 0.0).collect();
                    if inside.is_empty() || outside.is_empty() {
                        continue;
                    }
                    let centroid = |qs: &[usize]| qs.iter().map(|&q| node_pos(&spec, nodes[q])).sum::<Vec3>() / qs.len() as f64;
                    let out_dir = centroid(&outside) - centroid(&inside);
                    let emit = |tri: [u32; 3], mesh: &mut TriangleMesh| {
                        let [a, b, c] = tri.map(|v| mesh.vertices[v as usize]);
                        let n = (b - a).cross(&(c - a));
                        if n.dot(&out_dir) >= 0.0 {
                            mesh.triangles.push(tri);
                        } else {
                            mesh.triangles.push([tri[0], tri[2], tri[1]]);
                        }
                    };
                    match (inside.len(), outside.len()) {
                        (1, 3) | (3, 1) => {
                            let (lone, others) = if inside.len() == 1 { (inside[0], &outside) } else { (outside[0], &inside) };
                            let tri = [0, 1, 2].map(|m| vertex(nodes[lone], nodes[others[m]], &mut mesh));
                            emit(tri, &mut mesh);
                        }
                        _ => {
                            let (a0, a1, b0, b1) = (inside[0], inside[1], outside[0], outside[1]);
                            let v00 = vertex(nodes[a0], nodes[b0], &mut mesh);
                            let v01 = vertex(nodes[a0], nodes[b1], &mut mesh);
                            let v11 = vertex(nodes[a1], nodes[b1], &mut mesh);
                            let v10 = vertex(nodes[a1], nodes[b0], &mut mesh);
                            // Quad v00-v01-v11-v10 split along v00-v11.
                            emit([v00, v01, v11], &mut mesh);
                            emit([v00, v11, v10], &mut mesh);
                        }
                    }
                }
            }
        }
    }
    mesh
}

fn node_pos(spec: &super::poisson::GridSpec, n: usize) -> Vec3 {
    let [nx, ny, _] = spec.dims;
    spec.node(n % nx, (n / nx) % ny, n / (nx * ny))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reconstruction::poisson::GridSpec;

    #[test]
    fn sphere_sdf_is_accurate_and_closed() {
        let spec = GridSpec::covering(Vec3::repeat(-5.0), Vec3::repeat(5.0), 0.3, 1.0).unwrap();
        let grid = ScalarGrid3::from_fn(spec, |p| p.norm() - 5.0);
        let mesh = extract_isosurface(&grid, 0.0);
        assert!(!mesh.is_empty());
        for v in &mesh.vertices {
            assert!((v.norm() - 5.0).abs() <= 0.02, "radius {}", v.norm());
        }
        assert!(mesh.is_closed());
        assert!(mesh.is_consistently_oriented());
        assert_eq!(mesh.euler_characteristic(), 2);
        let vol = 4.0 / 3.0 * std::f64::consts::PI * 125.0;
        assert!((mesh.signed_volume() - vol).abs() / vol < 0.01);
        assert!(mesh.triangles.iter().all(|t| mesh.triangle_area(t) > 0.0));
    }

    #[test]
    fn constant_grid_is_empty() {
        let spec = GridSpec::new(Vec3::zeros(), 1.0, [4, 4, 4]).unwrap();
        let grid = ScalarGrid3::from_fn(spec, |_| 3.0);
        assert!(extract_isosurface(&grid, 0.0).is_empty());
        assert!(extract_isosurface(&grid, 3.0).is_empty());
    }

    #[test]
    fn plane_field_gives_flat_sheet() {
        let spec = GridSpec::new(Vec3::zeros(), 0.5, [6, 5, 8]).unwrap();
        for c in [1.3, 1.5] {
            let grid = ScalarGrid3::from_fn(spec, |p| p.z - c);
            let mesh = extract_isosurface(&grid, 0.0);
            assert!(!mesh.is_empty());
            for v in &mesh.vertices {
                assert!((v.z - c).abs() <= 1e-9, "z {} vs {c}", v.z);
            }
            // Normals point towards increasing field, i.e. +z.
            for t in &mesh.triangles {
                let [a, b, cc] = t.map(|i| mesh.vertices[i as usize]);
                assert!((b - a).cross(&(cc - a)).z > 0.0);
            }
        }
    }

    #[test]
    fn obj_output_is_one_based() {
        let mesh = TriangleMesh {
            vertices: vec![Vec3::zeros(), Vec3::x(), Vec3::y()],
            triangles: vec![[0, 1, 2]],
        };
        assert_eq!(mesh.to_obj(), "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n");
    }
}
