//! Binary-image helpers on row-major `nu x nv` grids.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

const N4: [(isize, isize); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
const N8: [(isize, isize); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];

impl Connectivity {
    fn offsets(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &N4,
            Connectivity::Eight => &N8,
        }
    }
}

/// Neighbour indices of `idx` under the given connectivity.
pub fn neighbors(idx: usize, nu: usize, nv: usize, conn: Connectivity) -> impl Iterator<Item = usize> {
    let (i, j) = ((idx % nu) as isize, (idx / nu) as isize);
    conn.offsets().iter().filter_map(move |&(di, dj)| {
        let (a, b) = (i + di, j + dj);
        (a >= 0 && b >= 0 && (a as usize) < nu && (b as usize) < nv).then(|| b as usize * nu + a as usize)
    })
}

/// Connected-component labelling. Returns per-pixel ids (0 = not set,
/// components numbered from 1 in scan order) and the component count.
pub fn label_components(mask: &[bool], nu: usize, nv: usize, conn: Connectivity) -> (Vec<u32>, usize) {
    let mut ids = vec![0u32; mask.len()];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..mask.len() {
        if !mask[start] || ids[start] != 0 {
            continue;
        }
        next += 1;
        ids[start] = next;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            for q in neighbors(p, nu, nv, conn) {
                if mask[q] && ids[q] == 0 {
                    ids[q] = next;
                    queue.push_back(q);
                }
            }
        }
    }
    (ids, next as usize)
}

/// Exact squared Euclidean distance (in pixels) from every pixel to the
/// nearest seed pixel; `f64::INFINITY` everywhere when there are no seeds.
pub fn distance_transform_sq(seeds: &[bool], nu: usize, nv: usize) -> Vec<f64> {
    let mut grid: Vec<f64> = seeds.iter().map(|&s| if s { 0.0 } else { f64::INFINITY }).collect();
    let mut col = vec![0.0; nv];
    let mut out = vec![0.0; nv.max(nu)];
    for i in 0..nu {
        for j in 0..nv {
            col[j] = grid[j * nu + i];
        }
        edt_1d(&col, &mut out[..nv]);
        for j in 0..nv {
            grid[j * nu + i] = out[j];
        }
    }
    let mut row = vec![0.0; nu];
    for j in 0..nv {
        row.copy_from_slice(&grid[j * nu..(j + 1) * nu]);
        edt_1d(&row, &mut out[..nu]);
        grid[j * nu..(j + 1) * nu].copy_from_slice(&out[..nu]);
    }
    grid
}

/// Lower envelope of parabolas (Felzenszwalb & Huttenlocher).
fn edt_1d(f: &[f64], d: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    let first = match f.iter().position(|x| x.is_finite()) {
        Some(p) => p,
        None => {
            d.fill(f64::INFINITY);
            return;
        }
    };
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in (first + 1)..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] {
                if k == 0 {
                    v[0] = q;
                    z[1] = f64::INFINITY;
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    k = 0;
    for (q, dq) in d.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dx = q as f64 - p as f64;
        *dq = dx * dx + f[p];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_vs_eight_connectivity() {
        // Diagonal pair.
        let m = [true, false, false, true];
        assert_eq!(label_components(&m, 2, 2, Connectivity::Four).1, 2);
        assert_eq!(label_components(&m, 2, 2, Connectivity::Eight).1, 1);
    }

    #[test]
    fn edt_matches_brute_force() {
        let (nu, nv) = (13, 9);
        let seeds: Vec<bool> = (0..nu * nv).map(|k| k % 17 == 3 || k == 50).collect();
        let d = distance_transform_sq(&seeds, nu, nv);
        for p in 0..nu * nv {
            let (pi, pj) = ((p % nu) as f64, (p / nu) as f64);
            let brute = (0..nu * nv)
                .filter(|&s| seeds[s])
                .map(|s| {
                    let (si, sj) = ((s % nu) as f64, (s / nu) as f64);
                    (pi - si).powi(2) + (pj - sj).powi(2)
                })
                .fold(f64::INFINITY, f64::min);
            assert_eq!(d[p], brute);
        }
        assert!(distance_transform_sq(&[false; 6], 3, 2).iter().all(|v| v.is_infinite()));
    }
}
