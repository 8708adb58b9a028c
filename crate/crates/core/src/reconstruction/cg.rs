//! Jacobi-preconditioned conjugate gradient with minimal residual smoothing.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    /// Final relative residual `|b - A x| / |b|`.
    pub residual: f64,
    /// Relative residual of the smoothed iterate after each iteration.
    /// Non-increasing by construction.
    pub history: Vec<f64>,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solve `A x = b` for symmetric positive definite `A` given as a
/// matrix-free `apply(x, out)`. `x` holds the initial guess and receives
/// the smoothed solution.
///
/// The plain CG residual oscillates; the Schönauer-Weiss smoothed sequence
/// `y_k` with `s_k = b - A y_k` minimises `|s_k|` along `r_k - s_{k-1}`, so
/// the reported residual never increases.
pub fn solve(
    apply: impl Fn(&[f64], &mut [f64]),
    diag: &[f64],
    b: &[f64],
    x: &mut [f64],
    tolerance: f64,
    max_iterations: usize,
) -> SolveReport {
    let n = b.len();
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        x.fill(0.0);
        return SolveReport {
            iterations: 0,
            residual: 0.0,
            history: Vec::new(),
            converged: true,
        };
    }
    let inv_diag: Vec<f64> = diag.iter().map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 }).collect();

    let mut ax = vec![0.0; n];
    apply(x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut y = x.to_vec();
    let mut s = r.clone();
    let mut s_norm = dot(&s, &s).sqrt();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut history = Vec::new();
    let mut iterations = 0;

    while s_norm / b_norm > tolerance && iterations < max_iterations {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rz / pap;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        iterations += 1;

        // Minimal residual smoothing.
        let mut dd = 0.0;
        let mut sd = 0.0;
        for k in 0..n {
            let d = r[k] - s[k];
            dd += d * d;
            sd += s[k] * d;
        }
        if dd > 0.0 {
            let eta = (-sd / dd).clamp(0.0, 1.0);
            for k in 0..n {
                s[k] += eta * (r[k] - s[k]);
                y[k] += eta * (x[k] - y[k]);
            }
            s_norm = dot(&s, &s).sqrt();
        }
        history.push(s_norm / b_norm);

        for k in 0..n {
            z[k] = r[k] * inv_diag[k];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
    }

    x.copy_from_slice(&y);
    apply(x, &mut ax);
    let true_res = b.iter().zip(&ax).map(|(b, a)| (b - a) * (b - a)).sum::<f64>().sqrt() / b_norm;
    SolveReport {
        iterations,
        residual: true_res,
        converged: true_res <= tolerance,
        history,
    }
}
