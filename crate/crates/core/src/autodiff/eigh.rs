//! Symmetric eigendecomposition by cyclic Jacobi rotations.

use crate::mat::Mat;
use crate::{Error, Result};

const MAX_SWEEPS: usize = 100;
const SYMMETRY_TOL: f64 = 1e-10;

/// Eigenvalues in ascending order with matching orthonormal eigenvector
/// columns, S = V diag(l) V^T. Sweeps run until the off-diagonal Frobenius
/// norm drops below 1e-12 relative to the input scale.
pub fn jacobi_eigh(s: &Mat) -> Result<(Vec<f64>, Mat)> {
    let n = s.rows();
    if n != s.cols() {
        return Err(Error::invalid(format!(
            "eigh needs a square matrix, got {:?}",
            s.shape()
        )));
    }
    let mut asym = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            asym = asym.max((s.at(i, j) - s.at(j, i)).abs());
        }
    }
    if asym > SYMMETRY_TOL {
        return Err(Error::Asymmetric(asym));
    }

    let mut a = s.clone();
    let mut v = Mat::eye(n);
    let scale = s.frob_norm().max(1.0);
    let tol = 1e-12 * scale;

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += 2.0 * a.at(i, j) * a.at(i, j);
            }
        }
        if off.sqrt() < tol {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.at(p, q);
                if apq.abs() < tol / (n as f64 * n as f64) {
                    continue;
                }
                let tau = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    1.0 / (tau - (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let sn = t * c;
                rotate(&mut a, &mut v, p, q, c, sn, t);
            }
        }
    }
    if !converged {
        // final re-check after the last sweep
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += 2.0 * a.at(i, j) * a.at(i, j);
            }
        }
        if off.sqrt() >= tol {
            return Err(Error::EighNoConvergence(MAX_SWEEPS));
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = (0..n).map(|i| a.at(i, i)).collect();
    order.sort_by(|&i, &j| diag[i].partial_cmp(&diag[j]).expect("finite eigenvalues"));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| diag[i]).collect();
    let mut vectors = Mat::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        for row in 0..n {
            *vectors.at_mut(row, col) = v.at(row, src);
        }
    }
    Ok((eigenvalues, vectors))
}

fn rotate(a: &mut Mat, v: &mut Mat, p: usize, q: usize, c: f64, s: f64, t: f64) {
    let n = a.rows();
    let apq = a.at(p, q);
    let app = a.at(p, p);
    let aqq = a.at(q, q);
    *a.at_mut(p, p) = app - t * apq;
    *a.at_mut(q, q) = aqq + t * apq;
    *a.at_mut(p, q) = 0.0;
    *a.at_mut(q, p) = 0.0;
    for i in 0..n {
        if i != p && i != q {
            let aip = a.at(i, p);
            let aiq = a.at(i, q);
            let new_p = c * aip - s * aiq;
            let new_q = s * aip + c * aiq;
            *a.at_mut(i, p) = new_p;
            *a.at_mut(p, i) = new_p;
            *a.at_mut(i, q) = new_q;
            *a.at_mut(q, i) = new_q;
        }
    }
    for i in 0..n {
        let vip = v.at(i, p);
        let viq = v.at(i, q);
        *v.at_mut(i, p) = c * vip - s * viq;
        *v.at_mut(i, q) = s * vip + c * viq;
    }
}
