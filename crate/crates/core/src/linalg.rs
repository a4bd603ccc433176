//! Symmetric positive-definite solvers shared by the spatial-domain filters.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CgOptions {
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for CgOptions {
    fn default() -> Self {
        CgOptions {
            rel_tol: 1e-6,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOutcome {
    pub iterations: usize,
    pub rel_residual: f64,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned conjugate gradient on `A x = b`, starting from `x`.
///
/// Stops when `‖b - A x‖ ≤ rel_tol · ‖b‖` or after `max_iter` steps; the last
/// iterate is kept either way.
pub fn pcg(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    diag: &[f64],
    b: &[f64],
    x: &mut [f64],
    opts: CgOptions,
) -> CgOutcome {
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        x.fill(0.0);
        return CgOutcome {
            iterations: 0,
            rel_residual: 0.0,
            converged: true,
        };
    }
    let ax = apply(x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut z: Vec<f64> = r.iter().zip(diag).map(|(ri, di)| ri / di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut rel = dot(&r, &r).sqrt() / b_norm;
    let mut it = 0;
    while rel > opts.rel_tol && it < opts.max_iter {
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let step = rz / pap;
        for i in 0..x.len() {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        for i in 0..z.len() {
            z[i] = r[i] / diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..p.len() {
            p[i] = z[i] + beta * p[i];
        }
        rel = dot(&r, &r).sqrt() / b_norm;
        it += 1;
    }
    CgOutcome {
        iterations: it,
        rel_residual: rel,
        converged: rel <= opts.rel_tol,
    }
}

/// Cholesky solve of a dense SPD system.
pub fn solve_spd(matrix: DMatrix<f64>, rhs: &[f64]) -> Result<Vec<f64>> {
    let chol = matrix
        .cholesky()
        .ok_or_else(|| Error::InvalidConfig("normal matrix is not positive definite".into()))?;
    Ok(chol.solve(&DVector::from_column_slice(rhs)).as_slice().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pcg_solves_small_spd_system() {
        let a = [[4.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 100.0]];
        let apply = |v: &[f64]| (0..3).map(|i| (0..3).map(|j| a[i][j] * v[j]).sum()).collect();
        let b = [1.0, 2.0, 3.0];
        let mut x = vec![0.0; 3];
        let out = pcg(apply, &[4.0, 3.0, 100.0], &b, &mut x, CgOptions { rel_tol: 1e-12, max_iter: 50 });
        assert!(out.converged);
        let dense = solve_spd(DMatrix::from_fn(3, 3, |i, j| a[i][j]), &b).unwrap();
        for (u, v) in x.iter().zip(&dense) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let mut x = vec![1.0, 2.0];
        let out = pcg(|v: &[f64]| v.to_vec(), &[1.0, 1.0], &[0.0, 0.0], &mut x, CgOptions::default());
        assert!(out.converged);
        assert_eq!(x, vec![0.0, 0.0]);
    }

    #[test]
    fn indefinite_matrix_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(solve_spd(m, &[1.0, 1.0]).is_err());
    }
}
