use super::csr::CsrMatrix;
use crate::error::{Error, Result};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Jacobi-preconditioned BiCGStab. Stops when `‖b − Ax‖ ≤ tol ‖b‖`.
pub fn bicgstab(a: &CsrMatrix, b: &[f64], x0: Option<&[f64]>, tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = a.nrows();
    if b.len() != n || a.ncols() != n {
        return Err(Error::Dimension("BiCGStab requires a square system".into()));
    }
    let dinv: Vec<f64> = (0..n)
        .map(|i| {
            let d = a.get(i, i);
            if d.abs() > 0.0 {
                1.0 / d
            } else {
                1.0
            }
        })
        .collect();
    let precond = |v: &[f64]| -> Vec<f64> { v.iter().zip(&dinv).map(|(x, d)| x * d).collect() };
    let mut x = x0.map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; n]);
    let ax = a.mul(&x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
    let bnorm = norm(b).max(f64::MIN_POSITIVE);
    if norm(&r) <= tol * bnorm {
        return Ok(x);
    }
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    for it in 0..max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 {
            return Err(Error::NoConvergence { iterations: it, residual: norm(&r) / bnorm });
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let y = precond(&p);
        v = a.mul(&y);
        alpha = rho / dot(&r_hat, &v);
        let s: Vec<f64> = r.iter().zip(&v).map(|(ri, vi)| ri - alpha * vi).collect();
        if norm(&s) <= tol * bnorm {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            return Ok(x);
        }
        let z = precond(&s);
        let t = a.mul(&z);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * y[i] + omega * z[i];
            r[i] = s[i] - omega * t[i];
        }
        if norm(&r) <= tol * bnorm {
            return Ok(x);
        }
        if omega == 0.0 {
            return Err(Error::NoConvergence { iterations: it, residual: norm(&r) / bnorm });
        }
    }
    Err(Error::NoConvergence { iterations: max_iter, residual: norm(&r) / bnorm })
}
