//! Conjugate gradient for symmetric positive (semi-)definite operators
//! given only through their action on a vector.

use crate::error::{Error, Result};
use crate::vecops::{axpy, dot, norm2};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions {
    /// Stop when `‖b − Kx‖ ≤ tol·‖b‖`.
    pub tol: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Solves `K x = b` where `apply(v, out)` writes `K v` into `out`.
///
/// `x0` is the starting guess (zeros when `None`). Returns
/// [`Error::Solver`] carrying the final relative residual when the
/// tolerance is not met within `max_iter` iterations.
pub fn conjugate_gradient<F>(
    mut apply: F,
    b: &[f64],
    x0: Option<&[f64]>,
    opts: CgOptions,
) -> Result<CgOutcome>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let n = b.len();
    let b_norm = norm2(b);
    if b_norm == 0.0 {
        return Ok(CgOutcome {
            x: vec![0.0; n],
            iterations: 0,
            relative_residual: 0.0,
        });
    }

    let mut x = match x0 {
        Some(x0) => x0.to_vec(),
        None => vec![0.0; n],
    };
    let mut kp = vec![0.0; n];
    let mut r = b.to_vec();
    if x0.is_some() {
        apply(&x, &mut kp);
        axpy(-1.0, &kp, &mut r);
    }
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let target = opts.tol * b_norm;

    let mut iterations = 0;
    while rr.sqrt() > target {
        if iterations >= opts.max_iter {
            return Err(Error::Solver {
                iterations,
                residual: rr.sqrt() / b_norm,
            });
        }
        apply(&p, &mut kp);
        let pkp = dot(&p, &kp);
        if pkp <= 0.0 || !pkp.is_finite() {
            // Direction in the kernel of K: the system is singular along p.
            return Err(Error::Solver {
                iterations,
                residual: rr.sqrt() / b_norm,
            });
        }
        let alpha = rr / pkp;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &kp, &mut r);
        let rr_next = dot(&r, &r);
        let beta = rr_next / rr;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rr = rr_next;
        iterations += 1;
    }

    Ok(CgOutcome {
        x,
        iterations,
        relative_residual: rr.sqrt() / b_norm,
    })
}
