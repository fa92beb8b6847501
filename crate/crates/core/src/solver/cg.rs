//! Conjugate gradients for symmetric positive (semi)definite operators.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CgOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
    /// `‖b − A x‖ / ‖b‖` as tracked by the recurrence.
    pub relative_residual: f64,
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solves `A x = b` with at most `max_iter` iterations, stopping once the
/// relative residual drops to `tol`. `x0` warm-starts the iteration.
pub fn cg_solve<F>(apply: F, rhs: &[f64], x0: Option<&[f64]>, max_iter: usize, tol: f64) -> Result<CgOutcome>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = rhs.len();
    let b_norm = norm(rhs);
    if b_norm == 0.0 {
        return Ok(CgOutcome { solution: vec![0.0; n], iterations: 0, relative_residual: 0.0 });
    }
    if !b_norm.is_finite() {
        return Err(Error::Solver { iteration: 0, reason: "non-finite right-hand side in CG".into() });
    }
    let mut x = match x0 {
        Some(x0) => {
            assert_eq!(x0.len(), n, "warm start length");
            x0.to_vec()
        }
        None => vec![0.0; n],
    };
    let mut r: Vec<f64> = match x0 {
        Some(_) => {
            let ax = apply(&x);
            rhs.iter().zip(&ax).map(|(b, a)| b - a).collect()
        }
        None => rhs.to_vec(),
    };
    let mut rs = dot(&r, &r);
    if rs.sqrt() <= tol * b_norm {
        return Ok(CgOutcome { solution: x, iterations: 0, relative_residual: rs.sqrt() / b_norm });
    }
    let mut p = r.clone();
    let mut iterations = 0;
    for it in 1..=max_iter {
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if !pap.is_finite() {
            return Err(Error::Solver { iteration: it, reason: "non-finite curvature in CG".into() });
        }
        if pap <= 0.0 {
            // direction in the null space; nothing more to gain
            break;
        }
        let step = rs / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        iterations = it;
        let rs_new = dot(&r, &r);
        if !rs_new.is_finite() {
            return Err(Error::Solver { iteration: it, reason: "non-finite residual in CG".into() });
        }
        if rs_new.sqrt() <= tol * b_norm {
            rs = rs_new;
            break;
        }
        let beta = rs_new / rs;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rs = rs_new;
    }
    Ok(CgOutcome { solution: x, iterations, relative_residual: rs.sqrt() / b_norm })
}
