//! Jacobi-preconditioned conjugate gradients for (−Δ^{bc} + λ) g = b.

use std::sync::Arc;

use super::{Bc, DisorderRealization, GreenField, ScalarField};
use crate::error::{Error, Result};
use crate::geometry::Region;
use crate::stencil::{Stencil, NONE};

#[derive(Clone, Copy, Debug)]
pub struct SolveOptions {
    /// stop when ‖b − Ag‖_∞ ≤ tol·‖b‖_∞
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { tol: 1e-10, max_iter: 0 }
    }
}

fn diagonal(st: &Stencil, lambda: f64, bc: Bc) -> Vec<f64> {
    (0..st.len())
        .map(|i| match bc {
            Bc::Dirichlet => st.dirs() as f64 + lambda,
            Bc::Neumann => st.degree(i) as f64 + lambda,
        })
        .collect()
}

/// out = (−Δ^{bc} + λ) f on the region of the stencil.
pub fn apply_operator(st: &Stencil, lambda: f64, bc: Bc, f: &[f64], out: &mut [f64]) {
    for i in 0..st.len() {
        let mut s = 0.0;
        let mut deg = 0usize;
        for &j in st.neighbors(i) {
            if j != NONE {
                s += f[j as usize];
                deg += 1;
            }
        }
        let diag = match bc {
            Bc::Dirichlet => st.dirs() as f64 + lambda,
            Bc::Neumann => deg as f64 + lambda,
        };
        out[i] = diag * f[i] - s;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sup(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn center(v: &mut [f64]) {
    if v.is_empty() {
        return;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
}

/// Solves with an arbitrary right-hand side. For Neumann with λ = 0 the
/// source and iterates are projected onto mean-zero functions.
pub fn solve_source(
    region: &Region,
    lambda: f64,
    bc: Bc,
    rhs: &[f64],
    opts: &SolveOptions,
) -> Result<(Vec<f64>, f64, usize)> {
    if lambda < 0.0 {
        return Err(Error::invalid("mass λ must be non-negative"));
    }
    let st = Stencil::new(region);
    let n = region.len();
    let singular = bc == Bc::Neumann && lambda == 0.0;
    let mut b = rhs.to_vec();
    if singular {
        center(&mut b);
    }
    let bnorm = sup(&b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((x, 0.0, 0));
    }
    let target = opts.tol * bnorm;
    let diag = diagonal(&st, lambda, bc);
    let max_iter = if opts.max_iter == 0 { 20 * n + 1000 } else { opts.max_iter };
    let mut r = b.clone();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(a, d)| a / d).collect();
    if singular {
        center(&mut z);
    }
    let mut p = z.clone();
    let mut q = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut iters = 0;
    // the recursive residual drifts from the true one; recheck on exit
    for _restart in 0..3 {
        while iters < max_iter && sup(&r) > 0.5 * target {
            apply_operator(&st, lambda, bc, &p, &mut q);
            let pq = dot(&p, &q);
            if pq <= 0.0 {
                break;
            }
            let a = rz / pq;
            for i in 0..n {
                x[i] += a * p[i];
                r[i] -= a * q[i];
            }
            if singular {
                center(&mut r);
            }
            for i in 0..n {
                z[i] = r[i] / diag[i];
            }
            if singular {
                center(&mut z);
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
            iters += 1;
        }
        if singular {
            center(&mut x);
        }
        apply_operator(&st, lambda, bc, &x, &mut q);
        for i in 0..n {
            r[i] = b[i] - q[i];
        }
        if sup(&r) <= target || iters >= max_iter {
            break;
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        if singular {
            center(&mut z);
        }
        p.copy_from_slice(&z);
        rz = dot(&r, &z);
    }
    let res = sup(&r);
    if res > target {
        return Err(Error::NotConverged { what: "conjugate gradient", residual: res, iterations: iters });
    }
    Ok((x, res, iters))
}

/// g = ε(−Δ^D + λ)^{-1}α or ε(−Δ^N + λ)^{-1}α̂ on `subregion`.
pub fn solve_green(
    real: &DisorderRealization,
    subregion: &Arc<Region>,
    lambda: f64,
    bc: Bc,
    opts: &SolveOptions,
) -> Result<GreenField> {
    let mut src: Vec<f64> = real.alpha_on(subregion).iter().map(|a| real.epsilon * a).collect();
    if bc == Bc::Neumann {
        center(&mut src);
    }
    let (x, residual, iterations) = solve_source(subregion, lambda, bc, &src, opts)?;
    Ok(GreenField {
        field: ScalarField::new(subregion.clone(), x)?,
        lambda,
        bc,
        epsilon: real.epsilon,
        residual,
        iterations,
    })
}
