//! Separable eigenbasis of the box Laplacians: sine modes for Dirichlet,
//! cosine modes for Neumann.

use std::f64::consts::PI;
use std::sync::Arc;

use super::{apply_operator, Bc, DisorderRealization, GreenField, ScalarField};
use crate::error::{Error, Result};
use crate::geometry::{LatticeBox, Region};
use crate::stencil::Stencil;

/// Orthonormal 1-D modes (row k = mode k) and their eigenvalues, extended to
/// a cube by tensor products. Arrays are in the region's lexicographic order.
#[derive(Clone, Debug)]
pub struct BoxSpectrum {
    pub dim: usize,
    pub side: usize,
    pub bc: Bc,
    modes: Vec<f64>,
    evals: Vec<f64>,
}

impl BoxSpectrum {
    pub fn new(dim: usize, side: usize, bc: Bc) -> BoxSpectrum {
        let n = side;
        let mut modes = vec![0.0; n * n];
        let mut evals = vec![0.0; n];
        for k in 0..n {
            match bc {
                Bc::Dirichlet => {
                    let kk = (k + 1) as f64;
                    let norm = (2.0 / (n as f64 + 1.0)).sqrt();
                    for j in 0..n {
                        modes[k * n + j] = norm * (PI * kk * (j as f64 + 1.0) / (n as f64 + 1.0)).sin();
                    }
                    evals[k] = 2.0 - 2.0 * (PI * kk / (n as f64 + 1.0)).cos();
                }
                Bc::Neumann => {
                    let norm = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
                    for j in 0..n {
                        modes[k * n + j] = norm * (PI * k as f64 * (j as f64 + 0.5) / n as f64).cos();
                    }
                    evals[k] = 2.0 - 2.0 * (PI * k as f64 / n as f64).cos();
                }
            }
        }
        BoxSpectrum { dim, side, bc, modes, evals }
    }

    pub fn len(&self) -> usize {
        self.side.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.side == 0
    }

    /// 1-D mode value v_k(j).
    pub fn mode(&self, k: usize, j: usize) -> f64 {
        self.modes[k * self.side + j]
    }

    /// Eigenvalue of the multi-index stored at flat position `idx`.
    pub fn eigenvalue(&self, idx: usize) -> f64 {
        let n = self.side;
        let mut rest = idx;
        let mut mu = 0.0;
        for _ in 0..self.dim {
            mu += self.evals[rest % n];
            rest /= n;
        }
        mu
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.eigenvalue(i)).collect()
    }

    /// Product mode evaluated at the flat site index.
    pub fn mode_at(&self, mode_idx: usize, site_idx: usize) -> f64 {
        let n = self.side;
        let (mut a, mut b) = (mode_idx, site_idx);
        let mut v = 1.0;
        for _ in 0..self.dim {
            v *= self.mode(a % n, b % n);
            a /= n;
            b /= n;
        }
        v
    }

    fn transform(&self, data: &[f64], forward: bool) -> Vec<f64> {
        let n = self.side;
        let mut cur = data.to_vec();
        let mut next = vec![0.0; cur.len()];
        for axis in 0..self.dim {
            let stride = n.pow((self.dim - 1 - axis) as u32);
            let outer = cur.len() / (n * stride);
            for o in 0..outer {
                for s in 0..stride {
                    let base = o * n * stride + s;
                    for a in 0..n {
                        let mut acc = 0.0;
                        for b in 0..n {
                            let m = if forward { self.modes[a * n + b] } else { self.modes[b * n + a] };
                            acc += m * cur[base + b * stride];
                        }
                        next[base + a * stride] = acc;
                    }
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// Mode coefficients of a site array.
    pub fn forward(&self, values: &[f64]) -> Vec<f64> {
        self.transform(values, true)
    }

    /// Site array of a coefficient vector.
    pub fn inverse(&self, coeffs: &[f64]) -> Vec<f64> {
        self.transform(coeffs, false)
    }

    /// (−Δ + λ)^{-1} applied through the spectrum; the Neumann zero mode is
    /// dropped when λ = 0.
    pub fn solve(&self, rhs: &[f64], lambda: f64) -> Vec<f64> {
        let mut c = self.forward(rhs);
        for (i, v) in c.iter_mut().enumerate() {
            let mu = self.eigenvalue(i) + lambda;
            *v = if mu > 0.0 { *v / mu } else { 0.0 };
        }
        self.inverse(&c)
    }
}

/// The cube whose sites are exactly the region.
pub fn box_of(region: &Region) -> Result<LatticeBox> {
    let (lo, hi) = region.bounds().ok_or_else(|| Error::invalid("empty region is not a box"))?;
    let side = hi.0[0] - lo.0[0] + 1;
    let cube = (0..region.dim()).all(|i| hi.0[i] - lo.0[i] + 1 == side);
    let b = LatticeBox::new(region.dim(), lo, side);
    if !cube || b.volume() != region.len() {
        return Err(Error::invalid("eigenbasis oracle needs a full cubic box"));
    }
    Ok(b)
}

pub fn eigen_solve_oracle(real: &DisorderRealization, cube: &LatticeBox, lambda: f64, bc: Bc) -> Result<GreenField> {
    let region = Arc::new(cube.region());
    let spec = BoxSpectrum::new(cube.dim, cube.side as usize, bc);
    let mut src: Vec<f64> = real.alpha_on(&region).iter().map(|a| real.epsilon * a).collect();
    if bc == Bc::Neumann {
        let mean = src.iter().sum::<f64>() / src.len() as f64;
        src.iter_mut().for_each(|v| *v -= mean);
    }
    let g = spec.solve(&src, lambda);
    let st = Stencil::new(&region);
    let mut ag = vec![0.0; g.len()];
    apply_operator(&st, lambda, bc, &g, &mut ag);
    let residual = ag.iter().zip(&src).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    Ok(GreenField {
        field: ScalarField::new(region, g)?,
        lambda,
        bc,
        epsilon: real.epsilon,
        residual,
        iterations: 0,
    })
}
