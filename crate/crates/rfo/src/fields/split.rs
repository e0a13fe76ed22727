//! Harmonic splitting of a Dirichlet field against a sub-box, and the
//! locality of Dirichlet fields under changes of the domain.

use std::sync::Arc;

use serde::Serialize;

use super::{solve_green, Bc, DisorderRealization, GreenField, ScalarField, SolveOptions};
use crate::error::{Error, Result};
use crate::geometry::{boundary, LatticeBox, Region, Side, Site};
use crate::stencil::{direction_step, Stencil, NONE};

#[derive(Clone, Debug)]
pub struct HarmonicSplit {
    pub g_sub: GreenField,
    /// g_outer − g_sub on the sub-box
    pub h: ScalarField,
    /// sup-norm of (−Δ + λ)h inside the sub-box, h read as g_outer outside
    pub harmonic_residual: f64,
    /// Σ_{e∩sub≠∅} ∇g_sub·∇h
    pub cross_term: f64,
    /// −λ Σ g_sub h, the value the cross term takes for exactly harmonic h
    pub lambda_correction: f64,
    pub energy_outer: f64,
    pub energy_sub: f64,
    pub energy_h: f64,
}

impl HarmonicSplit {
    /// |E_outer − E_sub − E_h − 2λ-correction| / E_outer.
    pub fn additivity_defect(&self) -> f64 {
        let lhs = self.energy_outer;
        let rhs = self.energy_sub + self.energy_h + 2.0 * self.lambda_correction;
        (lhs - rhs).abs() / lhs.abs().max(f64::MIN_POSITIVE)
    }
}

pub fn harmonic_split(
    real: &DisorderRealization,
    g_outer: &GreenField,
    sub: &LatticeBox,
    opts: &SolveOptions,
) -> Result<HarmonicSplit> {
    if g_outer.bc != Bc::Dirichlet {
        return Err(Error::invalid("harmonic splitting needs Dirichlet fields"));
    }
    let sub_region = Arc::new(sub.region());
    if !sub_region.is_subset(g_outer.region()) {
        return Err(Error::invalid("sub-box must lie inside the outer domain"));
    }
    let real = real.with_epsilon(g_outer.epsilon);
    let g_sub = solve_green(&real, &sub_region, g_outer.lambda, Bc::Dirichlet, opts)?;
    let h_vals: Vec<f64> = sub_region
        .sites()
        .iter()
        .zip(g_sub.values())
        .map(|(&x, gs)| g_outer.value(x) - gs)
        .collect();
    let h = ScalarField::new(sub_region.clone(), h_vals)?;
    // h extended by g_outer off the sub-box
    let h_ext = |x: Site| h.get(x).unwrap_or_else(|| g_outer.value(x));

    let st = Stencil::new(&sub_region);
    let dirs = st.dirs();
    let lambda = g_outer.lambda;
    let mut harmonic_residual: f64 = 0.0;
    let (mut e_outer, mut e_sub, mut e_h, mut cross) = (0.0, 0.0, 0.0, 0.0);
    for (i, &x) in sub_region.sites().iter().enumerate() {
        let mut lap = (dirs as f64 + lambda) * h.values()[i];
        for (k, &j) in st.neighbors(i).iter().enumerate() {
            let y = direction_step(x, k);
            lap -= h_ext(y);
            // each edge once: interior edges from the lower end, crossing edges always
            if j == NONE || k % 2 == 1 {
                let go = g_outer.value(y) - g_outer.value(x);
                let gs = g_sub.value(y) - g_sub.value(x);
                let gh = h_ext(y) - h_ext(x);
                e_outer += go * go;
                e_sub += gs * gs;
                e_h += gh * gh;
                cross += gs * gh;
            }
        }
        harmonic_residual = harmonic_residual.max(lap.abs());
    }
    let lambda_correction = -lambda * g_sub.values().iter().zip(h.values()).map(|(a, b)| a * b).sum::<f64>();
    Ok(HarmonicSplit {
        g_sub,
        h,
        harmonic_residual,
        cross_term: cross,
        lambda_correction,
        energy_outer: e_outer,
        energy_sub: e_sub,
        energy_h: e_h,
    })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct LocalityGap {
    pub gap: f64,
    /// ℓ^∞ distance from x to the outer boundary of the symmetric difference
    pub distance: f64,
}

pub fn locality_gap(
    real: &DisorderRealization,
    region: &Arc<Region>,
    boxq: &LatticeBox,
    lambda: f64,
    x: Site,
    opts: &SolveOptions,
) -> Result<LocalityGap> {
    let qr = Arc::new(boxq.region());
    if !qr.contains(x) || !region.contains(x) {
        return Err(Error::invalid("locality probe site must lie in both domains"));
    }
    let gr = solve_green(real, region, lambda, Bc::Dirichlet, opts)?;
    let gq = solve_green(real, &qr, lambda, Bc::Dirichlet, opts)?;
    let gap = (gq.value(x) - gr.value(x)).abs();
    let sym = qr.difference(region).union(&region.difference(&qr));
    let distance = if sym.is_empty() {
        f64::INFINITY
    } else {
        boundary(&sym, Side::Outer).sites().iter().chain(sym.sites()).map(|y| y.linf(x)).min().unwrap() as f64
    };
    Ok(LocalityGap { gap, distance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::sample_alpha;

    #[test]
    fn full_box_split_is_trivial() {
        let b = LatticeBox::new(2, Site::origin(), 6);
        let r = Arc::new(b.region());
        let real = sample_alpha(r.clone(), 4, 1.0);
        let o = SolveOptions { tol: 1e-13, max_iter: 0 };
        let g = solve_green(&real, &r, 0.0, Bc::Dirichlet, &o).unwrap();
        let s = harmonic_split(&real, &g, &b, &o).unwrap();
        assert!(s.h.sup_norm() < 1e-12);
        let outside = LatticeBox::new(2, Site::new(&[3, 3]), 6);
        assert!(harmonic_split(&real, &g, &outside, &o).is_err());
    }

    #[test]
    fn identical_domains_have_no_gap() {
        let b = LatticeBox::new(2, Site::origin(), 6);
        let r = Arc::new(b.region());
        let real = sample_alpha(r.clone(), 4, 1.0);
        let lg = locality_gap(&real, &r, &b, 0.1, Site::new(&[3, 3]), &SolveOptions::default()).unwrap();
        assert_eq!(lg.gap, 0.0);
        assert!(lg.distance.is_infinite());
    }
}
