//! Phase variables on spin configurations (ψ⁽⁰⁾, ψ⁽¹⁾, ψ, Ψ) and the disorder
//! taxonomy: nice and good boxes, good, regular and clean regions.

use std::sync::Arc;

use rayon::prelude::*;
use rustc_hash::{FxHashMap, FxHashSet};
use serde::{Deserialize, Serialize};

use crate::dense::{window_any, Prefix};
use crate::energy::{spin_dist_sq, BoundaryCondition, SpinConfig};
use crate::error::{Error, Result};
use crate::fields::{local_potential, solve_green, Bc, BoxSpectrum, DisorderRealization, GreenField, SolveOptions};
use crate::geometry::{boundary, derive_scales, enlarge, enumerate_blocks, BlockFamily, Grid, LatticeBox, Region, Side, Site};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SupExponent {
    /// ‖g‖_∞ ≤ ε L₀^{-1/2}·factor
    Minus,
    /// ‖g‖_∞ ≤ ε L₀^{1/2}·factor
    Plus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScanMode {
    /// per-site loop over every box corner in the window
    Exhaustive,
    /// separable window reduction, same result in O(volume)
    Separable,
}

/// Every threshold of the phase variables and the disorder taxonomy. The
/// `paper` profile uses the asymptotic expressions; `calibrated` gives values
/// meaningful at desk-scale lattice sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// ψ⁽⁰⁾ passes when E_Q ≤ ε²·psi_energy·|Q|
    pub psi_energy: f64,
    /// window radius of the potential event; None gives min(⌈(ln L₀)⁹⁰⌉, L₀/4)
    pub potential_window: Option<i64>,
    pub field_sup: f64,
    pub sup_exponent: SupExponent,
    /// ‖∇g‖_∞ ≤ ε·gradient_sup
    pub gradient_sup: f64,
    pub alpha_sup: f64,
    pub alpha_mean: f64,
    /// F^∇ counts when F^∇ ≥ ε²·energy_cut; the sum may not exceed energy_budget·N
    pub energy_cut: f64,
    pub energy_budget: f64,
    /// F counts when F ≥ ε²(λ^{-1/2} ∧ L₀)·field_cut
    pub field_cut: f64,
    pub field_budget: f64,
    pub outlier_cut: f64,
    pub outlier_budget: f64,
    /// Σ|α(Q_η)| ≤ factor·L₀^{scale_exp}·(ln L₀)^{log_power}·N
    pub mean_budget_factor: f64,
    pub mean_budget_scale_exp: f64,
    pub mean_budget_log_power: f64,
    /// Σ(1 − Ξ) ≤ dense_budget·N
    pub dense_budget: f64,
}

impl Thresholds {
    pub fn paper(epsilon: f64) -> Thresholds {
        let le = epsilon.ln().abs();
        Thresholds {
            psi_energy: le,
            potential_window: None,
            field_sup: le.powi(30),
            sup_exponent: SupExponent::Plus,
            gradient_sup: le.powi(30),
            alpha_sup: le.powi(30),
            alpha_mean: le.powi(30),
            energy_cut: le,
            energy_budget: epsilon.powf(2.25),
            field_cut: le,
            field_budget: le * le,
            outlier_cut: le.powi(50),
            outlier_budget: le.powi(-75),
            mean_budget_factor: 1.0,
            mean_budget_scale_exp: -1.5,
            mean_budget_log_power: 50.0,
            dense_budget: le.powi(-55),
        }
    }

    /// Thresholds sized so that typical Gaussian disorder passes on lattices
    /// of a few thousand sites per box while planted outliers fail.
    pub fn calibrated(epsilon: f64, dim: usize) -> Thresholds {
        Thresholds {
            psi_energy: epsilon.ln().abs(),
            potential_window: None,
            field_sup: 4.0,
            sup_exponent: SupExponent::Plus,
            gradient_sup: 4.0,
            alpha_sup: 5.2,
            alpha_mean: 3.9,
            energy_cut: 2.0,
            energy_budget: 0.25,
            field_cut: 4.0,
            field_budget: 1.0,
            outlier_cut: 5.2,
            outlier_budget: 0.5,
            mean_budget_factor: 2.0,
            mean_budget_scale_exp: -(dim as f64) / 2.0,
            mean_budget_log_power: 0.0,
            dense_budget: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    pub epsilon: f64,
    /// block-magnetization cutoff of ψ⁽¹⁾
    pub xi: f64,
    pub small: i64,
    pub large: i64,
    /// lower and upper potential densities, in units of ε²
    pub a: f64,
    pub b: f64,
    pub thresholds: Thresholds,
    /// shifts η = k·L₀/16 are sampled for k ≡ 0 mod shift_stride (1 = all)
    pub shift_stride: i64,
    pub scan: ScanMode,
}

impl ClassifierParams {
    /// Scales from ε, paper thresholds, A and B from the Dirichlet trace at scale L.
    pub fn paper(epsilon: f64, xi: f64, dim: usize) -> Result<ClassifierParams> {
        let s = derive_scales(epsilon)?;
        let (a, b) = default_potential_band(dim, s.large);
        ClassifierParams {
            epsilon,
            xi,
            small: s.small,
            large: s.large,
            a,
            b,
            thresholds: Thresholds::paper(epsilon),
            shift_stride: 1,
            scan: ScanMode::Separable,
        }
        .validated()
    }

    /// Explicit scales with the calibrated profile and the sparsest shift family.
    pub fn calibrated(epsilon: f64, xi: f64, dim: usize, small: i64, large: i64) -> Result<ClassifierParams> {
        let (a, b) = default_potential_band(dim, large);
        ClassifierParams {
            epsilon,
            xi,
            small,
            large,
            a,
            b,
            thresholds: Thresholds::calibrated(epsilon, dim),
            shift_stride: 16,
            scan: ScanMode::Separable,
        }
        .validated()
    }

    pub fn validated(self) -> Result<ClassifierParams> {
        if !(self.xi > 0.0 && self.xi < 1.0) {
            return Err(Error::invalid(format!("ξ must lie in (0,1), got {}", self.xi)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("ε must be positive"));
        }
        if self.small < 1 || self.large < self.small {
            return Err(Error::invalid("scales must satisfy 1 ≤ ℓ ≤ L"));
        }
        if self.shift_stride < 1 || 32 % self.shift_stride != 0 {
            return Err(Error::invalid("shift stride must divide 32"));
        }
        Ok(self)
    }

    /// Potential window radius at scale L₀.
    pub fn potential_radius(&self, scale: i64) -> i64 {
        self.thresholds.potential_window.unwrap_or_else(|| {
            let paper = (scale as f64).ln().powi(90).ceil();
            let cap = (scale / 4).max(1);
            if paper.is_finite() && paper < cap as f64 {
                (paper as i64).max(1)
            } else {
                cap
            }
        })
    }

    /// Masses checked for niceness: the endpoints of [0, L₀⁻¹).
    pub fn niceness_masses(&self, scale: i64) -> Vec<f64> {
        vec![0.0, 0.5 / scale as f64]
    }

    /// Masses of the regularity estimates: 0 and L₀⁻²(ln L₀)⁸.
    pub fn regularity_masses(&self, scale: i64) -> Vec<f64> {
        let l = scale as f64;
        vec![0.0, l.ln().powi(8) / (l * l)]
    }

    /// Admissible shifts at scale L₀ after subsampling.
    pub fn shifts(&self, dim: usize, scale: i64) -> Result<Vec<Site>> {
        if (scale * self.shift_stride) % 16 != 0 {
            return Err(Error::invalid(format!(
                "shift stride {} is not integral at scale {scale}",
                self.shift_stride
            )));
        }
        let ks: Vec<i64> = (-32..=32).filter(|k| k % self.shift_stride == 0).map(|k| k * scale / 16).collect();
        let axis = |i: usize| if i < dim { ks.clone() } else { vec![0] };
        let mut out = Vec::new();
        for a in axis(0) {
            for b in axis(1) {
                for c in axis(2) {
                    out.push(Site([a, b, c]));
                }
            }
        }
        Ok(out)
    }
}

/// Mean squared gradient density of ε⁻¹g^{0,D} on a box of side `side`,
/// (1/|Q|) tr(−Δ^D)^{-1}, and the band (½, 2) around it.
pub fn default_potential_band(dim: usize, side: i64) -> (f64, f64) {
    let c = dirichlet_trace_density(dim, side.clamp(1, 32) as usize);
    (0.5 * c, 2.0 * c)
}

pub fn dirichlet_trace_density(dim: usize, side: usize) -> f64 {
    let sp = BoxSpectrum::new(dim, side, Bc::Dirichlet);
    sp.eigenvalues().iter().map(|m| 1.0 / m).sum::<f64>() / sp.len() as f64
}

// ---------------------------------------------------------------- phases

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Band {
    Plus,
    Minus,
    Neither,
}

fn band(avg_e1: f64, xi: f64) -> Band {
    if avg_e1 >= 1.0 - xi {
        Band::Plus
    } else if avg_e1 <= -1.0 + xi {
        Band::Minus
    } else {
        Band::Neither
    }
}

/// Classification of one ℓ-box; None when the box is not fully covered.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct BoxClass {
    calm: bool,
    band: Band,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct BlockPhase {
    pub value: i8,
    /// some block of the 2L-neighbourhood is not inside the configuration's domain
    pub boundary_affected: bool,
}

/// ψ⁽⁰⁾, ψ⁽¹⁾ on a frame around the configuration's domain and Ψ on the
/// L-blocks meeting the domain. Outside the frame a uniform boundary
/// condition gives the constant far-field value.
#[derive(Clone, Debug)]
pub struct PhaseMap {
    pub frame: Grid,
    pub small: i64,
    pub large: i64,
    psi0: Vec<u8>,
    psi1: Vec<i8>,
    defined: Vec<bool>,
    far: Option<(u8, i8)>,
    blocks: Vec<(Site, BlockPhase)>,
    block_index: FxHashMap<Site, usize>,
    /// box corners in the frame whose box was not fully covered
    pub skipped_boxes: usize,
}

fn angle_of(sigma: &SpinConfig, bc: &BoundaryCondition, x: Site) -> Option<f64> {
    match sigma.angle(x) {
        Some(a) => Some(a),
        None => bc.outside_angle(x).ok().flatten(),
    }
}

fn far_class(bc: &BoundaryCondition, xi: f64) -> Option<BoxClass> {
    match bc {
        BoundaryCondition::Uniform(a) => Some(BoxClass { calm: true, band: band(a.cos(), xi) }),
        _ => None,
    }
}

fn psi_from(eval: bool, fail0: bool, notplus: bool, notminus: bool) -> (u8, i8) {
    let p0 = u8::from(!fail0);
    let p1 = if !eval {
        0
    } else if !notplus {
        1
    } else if !notminus {
        -1
    } else {
        0
    };
    (p0, p1)
}

impl PhaseMap {
    pub fn compute(sigma: &SpinConfig, bc: &BoundaryCondition, params: &ClassifierParams) -> Result<PhaseMap> {
        let domain = sigma.region();
        if domain.is_empty() {
            return Err(Error::invalid("phase variables need a non-empty configuration"));
        }
        let dim = domain.dim();
        let l = params.small;
        let big = params.large;
        let frame = Grid::covering(domain, 6 * l);
        let n = frame.len();
        let far = far_class(bc, params.xi);

        let mut present = vec![false; n];
        let mut theta = vec![0.0; n];
        for i in 0..n {
            if let Some(a) = angle_of(sigma, bc, frame.site(i)) {
                present[i] = true;
                theta[i] = a;
            }
        }
        let count = Prefix::new(&frame, &present.iter().map(|&p| p as u8 as f64).collect::<Vec<_>>());
        let cosines = Prefix::new(&frame, &(0..n).map(|i| if present[i] { theta[i].cos() } else { 0.0 }).collect::<Vec<_>>());
        let edge_sums: Vec<Prefix> = (0..dim)
            .map(|axis| {
                let vals: Vec<f64> = (0..n)
                    .map(|i| {
                        let y = frame.site(i).offset(axis, 1);
                        match frame.index(y) {
                            Some(j) if present[i] && present[j] => spin_dist_sq(theta[i], theta[j]),
                            _ => 0.0,
                        }
                    })
                    .collect();
                Prefix::new(&frame, &vals)
            })
            .collect();

        let vol = (l as f64).powi(dim as i32);
        let cut = params.epsilon * params.epsilon * params.thresholds.psi_energy * vol;
        let mut skipped = 0usize;
        let classes: Vec<Option<BoxClass>> = (0..n)
            .map(|i| {
                let r = frame.site(i);
                let mut hi = r;
                for v in hi.0.iter_mut().take(dim) {
                    *v += l - 1;
                }
                if !frame.contains(hi) {
                    // such boxes lie entirely outside the domain's 6ℓ-frame
                    return far;
                }
                if count.sum(r, hi) < vol - 0.5 {
                    skipped += 1;
                    return None;
                }
                let mut e = 0.0;
                for (axis, p) in edge_sums.iter().enumerate() {
                    e += p.sum(r, hi.offset(axis, -1));
                }
                Some(BoxClass { calm: e <= cut, band: band(cosines.sum(r, hi) / vol, params.xi) })
            })
            .collect();

        let reach = 5 * l;
        let (mut psi0, mut psi1) = (vec![1u8; n], vec![0i8; n]);
        match params.scan {
            ScanMode::Separable => {
                let ind = |f: &dyn Fn(&BoxClass) -> bool| -> Vec<bool> {
                    classes.iter().map(|c| c.as_ref().is_some_and(f)).collect()
                };
                let pad = |f: &dyn Fn(&BoxClass) -> bool| far.as_ref().is_some_and(f);
                let fail0: &dyn Fn(&BoxClass) -> bool = &|c| !c.calm;
                let eval: &dyn Fn(&BoxClass) -> bool = &|_| true;
                let np: &dyn Fn(&BoxClass) -> bool = &|c| c.band != Band::Plus;
                let nm: &dyn Fn(&BoxClass) -> bool = &|c| c.band != Band::Minus;
                let w: Vec<Vec<bool>> = [fail0, eval, np, nm]
                    .iter()
                    .map(|f| window_any(&frame, &ind(*f), reach, pad(*f)))
                    .collect();
                for i in 0..n {
                    (psi0[i], psi1[i]) = psi_from(w[1][i], w[0][i], w[2][i], w[3][i]);
                }
            }
            ScanMode::Exhaustive => {
                for i in 0..n {
                    let z = frame.site(i);
                    let (mut eval, mut fail0, mut np, mut nm) = (false, false, false, false);
                    for_each_offset(dim, reach, |off| {
                        let c = match frame.index(z.add(off)) {
                            Some(j) => classes[j],
                            None => far,
                        };
                        if let Some(c) = c {
                            eval = true;
                            fail0 |= !c.calm;
                            np |= c.band != Band::Plus;
                            nm |= c.band != Band::Minus;
                        }
                    });
                    (psi0[i], psi1[i]) = psi_from(eval, fail0, np, nm);
                }
            }
        }
        let far_psi = far.map(|c| psi_from(true, !c.calm, c.band != Band::Plus, c.band != Band::Minus));

        let mut map = PhaseMap {
            frame,
            small: l,
            large: big,
            psi0,
            psi1,
            defined: present,
            far: far_psi,
            blocks: Vec::new(),
            block_index: FxHashMap::default(),
            skipped_boxes: skipped,
        };
        map.compute_blocks(domain)?;
        Ok(map)
    }

    fn compute_blocks(&mut self, domain: &Region) -> Result<()> {
        let dim = domain.dim();
        let big = self.large;
        let own = enumerate_blocks(domain, big, BlockFamily::Standard)?;
        // (all +1, all −1, any defined) per block, cached
        let mut agg: FxHashMap<Site, (bool, bool, bool)> = FxHashMap::default();
        let mut inside: FxHashMap<Site, bool> = FxHashMap::default();
        let mut out = Vec::with_capacity(own.len());
        for b in &own {
            let (mut plus, mut minus, mut any, mut affected) = (true, true, false, false);
            let mut defined_any = false;
            for_each_offset(dim, 2, |k| {
                let mut c = b.corner;
                for i in 0..dim {
                    c.0[i] += k.0[i] * big;
                }
                let nb = LatticeBox::new(dim, c, big);
                let a = *agg.entry(c).or_insert_with(|| self.block_aggregate(&nb));
                let fully = *inside.entry(c).or_insert_with(|| nb.sites().iter().all(|&s| domain.contains(s)));
                affected |= !fully;
                if a.2 {
                    defined_any = true;
                    plus &= a.0;
                    minus &= a.1;
                }
                any |= a.2;
            });
            let value = if !defined_any {
                0
            } else if plus {
                1
            } else if minus {
                -1
            } else {
                0
            };
            let _ = any;
            out.push((b.corner, BlockPhase { value, boundary_affected: affected }));
        }
        self.block_index = out.iter().enumerate().map(|(i, (c, _))| (*c, i)).collect();
        self.blocks = out;
        Ok(())
    }

    fn block_aggregate(&self, b: &LatticeBox) -> (bool, bool, bool) {
        let (mut plus, mut minus, mut any) = (true, true, false);
        for x in b.sites() {
            if let Some(p) = self.psi(x) {
                any = true;
                plus &= p == 1;
                minus &= p == -1;
            }
        }
        (plus, minus, any)
    }

    fn lookup(&self, z: Site) -> Option<(u8, i8)> {
        match self.frame.index(z) {
            Some(i) if self.defined[i] => Some((self.psi0[i], self.psi1[i])),
            Some(_) => None,
            None => self.far,
        }
    }

    pub fn psi0(&self, z: Site) -> Option<u8> {
        self.lookup(z).map(|p| p.0)
    }

    pub fn psi1(&self, z: Site) -> Option<i8> {
        self.lookup(z).map(|p| p.1)
    }

    /// ψ = ψ⁽⁰⁾ψ⁽¹⁾.
    pub fn psi(&self, z: Site) -> Option<i8> {
        self.lookup(z).map(|(a, b)| a as i8 * b)
    }

    pub fn blocks(&self) -> &[(Site, BlockPhase)] {
        &self.blocks
    }

    pub fn block(&self, corner: Site) -> Option<BlockPhase> {
        self.block_index.get(&corner).map(|&i| self.blocks[i].1)
    }

    /// Ψ at a site of an L-block meeting the domain.
    pub fn phase(&self, z: Site) -> Option<i8> {
        self.block(self.block_corner(z)).map(|b| b.value)
    }

    pub fn block_corner(&self, z: Site) -> Site {
        let mut c = z;
        for v in c.0.iter_mut().take(self.frame.dim) {
            *v = v.div_euclid(self.large) * self.large;
        }
        c
    }

    /// Corners of the L-blocks with Ψ = value.
    pub fn blocks_with(&self, value: i8) -> Vec<Site> {
        self.blocks.iter().filter(|(_, b)| b.value == value).map(|(c, _)| *c).collect()
    }
}

/// Calls `f` with every offset in {−r..r}^d.
pub(crate) fn for_each_offset(dim: usize, r: i64, mut f: impl FnMut(Site)) {
    let rng = |i: usize| if i < dim { -r..=r } else { 0..=0 };
    for a in rng(0) {
        for b in rng(1) {
            for c in rng(2) {
                f(Site([a, b, c]));
            }
        }
    }
}

/// Direct evaluation of (ψ⁽⁰⁾, ψ⁽¹⁾) at one site with every box of the
/// window summed explicitly; the reference the grid scans are checked against.
pub fn psi_direct(sigma: &SpinConfig, bc: &BoundaryCondition, z: Site, params: &ClassifierParams) -> (u8, i8) {
    let dim = sigma.region().dim();
    let l = params.small;
    let vol = (l as f64).powi(dim as i32);
    let cut = params.epsilon * params.epsilon * params.thresholds.psi_energy * vol;
    let (mut eval, mut fail0, mut np, mut nm) = (false, false, false, false);
    for_each_offset(dim, 5 * l, |off| {
        let b = LatticeBox::new(dim, z.add(off), l);
        let sites = b.sites();
        let angles: Option<Vec<f64>> = sites.iter().map(|&x| angle_of(sigma, bc, x)).collect();
        let Some(angles) = angles else { return };
        let mut e = 0.0;
        for (i, &x) in sites.iter().enumerate() {
            for axis in 0..dim {
                let y = x.offset(axis, 1);
                if b.contains(y) {
                    let j = sites.iter().position(|&s| s == y).unwrap();
                    e += spin_dist_sq(angles[i], angles[j]);
                }
            }
        }
        let avg = angles.iter().map(|a| a.cos()).sum::<f64>() / vol;
        let bd = band(avg, params.xi);
        eval = true;
        fail0 |= e > cut;
        np |= bd != Band::Plus;
        nm |= bd != Band::Minus;
    });
    psi_from(eval, fail0, np, nm)
}

/// ψ⁽⁰⁾ at z with the configuration's own domain (boxes leaving it are skipped).
pub fn psi0(sigma: &SpinConfig, z: Site, params: &ClassifierParams) -> u8 {
    psi_direct(sigma, &BoundaryCondition::Free, z, params).0
}

pub fn psi1(sigma: &SpinConfig, z: Site, params: &ClassifierParams) -> i8 {
    psi_direct(sigma, &BoundaryCondition::Free, z, params).1
}

/// Ψ at z for the configuration with the given boundary condition.
pub fn psi_block(sigma: &SpinConfig, bc: &BoundaryCondition, z: Site, params: &ClassifierParams) -> Result<i8> {
    let map = PhaseMap::compute(sigma, bc, params)?;
    map.phase(z).ok_or_else(|| Error::invalid("site is not in an L-block of the domain"))
}

// ---------------------------------------------------------------- boxes

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Check {
    pub holds: bool,
    /// distance to the threshold, non-negative exactly when the check holds
    pub margin: f64,
}

impl Check {
    fn upper(value: f64, bound: f64) -> Check {
        Check { holds: value <= bound, margin: bound - value }
    }

    fn all(items: impl IntoIterator<Item = Check>) -> Check {
        items.into_iter().fold(Check { holds: true, margin: f64::INFINITY }, |a, b| Check {
            holds: a.holds && b.holds,
            margin: a.margin.min(b.margin),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PotentialEvent {
    pub holds: bool,
    /// min over eligible sites of (windowed average − Aε²)
    pub margin: f64,
    pub worst: Option<Site>,
}

/// Statistics of one Green field on a box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FieldStats {
    pub lambda: f64,
    pub bc: Bc,
    pub sup: f64,
    pub grad_sup: f64,
    /// ‖g‖₂²/|Q|
    pub l2_density: f64,
    /// ‖∇g‖₂²/|Q|
    pub grad_density: f64,
    /// windowed potential average: (min over eligible sites, attaining site)
    pub potential: Option<(f64, Option<Site>)>,
}

/// Everything the taxonomy needs about one box, for every checked mass and
/// both boundary conditions.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoxStats {
    pub dim: usize,
    pub corner: Site,
    pub side: i64,
    pub fields: Vec<FieldStats>,
    pub alpha_sup: f64,
    pub alpha_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoxReport {
    pub corner: Site,
    pub side: i64,
    pub potential_event: Check,
    pub field_sup: Check,
    pub gradient_sup: Check,
    pub gradient_energy: Check,
    pub alpha_sup: Check,
    pub alpha_mean: Check,
    pub nice: bool,
    /// set when classified inside a family: Ξ of the box
    pub good: Option<bool>,
}

impl BoxReport {
    pub const COLUMNS: [&'static str; 6] =
        ["potential_event", "field_sup", "gradient_sup", "gradient_energy", "alpha_sup", "alpha_mean"];

    pub fn checks(&self) -> [Check; 6] {
        [self.potential_event, self.field_sup, self.gradient_sup, self.gradient_energy, self.alpha_sup, self.alpha_mean]
    }
}

/// Windowed potential minimum of a Dirichlet field on a box: min over sites
/// with dist_∞(x, ∂ᵒQ) ≥ L₀/16 of r^{-d} Σ_{‖y−x‖_∞ ≤ r} m_y.
fn potential_minimum(g: &GreenField, b: &LatticeBox, r: i64) -> Result<(f64, Option<Site>)> {
    let dim = b.dim;
    let qr = g.region();
    let support = qr.union(&boundary(qr, Side::Outer));
    let m = local_potential(g, &support)?;
    let grid = Grid::covering(qr, 1);
    let mut vals = vec![0.0; grid.len()];
    for (x, v) in support.sites().iter().zip(m.values()) {
        vals[grid.index(*x).unwrap()] = *v;
    }
    let pre = Prefix::new(&grid, &vals);
    let norm = (r as f64).powi(dim as i32);
    let min_dist = b.side as f64 / 16.0;
    let mut best = (f64::INFINITY, None);
    for x in b.sites() {
        if (b.dist_to_outer_boundary(x) as f64) < min_dist {
            continue;
        }
        let mut lo = x;
        let mut hi = x;
        for i in 0..dim {
            lo.0[i] -= r;
            hi.0[i] += r;
        }
        let avg = pre.sum(lo, hi) / norm;
        if avg < best.0 {
            best = (avg, Some(x));
        }
    }
    Ok(best)
}

/// Event 𝒜_Q(r) for g^{λ,D}_Q: the windowed potential clears Aε² at every
/// eligible site (`a` in units of ε²).
pub fn avg_potential_event(real: &DisorderRealization, b: &LatticeBox, r: i64, a: f64, lambda: f64) -> Result<PotentialEvent> {
    if r < 1 {
        return Err(Error::invalid("potential window must be at least 1"));
    }
    let region = Arc::new(b.region());
    let g = solve_green(real, &region, lambda, Bc::Dirichlet, &SolveOptions::default())?;
    let (min, worst) = potential_minimum(&g, b, r)?;
    Ok(event_from(min, worst, a * real.epsilon * real.epsilon))
}

fn event_from(min: f64, worst: Option<Site>, cut: f64) -> PotentialEvent {
    if worst.is_none() {
        return PotentialEvent { holds: true, margin: f64::INFINITY, worst };
    }
    PotentialEvent { holds: min >= cut, margin: min - cut, worst }
}

pub fn box_stats(real: &DisorderRealization, b: &LatticeBox, params: &ClassifierParams) -> Result<BoxStats> {
    let region = Arc::new(b.region());
    let nice_l = params.niceness_masses(b.side);
    let mut lambdas = nice_l.clone();
    for l in params.regularity_masses(b.side) {
        if !lambdas.contains(&l) {
            lambdas.push(l);
        }
    }
    let r = params.potential_radius(b.side);
    let vol = b.volume() as f64;
    let opts = SolveOptions::default();
    let mut fields = Vec::new();
    for &lambda in &lambdas {
        for bc in [Bc::Dirichlet, Bc::Neumann] {
            let g = solve_green(real, &region, lambda, bc, &opts)?;
            let potential = if bc == Bc::Dirichlet && nice_l.contains(&lambda) {
                Some(potential_minimum(&g, b, r)?)
            } else {
                None
            };
            fields.push(FieldStats {
                lambda,
                bc,
                sup: g.sup_norm(),
                grad_sup: g.grad_sup(),
                l2_density: g.field.l2_sq() / vol,
                grad_density: g.grad_sq_sum() / vol,
                potential,
            });
        }
    }
    let alpha = real.alpha_on(&region);
    Ok(BoxStats {
        dim: b.dim,
        corner: b.lo(),
        side: b.side,
        fields,
        alpha_sup: alpha.iter().fold(0.0, |m, v| m.max(v.abs())),
        alpha_mean: alpha.iter().sum::<f64>() / vol,
    })
}

/// The six niceness conditions evaluated from precomputed statistics.
pub fn niceness(stats: &BoxStats, params: &ClassifierParams) -> BoxReport {
    let t = &params.thresholds;
    let eps = params.epsilon;
    let l0 = stats.side as f64;
    let nice_l = params.niceness_masses(stats.side);
    let relevant: Vec<&FieldStats> = stats.fields.iter().filter(|f| nice_l.contains(&f.lambda)).collect();
    let cut = params.a * eps * eps;
    let potential_event = Check::all(relevant.iter().filter_map(|f| f.potential).map(|(min, w)| {
        let e = event_from(min, w, cut);
        Check { holds: e.holds, margin: e.margin }
    }));
    let sup_bound = eps
        * match t.sup_exponent {
            SupExponent::Plus => l0.sqrt(),
            SupExponent::Minus => 1.0 / l0.sqrt(),
        }
        * t.field_sup;
    let field_sup = Check::all(relevant.iter().map(|f| Check::upper(f.sup, sup_bound)));
    let gradient_sup = Check::all(relevant.iter().map(|f| Check::upper(f.grad_sup, eps * t.gradient_sup)));
    let (lo, hi) = (params.a * eps * eps, params.b * eps * eps);
    let gradient_energy = Check::all(relevant.iter().map(|f| {
        let margin = (f.grad_density - lo).min(hi - f.grad_density);
        Check { holds: f.grad_density >= lo && f.grad_density <= hi, margin }
    }));
    let alpha_sup = Check::upper(stats.alpha_sup, t.alpha_sup);
    let alpha_mean = Check::upper(stats.alpha_mean.abs() * (stats.side as f64).powi(stats.dim as i32).sqrt(), t.alpha_mean);
    let checks = [potential_event, field_sup, gradient_sup, gradient_energy, alpha_sup, alpha_mean];
    BoxReport {
        corner: stats.corner,
        side: stats.side,
        potential_event,
        field_sup,
        gradient_sup,
        gradient_energy,
        alpha_sup,
        alpha_mean,
        nice: checks.iter().all(|c| c.holds),
        good: None,
    }
}

pub fn box_nice(real: &DisorderRealization, b: &LatticeBox, params: &ClassifierParams) -> Result<BoxReport> {
    Ok(niceness(&box_stats(real, b, params)?, params))
}

/// Σ_{Q ⊂ Y standard} F(Q)G(Q).
pub fn pairing(blocks: &[LatticeBox], f: impl Fn(&LatticeBox) -> f64, g: impl Fn(&LatticeBox) -> f64) -> f64 {
    blocks.iter().map(|b| f(b) * g(b)).sum()
}

/// Standard `scale`-blocks contained in the region, lexicographic.
pub fn blocks_inside(region: &Region, scale: i64) -> Result<Vec<LatticeBox>> {
    Ok(enumerate_blocks(region, scale, BlockFamily::Standard)?
        .into_iter()
        .filter(|b| b.sites().iter().all(|&s| region.contains(s)))
        .collect())
}

fn is_standard(b: &LatticeBox) -> bool {
    (0..b.dim).all(|i| b.lo().0[i].rem_euclid(b.side) == 0)
}

/// One inequality of the taxonomy with its two sides.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Leg {
    pub name: String,
    pub lambda: Option<f64>,
    pub value: f64,
    pub budget: f64,
    pub holds: bool,
}

impl Leg {
    fn new(name: &str, lambda: Option<f64>, value: f64, budget: f64) -> Leg {
        Leg { name: name.to_string(), lambda, value, budget, holds: value <= budget }
    }

    pub fn margin(&self) -> f64 {
        self.budget - self.value
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScaleRegularity {
    pub scale: i64,
    pub blocks: usize,
    pub legs: Vec<Leg>,
    pub regular: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegionReport {
    pub sites: usize,
    /// N^L_Y
    pub blocks: usize,
    pub dense: Leg,
    pub good: bool,
    pub regularity: Vec<ScaleRegularity>,
    pub regular: bool,
    pub clean: bool,
    /// names of the failing legs, prefixed by their scale
    pub failed: Vec<String>,
}

/// Box classification at all scales with memoized statistics.
pub struct Classifier<'a> {
    real: &'a DisorderRealization,
    params: &'a ClassifierParams,
    stats: FxHashMap<(Site, i64), Arc<BoxStats>>,
    good: FxHashMap<(Site, i64), bool>,
}

impl<'a> Classifier<'a> {
    pub fn new(real: &'a DisorderRealization, params: &'a ClassifierParams) -> Classifier<'a> {
        Classifier { real, params, stats: FxHashMap::default(), good: FxHashMap::default() }
    }

    pub fn params(&self) -> &ClassifierParams {
        self.params
    }

    pub fn realization(&self) -> &'a DisorderRealization {
        self.real
    }

    /// Computes the statistics of all missing boxes in parallel.
    pub fn prefetch(&mut self, boxes: &[LatticeBox]) -> Result<()> {
        let mut seen = FxHashSet::default();
        let missing: Vec<LatticeBox> = boxes
            .iter()
            .filter(|b| !self.stats.contains_key(&(b.lo(), b.side)) && seen.insert((b.lo(), b.side)))
            .map(|b| LatticeBox::new(b.dim, b.lo(), b.side))
            .collect();
        let (real, params) = (self.real, self.params);
        let computed: Vec<Result<BoxStats>> = missing.par_iter().map(|b| box_stats(real, b, params)).collect();
        for (b, s) in missing.iter().zip(computed) {
            self.stats.insert((b.lo(), b.side), Arc::new(s?));
        }
        Ok(())
    }

    pub fn stats(&mut self, b: &LatticeBox) -> Result<Arc<BoxStats>> {
        self.prefetch(std::slice::from_ref(b))?;
        Ok(self.stats[&(b.lo(), b.side)].clone())
    }

    fn shifted(&self, b: &LatticeBox) -> Result<Vec<LatticeBox>> {
        Ok(self
            .params
            .shifts(b.dim, b.side)?
            .into_iter()
            .map(|eta| LatticeBox::new(b.dim, b.lo().add(eta), b.side))
            .collect())
    }

    /// Ξ: a standard box is good when every shift of it is nice; any other
    /// box is good when it meets a good standard box.
    pub fn xi(&mut self, b: &LatticeBox) -> Result<bool> {
        let key = (b.lo(), b.side);
        if let Some(&g) = self.good.get(&key) {
            return Ok(g);
        }
        let good = if is_standard(b) {
            let family = self.shifted(b)?;
            self.prefetch(&family)?;
            family.iter().all(|q| niceness(&self.stats[&(q.lo(), q.side)], self.params).nice)
        } else {
            let standard = enumerate_blocks(&b.region(), b.side, BlockFamily::Standard)?;
            let mut any = false;
            for s in &standard {
                any |= self.xi(s)?;
            }
            any
        };
        self.good.insert(key, good);
        Ok(good)
    }

    /// Ξ for many standard boxes, prefetching every shifted box at once.
    pub fn xi_all(&mut self, boxes: &[LatticeBox]) -> Result<Vec<bool>> {
        let mut family = Vec::new();
        for b in boxes.iter().filter(|b| is_standard(b)) {
            family.extend(self.shifted(b)?);
        }
        self.prefetch(&family)?;
        boxes.iter().map(|b| self.xi(b)).collect()
    }

    pub fn report(&mut self, b: &LatticeBox) -> Result<BoxReport> {
        let stats = self.stats(b)?;
        let mut r = niceness(&stats, self.params);
        r.good = Some(self.xi(b)?);
        Ok(r)
    }

    /// The regularity estimates over the standard `scale`-blocks inside `z`.
    pub fn regularity(&mut self, z: &Region, scale: i64) -> Result<ScaleRegularity> {
        if !z.is_measurable(scale) {
            return Err(Error::invalid(format!("region is not {scale}-measurable")));
        }
        let dim = z.dim();
        let t = self.params.thresholds.clone();
        let eps = self.params.epsilon;
        let blocks = blocks_inside(z, scale)?;
        let n = blocks.len() as f64;
        let families: Vec<Vec<LatticeBox>> = blocks.iter().map(|b| self.shifted(b)).collect::<Result<_>>()?;
        self.prefetch(&families.iter().flatten().copied().collect::<Vec<_>>())?;
        let stats: Vec<Vec<Arc<BoxStats>>> =
            families.iter().map(|f| f.iter().map(|q| self.stats[&(q.lo(), q.side)].clone()).collect()).collect();
        let max_over = |i: usize, lambda: f64, pick: &dyn Fn(&FieldStats) -> f64| -> f64 {
            stats[i]
                .iter()
                .flat_map(|s| s.fields.iter().filter(|f| f.lambda == lambda).map(pick))
                .fold(0.0, f64::max)
        };
        let index_of = |b: &LatticeBox| blocks.iter().position(|q| q.lo() == b.lo()).unwrap();
        let mut legs = Vec::new();
        for lambda in self.params.regularity_masses(scale) {
            let grad = |b: &LatticeBox| max_over(index_of(b), lambda, &|f| f.grad_density);
            let cut = eps * eps * t.energy_cut;
            let v = pairing(&blocks, grad, |b| f64::from(u8::from(grad(b) >= cut)));
            legs.push(Leg::new("energy_tail", Some(lambda), v, t.energy_budget * n));

            let field = |b: &LatticeBox| max_over(index_of(b), lambda, &|f| f.l2_density);
            let reach = if lambda > 0.0 { lambda.powf(-0.5).min(scale as f64) } else { scale as f64 };
            let cut = eps * eps * reach * t.field_cut;
            let v = pairing(&blocks, field, |b| f64::from(u8::from(field(b) >= cut)));
            legs.push(Leg::new("field_tail", Some(lambda), v, t.field_budget * n));
        }
        let outlier = |b: &LatticeBox| stats[index_of(b)].iter().map(|s| s.alpha_sup).fold(0.0, f64::max);
        let v = pairing(&blocks, |b| outlier(b).powi(2), |b| f64::from(u8::from(outlier(b) > t.outlier_cut)));
        legs.push(Leg::new("alpha_outliers", None, v, t.outlier_budget * n));
        let means: f64 = stats.iter().flatten().map(|s| s.alpha_mean.abs()).sum();
        let l0 = scale as f64;
        let budget = t.mean_budget_factor * l0.powf(t.mean_budget_scale_exp) * l0.ln().powf(t.mean_budget_log_power) * n;
        legs.push(Leg::new("alpha_means", None, means, budget));
        let _ = dim;
        let regular = legs.iter().all(|l| l.holds);
        Ok(ScaleRegularity { scale, blocks: blocks.len(), legs, regular })
    }

    /// Good (density of bad L-blocks), regular at {ℓ/2, ℓ, L} on δ(Y), clean.
    pub fn taxonomy(&mut self, y: &Region) -> Result<RegionReport> {
        let big = self.params.large;
        let small = self.params.small;
        if y.is_empty() || !y.is_measurable(big) {
            return Err(Error::invalid(format!("region is not a non-empty {big}-measurable set")));
        }
        let blocks = blocks_inside(y, big)?;
        let n = blocks.len() as f64;
        let xi = self.xi_all(&blocks)?;
        let bad = xi.iter().filter(|g| !**g).count() as f64;
        let dense = Leg::new("dense", None, bad, self.params.thresholds.dense_budget * n);
        let good = dense.holds;
        let collar = enlarge(y, big, small);
        let mut scales = vec![small / 2, small, big];
        scales.retain(|s| *s >= 1);
        scales.dedup();
        let mut regularity = Vec::new();
        for s in scales {
            regularity.push(self.regularity(&collar, s)?);
        }
        let regular = regularity.iter().all(|r| r.regular);
        let mut failed = Vec::new();
        if !good {
            failed.push(format!("L={big}:dense"));
        }
        for r in &regularity {
            for l in r.legs.iter().filter(|l| !l.holds) {
                match l.lambda {
                    Some(lam) => failed.push(format!("L0={}:{}(λ={lam:.4})", r.scale, l.name)),
                    None => failed.push(format!("L0={}:{}", r.scale, l.name)),
                }
            }
        }
        Ok(RegionReport {
            sites: y.len(),
            blocks: blocks.len(),
            dense,
            good,
            regularity,
            regular,
            clean: good && regular,
            failed,
        })
    }
}

pub fn region_taxonomy(real: &DisorderRealization, y: &Region, params: &ClassifierParams) -> Result<RegionReport> {
    Classifier::new(real, params).taxonomy(y)
}
