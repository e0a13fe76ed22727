//! Spin configurations, the Hamiltonian with its boundary conditions, the
//! exact energy decompositions and the boundary-layer expansion.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::{local_potential, solve_green, Bc, DisorderRealization, GreenField, ScalarField, SolveOptions};
use crate::geometry::{LatticeBox, Region, Site};
use crate::stencil::{direction_step, Stencil, NONE};

/// Representative of an angle in (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// θ_y − θ_x reduced to (−π, π].
pub fn wrapped_gradient(theta_x: f64, theta_y: f64) -> f64 {
    wrap_angle(theta_y - theta_x)
}

/// |σ_x − σ_y|² for unit spins at the given angles.
#[inline]
pub fn spin_dist_sq(a: f64, b: f64) -> f64 {
    2.0 - 2.0 * (a - b).cos()
}

/// One angle per site, stored in (−π, π].
#[derive(Clone, Debug, PartialEq)]
pub struct SpinConfig {
    region: Arc<Region>,
    angles: Vec<f64>,
}

impl SpinConfig {
    pub fn new(region: Arc<Region>, angles: Vec<f64>) -> Result<SpinConfig> {
        if angles.len() != region.len() {
            return Err(Error::invalid("one angle per site required"));
        }
        if angles.iter().any(|a| !a.is_finite()) {
            return Err(Error::Numerical("non-finite angle".into()));
        }
        Ok(SpinConfig { region, angles: angles.into_iter().map(wrap_angle).collect() })
    }

    pub fn constant(region: Arc<Region>, angle: f64) -> SpinConfig {
        let n = region.len();
        SpinConfig { region, angles: vec![wrap_angle(angle); n] }
    }

    pub fn from_fn(region: Arc<Region>, f: impl Fn(Site) -> f64) -> SpinConfig {
        let angles = region.sites().iter().map(|&x| wrap_angle(f(x))).collect();
        SpinConfig { region, angles }
    }

    pub fn region(&self) -> &Arc<Region> {
        &self.region
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn angle(&self, x: Site) -> Option<f64> {
        self.region.position(x).map(|i| self.angles[i])
    }

    pub fn set(&mut self, i: usize, angle: f64) {
        self.angles[i] = wrap_angle(angle);
    }

    pub fn spin(&self, i: usize) -> [f64; 2] {
        [self.angles[i].cos(), self.angles[i].sin()]
    }

    pub fn restrict(&self, to: &Region) -> Result<SpinConfig> {
        let angles = to
            .sites()
            .iter()
            .map(|&x| self.angle(x).ok_or_else(|| Error::invalid("restriction outside configuration")))
            .collect::<Result<Vec<_>>>()?;
        Ok(SpinConfig { region: Arc::new(to.clone()), angles })
    }

    /// Reflection across the e₂ axis, θ ↦ π − θ.
    pub fn reflected(&self) -> SpinConfig {
        SpinConfig { region: self.region.clone(), angles: self.angles.iter().map(|a| wrap_angle(PI - a)).collect() }
    }

    /// Copy with the angles of `patch` written over the shared sites.
    pub fn overwrite(&self, patch: &SpinConfig) -> SpinConfig {
        let mut out = self.clone();
        for (&x, &a) in patch.region.sites().iter().zip(&patch.angles) {
            if let Some(i) = self.region.position(x) {
                out.angles[i] = a;
            }
        }
        out
    }

    /// Sites where the two configurations differ (on the common domain).
    pub fn diff_sites(&self, other: &SpinConfig, tol: f64) -> Region {
        let v = self
            .region
            .sites()
            .iter()
            .zip(&self.angles)
            .filter(|(&x, &a)| other.angle(x).is_some_and(|b| wrapped_gradient(a, b).abs() > tol))
            .map(|(&x, _)| x);
        Region::from_sites(self.region.dim(), v)
    }
}

/// What the spins outside a region look like.
#[derive(Clone, Debug)]
pub enum BoundaryCondition {
    /// boundary-crossing edges are dropped
    Free,
    /// spins read from a configuration covering the outer boundary
    Fixed(SpinConfig),
    /// every outside spin at the same angle (0 is e₁)
    Uniform(f64),
    /// e₁ outside `domain`, free across edges that stay inside it
    Ext { domain: Arc<Region> },
}

impl BoundaryCondition {
    pub fn e1() -> BoundaryCondition {
        BoundaryCondition::Uniform(0.0)
    }

    /// Angle of the outside spin at `y`, or `None` when the edge is free.
    pub fn outside_angle(&self, y: Site) -> Result<Option<f64>> {
        match self {
            BoundaryCondition::Free => Ok(None),
            BoundaryCondition::Uniform(a) => Ok(Some(*a)),
            BoundaryCondition::Fixed(c) => c
                .angle(y)
                .map(Some)
                .ok_or_else(|| Error::invalid(format!("boundary data missing at {:?}", y))),
            BoundaryCondition::Ext { domain } => Ok(if domain.contains(y) { None } else { Some(0.0) }),
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Term {
    pub label: &'static str,
    pub value: f64,
}

/// A value split into named parts; `total = Σ parts + residual`.
#[derive(Clone, Debug, Serialize)]
pub struct EnergyBreakdown {
    pub total: f64,
    pub parts: Vec<Term>,
    pub residual: f64,
}

impl EnergyBreakdown {
    fn new(total: f64, parts: Vec<Term>) -> EnergyBreakdown {
        let s: f64 = parts.iter().map(|t| t.value).sum();
        EnergyBreakdown { total, parts, residual: total - s }
    }

    pub fn part(&self, label: &str) -> Option<f64> {
        self.parts.iter().find(|t| t.label == label).map(|t| t.value)
    }

    /// The exactness test: |residual| ≤ 10⁻¹⁰(1 + |total|).
    pub fn is_exact(&self) -> bool {
        self.residual.abs() <= 1e-10 * (1.0 + self.total.abs())
    }
}

fn angles_on(sigma: &SpinConfig, region: &Region) -> Result<Vec<f64>> {
    if std::ptr::eq(sigma.region.as_ref(), region) || sigma.region.as_ref() == region {
        return Ok(sigma.angles.clone());
    }
    region
        .sites()
        .iter()
        .map(|&x| sigma.angle(x).ok_or_else(|| Error::invalid("configuration does not cover the region")))
        .collect()
}

/// Σ over nearest-neighbour pairs inside `region` of |σ_x − σ_y|².
pub fn dirichlet_energy(sigma: &SpinConfig, region: &Region) -> Result<f64> {
    let th = angles_on(sigma, region)?;
    let st = Stencil::new(region);
    let mut e = 0.0;
    for i in 0..region.len() {
        for (k, &j) in st.neighbors(i).iter().enumerate() {
            if j != NONE && k % 2 == 1 {
                e += spin_dist_sq(th[i], th[j as usize]);
            }
        }
    }
    Ok(e)
}

/// Σ over boundary-crossing pairs of |σ_x − σ_y|², with outside spins taken
/// from the boundary condition (free edges skipped).
pub fn boundary_crossing_energy(sigma: &SpinConfig, region: &Region, bc: &BoundaryCondition) -> Result<f64> {
    let th = angles_on(sigma, region)?;
    let st = Stencil::new(region);
    let mut e = 0.0;
    for (i, &x) in region.sites().iter().enumerate() {
        for (k, &j) in st.neighbors(i).iter().enumerate() {
            if j == NONE {
                if let Some(b) = bc.outside_angle(direction_step(x, k))? {
                    e += spin_dist_sq(th[i], b);
                }
            }
        }
    }
    Ok(e)
}

/// ε Σ_x α_x e₂·σ_x over the region.
pub fn field_term(sigma: &SpinConfig, region: &Region, real: &DisorderRealization) -> Result<f64> {
    let th = angles_on(sigma, region)?;
    let alpha = real.alpha_on(region);
    Ok(real.epsilon * th.iter().zip(&alpha).map(|(t, a)| a * t.sin()).sum::<f64>())
}

/// −H_R(σ|bc): the quantity the model maximizes.
pub fn hamiltonian(sigma: &SpinConfig, region: &Region, bc: &BoundaryCondition, real: &DisorderRealization) -> Result<f64> {
    let inner = dirichlet_energy(sigma, region)?;
    let cross = boundary_crossing_energy(sigma, region, bc)?;
    Ok(-0.5 * inner - 0.5 * cross + field_term(sigma, region, real)?)
}

/// Arithmetic mean of a scalar field over a box.
pub fn block_average(f: &ScalarField, b: &LatticeBox) -> Result<f64> {
    let sites = b.sites();
    let mut s = 0.0;
    for x in &sites {
        s += f.get(*x).ok_or_else(|| Error::invalid("box leaves the field's domain"))?;
    }
    Ok(s / sites.len() as f64)
}

/// Block magnetization: the mean spin vector over a box.
pub fn block_magnetization(sigma: &SpinConfig, b: &LatticeBox) -> Result<[f64; 2]> {
    let sites = b.sites();
    let mut m = [0.0, 0.0];
    for x in &sites {
        let a = sigma.angle(*x).ok_or_else(|| Error::invalid("box leaves the configuration's domain"))?;
        m[0] += a.cos();
        m[1] += a.sin();
    }
    let n = sites.len() as f64;
    Ok([m[0] / n, m[1] / n])
}

/// Free-boundary decomposition by completing the square against g^{λ,N}:
/// −H_Q(σ) = ½[E(g) − E(σ·e₁) − E(σ·e₂ − g)] + λΣ g σ·e₂ + ε ᾱ Σ σ·e₂,
/// where ᾱ is the mean of α over Q.
pub fn decompose_free(
    sigma: &SpinConfig,
    region: &Arc<Region>,
    lambda: f64,
    real: &DisorderRealization,
    opts: &SolveOptions,
) -> Result<EnergyBreakdown> {
    let g = solve_green(real, region, lambda, Bc::Neumann, opts)?;
    decompose_free_with(sigma, &g, real)
}

pub fn decompose_free_with(sigma: &SpinConfig, g: &GreenField, real: &DisorderRealization) -> Result<EnergyBreakdown> {
    if g.bc != Bc::Neumann {
        return Err(Error::invalid("free decomposition needs the Neumann field"));
    }
    let region = g.region().clone();
    let th = angles_on(sigma, &region)?;
    let gv = g.values();
    let st = Stencil::new(&region);
    let (mut eg, mut ec, mut es) = (0.0, 0.0, 0.0);
    for i in 0..region.len() {
        for (k, &j) in st.neighbors(i).iter().enumerate() {
            if j != NONE && k % 2 == 1 {
                let j = j as usize;
                let dg = gv[j] - gv[i];
                let dc = th[j].cos() - th[i].cos();
                let ds = th[j].sin() - th[i].sin() - dg;
                eg += dg * dg;
                ec += dc * dc;
                es += ds * ds;
            }
        }
    }
    let mass = g.lambda * th.iter().zip(gv).map(|(t, g)| g * t.sin()).sum::<f64>();
    let alpha = real.alpha_on(&region);
    let mean = alpha.iter().sum::<f64>() / alpha.len() as f64;
    let mean_field = real.epsilon * mean * th.iter().map(|t| t.sin()).sum::<f64>();
    let total = hamiltonian(sigma, &region, &BoundaryCondition::Free, real)?;
    Ok(EnergyBreakdown::new(
        total,
        vec![
            Term { label: "square", value: 0.5 * (eg - ec - es) },
            Term { label: "mass", value: mass },
            Term { label: "mean_field", value: mean_field },
        ],
    ))
}

/// Dirichlet decomposition against g^{λ,D}_R with σ extended by the boundary
/// condition, which must supply every outside spin.
pub fn decompose_dirichlet(
    sigma: &SpinConfig,
    region: &Arc<Region>,
    bc: &BoundaryCondition,
    lambda: f64,
    real: &DisorderRealization,
    opts: &SolveOptions,
) -> Result<EnergyBreakdown> {
    let g = solve_green(real, region, lambda, Bc::Dirichlet, opts)?;
    decompose_dirichlet_with(sigma, bc, &g, real)
}

pub fn decompose_dirichlet_with(
    sigma: &SpinConfig,
    bc: &BoundaryCondition,
    g: &GreenField,
    real: &DisorderRealization,
) -> Result<EnergyBreakdown> {
    if g.bc != Bc::Dirichlet {
        return Err(Error::invalid("Dirichlet decomposition needs the Dirichlet field"));
    }
    let region = g.region().clone();
    let th = angles_on(sigma, &region)?;
    let gv = g.values();
    let st = Stencil::new(&region);
    let (mut e1, mut e2, mut eg, mut bdry) = (0.0, 0.0, 0.0, 0.0);
    for (i, &x) in region.sites().iter().enumerate() {
        for (k, &j) in st.neighbors(i).iter().enumerate() {
            let (ty, gy) = if j == NONE {
                let b = bc
                    .outside_angle(direction_step(x, k))?
                    .ok_or_else(|| Error::invalid("Dirichlet decomposition needs every outside spin"))?;
                bdry += gv[i] * b.sin();
                (b, 0.0)
            } else if k % 2 == 1 {
                (th[j as usize], gv[j as usize])
            } else {
                continue;
            };
            let dg = gy - gv[i];
            let dc = ty.cos() - th[i].cos();
            let ds = ty.sin() - th[i].sin() - dg;
            e1 += dc * dc;
            e2 += ds * ds;
            eg += dg * dg;
        }
    }
    let mass = g.lambda * th.iter().zip(gv).map(|(t, g)| g * t.sin()).sum::<f64>();
    let total = hamiltonian(sigma, &region, bc, real)?;
    Ok(EnergyBreakdown::new(
        total,
        vec![
            Term { label: "e1_gradient", value: -0.5 * e1 },
            Term { label: "e2_shifted", value: -0.5 * e2 },
            Term { label: "green_energy", value: 0.5 * eg },
            Term { label: "mass", value: mass },
            Term { label: "boundary", value: bdry },
        ],
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// φ = θ − cos(θ) g (forward) or its inverse by the contraction
/// θ ← φ + cos(θ) g. `g` is read as zero off its region.
pub fn change_of_variables(theta: &SpinConfig, g: &GreenField, direction: Direction) -> Result<SpinConfig> {
    let gv: Vec<f64> = theta.region.sites().iter().map(|&x| g.value(x)).collect();
    let gmax = gv.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if gmax >= 1.0 {
        return Err(Error::invalid(format!("change of variables is singular for ‖g‖∞ = {gmax:.3}")));
    }
    let out: Vec<f64> = match direction {
        Direction::Forward => theta.angles.iter().zip(&gv).map(|(t, g)| t - t.cos() * g).collect(),
        Direction::Inverse => {
            let mut cur: Vec<f64> = theta.angles.clone();
            for (p, (c, g)) in theta.angles.iter().zip(cur.iter_mut().zip(&gv)) {
                let mut iters = 0;
                loop {
                    let next = p + c.cos() * g;
                    let step = (next - *c).abs();
                    *c = next;
                    iters += 1;
                    if step <= 1e-15 || iters > 20_000 {
                        break;
                    }
                }
                if iters > 20_000 {
                    return Err(Error::NotConverged { what: "inverse change of variables", residual: 0.0, iterations: iters });
                }
            }
            cur
        }
    };
    SpinConfig::new(theta.region.clone(), out)
}

/// K(φ) = Σ_{e∩R≠∅} [cos ∇φ − 1] + ¼ Σ_x m_x cos² φ_x. Crossing edges use
/// the boundary condition's outside angles and are skipped where it is free.
pub fn k_functional(phi: &SpinConfig, region: &Region, m: &ScalarField, bc: &BoundaryCondition) -> Result<f64> {
    let th = angles_on(phi, region)?;
    let mv = m.restrict(region)?.into_values();
    let st = Stencil::new(region);
    let mut edge = 0.0;
    for (i, &x) in region.sites().iter().enumerate() {
        for (k, &j) in st.neighbors(i).iter().enumerate() {
            if j == NONE {
                if let Some(b) = bc.outside_angle(direction_step(x, k))? {
                    edge += (b - th[i]).cos() - 1.0;
                }
            } else if k % 2 == 1 {
                edge += (th[j as usize] - th[i]).cos() - 1.0;
            }
        }
    }
    let pot: f64 = th.iter().zip(&mv).map(|(t, m)| 0.25 * m * t.cos() * t.cos()).sum();
    Ok(edge + pot)
}

/// The boundary-layer expansion of −H: exact left side, its main terms, the
/// residual and the error bound with unit constant.
#[derive(Clone, Debug, Serialize)]
pub struct BLayerReport {
    pub lhs: f64,
    pub parts: Vec<Term>,
    pub residual: f64,
    pub bound: f64,
}

pub fn blayer_check(
    sigma: &SpinConfig,
    region: &Arc<Region>,
    lambda: f64,
    bc: &BoundaryCondition,
    real: &DisorderRealization,
    opts: &SolveOptions,
) -> Result<BLayerReport> {
    let free = matches!(bc, BoundaryCondition::Free);
    let g = solve_green(real, region, lambda, if free { Bc::Neumann } else { Bc::Dirichlet }, opts)?;
    blayer_check_with(sigma, bc, &g, real)
}

pub fn blayer_check_with(
    sigma: &SpinConfig,
    bc: &BoundaryCondition,
    g: &GreenField,
    real: &DisorderRealization,
) -> Result<BLayerReport> {
    let free = matches!(bc, BoundaryCondition::Free);
    if free != (g.bc == Bc::Neumann) {
        return Err(Error::invalid("free boundary pairs with the Neumann field, fixed with Dirichlet"));
    }
    let region = g.region().clone();
    let lhs = hamiltonian(sigma, &region, bc, real)?;
    let th = angles_on(sigma, &region)?;
    let gv = g.values();
    let gmax = g.sup_norm();
    if gmax >= 1.0 {
        return Err(Error::invalid("boundary-layer expansion needs ‖g‖∞ < 1"));
    }
    let thp: Vec<f64> = th.iter().zip(gv).map(|(t, g)| t - t.cos() * g).collect();
    let m = local_potential(g, &region)?;
    let st = Stencil::new(&region);
    let (mut cos_edges, mut bfield, mut bpot, mut grad_sigma_sq) = (0.0, 0.0, 0.0, 0.0);
    for (i, &x) in region.sites().iter().enumerate() {
        for (k, &j) in st.neighbors(i).iter().enumerate() {
            if j == NONE {
                if free {
                    continue;
                }
                let b = bc
                    .outside_angle(direction_step(x, k))?
                    .ok_or_else(|| Error::invalid("boundary-layer expansion needs every outside spin"))?;
                cos_edges += (b - thp[i]).cos() - 1.0;
                bfield += gv[i] * b.sin();
                bpot += 0.25 * b.cos() * b.cos() * gv[i] * gv[i];
                grad_sigma_sq += spin_dist_sq(th[i], b);
            } else if k % 2 == 1 {
                cos_edges += (thp[j as usize] - thp[i]).cos() - 1.0;
                grad_sigma_sq += spin_dist_sq(th[i], th[j as usize]);
            }
        }
    }
    if !free {
        // edges between outer-boundary sites also belong to R ∪ ∂ᵒR
        let outer = crate::geometry::boundary(&region, crate::geometry::Side::Outer);
        let ost = Stencil::new(&outer);
        for (i, &y) in outer.sites().iter().enumerate() {
            let a = bc.outside_angle(y)?.unwrap_or(0.0);
            for (k, &j) in ost.neighbors(i).iter().enumerate() {
                if j != NONE && k % 2 == 1 {
                    let b = bc.outside_angle(direction_step(y, k))?.unwrap_or(0.0);
                    grad_sigma_sq += spin_dist_sq(a, b);
                }
            }
        }
    }
    let potential: f64 = thp.iter().zip(m.values()).map(|(t, m)| 0.25 * m * t.cos() * t.cos()).sum();
    let mut parts = vec![Term { label: "cos_edges", value: cos_edges }, Term { label: "potential", value: potential }];
    if !free {
        parts.push(Term { label: "boundary_field", value: bfield });
        parts.push(Term { label: "boundary_potential", value: bpot });
    }
    let main: f64 = parts.iter().map(|t| t.value).sum();
    let sin_l2 = th.iter().map(|t| t.sin() * t.sin()).sum::<f64>().sqrt();
    let mut bound = g.lambda * g.field.l2_sq().sqrt() * sin_l2
        + (g.grad_sup() + gmax) * (grad_sigma_sq + g.grad_sq_sum());
    if free {
        let alpha = real.alpha_on(&region);
        let mean = alpha.iter().sum::<f64>() / alpha.len() as f64;
        bound += real.epsilon * mean.abs() * th.iter().map(|t| t.sin().abs()).sum::<f64>();
    }
    Ok(BLayerReport { lhs, parts, residual: lhs - main, bound })
}

/// The spin-wave gain of tilting a box at angle ψ: the quadratic term
/// ½cos²ψ · ε²⟨α̂, (−Δ^N)⁻¹α̂⟩ and the mean-field magnitude ε|Σα|.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SpinWave {
    pub quadratic: f64,
    pub mean_field: f64,
}

pub fn spinwave_value(real: &DisorderRealization, b: &LatticeBox, psi: f64, opts: &SolveOptions) -> Result<SpinWave> {
    let region = Arc::new(b.region());
    let g = solve_green(real, &region, 0.0, Bc::Neumann, opts)?;
    let alpha = real.alpha_on(&region);
    let mean = alpha.iter().sum::<f64>() / alpha.len() as f64;
    let form: f64 = alpha.iter().zip(g.values()).map(|(a, g)| real.epsilon * (a - mean) * g).sum();
    let c = psi.cos();
    Ok(SpinWave { quadratic: 0.5 * c * c * form, mean_field: real.epsilon * alpha.iter().sum::<f64>().abs() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::sample_alpha;

    fn cube(d: usize, side: i64) -> Arc<Region> {
        Arc::new(LatticeBox::new(d, Site::origin(), side).region())
    }

    #[test]
    fn wrapping() {
        assert!((wrapped_gradient(0.0, PI / 4.0) - PI / 4.0).abs() < 1e-15);
        assert!((wrapped_gradient(-0.75 * PI, 0.75 * PI) + PI / 2.0).abs() < 1e-12);
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
    }

    #[test]
    fn small_energies() {
        let r = Arc::new(Region::from_sites(1, [Site::new(&[0]), Site::new(&[1])]));
        let s = SpinConfig::new(r.clone(), vec![0.0, PI / 2.0]).unwrap();
        assert!((dirichlet_energy(&s, &r).unwrap() - 2.0).abs() < 1e-14);
        let q = cube(2, 2);
        let chk = SpinConfig::from_fn(q.clone(), |x| if (x.0[0] + x.0[1]) % 2 == 0 { 0.0 } else { PI });
        assert!((dirichlet_energy(&chk, &q).unwrap() - 16.0).abs() < 1e-12);
    }

    #[test]
    fn hamiltonian_conventions() {
        let r = cube(2, 4);
        let zero = DisorderRealization::from_field(0.5, ScalarField::zeros(r.clone()));
        let e1 = SpinConfig::constant(r.clone(), 0.0);
        assert_eq!(hamiltonian(&e1, &r, &BoundaryCondition::Free, &zero).unwrap(), 0.0);
        let real = sample_alpha(r.clone(), 3, 0.4);
        let s = SpinConfig::from_fn(r.clone(), |x| 0.3 * x.0[0] as f64 - 0.7 * x.0[1] as f64);
        let free = hamiltonian(&s, &r, &BoundaryCondition::Free, &real).unwrap();
        let fixed = hamiltonian(&s, &r, &BoundaryCondition::Uniform(0.2), &real).unwrap();
        let cross = boundary_crossing_energy(&s, &r, &BoundaryCondition::Uniform(0.2)).unwrap();
        assert!((fixed - (free - 0.5 * cross)).abs() < 1e-12);
        // reflection invariance under free boundary conditions
        let refl = hamiltonian(&s.reflected(), &r, &BoundaryCondition::Free, &real).unwrap();
        assert!((refl - free).abs() < 1e-12);
        let missing = BoundaryCondition::Fixed(SpinConfig::constant(r.clone(), 0.0));
        assert!(hamiltonian(&s, &r, &missing, &real).is_err());
    }

    #[test]
    fn magnetization() {
        let r = cube(2, 4);
        let b = LatticeBox::new(2, Site::origin(), 4);
        let m = block_magnetization(&SpinConfig::constant(r.clone(), 0.0), &b).unwrap();
        assert_eq!(m, [1.0, 0.0]);
        let half = SpinConfig::from_fn(r, |x| if x.0[0] < 2 { 0.0 } else { PI });
        let m = block_magnetization(&half, &b).unwrap();
        assert!(m[0].abs() < 1e-15 && m[1].abs() < 1e-15);
    }

    #[test]
    fn decompositions_are_exact() {
        let opts = SolveOptions { tol: 1e-13, max_iter: 0 };
        for d in 1..=3 {
            let r = cube(d, 4);
            let real = sample_alpha(r.clone(), d as u64, 0.3);
            let s = SpinConfig::from_fn(r.clone(), |x| crate::rng::site_normal(99, x));
            for lambda in [0.0, 0.3] {
                let f = decompose_free(&s, &r, lambda, &real, &opts).unwrap();
                assert!(f.is_exact(), "free residual {}", f.residual);
                let dd = decompose_dirichlet(&s, &r, &BoundaryCondition::e1(), lambda, &real, &opts).unwrap();
                assert!(dd.is_exact(), "dirichlet residual {}", dd.residual);
            }
        }
    }

    #[test]
    fn aligned_boundary_term() {
        let r = cube(2, 5);
        let real = sample_alpha(r.clone(), 8, 0.2);
        let opts = SolveOptions { tol: 1e-13, max_iter: 0 };
        let s = SpinConfig::constant(r.clone(), PI / 2.0);
        let bc = BoundaryCondition::Uniform(PI / 2.0);
        let br = decompose_dirichlet(&s, &r, &bc, 0.05, &real, &opts).unwrap();
        let g = solve_green(&real, &r, 0.05, Bc::Dirichlet, &opts).unwrap();
        let st = Stencil::new(&r);
        let direct: f64 =
            (0..r.len()).map(|i| st.neighbors(i).iter().filter(|&&j| j == NONE).count() as f64 * g.values()[i]).sum();
        assert!((br.part("boundary").unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn change_of_variables_round_trip() {
        let r = cube(2, 6);
        let th = SpinConfig::from_fn(r.clone(), |x| 2.0 * crate::rng::site_normal(5, x));
        let field = ScalarField::from_fn(r.clone(), |x| 0.9 * (2.0 * crate::rng::unit_open(crate::rng::site_hash(1, x, 3)) - 1.0));
        let g = GreenField { field, lambda: 0.0, bc: Bc::Dirichlet, epsilon: 1.0, residual: 0.0, iterations: 0 };
        let phi = change_of_variables(&th, &g, Direction::Forward).unwrap();
        let back = change_of_variables(&phi, &g, Direction::Inverse).unwrap();
        for (a, b) in th.angles().iter().zip(back.angles()) {
            assert!(wrapped_gradient(*a, *b).abs() < 1e-11);
        }
        let up = SpinConfig::constant(r.clone(), PI / 2.0);
        let same = change_of_variables(&up, &g, Direction::Forward).unwrap();
        assert!(same.angles().iter().all(|a| (a - PI / 2.0).abs() < 1e-15));
        let big = GreenField { field: ScalarField::from_fn(r, |_| 1.0), ..g };
        assert!(change_of_variables(&th, &big, Direction::Forward).is_err());
    }

    #[test]
    fn k_functional_basics() {
        let r = cube(2, 4);
        let m = ScalarField::from_fn(r.clone(), |x| x.0[0] as f64 + 0.5);
        let zero = SpinConfig::constant(r.clone(), 0.0);
        let k = k_functional(&zero, &r, &m, &BoundaryCondition::e1()).unwrap();
        assert!((k - 0.25 * m.sum()).abs() < 1e-12);
        let up = SpinConfig::constant(r.clone(), PI / 2.0);
        let k = k_functional(&up, &r, &m, &BoundaryCondition::e1()).unwrap();
        // 16 crossing edges at angle difference π/2
        assert!((k + 16.0).abs() < 1e-12);
    }

    #[test]
    fn blayer_without_field_is_exact() {
        let r = cube(2, 4);
        let zero = DisorderRealization::from_field(0.3, ScalarField::zeros(r.clone()));
        let s = SpinConfig::from_fn(r.clone(), |x| 0.05 * (x.0[0] - x.0[1]) as f64);
        let rep = blayer_check(&s, &r, 0.0, &BoundaryCondition::e1(), &zero, &SolveOptions::default()).unwrap();
        assert!(rep.residual.abs() < 1e-12);
        let rep = blayer_check(&s, &r, 0.0, &BoundaryCondition::Free, &zero, &SolveOptions::default()).unwrap();
        assert!(rep.residual.abs() < 1e-12);
    }

    #[test]
    fn spinwave_identity() {
        let b = LatticeBox::new(2, Site::origin(), 8);
        let r = Arc::new(b.region());
        let real = sample_alpha(r.clone(), 21, 0.4);
        let opts = SolveOptions { tol: 1e-13, max_iter: 0 };
        let w = spinwave_value(&real, &b, 0.0, &opts).unwrap();
        let g = solve_green(&real, &r, 0.0, Bc::Neumann, &opts).unwrap();
        assert!((w.quadratic - 0.5 * g.grad_sq_sum()).abs() < 1e-9 * w.quadratic.abs().max(1.0));
        let w2 = spinwave_value(&real, &b, PI, &opts).unwrap();
        assert!((w.quadratic - w2.quadratic).abs() < 1e-15);
        assert!(spinwave_value(&real, &b, PI / 2.0, &opts).unwrap().quadratic.abs() < 1e-20);
    }
}
