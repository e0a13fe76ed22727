//! The surgery that removes a contour: bulk approximate ground states, the
//! four collar modifications, gluing, and the energy comparison.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::Serialize;

use crate::classification::{Classifier, ClassifierParams, PhaseMap};
use crate::contours::{collar_decomposition, contour_geometry, grow_smallest, CollarDecomposition, Contour, ContourGeometry, Frame};
use crate::energy::{dirichlet_energy, hamiltonian, wrap_angle, BoundaryCondition, Direction, SpinConfig};
use crate::energy::change_of_variables;
use crate::error::{Error, Result};
use crate::fields::{local_potential, solve_green, Bc, DisorderRealization, GreenField, SolveOptions};
use crate::geometry::{boundary, connected_components, enlarge, enumerate_blocks, BlockFamily, Connectivity, LatticeBox, Region, Side, Site};
use crate::rng::{site_hash, unit_open};
use crate::stencil::{direction_step, Stencil, NONE};
use crate::variational::{ascend_best, maximize_k, MaximizeOptions, Objective};

// ---------------------------------------------------------------- ground states

#[derive(Clone, Copy, Debug)]
pub struct GroundOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub random_starts: usize,
    pub seed: u64,
}

impl Default for GroundOptions {
    fn default() -> Self {
        GroundOptions { tol: 1e-9, max_iter: 400, random_starts: 1, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct GroundState {
    pub value: f64,
    pub config: SpinConfig,
    /// the best start reached the gradient tolerance
    pub converged: bool,
    pub start: &'static str,
}

/// −H_R(·|bc) as an ascent objective: unit couplings, crossing edges to the
/// boundary condition's outside angles, and the field term εα sin θ.
fn hamiltonian_objective(region: &Region, bc: &BoundaryCondition, real: &DisorderRealization) -> Result<Objective> {
    let st = Stencil::new(region);
    let mut outside = vec![Vec::new(); region.len()];
    for (i, &x) in region.sites().iter().enumerate() {
        for (k, &j) in st.neighbors(i).iter().enumerate() {
            if j == NONE {
                if let Some(b) = bc.outside_angle(direction_step(x, k))? {
                    outside[i].push(b);
                }
            }
        }
    }
    let n = region.len();
    let sine = real.alpha_on(region).iter().map(|a| real.epsilon * a).collect();
    Ok(Objective { stencil: st, weight: 1.0, outside, quad: vec![0.0; n], lin: vec![0.0; n], sine, pinned: vec![false; n] })
}

/// max over configurations of −H_R(σ|bc) by multi-start Newton ascent from
/// e₁, the Neumann Green-field profile and random angles.
pub fn box_ground_energy(
    real: &DisorderRealization,
    region: &Arc<Region>,
    bc: &BoundaryCondition,
    opts: &GroundOptions,
) -> Result<GroundState> {
    if region.is_empty() {
        return Err(Error::invalid("ground state of an empty region"));
    }
    let obj = hamiltonian_objective(region, bc, real)?;
    let n = region.len();
    let mut starts: Vec<(&'static str, Vec<f64>)> = vec![("e1", vec![0.0; n])];
    let gn = solve_green(real, region, 0.0, Bc::Neumann, &SolveOptions::default())?;
    starts.push(("green", gn.values().to_vec()));
    for r in 0..opts.random_starts {
        let th = region.sites().iter().map(|&x| PI * (2.0 * unit_open(site_hash(opts.seed, x, 100 + r as u64)) - 1.0)).collect();
        starts.push(("random", th));
    }
    let mut best: Option<GroundState> = None;
    for (name, th) in starts {
        let (th, trace) = ascend_best(&obj, th, None, opts.tol, opts.max_iter);
        let last = trace.last().unwrap();
        let value = obj.value(&th);
        if best.as_ref().is_none_or(|b| value > b.value) {
            best = Some(GroundState {
                value,
                config: SpinConfig::new(region.clone(), th)?,
                converged: last.residual <= opts.tol,
                start: name,
            });
        }
    }
    Ok(best.unwrap())
}

/// δ̄(Γ) = δ_{L/2}(Γ) ∩ Λ: the spine with the L/2-blocks within ℓ of it.
pub fn bulk_region(gamma: &Contour, domain: &Region, small: i64) -> Region {
    enlarge(&gamma.spine, gamma.scale / 2, small).intersection(domain)
}

#[derive(Clone, Debug)]
pub struct BulkState {
    /// δ̄(Γ) = δ_{L/2}(Γ) ∩ Λ
    pub region: Arc<Region>,
    pub config: SpinConfig,
    /// the ℓ/2-blocks of δ̄(Γ) with their Ξ value
    pub blocks: Vec<(LatticeBox, bool)>,
    /// max |angle| on the inner boundary of every block
    pub block_edge_angle: f64,
}

/// The stitched ground state on δ̄(Γ): e₁ on blocks with Ξ_{ℓ/2} = 0, and
/// the Neumann profile damped over √ℓ from the block boundary otherwise.
pub fn bulk_ground_state(gamma: &Contour, domain: &Region, classifier: &mut Classifier) -> Result<BulkState> {
    let small = classifier.params().small;
    let half = (small / 2).max(1);
    let region = Arc::new(bulk_region(gamma, domain, small));
    let boxes = enumerate_blocks(&region, half, BlockFamily::Standard)?;
    let xi = classifier.xi_all(&boxes)?;
    let mut angles = vec![0.0; region.len()];
    let mut edge_angle: f64 = 0.0;
    let root = (small as f64).sqrt();
    for (b, &good) in boxes.iter().zip(&xi) {
        if !good {
            continue;
        }
        let q = Arc::new(b.region());
        let g = solve_green(classifier.realization(), &q, 0.0, Bc::Neumann, &SolveOptions::default())?;
        for (&x, &theta) in q.sites().iter().zip(g.values()) {
            let tau = (b.dist_to_outer_boundary(x) as f64 / root).min(1.0);
            let a = tau * theta;
            if let Some(i) = region.position(x) {
                angles[i] = a;
            }
            if b.dist_to_outer_boundary(x) == 1 {
                edge_angle = edge_angle.max(a.abs());
            }
        }
    }
    Ok(BulkState {
        config: SpinConfig::new(region.clone(), angles)?,
        region,
        blocks: boxes.into_iter().zip(xi).collect(),
        block_edge_angle: edge_angle,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct BulkComparison {
    /// Σ_Q E₀(Q) over the ℓ/2-blocks of δ̄(Γ)
    pub sum_ground: f64,
    /// −H_δ̄(σ^δ̄|ext)
    pub bulk_value: f64,
    /// Σ_Q E₀(Q) + H_δ̄(σ^δ̄|ext)
    pub gap: f64,
    /// Σ_Q [E₀(Q) + H_Q(σ^δ̄|ext)]
    pub suboptimality: f64,
    /// ½ Σ over edges joining two blocks of |σ_x − σ_y|²
    pub stitching: f64,
    /// suboptimality + ½ Σ (|θ_x| + |θ_y|)² over the same edges
    pub bound: f64,
    pub all_converged: bool,
}

/// Compares the stitched state with the sum of the blockwise maxima.
pub fn bulk_comparison(
    bulk: &BulkState,
    domain: &Arc<Region>,
    real: &DisorderRealization,
    opts: &GroundOptions,
) -> Result<BulkComparison> {
    let ext = BoundaryCondition::Ext { domain: domain.clone() };
    let mut sum_ground = 0.0;
    let mut sub = 0.0;
    let mut all_converged = true;
    let dim = bulk.region.dim();
    let mut owner = rustc_hash::FxHashMap::default();
    for (k, (b, _)) in bulk.blocks.iter().enumerate() {
        let q = Arc::new(b.region().intersection(&bulk.region));
        let gs = box_ground_energy(real, &q, &ext, opts)?;
        all_converged &= gs.converged;
        sum_ground += gs.value;
        sub += gs.value - hamiltonian(&bulk.config, &q, &ext, real)?;
        for &x in q.sites() {
            owner.insert(x, k);
        }
    }
    let bulk_value = hamiltonian(&bulk.config, &bulk.region, &ext, real)?;
    let (mut stitching, mut edge_bound) = (0.0, 0.0);
    for (i, &x) in bulk.region.sites().iter().enumerate() {
        for a in 0..dim {
            let y = x.offset(a, 1);
            if let Some(j) = bulk.region.position(y) {
                if owner[&x] != owner[&y] {
                    let (tx, ty) = (bulk.config.angles()[i], bulk.config.angles()[j]);
                    stitching += 0.5 * crate::energy::spin_dist_sq(tx, ty);
                    edge_bound += 0.5 * (tx.abs() + ty.abs()).powi(2);
                }
            }
        }
    }
    Ok(BulkComparison {
        sum_ground,
        bulk_value,
        gap: sum_ground - bulk_value,
        suboptimality: sub,
        stitching,
        bound: sub + edge_bound,
        all_converged,
    })
}

// ---------------------------------------------------------------- modification 1

#[derive(Clone, Debug)]
pub struct Reflection {
    pub config: SpinConfig,
    /// 𝔄⁺ and 𝔄⁻
    pub grown_plus: Region,
    pub grown_minus: Region,
    /// some 𝔄 or its outer boundary leaves the L-neighbourhood of its seed
    pub beyond_envelope: bool,
    pub reflected: usize,
}

fn sign_of(theta: f64) -> i8 {
    let c = theta.cos();
    if c > 0.0 {
        1
    } else if c < 0.0 {
        -1
    } else {
        0
    }
}

fn within(frame: &Frame, set: &Region, radius: i64) -> Vec<bool> {
    frame.distance(&frame.mask(set)).iter().map(|&d| d <= radius as u32).collect()
}

/// Reflects the wrong-hemisphere spins of 𝔄⁺, then of 𝔄⁻ (computed from the
/// result), across the e₂ axis. 𝔄^± is the smallest superset of the seed
/// whose outer boundary lies in the matching hemisphere. Outside the domain
/// the spins are e₁; a set that would have to cross the domain's boundary is
/// an error.
pub fn mod1_reflect(sigma: &SpinConfig, seed_plus: &Region, seed_minus: &Region, envelope: i64) -> Result<Reflection> {
    let domain = sigma.region().clone();
    let frame = Frame::around(&domain, envelope + 2);
    let mut cur = sigma.clone();
    let mut grown = Vec::new();
    let mut beyond = false;
    let mut reflected = 0;
    for (seed, s) in [(seed_plus, 1i8), (seed_minus, -1i8)] {
        if seed.is_empty() {
            grown.push(Region::empty(domain.dim()));
            continue;
        }
        let snapshot = cur.clone();
        let side = |x: Site| snapshot.angle(x).map(sign_of).unwrap_or(1);
        let (a, escaped) = grow_smallest(seed, |x| domain.contains(x), |x| side(x) == s);
        if escaped {
            return Err(Error::Numerical("reflection set reaches the domain boundary".into()));
        }
        let near = within(&frame, seed, envelope);
        let closure = a.union(&boundary(&a, Side::Outer));
        beyond |= closure.sites().iter().any(|&x| frame.grid.index(x).is_none_or(|i| !near[i]));
        for &x in a.sites() {
            let i = domain.position(x).unwrap();
            if sign_of(snapshot.angles()[i]) == -s {
                cur.set(i, PI - snapshot.angles()[i]);
                reflected += 1;
            }
        }
        grown.push(a);
    }
    let grown_minus = grown.pop().unwrap();
    let grown_plus = grown.pop().unwrap();
    Ok(Reflection { config: cur, grown_plus, grown_minus, beyond_envelope: beyond, reflected })
}

// ---------------------------------------------------------------- modification 2

/// Angle relative to the phase's direction (0 for +, π for −), in (−π, π].
fn relative(theta: f64, s: i8) -> f64 {
    if s > 0 {
        wrap_angle(theta)
    } else {
        wrap_angle(theta - PI)
    }
}

fn absolute(rel: f64, s: i8) -> f64 {
    if s > 0 {
        rel
    } else {
        rel + PI
    }
}

/// Damps the angles on 𝒟^± toward 0 (resp. π): fully on 𝔇^±_{L/16}, with a
/// linear ramp of width L/16 around it.
pub fn mod2_damp(sigma1: &SpinConfig, collar: &CollarDecomposition, big: i64) -> Result<(SpinConfig, usize)> {
    let domain = sigma1.region();
    let frame = Frame::around(domain, 1);
    let mut out = sigma1.clone();
    let mut changed = 0;
    for (halo, core, s) in [(&collar.bad_halo_plus, &collar.bad_core16_plus, 1i8), (&collar.bad_halo_minus, &collar.bad_core16_minus, -1i8)] {
        if halo.is_empty() {
            continue;
        }
        let d = frame.distance(&frame.mask(core));
        for &x in halo.sites() {
            let dist = d[frame.grid.index(x).unwrap()];
            let tau = if dist == u32::MAX { 1.0 } else { (16.0 * dist as f64 / big as f64).min(1.0) };
            let i = domain.position(x).unwrap();
            let th = relative(sigma1.angles()[i], s);
            let new = absolute(tau * th, s);
            if tau < 1.0 {
                out.set(i, new);
                changed += 1;
            }
        }
    }
    Ok((out, changed))
}

// ---------------------------------------------------------------- modification 3

/// The mass of the collar optimization, L⁻²(ln L)⁸.
pub fn collar_mass(big: i64) -> f64 {
    let l = big as f64;
    l.ln().powi(8) / (l * l)
}

#[derive(Clone, Debug, Serialize)]
pub struct PhaseOptimization {
    pub sign: i8,
    /// ‖g^{λ,D}_{𝒞}‖_∞
    pub green_sup: f64,
    /// |𝔣|, |𝔤|
    pub admissible: usize,
    pub optimized: usize,
    pub residual: f64,
    /// max |Φ − g| over 𝒞 within L/5 of M
    pub near_middle_gap: f64,
}

#[derive(Clone, Debug)]
pub struct Optimization {
    pub config: SpinConfig,
    /// 𝔤⁺ ∪ 𝔤⁻
    pub optimized: Region,
    pub phases: Vec<PhaseOptimization>,
}

/// Optimizes the transformed energy K on 𝔤^± = 𝔣^± ∩ 𝒞^± and maps back.
pub fn mod3_optimize(
    sigma2: &SpinConfig,
    collar: &CollarDecomposition,
    real: &DisorderRealization,
    big: i64,
    opts: &MaximizeOptions,
) -> Result<Optimization> {
    let domain = sigma2.region().clone();
    let dim = domain.dim();
    let lambda = collar_mass(big);
    let mut out = sigma2.clone();
    let mut optimized = Region::empty(dim);
    let mut reports = Vec::new();
    let frame = Frame::around(&domain, 1);
    let sides = [
        (&collar.relaxed_plus, &collar.seed_plus, &collar.envelope_plus, &collar.middle_cover_plus, 1i8),
        (&collar.relaxed_minus, &collar.seed_minus, &collar.envelope_minus, &collar.middle_cover_minus, -1i8),
    ];
    for (relaxed, seed, envelope, middle, s) in sides {
        if relaxed.is_empty() {
            continue;
        }
        let support = Arc::new(relaxed.clone());
        let g0 = solve_green(real, &support, lambda, Bc::Dirichlet, &SolveOptions::default())?;
        // in the frame rotated by π the field term changes sign
        let g = GreenField { field: g0.field.map(|v| f64::from(s) * v), ..g0 };
        let green_sup = g.sup_norm();
        if green_sup >= PI / 12.0 {
            return Err(Error::Numerical(format!("collar Green field reaches {green_sup:.3} ≥ π/12")));
        }
        let rel = |x: Site| relative(sigma2.angle(x).unwrap_or(0.0), s);
        let phi = |x: Site| {
            let t = rel(x);
            t - t.cos() * g.value(x)
        };
        let (admissible, escaped) = grow_smallest(seed, |x| envelope.contains(x), |x| phi(x).abs() <= PI / 6.0);
        if escaped {
            return Err(Error::Numerical("admissible set leaves its envelope".into()));
        }
        let target = Arc::new(admissible.intersection(relaxed));
        let mut report = PhaseOptimization {
            sign: s,
            green_sup,
            admissible: admissible.len(),
            optimized: target.len(),
            residual: 0.0,
            near_middle_gap: 0.0,
        };
        let mut solved: Option<SpinConfig> = None;
        if !target.is_empty() {
            let m = local_potential(&g, &target)?;
            let rim = boundary(&target, Side::Outer);
            let rim_phi = SpinConfig::from_fn(Arc::new(rim), phi);
            let start = SpinConfig::from_fn(target.clone(), phi);
            let res = maximize_k(&target, &m, &BoundaryCondition::Fixed(rim_phi), Some(&start), opts)?;
            report.residual = res.residual;
            let back = change_of_variables(&res.phi, &g, Direction::Inverse)?;
            for (&x, &a) in target.sites().iter().zip(back.angles()) {
                out.set(domain.position(x).unwrap(), absolute(a, s));
            }
            optimized = optimized.union(&target);
            solved = Some(back);
        }
        let near = frame.distance(&frame.mask(middle));
        for &x in relaxed.sites() {
            if (near[frame.grid.index(x).unwrap()] as i64) < big / 5 {
                let v = solved.as_ref().and_then(|b| b.angle(x)).unwrap_or_else(|| rel(x));
                report.near_middle_gap = report.near_middle_gap.max((v - g.value(x)).abs());
            }
        }
        reports.push(report);
    }
    Ok(Optimization { config: out, optimized, phases: reports })
}

// ---------------------------------------------------------------- modification 4

#[derive(Clone, Debug)]
pub struct Interpolation {
    pub config: SpinConfig,
    pub changed: usize,
    /// max ‖σ_x ∓ e₁‖ over the outer boundary of M^± inside the domain
    pub middle_boundary_gap: f64,
}

/// On every component 𝔠_i of 𝔑, scales the angle (relative to the
/// component's phase) by dist(x, ∂ᵒM_i)/√ℓ ∧ 1.
pub fn mod4_interpolate(sigma3: &SpinConfig, collar: &CollarDecomposition, small: i64) -> Result<Interpolation> {
    let domain = sigma3.region().clone();
    let frame = Frame::around(&domain, 1);
    let root = (small as f64).sqrt();
    let mut out = sigma3.clone();
    let mut changed = 0;
    for comp in &collar.inner_components {
        let s: i8 = if comp.sites().iter().any(|&x| collar.collar_plus.contains(x)) { 1 } else { -1 };
        let mi = comp.intersection(&collar.middle_cover);
        if mi.is_empty() {
            continue;
        }
        let rim = boundary(&mi, Side::Outer);
        let d = frame.distance(&frame.mask(&rim));
        for &x in comp.sites() {
            let dist = d[frame.grid.index(x).unwrap()];
            let tau = (dist as f64 / root).min(1.0);
            if tau < 1.0 {
                let i = domain.position(x).unwrap();
                out.set(i, absolute(tau * relative(sigma3.angles()[i], s), s));
                changed += 1;
            }
        }
    }
    let mut gap: f64 = 0.0;
    for (m, s) in [(&collar.middle_cover_plus, 1i8), (&collar.middle_cover_minus, -1i8)] {
        for &x in boundary(m, Side::Outer).sites() {
            if let Some(a) = out.angle(x) {
                gap = gap.max(crate::energy::spin_dist_sq(a, absolute(0.0, s)).sqrt());
            }
        }
    }
    Ok(Interpolation { config: out, changed, middle_boundary_gap: gap })
}

// ---------------------------------------------------------------- gluing

/// +1 or −1 when Ψ is that constant on δ_ext(Γ).
pub fn contour_sign(geo: &ContourGeometry, phases: &PhaseMap) -> Option<i8> {
    let mut vals = geo.delta_ext.sites().iter().filter_map(|&x| phases.phase(x));
    let first = vals.next()?;
    (first != 0 && vals.all(|v| v == first)).then_some(first)
}

#[derive(Clone, Debug)]
pub struct Gluing {
    pub config: SpinConfig,
    /// components of Λ \ δ̄(Γ) reflected across the e₂ axis
    pub reflected_components: Vec<Region>,
}

/// S^±_Γ: σ^𝔠C off δ̄(Γ) with mismatched interior components reflected, and
/// the bulk state (reflected for a − contour) on δ̄(Γ).
pub fn glue(
    sigma_c: &SpinConfig,
    geo: &ContourGeometry,
    phases: &PhaseMap,
    bulk: &BulkState,
    sign: i8,
) -> Result<Gluing> {
    if contour_sign(geo, phases) != Some(sign) {
        return Err(Error::invalid(format!("Ψ on δ_ext does not match the sign {sign}")));
    }
    let domain = sigma_c.region().clone();
    let rest = domain.difference(&bulk.region);
    let mut out = sigma_c.clone();
    let mut reflected = Vec::new();
    for comp in connected_components(&rest, Connectivity::Graph) {
        let x0 = comp.sites()[0];
        let Some(i) = geo.interiors.iter().position(|r| r.contains(x0)) else { continue };
        let inner_sign = geo.delta_in[i].sites().iter().find_map(|&x| phases.phase(x));
        if inner_sign.is_some_and(|v| v != sign) {
            for &x in comp.sites() {
                let k = domain.position(x).unwrap();
                out.set(k, PI - sigma_c.angles()[k]);
            }
            reflected.push(comp);
        }
    }
    let patch = if sign > 0 { bulk.config.clone() } else { bulk.config.reflected() };
    Ok(Gluing { config: out.overwrite(&patch), reflected_components: reflected })
}

// ---------------------------------------------------------------- energy gain

#[derive(Clone, Debug, Serialize)]
pub struct Family {
    pub name: &'static str,
    /// boxes of the family meeting δ̄(Γ)
    pub candidates: usize,
    /// boxes flagged by the family's criterion
    pub flagged: usize,
    /// Σ over flagged boxes of E₀(Q∩Λ) + H_{Q∩Λ}(σ|ext), when requested
    pub attribution: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct EnergyGain {
    /// −H_Λ(Sσ|e₁) + H_Λ(σ|e₁)
    pub delta: f64,
    pub families: Vec<Family>,
}

/// Δ by direct evaluation, with the high-energy boxes of the standard and
/// staggered ℓ-grids and the misaligned standard ℓ-boxes near δ̄(Γ).
pub fn energy_gain(
    sigma: &SpinConfig,
    surgered: &SpinConfig,
    bulk_region: &Region,
    real: &DisorderRealization,
    params: &ClassifierParams,
    attribute: Option<&GroundOptions>,
) -> Result<EnergyGain> {
    let domain = sigma.region().clone();
    let e1 = BoundaryCondition::e1();
    let delta = hamiltonian(surgered, &domain, &e1, real)? - hamiltonian(sigma, &domain, &e1, real)?;
    let small = params.small;
    let dim = domain.dim();
    let volume = (small as f64).powi(dim as i32);
    let energy_cut = params.epsilon.powi(2) * params.thresholds.psi_energy * volume / 16.0;
    let ext = BoundaryCondition::Ext { domain: domain.clone() };
    let mut families = Vec::new();
    for (name, family) in [("A1", BlockFamily::Standard), ("A2", BlockFamily::Staggered), ("A3", BlockFamily::Standard)] {
        let boxes = enumerate_blocks(bulk_region, small, family)?;
        let mut flagged = 0;
        let mut attribution = attribute.map(|_| 0.0);
        for b in &boxes {
            let q = Arc::new(b.region().intersection(&domain));
            let hit = if name == "A3" {
                let mean = q.sites().iter().map(|&x| sigma.angle(x).unwrap().cos()).sum::<f64>() / q.len() as f64;
                q.len() == b.volume() && mean.abs() <= 1.0 - params.xi / 16.0
            } else {
                dirichlet_energy(sigma, &q)? >= energy_cut
            };
            if !hit {
                continue;
            }
            flagged += 1;
            if let (Some(acc), Some(opts)) = (attribution.as_mut(), attribute) {
                let gs = box_ground_energy(real, &q, &ext, opts)?;
                *acc += gs.value - hamiltonian(sigma, &q, &ext, real)?;
            }
        }
        families.push(Family { name, candidates: boxes.len(), flagged, attribution });
    }
    Ok(EnergyGain { delta, families })
}

// ---------------------------------------------------------------- pipeline

#[derive(Clone, Debug, Default)]
pub struct SurgeryOptions {
    pub maximize: MaximizeOptions,
    pub ground: GroundOptions,
    /// evaluate the per-family ground-state attribution
    pub attribute: bool,
    /// also compare the bulk state with the blockwise maxima
    pub bulk_check: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct StageSummary {
    pub name: &'static str,
    /// −H_Λ(·|e₁) after the stage
    pub value: f64,
    /// change of −H_Λ(·|e₁) made by the stage
    pub delta: f64,
    pub modified: usize,
}

#[derive(Clone, Debug)]
pub struct SurgeryTrace {
    pub sign: i8,
    /// σ, σ¹, σ², σ³, σ^𝔠C, S^±
    pub stages: Vec<(&'static str, SpinConfig)>,
    pub summary: Vec<StageSummary>,
    pub collar: CollarDecomposition,
    pub geometry: ContourGeometry,
    pub reflection: Reflection,
    pub optimization: Optimization,
    pub interpolation_gap: f64,
    pub bulk: BulkState,
    pub bulk_comparison: Option<BulkComparison>,
    pub reflected_components: Vec<Region>,
    pub gain: EnergyGain,
}

#[derive(Clone, Debug, Serialize)]
pub struct SurgeryReport {
    pub sign: i8,
    pub spine_blocks: usize,
    pub n_large: usize,
    pub stages: Vec<StageSummary>,
    pub gain: EnergyGain,
    pub reflection_beyond_envelope: bool,
    pub optimization: Vec<PhaseOptimization>,
    pub interpolation_gap: f64,
    pub bulk_edge_angle: f64,
    pub bulk_comparison: Option<BulkComparison>,
    pub bad_blocks: usize,
    pub reflected_components: usize,
}

impl SurgeryTrace {
    pub fn input(&self) -> &SpinConfig {
        &self.stages[0].1
    }

    pub fn output(&self) -> &SpinConfig {
        &self.stages.last().unwrap().1
    }

    pub fn report(&self, gamma: &Contour) -> SurgeryReport {
        SurgeryReport {
            sign: self.sign,
            spine_blocks: gamma.blocks.len(),
            n_large: self.geometry.n_large,
            stages: self.summary.clone(),
            gain: self.gain.clone(),
            reflection_beyond_envelope: self.reflection.beyond_envelope,
            optimization: self.optimization.phases.clone(),
            interpolation_gap: self.interpolation_gap,
            bulk_edge_angle: self.bulk.block_edge_angle,
            bulk_comparison: self.bulk_comparison.clone(),
            bad_blocks: self.collar.bad_blocks.len(),
            reflected_components: self.reflected_components.len(),
        }
    }
}

/// Runs the whole surgery on a concrete, interior contour of σ (boundary
/// condition e₁ outside the domain).
pub fn run_surgery(
    sigma: &SpinConfig,
    gamma: &Contour,
    phases: &PhaseMap,
    real: &DisorderRealization,
    params: &ClassifierParams,
    opts: &SurgeryOptions,
) -> Result<SurgeryTrace> {
    if gamma.touches_boundary {
        return Err(Error::invalid("the surgery does not handle contours touching the domain boundary"));
    }
    let domain = sigma.region().clone();
    let (small, big) = (params.small, params.large);
    let mut classifier = Classifier::new(real, params);
    let collar = collar_decomposition(gamma, sigma, phases, &mut classifier)?;
    let geometry = contour_geometry(gamma, &domain, small)?;
    let sign = contour_sign(&geometry, phases).ok_or_else(|| Error::invalid("Ψ is not constant on δ_ext"))?;

    let reflection = mod1_reflect(sigma, &collar.collar_plus, &collar.collar_minus, big)?;
    let (s2, n2) = mod2_damp(&reflection.config, &collar, big)?;
    let optimization = mod3_optimize(&s2, &collar, real, big, &opts.maximize)?;
    let interp = mod4_interpolate(&optimization.config, &collar, small)?;
    let bulk = bulk_ground_state(gamma, &domain, &mut classifier)?;
    let bulk_comparison = if opts.bulk_check { Some(bulk_comparison(&bulk, &domain, real, &opts.ground)?) } else { None };
    let glued = glue(&interp.config, &geometry, phases, &bulk, sign)?;
    let gain = energy_gain(sigma, &glued.config, &bulk.region, real, params, opts.attribute.then_some(&opts.ground))?;

    let stages = vec![
        ("input", sigma.clone()),
        ("reflect", reflection.config.clone()),
        ("damp", s2),
        ("optimize", optimization.config.clone()),
        ("interpolate", interp.config.clone()),
        ("glue", glued.config.clone()),
    ];
    let e1 = BoundaryCondition::e1();
    let mut summary = Vec::new();
    let mut prev: Option<f64> = None;
    let modified = [0, reflection.reflected, n2, optimization.optimized.len(), interp.changed, 0];
    for (k, (name, cfg)) in stages.iter().enumerate() {
        let value = hamiltonian(cfg, &domain, &e1, real)?;
        let m = if k == 5 { cfg.diff_sites(&stages[4].1, 0.0).len() } else { modified[k] };
        summary.push(StageSummary { name, value, delta: prev.map_or(0.0, |p| value - p), modified: m });
        prev = Some(value);
    }
    Ok(SurgeryTrace {
        sign,
        stages,
        summary,
        collar,
        geometry,
        reflection,
        optimization,
        interpolation_gap: interp.middle_boundary_gap,
        bulk,
        bulk_comparison,
        reflected_components: glued.reflected_components,
        gain,
    })
}
