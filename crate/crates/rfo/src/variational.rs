//! Maximization of the transformed energy K, its stationarity and decay
//! probes, and the point-defect machinery.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::Serialize;

use crate::energy::{BoundaryCondition, SpinConfig};
use crate::error::{Error, Result};
use crate::fields::ScalarField;
use crate::geometry::{connected_components, Connectivity, Grid, LatticeBox, Region, Site};
use crate::stencil::{direction_step, Stencil, NONE};

/// sin(x)/x, by its series near zero.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Σ_e w[cos ∇θ − 1] + Σ_x (a_x cos²θ_x + b_x cos θ_x + c_x sin θ_x), with boundary edges
/// to fixed outside angles and optionally pinned interior sites.
#[derive(Clone, Debug)]
pub(crate) struct Objective {
    pub stencil: Stencil,
    pub weight: f64,
    /// per site: list of outside angles across crossing edges
    pub outside: Vec<Vec<f64>>,
    pub quad: Vec<f64>,
    pub lin: Vec<f64>,
    pub sine: Vec<f64>,
    pub pinned: Vec<bool>,
}

impl Objective {
    pub fn value(&self, th: &[f64]) -> f64 {
        let mut v = 0.0;
        for i in 0..th.len() {
            for (k, &j) in self.stencil.neighbors(i).iter().enumerate() {
                if j != NONE && k % 2 == 1 {
                    v += self.weight * ((th[j as usize] - th[i]).cos() - 1.0);
                }
            }
            for &b in &self.outside[i] {
                v += self.weight * ((b - th[i]).cos() - 1.0);
            }
            let c = th[i].cos();
            v += self.quad[i] * c * c + self.lin[i] * c + self.sine[i] * th[i].sin();
        }
        v
    }

    pub fn gradient(&self, th: &[f64], out: &mut [f64]) {
        for i in 0..th.len() {
            if self.pinned[i] {
                out[i] = 0.0;
                continue;
            }
            let mut g = 0.0;
            for &j in self.stencil.neighbors(i) {
                if j != NONE {
                    g -= (th[i] - th[j as usize]).sin();
                }
            }
            for &b in &self.outside[i] {
                g -= (th[i] - b).sin();
            }
            g *= self.weight;
            g -= self.quad[i] * (2.0 * th[i]).sin() + self.lin[i] * th[i].sin() - self.sine[i] * th[i].cos();
            out[i] = g;
        }
    }

    /// Diagonal and edge couplings of the negated Hessian.
    fn neg_hessian(&self, th: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = th.len();
        let dirs = self.stencil.dirs();
        let mut diag = vec![0.0; n];
        let mut off = vec![0.0; n * dirs];
        for i in 0..n {
            if self.pinned[i] {
                diag[i] = 1.0;
                continue;
            }
            let mut d = 0.0;
            for (k, &j) in self.stencil.neighbors(i).iter().enumerate() {
                if j != NONE {
                    let c = self.weight * (th[i] - th[j as usize]).cos();
                    d += c;
                    if !self.pinned[j as usize] {
                        off[i * dirs + k] = c;
                    }
                }
            }
            for &b in &self.outside[i] {
                d += self.weight * (th[i] - b).cos();
            }
            d += 2.0 * self.quad[i] * (2.0 * th[i]).cos() + self.lin[i] * th[i].cos() + self.sine[i] * th[i].sin();
            diag[i] = d;
        }
        (diag, off)
    }
}

/// Preconditioned CG for the negated Hessian; `None` if it is not positive
/// along the search directions.
fn newton_direction(obj: &Objective, th: &[f64], grad: &[f64]) -> Option<Vec<f64>> {
    let (diag, off) = obj.neg_hessian(th);
    if diag.iter().any(|d| *d <= 0.0) {
        return None;
    }
    let n = th.len();
    let dirs = obj.stencil.dirs();
    let apply = |p: &[f64], q: &mut [f64]| {
        for i in 0..n {
            let mut s = diag[i] * p[i];
            for (k, &j) in obj.stencil.neighbors(i).iter().enumerate() {
                if j != NONE {
                    s -= off[i * dirs + k] * p[j as usize];
                }
            }
            q[i] = s;
        }
    };
    let bnorm = grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Some(x);
    }
    let mut r = grad.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(a, d)| a / d).collect();
    let mut p = z.clone();
    let mut q = vec![0.0; n];
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    for _ in 0..(10 * n + 200) {
        apply(&p, &mut q);
        let pq: f64 = p.iter().zip(&q).map(|(a, b)| a * b).sum();
        if pq <= 0.0 {
            return None;
        }
        let a = rz / pq;
        for i in 0..n {
            x[i] += a * p[i];
            r[i] -= a * q[i];
        }
        // inexact Newton: forcing term min(10⁻², ‖∇K‖) keeps convergence superlinear
        if r.iter().fold(0.0f64, |m, v| m.max(v.abs())) <= bnorm.min(1e-2) * bnorm {
            break;
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Some(x)
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub objective: f64,
    pub residual: f64,
}

/// Damped Newton ascent with Armijo backtracking; `clip` (if any) bounds
/// every free angle to [−c, c] after each step.
pub(crate) fn ascend(
    obj: &Objective,
    th: Vec<f64>,
    clip: Option<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, Vec<TracePoint>)> {
    let (th, trace) = ascend_best(obj, th, clip, tol, max_iter);
    let last = trace.last().unwrap();
    if last.residual > tol {
        return Err(Error::NotConverged { what: "K maximization", residual: last.residual, iterations: last.iteration });
    }
    Ok((th, trace))
}

/// [`ascend`] without the convergence requirement: the last iterate and its trace.
pub(crate) fn ascend_best(
    obj: &Objective,
    mut th: Vec<f64>,
    clip: Option<f64>,
    tol: f64,
    max_iter: usize,
) -> (Vec<f64>, Vec<TracePoint>) {
    let n = th.len();
    let project = |v: &mut [f64]| {
        if let Some(c) = clip {
            for (i, x) in v.iter_mut().enumerate() {
                if !obj.pinned[i] {
                    *x = x.clamp(-c, c);
                }
            }
        }
    };
    project(&mut th);
    let mut grad = vec![0.0; n];
    obj.gradient(&th, &mut grad);
    let mut f = obj.value(&th);
    let mut res = sup(&grad);
    let mut trace = vec![TracePoint { iteration: 0, objective: f, residual: res }];
    let mut polish = 0;
    let mut it = 0;
    while it < max_iter {
        if res <= tol {
            // a few extra steps push the residual to round-off
            polish += 1;
            if polish > 2 || res == 0.0 {
                break;
            }
        }
        it += 1;
        let dir = newton_direction(obj, &th, &grad).filter(|d| d.iter().zip(&grad).map(|(a, b)| a * b).sum::<f64>() > 0.0);
        let (dir, newton) = match dir {
            Some(d) => (d, true),
            None => (grad.clone(), false),
        };
        let slope: f64 = dir.iter().zip(&grad).map(|(a, b)| a * b).sum();
        let mut t = if newton { 1.0 } else { 0.25 / (1.0 + sup(&dir)) };
        let mut accepted = false;
        let mut cand = vec![0.0; n];
        let mut grad_c = vec![0.0; n];
        for _ in 0..60 {
            for i in 0..n {
                cand[i] = th[i] + t * dir[i];
            }
            project(&mut cand);
            let fc = obj.value(&cand);
            let armijo = fc >= f + 1e-4 * t * slope;
            // below round-off in K, accept steps that shrink the gradient instead
            let flat = fc >= f - 1e-14 * (1.0 + f.abs()) && {
                obj.gradient(&cand, &mut grad_c);
                sup(&grad_c) < res
            };
            if armijo || flat {
                accepted = true;
                f = fc;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        std::mem::swap(&mut th, &mut cand);
        obj.gradient(&th, &mut grad);
        res = sup(&grad);
        trace.push(TracePoint { iteration: it, objective: f, residual: res });
    }
    (th, trace)
}

#[derive(Clone, Debug)]
pub struct MaximizerResult {
    pub phi: SpinConfig,
    pub iterations: usize,
    pub residual: f64,
    pub objective: f64,
    pub trace: Vec<TracePoint>,
}

#[derive(Clone, Copy, Debug)]
pub struct MaximizeOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Euler step of the pull-in flow
    pub flow_step: f64,
}

impl Default for MaximizeOptions {
    fn default() -> Self {
        MaximizeOptions { tol: 1e-10, max_iter: 500, flow_step: 0.1 }
    }
}

fn k_objective(region: &Region, m: &ScalarField, tau: &BoundaryCondition) -> Result<(Objective, f64)> {
    let st = Stencil::new(region);
    let mut outside = vec![Vec::new(); region.len()];
    let mut tmax: f64 = 0.0;
    for (i, &x) in region.sites().iter().enumerate() {
        for (k, &j) in st.neighbors(i).iter().enumerate() {
            if j == NONE {
                if let Some(b) = tau.outside_angle(direction_step(x, k))? {
                    outside[i].push(b);
                    tmax = tmax.max(b.abs());
                }
            }
        }
    }
    if tmax > PI / 6.0 + 1e-12 {
        return Err(Error::invalid(format!("boundary angles up to {tmax:.4} exceed π/6")));
    }
    let mv = m.restrict(region)?.into_values();
    if mv.iter().any(|v| *v < 0.0) {
        return Err(Error::invalid("potential must be non-negative"));
    }
    let quad = mv.iter().map(|v| 0.25 * v).collect();
    let n = region.len();
    Ok((Objective { stencil: st, weight: 1.0, outside, quad, lin: vec![0.0; n], sine: vec![0.0; n], pinned: vec![false; n] }, tmax))
}

/// The pull-in vector field: zero on [−π/6, π/6], linear restoring outside.
fn pull_in(theta: f64) -> f64 {
    if theta > PI / 6.0 {
        -(theta - PI / 6.0)
    } else if theta < -PI / 6.0 {
        -(theta + PI / 6.0)
    } else {
        0.0
    }
}

/// Unique maximizer of K_R(·|τ) for ‖τ‖∞ ≤ π/6, from the given start (or 0).
pub fn maximize_k(
    region: &Arc<Region>,
    m: &ScalarField,
    tau: &BoundaryCondition,
    start: Option<&SpinConfig>,
    opts: &MaximizeOptions,
) -> Result<MaximizerResult> {
    let (obj, tmax) = k_objective(region, m, tau)?;
    let mut th: Vec<f64> = match start {
        Some(s) => region
            .sites()
            .iter()
            .map(|&x| s.angle(x).unwrap_or(0.0).clamp(-PI / 2.0, PI / 2.0))
            .collect(),
        None => vec![0.0; region.len()],
    };
    // explicit Euler flow into the convex band; K does not decrease along it
    for _ in 0..1000 {
        if th.iter().all(|t| t.abs() <= PI / 6.0 + 1e-9) {
            break;
        }
        for t in th.iter_mut() {
            *t += opts.flow_step * pull_in(*t);
        }
    }
    let (th, trace) = ascend(&obj, th, Some(tmax), opts.tol, opts.max_iter)?;
    let last = *trace.last().unwrap();
    Ok(MaximizerResult {
        phi: SpinConfig::new(region.clone(), th)?,
        iterations: last.iteration,
        residual: last.residual,
        objective: last.objective,
        trace,
    })
}

/// sup-norm of ∂K/∂φ = −Σ_y sin(φ_x − φ_y) − ½ m_x cos φ_x sin φ_x.
pub fn stationarity_residual(phi: &SpinConfig, region: &Region, m: &ScalarField, tau: &BoundaryCondition) -> Result<f64> {
    let st = Stencil::new(region);
    let mv = m.restrict(region)?.into_values();
    let mut worst: f64 = 0.0;
    for (i, &x) in region.sites().iter().enumerate() {
        let px = phi.angle(x).ok_or_else(|| Error::invalid("φ does not cover the region"))?;
        let mut g = -0.5 * mv[i] * px.cos() * px.sin();
        for (k, &j) in st.neighbors(i).iter().enumerate() {
            let y = direction_step(x, k);
            let py = if j == NONE {
                match tau.outside_angle(y)? {
                    Some(b) => b,
                    None => continue,
                }
            } else {
                phi.angle(y).unwrap()
            };
            g -= (px - py).sin();
        }
        worst = worst.max(g.abs());
    }
    Ok(worst)
}

/// Conductances sin(∇φ)/∇φ on interior edges, for inspecting the linearized
/// operator of the stationarity equation.
pub fn conductances(phi: &SpinConfig) -> Vec<f64> {
    let r = phi.region();
    let st = Stencil::new(r);
    let mut out = Vec::new();
    for i in 0..r.len() {
        for (k, &j) in st.neighbors(i).iter().enumerate() {
            if j != NONE && k % 2 == 1 {
                out.push(sinc(phi.angles()[j as usize] - phi.angles()[i]));
            }
        }
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct DecayProfile {
    /// (distance, max |φ| on that shell)
    pub shells: Vec<(i64, f64)>,
    /// fitted κ in max|φ| ≈ C e^{−κ·dist}
    pub rate: f64,
    /// fraction of consecutive shells on which the profile does not increase
    pub monotone_fraction: f64,
}

/// Shell maxima of |φ| by ℓ^∞ distance from the anchor set, and the fitted
/// exponential rate over shells `fit` (inclusive range of distances).
pub fn decay_profile(phi: &SpinConfig, anchors: &Region, fit: Option<(i64, i64)>) -> Result<DecayProfile> {
    let region = phi.region();
    if anchors.is_empty() {
        return Err(Error::invalid("decay profile needs anchors"));
    }
    let grid = Grid::covering(&region.union(anchors), 0);
    let dist = grid.linf_distance(anchors.sites().iter().copied());
    let mut shells: std::collections::BTreeMap<i64, f64> = Default::default();
    for (&x, &a) in region.sites().iter().zip(phi.angles()) {
        let d = dist[grid.index(x).unwrap()] as i64;
        let e = shells.entry(d).or_insert(0.0);
        *e = e.max(a.abs());
    }
    let shells: Vec<(i64, f64)> = shells.into_iter().collect();
    let (lo, hi) = fit.unwrap_or((shells.first().unwrap().0, shells.last().unwrap().0));
    let pts: Vec<(f64, f64)> = shells
        .iter()
        .filter(|(d, v)| *d >= lo && *d <= hi && *v > 1e-300)
        .map(|(d, v)| (*d as f64, v.ln()))
        .collect();
    let rate = if pts.len() >= 2 { -linear_fit(&pts).0 } else { f64::NAN };
    let steps = shells.windows(2).count().max(1);
    let mono = shells.windows(2).filter(|w| w[1].1 <= w[0].1 * (1.0 + 1e-12)).count();
    Ok(DecayProfile { shells, rate, monotone_fraction: mono as f64 / steps as f64 })
}

/// Least squares slope, intercept and R².
pub fn linear_fit(pts: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, my - slope * mx, r2)
}

/// Decay rate of the linearized stationarity equation for constant m on a
/// line: cosh κ = 1 + m/4.
pub fn linearized_rate(m: f64) -> f64 {
    (1.0 + m / 4.0).acosh()
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct DefectParams {
    pub mu: f64,
    pub delta: f64,
    /// witness diameter must be at least this fraction of the side
    pub diam_fraction: f64,
    /// witness must stay this fraction of the side away from ∂ᵒQ
    pub dist_fraction: f64,
}

impl DefectParams {
    pub fn new(mu: f64, delta: f64) -> Result<DefectParams> {
        if !(0.0 < delta && delta < mu && mu < 1.0) {
            return Err(Error::invalid("defect parameters need 0 < δ < μ < 1"));
        }
        Ok(DefectParams { mu, delta, diam_fraction: 0.25, dist_fraction: 0.25 })
    }
}

#[derive(Clone, Debug)]
pub struct DefectReport {
    pub has_defect: bool,
    pub average_e1: f64,
    pub witness: Option<Region>,
}

/// ℓ^∞ diameter: the largest coordinate extent.
fn linf_diameter(r: &Region) -> i64 {
    match r.bounds() {
        Some((lo, hi)) => (0..r.dim()).map(|i| hi.0[i] - lo.0[i]).max().unwrap(),
        None => 0,
    }
}

pub fn defect_detect(sigma: &SpinConfig, b: &LatticeBox, params: &DefectParams) -> Result<DefectReport> {
    let m = crate::energy::block_magnetization(sigma, b)?;
    let average_e1 = m[0];
    if average_e1 < 1.0 - params.delta {
        return Ok(DefectReport { has_defect: false, average_e1, witness: None });
    }
    let side = b.side as f64;
    let low = b.region().filter(|x| {
        let a = sigma.angle(x).unwrap();
        a.cos() <= 1.0 - params.mu && b.dist_to_outer_boundary(x) as f64 >= params.dist_fraction * side
    });
    let witness = connected_components(&low, Connectivity::Graph)
        .into_iter()
        .find(|c| linf_diameter(c) as f64 >= params.diam_fraction * side);
    Ok(DefectReport { has_defect: witness.is_some(), average_e1, witness })
}

#[derive(Clone, Debug, Serialize)]
pub struct DefectEnergy {
    pub radius: f64,
    pub dim: usize,
    pub energy: f64,
    pub mean_e1: f64,
    pub multiplier: f64,
    pub converged: bool,
}

/// The Euclidean ball {‖x‖₂ ≤ l}.
pub fn euclidean_ball(dim: usize, l: f64) -> Region {
    let r = l.floor() as i64;
    let b = LatticeBox::new(dim, Site::new(&[-r, -r, -r][..dim]), 2 * r + 1);
    b.region().filter(|x| x.l2(Site::origin()) <= l)
}

/// Smallest Dirichlet energy on B_l found subject to mean σ·e₁ ≥ 1 − δ and
/// σ₀·e₁ ≤ 1 − μ. The centre is pinned at the constraint and the mean
/// constraint is enforced by bisection on its Lagrange multiplier, so the
/// result is attained by a feasible configuration (an upper bound).
pub fn min_defect_energy(l: f64, dim: usize, params: &DefectParams) -> Result<DefectEnergy> {
    let region = euclidean_ball(dim, l);
    let n = region.len();
    let center = region.position(Site::origin()).unwrap();
    let theta0 = (1.0 - params.mu).acos();
    let target = 1.0 - params.delta;
    let mut pinned = vec![false; n];
    pinned[center] = true;
    let obj_for = |nu: f64| Objective {
        stencil: Stencil::new(&region),
        weight: 2.0,
        outside: vec![Vec::new(); n],
        quad: vec![0.0; n],
        lin: vec![nu; n],
        sine: vec![0.0; n],
        pinned: pinned.clone(),
    };
    let mut start = vec![0.0; n];
    start[center] = theta0;
    let solve = |nu: f64, init: &[f64]| -> Result<(Vec<f64>, f64, f64)> {
        let obj = obj_for(nu);
        let (th, _) = ascend(&obj, init.to_vec(), None, 1e-10, 400)?;
        let mean = th.iter().map(|t| t.cos()).sum::<f64>() / n as f64;
        let energy = th_energy(&obj.stencil, &th);
        Ok((th, mean, energy))
    };
    // bracket the multiplier: the mean grows with ν
    let mut hi = 1e-3;
    let mut best = solve(hi, &start)?;
    let mut guard = 0;
    while best.1 < target {
        hi *= 2.0;
        best = solve(hi, &best.0)?;
        guard += 1;
        if guard > 60 {
            return Err(Error::Numerical("defect multiplier bracket failed".into()));
        }
    }
    let mut lo = 0.0;
    let mut feasible = best.clone();
    let mut nu_ok = hi;
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        let r = solve(mid, &feasible.0)?;
        if r.1 >= target {
            hi = mid;
            nu_ok = mid;
            feasible = r;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-10 * hi {
            break;
        }
    }
    Ok(DefectEnergy {
        radius: l,
        dim,
        energy: feasible.2,
        mean_e1: feasible.1,
        multiplier: nu_ok,
        converged: (feasible.1 - target).abs() < 1e-6,
    })
}

fn th_energy(st: &Stencil, th: &[f64]) -> f64 {
    let mut e = 0.0;
    for i in 0..th.len() {
        for (k, &j) in st.neighbors(i).iter().enumerate() {
            if j != NONE && k % 2 == 1 {
                e += 2.0 - 2.0 * (th[i] - th[j as usize]).cos();
            }
        }
    }
    e
}
