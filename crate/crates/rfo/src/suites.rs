//! Ensemble checks of the Green-field probability estimates and the density
//! of dirty disorder.

use std::sync::Arc;

use rayon::prelude::*;
use rustc_hash::FxHashSet;
use serde::Serialize;

use crate::classification::{Classifier, ClassifierParams};
use crate::error::{Error, Result};
use crate::fields::{sample_alpha, spectral_sigmas, Bc, BoxSpectrum, SpectralConstants};
use crate::geometry::{closed_hull, LatticeBox, Region, Site};
use crate::rng::derive_seed;
use crate::stencil::{Stencil, NONE};

/// Binomial frequency with its 95% Wilson interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Proportion {
    pub hits: u64,
    pub trials: u64,
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Proportion {
    pub fn new(hits: u64, trials: u64) -> Proportion {
        let z = 1.959963984540054;
        if trials == 0 {
            return Proportion { hits, trials, estimate: f64::NAN, lo: 0.0, hi: 1.0 };
        }
        let n = trials as f64;
        let p = hits as f64 / n;
        let den = 1.0 + z * z / n;
        let centre = (p + z * z / (2.0 * n)) / den;
        let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / den;
        let lo = if hits == 0 { 0.0 } else { (centre - half).max(0.0) };
        let hi = if hits == trials { 1.0 } else { (centre + half).min(1.0) };
        Proportion { hits, trials, estimate: p, lo, hi }
    }
}

/// Least-squares line y = slope·x + intercept with its R².
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn fit_line(xs: &[f64], ys: &[f64]) -> LineFit {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    LineFit { slope, intercept: my - slope * mx, r2 }
}

#[derive(Clone, Debug, Serialize)]
pub struct TailOptions {
    pub side: usize,
    pub lambda: f64,
    pub dim: usize,
    pub bc: Bc,
    pub samples: usize,
    pub seed: u64,
    /// multiples M of the per-site (per-edge) standard deviation
    pub levels: Vec<f64>,
    /// window radii r for the averaged-potential event
    pub windows: Vec<i64>,
    /// the constant A in the averaged-potential event
    pub potential_level: f64,
    /// c_d as a fraction of the exact mean of ‖∇G‖²
    pub gradient_floor: f64,
}

impl TailOptions {
    pub fn new(side: usize, dim: usize, samples: usize, seed: u64) -> TailOptions {
        TailOptions {
            side,
            lambda: 0.0,
            dim,
            bc: Bc::Dirichlet,
            samples,
            seed,
            levels: vec![1.0, 1.5, 2.0, 2.5, 3.0, 3.5],
            windows: {
                let mut w = vec![2, (side as i64 / 8).max(1), (side as i64 / 4).max(1)];
                w.dedup();
                w
            },
            potential_level: 0.1,
            gradient_floor: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct TailPoint {
    pub level: f64,
    pub site: Proportion,
    pub edge: Proportion,
}

/// Sample mean of a per-sample quantity against its exact expectation.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct MeanCheck {
    pub mean: f64,
    pub std_err: f64,
    pub exact: f64,
    /// |mean − exact| / std_err
    pub z: f64,
}

impl MeanCheck {
    fn new(xs: &[f64], exact: f64) -> MeanCheck {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let std_err = (var / n).sqrt();
        MeanCheck { mean, std_err, exact, z: (mean - exact).abs() / std_err }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct WindowPoint {
    pub radius: i64,
    pub failures: Proportion,
}

#[derive(Clone, Debug, Serialize)]
pub struct NamedCheck {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct TailReport {
    pub options: TailOptions,
    pub spectral: SpectralConstants,
    /// sample variance of G at the centre site over the exact eigen-sum
    pub centre_variance_ratio: f64,
    pub centre_variance_exact: f64,
    pub tail: Vec<TailPoint>,
    pub site_fit: LineFit,
    pub edge_fit: LineFit,
    /// ‖G‖² against Σ_k (μ_k+λ)⁻²
    pub norm: MeanCheck,
    /// ‖∇G‖² against Σ_k μ_k(μ_k+λ)⁻²
    pub gradient: MeanCheck,
    /// E‖G‖²/(ς₂² l^d) and E‖∇G‖²/(ς_∇² l^d) from the exact sums
    pub norm_scale: f64,
    pub gradient_scale: f64,
    pub gradient_below_floor: Proportion,
    pub min_gradient_ratio: f64,
    pub norm_exceed: Vec<(f64, Proportion)>,
    pub averaged_potential: Vec<WindowPoint>,
    pub checks: Vec<NamedCheck>,
}

impl TailReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

struct Exact {
    site_var: Vec<f64>,
    edge_var: Vec<f64>,
    /// (site, neighbour or NONE for a Dirichlet boundary edge)
    edges: Vec<(usize, u32)>,
    norm: f64,
    gradient: f64,
}

fn natural_edges(region: &Region, bc: Bc) -> Vec<(usize, u32)> {
    let st = Stencil::new(region);
    let mut edges = Vec::new();
    for i in 0..region.len() {
        for (k, &j) in st.neighbors(i).iter().enumerate() {
            if j == NONE {
                if bc == Bc::Dirichlet {
                    edges.push((i, NONE));
                }
            } else if k % 2 == 1 {
                edges.push((i, j));
            }
        }
    }
    edges
}

/// Exact second moments of G = (−Δ+λ)⁻¹α for white α (centred for Neumann).
fn exact_moments(spec: &BoxSpectrum, region: &Region, lambda: f64, bc: Bc) -> Exact {
    let n = spec.len();
    let edges = natural_edges(region, bc);
    let mut site_var = vec![0.0; n];
    let mut edge_var = vec![0.0; edges.len()];
    let (mut norm, mut gradient) = (0.0, 0.0);
    let mut mode = vec![0.0; n];
    for k in 0..n {
        let mu = spec.eigenvalue(k);
        if bc == Bc::Neumann && k == 0 {
            continue;
        }
        let w = 1.0 / (mu + lambda).powi(2);
        norm += w;
        gradient += mu * w;
        for (x, v) in mode.iter_mut().enumerate() {
            *v = spec.mode_at(k, x);
        }
        for (x, v) in mode.iter().enumerate() {
            site_var[x] += w * v * v;
        }
        for (e, &(i, j)) in edges.iter().enumerate() {
            let d = if j == NONE { mode[i] } else { mode[j as usize] - mode[i] };
            edge_var[e] += w * d * d;
        }
    }
    Exact { site_var, edge_var, edges, norm, gradient }
}

/// Squared-gradient sums m_x over edges touching x.
fn potential(g: &[f64], edges: &[(usize, u32)]) -> Vec<f64> {
    let mut m = vec![0.0; g.len()];
    for &(i, j) in edges {
        let d = if j == NONE { g[i] } else { g[j as usize] - g[i] };
        m[i] += d * d;
        if j != NONE {
            m[j as usize] += d * d;
        }
    }
    m
}

/// Summed-area table over a cube in lexicographic order (last axis fastest).
struct Prefix {
    dim: usize,
    side: usize,
    table: Vec<f64>,
}

impl Prefix {
    fn new(values: &[f64], dim: usize, side: usize) -> Prefix {
        let p = side + 1;
        let mut table = vec![0.0; p.pow(dim as u32)];
        for (x, v) in values.iter().enumerate() {
            let c = unflatten(x, dim, side);
            table[flatten(&c.iter().map(|a| a + 1).collect::<Vec<_>>(), p)] = *v;
        }
        for axis in 0..dim {
            let stride = p.pow((dim - 1 - axis) as u32);
            for idx in 0..table.len() {
                if (idx / stride) % p != 0 {
                    table[idx] += table[idx - stride];
                }
            }
        }
        Prefix { dim, side, table }
    }

    /// Sum over the cube [lo, hi] (inclusive), clipped to the box.
    fn sum(&self, lo: &[i64], hi: &[i64]) -> f64 {
        let p = self.side + 1;
        let lo: Vec<usize> = lo.iter().map(|a| (*a).max(0) as usize).collect();
        let hi: Vec<usize> = hi.iter().map(|a| ((*a).min(self.side as i64 - 1) + 1) as usize).collect();
        let mut total = 0.0;
        for corner in 0..(1usize << self.dim) {
            let mut c = vec![0; self.dim];
            let mut sign = 1.0;
            for a in 0..self.dim {
                if corner >> a & 1 == 1 {
                    c[a] = lo[a];
                    sign = -sign;
                } else {
                    c[a] = hi[a];
                }
            }
            total += sign * self.table[flatten(&c, p)];
        }
        total
    }
}

fn unflatten(mut x: usize, dim: usize, side: usize) -> Vec<usize> {
    let mut c = vec![0; dim];
    for a in (0..dim).rev() {
        c[a] = x % side;
        x /= side;
    }
    c
}

fn flatten(c: &[usize], side: usize) -> usize {
    c.iter().fold(0, |acc, a| acc * side + a)
}

struct SampleStats {
    centre: f64,
    norm: f64,
    gradient: f64,
    site_hits: Vec<u64>,
    edge_hits: Vec<u64>,
    window_fail: Vec<bool>,
}

/// The disorder-ensemble checks of the Green-field estimates on one box.
pub fn randbasic_suite(opts: &TailOptions) -> Result<TailReport> {
    if opts.samples < 2 || opts.side < 2 || !(1..=3).contains(&opts.dim) {
        return Err(Error::invalid("suite needs ≥ 2 samples, side ≥ 2 and d ∈ {1,2,3}"));
    }
    let (dim, side) = (opts.dim, opts.side);
    let cube = LatticeBox::new(dim, Site::origin(), side as i64);
    let region = Arc::new(cube.region());
    let spec = BoxSpectrum::new(dim, side, opts.bc);
    let exact = exact_moments(&spec, &region, opts.lambda, opts.bc);
    let centre = flatten(&vec![side / 2; dim], side);
    let site_sd: Vec<f64> = exact.site_var.iter().map(|v| v.sqrt()).collect();
    let edge_sd: Vec<f64> = exact.edge_var.iter().map(|v| v.sqrt()).collect();
    let l = side as f64;
    let ball = |x: f64| x.powi(dim as i32);
    let reach = |c: &[usize]| c.iter().map(|&a| (a + 1).min(side - a) as f64).fold(f64::INFINITY, f64::min);
    let r_lambda = |c: &[usize]| if opts.lambda > 0.0 { reach(c).min(opts.lambda.powf(-0.5)) } else { reach(c) };
    let inner: Vec<(usize, Vec<usize>)> = (0..region.len())
        .map(|x| (x, unflatten(x, dim, side)))
        .filter(|(_, c)| reach(c) >= l / 16.0)
        .collect();

    let one = |s: usize| -> SampleStats {
        let real = sample_alpha(region.clone(), derive_seed(opts.seed, s as u64), 1.0);
        let mut alpha = real.alpha().values().to_vec();
        if opts.bc == Bc::Neumann {
            let mean = alpha.iter().sum::<f64>() / alpha.len() as f64;
            alpha.iter_mut().for_each(|a| *a -= mean);
        }
        let g = spec.solve(&alpha, opts.lambda);
        let norm = g.iter().map(|v| v * v).sum();
        let grads: Vec<f64> = exact.edges.iter().map(|&(i, j)| if j == NONE { g[i] } else { g[j as usize] - g[i] }).collect();
        let gradient = grads.iter().map(|v| v * v).sum();
        let site_hits = opts.levels.iter().map(|m| g.iter().zip(&site_sd).filter(|(v, sd)| v.abs() >= m * **sd).count() as u64).collect();
        let edge_hits = opts.levels.iter().map(|m| grads.iter().zip(&edge_sd).filter(|(v, sd)| v.abs() >= m * **sd).count() as u64).collect();
        let m = potential(&g, &exact.edges);
        let prefix = Prefix::new(&m, dim, side);
        let window_fail = opts
            .windows
            .iter()
            .map(|&r| {
                inner.iter().any(|(_, c)| {
                    let lo: Vec<i64> = c.iter().map(|&a| a as i64 - r).collect();
                    let hi: Vec<i64> = c.iter().map(|&a| a as i64 + r).collect();
                    let avg = prefix.sum(&lo, &hi) / ball(r as f64);
                    let log_factor = if dim == 2 { r_lambda(c).ln().max(0.0) } else { 1.0 };
                    avg < opts.potential_level * log_factor
                })
            })
            .collect();
        SampleStats { centre: g[centre], norm, gradient, site_hits, edge_hits, window_fail }
    };
    let samples: Vec<SampleStats> = (0..opts.samples).into_par_iter().map(one).collect();

    let ns = samples.len() as f64;
    let centre_mean = samples.iter().map(|s| s.centre).sum::<f64>() / ns;
    let centre_var = samples.iter().map(|s| (s.centre - centre_mean).powi(2)).sum::<f64>() / (ns - 1.0);
    let centre_exact = exact.site_var[centre];
    let site_trials = (samples.len() * region.len()) as u64;
    let edge_trials = (samples.len() * exact.edges.len()) as u64;
    let tail: Vec<TailPoint> = opts
        .levels
        .iter()
        .enumerate()
        .map(|(k, &level)| TailPoint {
            level,
            site: Proportion::new(samples.iter().map(|s| s.site_hits[k]).sum(), site_trials),
            edge: Proportion::new(samples.iter().map(|s| s.edge_hits[k]).sum(), edge_trials),
        })
        .collect();
    let fit = |pick: &dyn Fn(&TailPoint) -> Proportion| {
        let pts: Vec<(f64, f64)> = tail.iter().filter(|t| pick(t).hits > 0).map(|t| (t.level * t.level, pick(t).estimate.ln())).collect();
        let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        fit_line(&xs, &ys)
    };
    let site_fit = fit(&|t| t.site);
    let edge_fit = fit(&|t| t.edge);
    let norms: Vec<f64> = samples.iter().map(|s| s.norm).collect();
    let grads: Vec<f64> = samples.iter().map(|s| s.gradient).collect();
    let norm = MeanCheck::new(&norms, exact.norm);
    let gradient = MeanCheck::new(&grads, exact.gradient);
    let spectral = spectral_sigmas(l, opts.lambda, dim)?;
    let vol = ball(l);
    let floor = opts.gradient_floor * exact.gradient;
    let gradient_below_floor = Proportion::new(grads.iter().filter(|g| **g <= floor).count() as u64, samples.len() as u64);
    let min_gradient_ratio = grads.iter().fold(f64::INFINITY, |m, g| m.min(g / exact.gradient));
    let norm_exceed = [1.5, 2.0, 4.0]
        .iter()
        .map(|&m| (m, Proportion::new(norms.iter().filter(|v| **v >= m * exact.norm).count() as u64, samples.len() as u64)))
        .collect();
    let averaged_potential = opts
        .windows
        .iter()
        .enumerate()
        .map(|(k, &radius)| WindowPoint {
            radius,
            failures: Proportion::new(samples.iter().filter(|s| s.window_fail[k]).count() as u64, samples.len() as u64),
        })
        .collect();

    let ratio = centre_var / centre_exact;
    let monotone = tail.windows(2).all(|w| w[1].site.estimate <= w[0].site.estimate && w[1].edge.estimate <= w[0].edge.estimate);
    let checks = vec![
        NamedCheck { name: "centre variance".into(), pass: (0.8..=1.2).contains(&ratio), detail: format!("ratio {ratio:.4}") },
        NamedCheck { name: "gradient trace identity".into(), pass: gradient.z <= 3.0, detail: format!("z = {:.3}", gradient.z) },
        NamedCheck { name: "norm trace identity".into(), pass: norm.z <= 3.0, detail: format!("z = {:.3}", norm.z) },
        NamedCheck {
            name: "site tail regression".into(),
            pass: site_fit.slope < 0.0 && site_fit.r2 >= 0.9,
            detail: format!("slope {:.4}, R² {:.4}", site_fit.slope, site_fit.r2),
        },
        NamedCheck {
            name: "edge tail regression".into(),
            pass: edge_fit.slope < 0.0 && edge_fit.r2 >= 0.9,
            detail: format!("slope {:.4}, R² {:.4}", edge_fit.slope, edge_fit.r2),
        },
        NamedCheck { name: "tail monotone".into(), pass: monotone, detail: String::new() },
        NamedCheck {
            name: "gradient floor".into(),
            pass: gradient_below_floor.hits == 0,
            detail: format!("min ‖∇G‖²/E = {min_gradient_ratio:.4}"),
        },
    ];
    Ok(TailReport {
        options: opts.clone(),
        spectral,
        centre_variance_ratio: ratio,
        centre_variance_exact: centre_exact,
        tail,
        site_fit,
        edge_fit,
        norm,
        gradient,
        norm_scale: exact.norm / (spectral.sigma2_sq * vol),
        gradient_scale: exact.gradient / (spectral.sigma_grad_sq * vol),
        gradient_below_floor,
        min_gradient_ratio,
        norm_exceed,
        averaged_potential,
        checks,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct DirtyOptions {
    /// largest number of blocks in the searched connected sets
    pub max_blocks: usize,
    pub samples: usize,
    pub seed: u64,
    /// largest block distance of the reported correlations
    pub max_distance: i64,
}

impl Default for DirtyOptions {
    fn default() -> DirtyOptions {
        DirtyOptions { max_blocks: 3, samples: 8, seed: 0, max_distance: 3 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DirtyReport {
    pub epsilon: f64,
    pub blocks: usize,
    pub truncation: usize,
    pub sets_checked: usize,
    pub densities: Vec<f64>,
    pub mean: f64,
    pub median: f64,
    /// Pearson correlation of the dirty indicators at each block distance
    pub correlation: Vec<(i64, Option<f64>)>,
}

/// Connected sets of at most `k` blocks (by block corner) inside the window.
pub fn connected_block_sets(corners: &[Site], dim: usize, scale: i64, k: usize) -> Vec<Vec<Site>> {
    let inside: FxHashSet<Site> = corners.iter().copied().collect();
    let mut seen: FxHashSet<Vec<Site>> = FxHashSet::default();
    let mut frontier: Vec<Vec<Site>> = corners.iter().map(|c| vec![*c]).collect();
    let mut out = Vec::new();
    for size in 1..=k {
        let mut next = Vec::new();
        for set in frontier {
            if !seen.insert(set.clone()) {
                continue;
            }
            if size < k {
                for b in &set {
                    for axis in 0..dim {
                        for step in [-scale, scale] {
                            let n = b.offset(axis, step);
                            if inside.contains(&n) && !set.contains(&n) {
                                let mut grown = set.clone();
                                grown.push(n);
                                grown.sort();
                                next.push(grown);
                            }
                        }
                    }
                }
            }
            out.push(set);
        }
        frontier = next;
    }
    out
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Fraction of L-blocks of the window lying in c(Y) for some dirty connected
/// Y of at most `max_blocks` blocks. A lower bound on the true density.
pub fn dirty_density(epsilon: f64, window: &LatticeBox, params: &ClassifierParams, opts: &DirtyOptions) -> Result<DirtyReport> {
    let big = params.large;
    let region = Arc::new(window.region());
    if !region.is_measurable(big) {
        return Err(Error::invalid("window must be a union of L-blocks"));
    }
    let dim = window.dim;
    let corners: Vec<Site> = crate::classification::blocks_inside(&region, big)?.iter().map(|b| b.lo()).collect();
    let sets = connected_block_sets(&corners, dim, big, opts.max_blocks);
    let per_sample: Vec<Vec<bool>> = (0..opts.samples)
        .into_par_iter()
        .map(|s| -> Result<Vec<bool>> {
            let real = sample_alpha(region.clone(), derive_seed(opts.seed, s as u64), epsilon);
            let mut cls = Classifier::new(&real, params);
            let mut dirty: FxHashSet<Site> = FxHashSet::default();
            for set in &sets {
                let y = Region::from_boxes(dim, &set.iter().map(|c| LatticeBox::new(dim, *c, big)).collect::<Vec<_>>());
                if !cls.taxonomy(&y)?.clean {
                    let hull = closed_hull(&y, big)?;
                    for &c in &corners {
                        if hull.contains(c) {
                            dirty.insert(c);
                        }
                    }
                }
            }
            Ok(corners.iter().map(|c| dirty.contains(c)).collect())
        })
        .collect::<Result<_>>()?;
    let densities: Vec<f64> = per_sample.iter().map(|v| v.iter().filter(|d| **d).count() as f64 / corners.len() as f64).collect();
    let mut correlation = Vec::new();
    for dist in 1..=opts.max_distance {
        let (mut n, mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for v in &per_sample {
            for (i, a) in corners.iter().enumerate() {
                for (j, b) in corners.iter().enumerate().skip(i + 1) {
                    if a.l1(*b) / big == dist {
                        let (x, y) = (v[i] as u8 as f64, v[j] as u8 as f64);
                        n += 1.0;
                        sx += x;
                        sy += y;
                        sxx += x * x;
                        syy += y * y;
                        sxy += x * y;
                    }
                }
            }
        }
        let cov = sxy / n - sx * sy / (n * n);
        let vx = sxx / n - (sx / n).powi(2);
        let vy = syy / n - (sy / n).powi(2);
        let c = if n > 0.0 && vx > 0.0 && vy > 0.0 { Some(cov / (vx * vy).sqrt()) } else { None };
        correlation.push((dist, c));
    }
    Ok(DirtyReport {
        epsilon,
        blocks: corners.len(),
        truncation: opts.max_blocks,
        sets_checked: sets.len(),
        mean: densities.iter().sum::<f64>() / densities.len().max(1) as f64,
        median: median(&densities),
        densities,
        correlation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_interval_brackets_the_estimate() {
        let p = Proportion::new(7, 50);
        assert!(p.lo < p.estimate && p.estimate < p.hi);
        let z = Proportion::new(0, 50);
        assert_eq!(z.lo, 0.0);
        assert!(z.hi > 0.0 && z.hi < 0.1);
        // textbook value for 7/50
        assert!((p.lo - 0.0695).abs() < 1e-3 && (p.hi - 0.2624).abs() < 1e-3);
    }

    #[test]
    fn line_fit_recovers_a_line() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| -0.5 * x + 2.0).collect();
        let f = fit_line(&xs, &ys);
        assert!((f.slope + 0.5).abs() < 1e-12 && (f.intercept - 2.0).abs() < 1e-12 && (f.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn prefix_sums_match_direct_window_sums() {
        let (dim, side) = (3, 5);
        let vals: Vec<f64> = (0..side * side * side).map(|i| (i as f64 * 0.37).sin()).collect();
        let p = Prefix::new(&vals, dim, side);
        let lo = [-1, 1, 2];
        let hi = [2, 3, 7];
        let direct: f64 = (0..vals.len())
            .filter(|&x| {
                let c = unflatten(x, dim, side);
                (0..dim).all(|a| c[a] as i64 >= lo[a] && c[a] as i64 <= hi[a])
            })
            .map(|x| vals[x])
            .sum();
        assert!((p.sum(&lo, &hi) - direct).abs() < 1e-12);
    }

    #[test]
    fn exact_moments_match_a_dense_covariance() {
        let region = LatticeBox::new(2, Site::origin(), 4).region();
        for (bc, lambda) in [(Bc::Dirichlet, 0.0), (Bc::Dirichlet, 0.3), (Bc::Neumann, 0.2)] {
            let spec = BoxSpectrum::new(2, 4, bc);
            let ex = exact_moments(&spec, &region, lambda, bc);
            // column-by-column response to unit sources gives the covariance G Gᵀ
            let n = region.len();
            let mut cols = Vec::new();
            for k in 0..n {
                let mut e = vec![0.0; n];
                e[k] = 1.0;
                if bc == Bc::Neumann {
                    e.iter_mut().for_each(|v| *v -= 1.0 / n as f64);
                }
                cols.push(spec.solve(&e, lambda));
            }
            for x in 0..n {
                let v: f64 = cols.iter().map(|c| c[x] * c[x]).sum();
                assert!((v - ex.site_var[x]).abs() < 1e-10, "{bc:?} {x}");
            }
            let grad: f64 = cols
                .iter()
                .map(|c| ex.edges.iter().map(|&(i, j)| if j == NONE { c[i] } else { c[j as usize] - c[i] }).map(|d| d * d).sum::<f64>())
                .sum();
            assert!((grad - ex.gradient).abs() < 1e-10);
        }
    }

    #[test]
    fn small_suite_passes_its_identities() {
        let mut o = TailOptions::new(8, 2, 1500, 3);
        o.levels = vec![1.0, 1.5, 2.0, 2.5, 3.0];
        let r = randbasic_suite(&o).unwrap();
        for c in &r.checks {
            assert!(c.pass || c.name == "gradient floor", "{} {}", c.name, c.detail);
        }
        assert!(r.tail.iter().all(|t| (0.0..=1.0).contains(&t.site.estimate)));
        assert!(r.averaged_potential.iter().all(|w| w.failures.trials == 1500));
    }

    #[test]
    fn connected_sets_are_counted_like_polyominoes() {
        let corners: Vec<Site> = LatticeBox::new(2, Site::origin(), 3).sites();
        let sets = connected_block_sets(&corners, 2, 1, 3);
        // 9 monominoes, 12 dominoes, 22 trominoes (straight 6, bent 16) in a 3×3 grid
        assert_eq!(sets.len(), 9 + 12 + 22);
    }

    #[test]
    fn dirty_density_extremes() {
        let window = LatticeBox::new(2, Site::origin(), 32);
        let mut loose = ClassifierParams::calibrated(0.3, 0.25, 2, 2, 8).unwrap();
        loose.a = -1e9;
        loose.b = 1e9;
        let t = &mut loose.thresholds;
        for v in [&mut t.field_sup, &mut t.gradient_sup, &mut t.alpha_sup, &mut t.alpha_mean, &mut t.dense_budget] {
            *v = 1e9;
        }
        for v in [&mut t.outlier_budget, &mut t.energy_budget, &mut t.field_budget, &mut t.mean_budget_factor] {
            *v = 1e9;
        }
        let opts = DirtyOptions { samples: 2, max_blocks: 2, ..Default::default() };
        let r = dirty_density(0.3, &window, &loose, &opts).unwrap();
        assert_eq!(r.mean, 0.0);
        let mut harsh = loose.clone();
        harsh.a = 1e9;
        harsh.b = -1e9;
        harsh.thresholds.dense_budget = 0.0;
        let r = dirty_density(0.3, &window, &harsh, &opts).unwrap();
        assert_eq!(r.mean, 1.0);
        assert_eq!(r.blocks, 16);
    }
}
