//! Acceptance criteria 1–13. Each test writes one `PASS`/`FAIL` line to the
//! process's stderr handle (bypassing the harness capture) before asserting.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use rfo::classification::{Classifier, ClassifierParams};
use rfo::contours::{collar_decomposition, compatible, contour_geometry, extract_contours, is_concrete, CollarDecomposition};
use rfo::energy::{
    blayer_check, decompose_dirichlet, decompose_free, dirichlet_energy, hamiltonian, BoundaryCondition, SpinConfig,
};
use rfo::fields::{
    eigen_solve_oracle, fk_estimate, harmonic_split, sample_alpha, solve_green, Bc, DisorderRealization, ScalarField,
    SolveOptions,
};
use rfo::geometry::{boundary, connected_components, Connectivity, LatticeBox, Region, Side, Site};
use rfo::sampler::{batch_standard_error, metropolis_run, run_ensemble, Proposal, SamplerConfig, Series};
use rfo::suites::{randbasic_suite, TailOptions};
use rfo::surgery::{mod1_reflect, run_surgery, SurgeryOptions};
use rfo::variational::{
    decay_profile, linearized_rate, maximize_k, min_defect_energy, DefectParams, MaximizeOptions,
};

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let line = format!("{} criterion {id:>2} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
}

fn finish(id: u32, name: &str, start: Instant, budget: Duration, ok: bool, detail: String) {
    let t = start.elapsed();
    let pass = ok && t <= budget;
    report(id, name, pass, &format!("{detail} ({:.1}s of {}s)", t.as_secs_f64(), budget.as_secs()));
    assert!(ok, "criterion {id} failed: {detail}");
    assert!(t <= budget, "criterion {id} over its time budget: {t:?}");
}

fn cube(dim: usize, side: i64) -> Arc<Region> {
    Arc::new(LatticeBox::new(dim, Site::origin(), side).region())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn random_config(rng: &mut ChaCha8Rng, region: &Arc<Region>, spread: f64) -> SpinConfig {
    let angles = (0..region.len()).map(|_| rng.random_range(-spread..spread)).collect();
    SpinConfig::new(region.clone(), angles).unwrap()
}

fn random_boundary(rng: &mut ChaCha8Rng, region: &Region, spread: f64) -> SpinConfig {
    let outer = Arc::new(boundary(region, Side::Outer));
    random_config(rng, &outer, spread)
}

const EXACT: SolveOptions = SolveOptions { tol: 1e-13, max_iter: 0 };

#[test]
fn c01_exact_decompositions() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst, mut count, mut ok) = (0.0f64, 0, true);
    for dim in 1..=3 {
        for k in 0..100u64 {
            let side = rng.random_range(3..=8);
            let lambda = [0.0, 0.05, 0.3][rng.random_range(0..3)];
            let r = cube(dim, side);
            let real = sample_alpha(r.clone(), 1000 * dim as u64 + k, rng.random_range(0.05..0.8));
            let sigma = random_config(&mut rng, &r, PI);
            let bc = match k % 3 {
                0 => BoundaryCondition::e1(),
                1 => BoundaryCondition::Uniform(rng.random_range(-PI..PI)),
                _ => BoundaryCondition::Fixed(random_boundary(&mut rng, &r, PI)),
            };
            for br in [
                decompose_free(&sigma, &r, lambda, &real, &EXACT).unwrap(),
                decompose_dirichlet(&sigma, &r, &bc, lambda, &real, &EXACT).unwrap(),
            ] {
                worst = worst.max(br.residual.abs() / (1.0 + br.total.abs()));
                ok &= br.is_exact();
                count += 1;
            }
        }
    }
    let detail = format!("{count} decompositions, worst |residual|/(1+|total|) = {worst:.2e} (≤ 1e-10)");
    finish(1, "exact decomposition identities", start, Duration::from_secs(10), ok, detail);
}

#[test]
fn c02_solver_triple_oracle() {
    let start = Instant::now();
    let opts = SolveOptions { tol: 1e-12, max_iter: 0 };
    let mut worst: f64 = 0.0;
    for (dim, side) in [(1, 16), (2, 5), (2, 16), (3, 4), (3, 9), (3, 16)] {
        let b = LatticeBox::new(dim, Site::origin(), side);
        let r = Arc::new(b.region());
        let real = sample_alpha(r.clone(), side as u64 * 7 + dim as u64, 0.5);
        for bc in [Bc::Dirichlet, Bc::Neumann] {
            for lambda in [0.0, 0.2] {
                let cg = solve_green(&real, &r, lambda, bc, &opts).unwrap();
                let eig = eigen_solve_oracle(&real, &b, lambda, bc).unwrap();
                let d = cg.values().iter().zip(eig.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                worst = worst.max(d);
            }
        }
    }
    let r = cube(3, 6);
    let real = sample_alpha(r.clone(), 33, 0.5);
    let g = solve_green(&real, &r, 0.2, Bc::Dirichlet, &opts).unwrap();
    let mut walk_z: f64 = 0.0;
    for (k, x) in [Site::new(&[2, 3, 2]), Site::new(&[0, 0, 0]), Site::new(&[5, 1, 3])].into_iter().enumerate() {
        let w = fk_estimate(&real, &r, 0.2, Bc::Dirichlet, x, 100_000, 17 + k as u64).unwrap();
        walk_z = walk_z.max((w.estimate - g.value(x)).abs() / w.std_error);
    }
    let ok = worst <= 1e-8 && walk_z <= 3.0;
    let detail = format!("CG vs eigenbasis sup-norm {worst:.2e} (≤ 1e-8), walk |z| max {walk_z:.2} (≤ 3) on 6³");
    finish(2, "solver triple oracle", start, Duration::from_secs(60), ok, detail);
}

#[test]
fn c03_harmonic_splitting() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut ortho, mut additivity) = (0.0f64, 0.0f64);
    for k in 0..20u64 {
        let dim = if k % 4 == 3 { 3 } else { 2 };
        let side = if dim == 3 { 8 } else { 14 };
        let outer = cube(dim, side);
        let real = sample_alpha(outer.clone(), 300 + k, 0.4);
        let lambda = if k % 2 == 0 { 0.0 } else { 0.1 };
        let g = solve_green(&real, &outer, lambda, Bc::Dirichlet, &EXACT).unwrap();
        let sub_side = rng.random_range(3..side - 2);
        let corner: Vec<i64> = (0..dim).map(|_| rng.random_range(0..=side - sub_side)).collect();
        let sub = LatticeBox::new(dim, Site::new(&corner), sub_side);
        let s = harmonic_split(&real, &g, &sub, &EXACT).unwrap();
        ortho = ortho.max((s.cross_term - s.lambda_correction).abs() / (1.0 + s.energy_outer));
        additivity = additivity.max(s.additivity_defect());
    }
    let ok = ortho <= 1e-10 && additivity <= 1e-9;
    let detail = format!("cross-term defect {ortho:.2e} (≤ 1e-10), additivity defect {additivity:.2e} (≤ 1e-9), 20 fixtures");
    finish(3, "harmonic splitting", start, Duration::from_secs(10), ok, detail);
}

#[test]
fn c04_blayer_residual_scaling() {
    let start = Instant::now();
    let mut ratios = Vec::new();
    for dim in [2, 3] {
        let r = cube(dim, 6);
        let sigma = SpinConfig::constant(r.clone(), 0.0);
        for bc in [BoundaryCondition::e1(), BoundaryCondition::Free] {
            let meds: Vec<f64> = [1.0, 0.5, 0.25]
                .iter()
                .map(|&t| {
                    let res = (0..50u64).map(|s| {
                        let real = sample_alpha(r.clone(), 400 + s, 0.1).scaled(t);
                        blayer_check(&sigma, &r, 0.0, &bc, &real, &EXACT).unwrap().residual.abs()
                    });
                    median(res.collect())
                })
                .collect();
            ratios.push(meds[0] / meds[1]);
            ratios.push(meds[1] / meds[2]);
        }
    }
    let least = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let detail = format!("median |residual| drops by ≥ {least:.2} per halving of the field (≥ 4), 50 fixtures on 6², 6³, both bcs");
    finish(4, "boundary-layer residual scaling", start, Duration::from_secs(60), least >= 4.0, detail);
}

#[test]
fn c05_maximum_principle_and_uniqueness() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let opts = MaximizeOptions::default();
    let (mut excess, mut spread) = (f64::NEG_INFINITY, 0.0f64);
    for _ in 0..50 {
        let side = rng.random_range(8..=12);
        let r = cube(2, side);
        let m = ScalarField::new(r.clone(), (0..r.len()).map(|_| rng.random_range(0.0..2.0)).collect()).unwrap();
        let tau = random_boundary(&mut rng, &r, PI / 6.0);
        let tmax = tau.angles().iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let bc = BoundaryCondition::Fixed(tau);
        let a = maximize_k(&r, &m, &bc, None, &opts).unwrap();
        let init = random_config(&mut rng, &r, PI / 6.0);
        let b = maximize_k(&r, &m, &bc, Some(&init), &opts).unwrap();
        let sup = a.phi.angles().iter().chain(b.phi.angles()).fold(0.0f64, |x, v| x.max(v.abs()));
        excess = excess.max(sup - tmax);
        spread = spread.max(a.phi.angles().iter().zip(b.phi.angles()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max));
    }
    let ok = excess <= 1e-8 && spread <= 10.0 * opts.tol;
    let detail = format!("max(‖φ*‖∞ − ‖τ‖∞) = {excess:.2e} (≤ 1e-8), two-start gap {spread:.2e} (≤ {:.0e}), 50 instances", 10.0 * opts.tol);
    finish(5, "maximum principle and uniqueness", start, Duration::from_secs(60), ok, detail);
}

/// Strip [0, n) × [0, w) whose boundary data follow the one-dimensional
/// linear profile, so the maximizer is a function of the first coordinate.
fn strip_rate(m: f64, tau0: f64) -> f64 {
    let (n, w) = (40i64, 6i64);
    let r = Arc::new(Region::from_sites(2, (0..n).flat_map(|i| (0..w).map(move |j| Site::new(&[i, j])))));
    let k = linearized_rate(m);
    let profile = |x: i64| tau0 * (k * (n - x.clamp(-1, n)) as f64).sinh() / (k * (n + 1) as f64).sinh();
    let outer = Arc::new(boundary(&r, Side::Outer));
    let tau = SpinConfig::from_fn(outer, |y| profile(y.0[0]));
    let mf = ScalarField::from_fn(r.clone(), |_| m);
    let res = maximize_k(&r, &mf, &BoundaryCondition::Fixed(tau), None, &MaximizeOptions::default()).unwrap();
    let anchors = Region::from_sites(2, (0..w).map(|j| Site::new(&[-1, j])));
    decay_profile(&res.phi, &anchors, Some((1, 10))).unwrap().rate
}

fn random_strip_rate(mean: f64, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, w) = (30i64, 8i64);
    let r = Arc::new(Region::from_sites(2, (0..n).flat_map(|i| (0..w).map(move |j| Site::new(&[i, j])))));
    let m = ScalarField::new(r.clone(), (0..r.len()).map(|_| rng.random_range(0.0..2.0 * mean)).collect()).unwrap();
    let outer = Arc::new(boundary(&r, Side::Outer));
    let tau = SpinConfig::from_fn(outer, |y| if y.0[0] < 0 { 1e-2 } else { 0.0 });
    let res = maximize_k(&r, &m, &BoundaryCondition::Fixed(tau), None, &MaximizeOptions::default()).unwrap();
    let anchors = Region::from_sites(2, (0..w).map(|j| Site::new(&[-1, j])));
    decay_profile(&res.phi, &anchors, Some((1, 8))).unwrap().rate
}

#[test]
fn c06_decay_probe() {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for m in [0.25, 0.5, 1.0, 2.0] {
        for tau0 in [1e-2, 1e-3] {
            worst = worst.max((strip_rate(m, tau0) / linearized_rate(m) - 1.0).abs());
        }
    }
    let means = [0.25, 0.5, 1.0, 2.0];
    let medians: Vec<f64> = means.iter().map(|&mu| median((0..10).map(|s| random_strip_rate(mu, 600 + s)).collect())).collect();
    let monotone = medians.windows(2).all(|w| w[1] > w[0]);
    let ok = worst <= 0.1 && monotone;
    let detail = format!("worst relative rate error {worst:.3} (≤ 0.1); ensemble median rates {medians:.3?} increasing in mean m: {monotone}");
    finish(6, "decay probe", start, Duration::from_secs(30), ok, detail);
}

#[test]
fn c07_defect_scaling() {
    let start = Instant::now();
    let p = DefectParams::new(0.5, 0.1).unwrap();
    let band = |v: &[f64]| v.iter().copied().fold(0.0, f64::max) / v.iter().copied().fold(f64::INFINITY, f64::min);
    let scaled = |dim: usize, ls: &[f64], w: fn(f64) -> f64| -> Vec<f64> {
        ls.iter().map(|&l| min_defect_energy(l, dim, &p).unwrap().energy * w(l)).collect()
    };
    let d1 = scaled(1, &[8.0, 16.0, 32.0, 64.0], |l| l);
    let d2 = scaled(2, &[8.0, 16.0, 32.0], |l| l.ln());
    let d3 = scaled(3, &[6.0, 10.0, 14.0], |_| 1.0);
    let bands = [band(&d1), band(&d2), band(&d3)];
    let ok = bands.iter().all(|b| *b <= 2.0);
    let detail = format!("max/min of E·l (d=1) {:.3}, E·ln l (d=2) {:.3}, E (d=3) {:.3} (each ≤ 2)", bands[0], bands[1], bands[2]);
    finish(7, "defect scaling", start, Duration::from_secs(300), ok, detail);
}

fn reflection_holds(sigma: &SpinConfig, plus: &Region, minus: &Region, envelope: i64, real: &DisorderRealization) -> Option<bool> {
    let r = mod1_reflect(sigma, plus, minus, envelope).ok()?;
    let domain = sigma.region().clone();
    let e1 = BoundaryCondition::e1();
    // per-edge monotonicity, which gives E_R(σ¹) ≤ E_R(σ) for every region R
    let energy_ok = domain.sites().iter().all(|&x| {
        (0..domain.dim()).all(|i| {
            let y = x.offset(i, 1);
            !domain.contains(y) || {
                let pair = Region::from_sites(domain.dim(), [x, y]);
                dirichlet_energy(&r.config, &pair).unwrap() <= dirichlet_energy(sigma, &pair).unwrap() + 1e-12
            }
        })
    });
    let value_ok = hamiltonian(&r.config, &domain, &e1, real).unwrap() >= hamiltonian(sigma, &domain, &e1, real).unwrap();
    let again = mod1_reflect(&r.config, plus, minus, envelope).unwrap();
    Some(energy_ok && value_ok && again.config == r.config)
}

fn lenient(mut p: ClassifierParams) -> ClassifierParams {
    p.a = -1e9;
    p.b = 1e9;
    let t = &mut p.thresholds;
    for v in [&mut t.field_sup, &mut t.gradient_sup, &mut t.alpha_sup, &mut t.alpha_mean, &mut t.dense_budget] {
        *v = 1e9;
    }
    p
}

/// e₁ with a −e₁ cube of side `island` in the middle of a cubic domain.
fn island(dim: usize, domain_side: i64, island: i64) -> SpinConfig {
    let lo = (domain_side - island) / 2;
    let inner = LatticeBox::new(dim, Site::new(&vec![lo; dim]), island);
    SpinConfig::from_fn(cube(dim, domain_side), |x| if inner.contains(x) { PI } else { 0.0 })
}

#[test]
fn c08_reflection_monotonicity() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let domain = cube(2, 24);
    let real = sample_alpha(domain.clone(), 3, 0.3);
    let (mut checked, mut failed, mut skipped) = (0, 0, 0);
    for _ in 0..100 {
        let c = Site::new(&[rng.random_range(8..16), rng.random_range(8..16)]);
        let rad = rng.random_range(2..5);
        let flips: Vec<Site> = (0..6).map(|_| Site::new(&[rng.random_range(0..24), rng.random_range(0..24)])).collect();
        let noise: Vec<f64> = (0..domain.len()).map(|_| rng.random_range(-1.2..1.2)).collect();
        let sigma = SpinConfig::from_fn(domain.clone(), |x| {
            let base = if x.linf(c) <= rad { PI } else { 0.0 };
            base + if flips.contains(&x) { PI } else { 0.0 } + noise[domain.position(x).unwrap()]
        });
        let plus = Region::from_sites(2, (0..4).map(|_| Site::new(&[rng.random_range(2..22), rng.random_range(2..5)])));
        let minus = sigma.region().filter(|x| x == c || (x.linf(c) < rad && sigma.angle(x).unwrap().cos() > 0.0));
        match reflection_holds(&sigma, &plus, &minus, 6, &real) {
            Some(ok) => {
                checked += 1;
                failed += usize::from(!ok);
            }
            None => skipped += 1,
        }
    }
    let p = lenient(ClassifierParams::calibrated(0.3, 0.25, 2, 2, 8).unwrap());
    for (side, seed) in [(32, 1), (48, 2), (64, 3)] {
        let sigma = island(2, 192, side);
        let real = sample_alpha(sigma.region().clone(), seed, 0.3);
        let ex = extract_contours(&sigma, &BoundaryCondition::e1(), &p).unwrap();
        let mut cls = Classifier::new(&real, &p);
        let cd = collar_decomposition(&ex.contours[0], &sigma, &ex.phases, &mut cls).unwrap();
        let ok = reflection_holds(&sigma, &cd.collar_plus, &cd.collar_minus, p.large, &real).unwrap_or(false);
        checked += 1;
        failed += usize::from(!ok);
    }
    let ok = failed == 0 && checked >= 50;
    let detail = format!(
        "{checked} fixtures ({skipped} random ones rejected by the reflection preconditions), {failed} violating per-edge E(σ¹) ≤ E(σ), −H(σ¹|e₁) ≥ −H(σ|e₁) or idempotence"
    );
    finish(8, "mod-1 exact monotonicity", start, Duration::from_secs(120), ok, detail);
}

struct Positivity {
    runs: usize,
    positive: usize,
    /// (spine volume, median Δ) per fixture size
    medians: Vec<(usize, f64)>,
}

fn positivity(dim: usize, small: i64, large: i64, domain_side: i64, islands: &[i64], realizations: u64) -> Positivity {
    let p = lenient(ClassifierParams::calibrated(0.3, 0.25, dim, small, large).unwrap());
    let (mut runs, mut positive, mut medians) = (0, 0, Vec::new());
    for (k, &side) in islands.iter().enumerate() {
        let sigma = island(dim, domain_side, side);
        let ex = extract_contours(&sigma, &BoundaryCondition::e1(), &p).unwrap();
        assert_eq!(ex.contours.len(), 1, "fixture must have one contour");
        let gamma = &ex.contours[0];
        let deltas: Vec<f64> = (0..realizations)
            .map(|s| {
                let real = sample_alpha(sigma.region().clone(), 10_000 * k as u64 + s, 0.3);
                run_surgery(&sigma, gamma, &ex.phases, &real, &p, &SurgeryOptions::default()).unwrap().gain.delta
            })
            .collect();
        runs += deltas.len();
        positive += deltas.iter().filter(|d| **d > 0.0).count();
        medians.push((gamma.spine.len(), median(deltas)));
    }
    Positivity { runs, positive, medians }
}

impl Positivity {
    fn holds(&self) -> bool {
        let grows = self.medians.windows(2).all(|w| w[1].0 > w[0].0 && w[1].1 > w[0].1);
        self.positive as f64 >= 0.95 * self.runs as f64 && grows
    }
}

/// The stated scale: d = 3, ℓ = 8, L = 32. The island needs its 2L spine
/// neighbourhood and collar inside Λ, so Λ is at least 12L = 384 on a side
/// (5.7·10⁷ sites); the surgery's site sets and fields do not fit in a few GB.
#[test]
#[ignore = "d = 3 at L = 32 needs a 384³ domain, far beyond desk memory"]
fn c09_surgery_positivity_stated_scale() {
    let start = Instant::now();
    let r = positivity(3, 8, 32, 384, &[64, 96, 128], 50);
    let ok = r.holds();
    let detail = format!("Δ > 0 in {}/{}; (spine, median Δ) {:?}", r.positive, r.runs, r.medians);
    finish(9, "surgery positivity", start, Duration::from_secs(600), ok, detail);
}

/// Run by default: reports the stated-scale criterion as not met and runs the
/// same protocol in d = 2 (ℓ = 2, L = 8) as information.
#[test]
fn c09_surgery_positivity_reduced_scale() {
    let start = Instant::now();
    let r = positivity(2, 2, 8, 192, &[32, 48, 64], 50);
    let detail = format!(
        "stated d = 3, L = 32 protocol not run (384³ domain exceeds memory; see the ignored test); \
         d = 2, ℓ = 2, L = 8 surrogate: Δ > 0 in {}/{}, (spine volume, median Δ) {:?}, surrogate criterion {} ({:.1}s)",
        r.positive,
        r.runs,
        r.medians.iter().map(|(v, d)| (*v, (d * 1000.0).round() / 1000.0)).collect::<Vec<_>>(),
        if r.holds() { "met" } else { "not met" },
        start.elapsed().as_secs_f64()
    );
    report(9, "surgery positivity", false, &detail);
    assert!(r.holds(), "reduced-scale surrogate failed: {detail}");
}

#[test]
fn c10_probabilistic_suite() {
    let start = Instant::now();
    let rep = randbasic_suite(&TailOptions::new(16, 3, 5000, 10)).unwrap();
    let failed: Vec<&str> = rep.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
    let detail = format!(
        "d = 3, l = 16, 5000 samples: centre variance ratio {:.3}, ‖∇G‖² trace z {:.2}, site tail slope {:.3} (R² {:.3}), failed checks {failed:?}",
        rep.centre_variance_ratio, rep.gradient.z, rep.site_fit.slope, rep.site_fit.r2
    );
    finish(10, "probabilistic suite", start, Duration::from_secs(300), rep.pass(), detail);
}

/// ⟨cos Δ⟩ of two free spins under exp(−βH), periodic trapezoid rule.
fn two_site_oracle(beta: f64, r: &Arc<Region>, real: &DisorderRealization) -> f64 {
    let n = 4096;
    let (mut z, mut num) = (0.0, 0.0);
    for k in 0..n {
        let d = 2.0 * PI * k as f64 / n as f64;
        let s = SpinConfig::new(r.clone(), vec![0.0, d]).unwrap();
        let w = (beta * hamiltonian(&s, r, &BoundaryCondition::Free, real).unwrap()).exp();
        z += w;
        num += w * d.cos();
    }
    num / z
}

fn series_bytes(series: &[Series]) -> Vec<u8> {
    let mut out = Vec::new();
    for s in series {
        rfo::io::write_series(&mut out, 2, s).unwrap();
        for a in &s.final_angles {
            out.extend_from_slice(&a.to_bits().to_le_bytes());
        }
    }
    out
}

#[test]
fn c11_sampler_correctness() {
    let start = Instant::now();
    let pair = cube(1, 2);
    let zero = DisorderRealization::from_field(0.0, ScalarField::zeros(pair.clone()));
    let mut cfg = SamplerConfig::new(pair.clone(), BoundaryCondition::Free, 1.0, 5, 200_000);
    cfg.burn_in = 1000;
    cfg.proposal = Proposal::Uniform;
    let s = metropolis_run(&cfg, &zero).unwrap();
    let xs: Vec<f64> = s.records.iter().map(|r| 1.0 - r.energy).collect();
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let se = batch_standard_error(&xs, 50);
    let exact = two_site_oracle(1.0, &pair, &zero);
    let z = (mean - exact).abs() / se;

    let line = cube(1, 4);
    let free = DisorderRealization::from_field(0.0, ScalarField::zeros(line.clone()));
    let mut hot = SamplerConfig::new(line.clone(), BoundaryCondition::Free, 1e-6, 3, 1);
    hot.proposal = Proposal::Uniform;
    let mut chain = rfo::sampler::Chain::new(&hot, &free).unwrap();
    let bins = 20;
    let mut hist = vec![0usize; bins];
    for _ in 0..25_000 {
        chain.sweep();
        for a in chain.angles() {
            hist[((((a + PI) / (2.0 * PI)) * bins as f64) as usize).min(bins - 1)] += 1;
        }
    }
    let n: usize = hist.iter().sum();
    let e = n as f64 / bins as f64;
    let stat: f64 = hist.iter().map(|&o| (o as f64 - e).powi(2) / e).sum();
    let p = 1.0 - ChiSquared::new((bins - 1) as f64).unwrap().cdf(stat);

    let r = cube(2, 8);
    let reals: Vec<DisorderRealization> = (0..6).map(|s| sample_alpha(r.clone(), 50 + s, 0.4)).collect();
    let mut ens = SamplerConfig::new(r, BoundaryCondition::e1(), 2.0, 99, 40);
    ens.burn_in = 20;
    ens.block_side = Some(4);
    let run_in = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| series_bytes(&run_ensemble(&ens, &reals).unwrap()))
    };
    let one = run_in(1);
    let identical = one == run_in(4) && one == run_in(1);

    let ok = z <= 3.0 && p >= 0.01 && identical;
    let detail = format!("two-site |z| = {z:.2} (≤ 3), β = 1e-6 uniformity χ² p = {p:.3} (≥ 0.01), 1 vs 4 threads byte-identical: {identical}");
    finish(11, "sampler correctness", start, Duration::from_secs(120), ok, detail);
}

#[test]
fn c12_qualitative_trend() {
    let start = Instant::now();
    let r = cube(2, 32);
    let run = |eps: f64| {
        let reals: Vec<DisorderRealization> = (0..20).map(|s| sample_alpha(r.clone(), 700 + s, eps)).collect();
        let mut cfg = SamplerConfig::new(r.clone(), BoundaryCondition::Free, 2.0, 12, 60_000);
        cfg.burn_in = 4000;
        cfg.thinning = 50;
        cfg.block_side = Some(8);
        run_ensemble(&cfg, &reals).unwrap()
    };
    let (off, on) = (run(0.0), run(0.5));
    let m_off: Vec<f64> = off.iter().map(Series::mean_abs_m_e1).collect();
    let m_on: Vec<f64> = on.iter().map(Series::mean_abs_m_e1).collect();
    let observed = median(m_on.clone()) - median(m_off.clone());
    // paired bootstrap over realization indices
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut boots: Vec<f64> = (0..2000)
        .map(|_| {
            let idx: Vec<usize> = (0..20).map(|_| rng.random_range(0..20)).collect();
            median(idx.iter().map(|&i| m_on[i]).collect()) - median(idx.iter().map(|&i| m_off[i]).collect())
        })
        .collect();
    boots.sort_by(f64::total_cmp);
    let lower = boots[(0.025 * boots.len() as f64) as usize];
    let near_axis = |s: &[Series]| {
        let angles: Vec<f64> = s.iter().flat_map(Series::block_angles).collect();
        angles.iter().filter(|a| a.cos().abs() > (PI / 4.0).cos()).count() as f64 / angles.len() as f64
    };
    let (axis_off, axis_on) = (near_axis(&off), near_axis(&on));
    let ok = lower > 0.0 && axis_on > 0.5 && axis_on > axis_off;
    let detail = format!(
        "median ⟨|M·e₁|⟩ {:.3} → {:.3}, difference {observed:.3} with bootstrap 2.5% bound {lower:.3} (> 0); \
         block angles within π/4 of {{0, π}}: {axis_off:.3} → {axis_on:.3}",
        median(m_off),
        median(m_on)
    );
    finish(12, "qualitative RFO trend", start, Duration::from_secs(1200), ok, detail);
}

/// Union-find labelling of occupied grid cells, the reference for
/// `connected_components`.
fn union_find_components(sites: &[Site], closed: bool) -> Vec<Vec<Site>> {
    let mut parent: Vec<usize> = (0..sites.len()).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for i in 0..sites.len() {
        for j in i + 1..sites.len() {
            let d = sites[i].sub(sites[j]);
            let adjacent = if closed { d.0.iter().all(|v| v.abs() <= 1) } else { d.0.iter().map(|v| v.abs()).sum::<i64>() == 1 };
            if adjacent {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a] = b;
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<Site>> = Default::default();
    for i in 0..sites.len() {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(sites[i]);
    }
    let mut out: Vec<Vec<Site>> = groups.into_values().map(|mut g| {
        g.sort_unstable();
        g
    }).collect();
    out.sort_unstable_by_key(|g| g[0]);
    out
}

fn collar_containments(cd: &CollarDecomposition) -> bool {
    let comps: usize = cd.inner_components.iter().map(|c| c.len()).sum();
    cd.middle.is_subset(&cd.middle_cover)
        && cd.middle_cover.is_subset(&cd.inner)
        && cd.inner.is_subset(&cd.collar)
        && cd.collar_plus.union(&cd.collar_minus).is_subset(&cd.collar)
        && cd.collar_plus.is_disjoint(&cd.collar_minus)
        && cd.bad_core12_plus.is_subset(&cd.bad_core16_plus)
        && cd.bad_core16_plus.is_subset(&cd.bad_halo_plus)
        && cd.relaxed_plus == cd.collar_plus.difference(&cd.bad_core12_plus)
        && cd.relaxed_minus == cd.collar_minus.difference(&cd.bad_core12_minus)
        && cd.seed_plus.is_subset(&cd.envelope_plus)
        && cd.seed_minus.is_subset(&cd.envelope_minus)
        && comps == cd.inner.len()
}

#[test]
fn c13_contour_machinery() {
    let start = Instant::now();
    let big = 8;
    let p = ClassifierParams::calibrated(0.3, 0.25, 2, 2, big).unwrap();
    let rect = |w: i64, h: i64| Arc::new(Region::from_sites(2, (0..w).flat_map(|i| (0..h).map(move |j| Site::new(&[i, j])))));
    let flipped = |domain: Arc<Region>, corners: &[Site]| {
        let boxes: Vec<LatticeBox> = corners.iter().map(|&c| LatticeBox::new(2, c, big)).collect();
        SpinConfig::from_fn(domain, |x| if boxes.iter().any(|b| b.contains(x)) { PI } else { 0.0 })
    };
    let mut failures: Vec<String> = Vec::new();
    let mut check = |cond: bool, what: &str| {
        if !cond {
            failures.push(what.to_string());
        }
    };

    let uniform = SpinConfig::constant(rect(64, 64), 0.0);
    check(extract_contours(&uniform, &BoundaryCondition::e1(), &p).unwrap().contours.is_empty(), "uniform has no contour");

    let a = Site::new(&[48, 48]);
    for (corners, expected) in [(vec![a], 1), (vec![a, a.offset(0, 10 * big)], 2), (vec![a, a.offset(0, 2 * big)], 1)] {
        let s = flipped(rect(216, 104), &corners);
        let ex = extract_contours(&s, &BoundaryCondition::e1(), &p).unwrap();
        check(ex.contours.len() == expected, "contour count");
        for g in &ex.contours {
            check(is_concrete(g, &ex.phases), "concreteness");
            check(!g.touches_boundary, "interior contour");
            check(g.labels.len() == g.spine.len(), "labels cover the spine");
            check(connected_components(&g.spine, Connectivity::Closed).len() == 1, "spine closed-connected");
            for (c, v) in g.recovered_phase() {
                check(v == Some(ex.phases.block(c).unwrap().value), "phase recovery on the collar");
            }
            let geo = contour_geometry(g, s.region(), p.small).unwrap();
            check(geo.delta_ext.union(&geo.delta_in.iter().fold(Region::empty(2), |u, r| u.union(r))).is_subset(&geo.delta), "δ_ext ∪ δ_in ⊆ δ");
            let interiors = geo.interiors.iter().fold(Region::empty(2), |u, r| u.union(r));
            check(geo.hull == geo.delta.union(&interiors), "c(Γ) = δ ∪ Int");
            check(interiors.is_disjoint(&g.spine), "interiors avoid the spine");
            check(geo.n_large * (big * big) as usize == geo.delta.len(), "δ is a union of L-blocks");
        }
        for &c in &corners {
            let held = ex.contours.iter().any(|g| {
                (-2..=2).all(|i| (-2..=2).all(|j| g.blocks.contains(&c.add(Site::new(&[i * big, j * big])))))
            });
            check(held, "a spine holds the 2L-neighbourhood of each flipped block");
        }
        for g in &ex.contours {
            for h in &ex.contours {
                if g != h {
                    check(compatible(g, h).unwrap(), "contours of one configuration are compatible");
                }
            }
        }
    }

    // collar decomposition on a ring with clean and with planted bad disorder
    let s = flipped(rect(160, 160), &[Site::new(&[72, 72])]);
    let ex = extract_contours(&s, &BoundaryCondition::e1(), &p).unwrap();
    let g = &ex.contours[0];
    let clean = lenient(p.clone());
    let base = sample_alpha(s.region().clone(), 1, 0.3);
    let mut cls = Classifier::new(&base, &clean);
    let cd = collar_decomposition(g, &s, &ex.phases, &mut cls).unwrap();
    check(cd.bad_blocks.is_empty() && cd.bad_halo.is_empty(), "clean disorder has no bad blocks");
    check(cd.relaxed_plus == cd.collar_plus && cd.collar_plus == cd.collar, "clean collar is all relaxed");
    check(collar_containments(&cd), "collar containments (clean)");
    let spike = g.collar_blocks()[0].add(Site::new(&[3, 3]));
    let vals = s.region().sites().iter().zip(base.alpha().values()).map(|(x, v)| if *x == spike { 1e12 } else { *v }).collect();
    let dirty = DisorderRealization::from_field(0.3, ScalarField::new(s.region().clone(), vals).unwrap());
    let mut cls = Classifier::new(&dirty, &clean);
    let cd = collar_decomposition(g, &s, &ex.phases, &mut cls).unwrap();
    check(cd.bad_blocks.contains(&g.collar_blocks()[0]), "planted bad block found");
    check(cd.relaxed_plus.len() < cd.collar_plus.len(), "bad halo removed from the relaxed set");
    check(collar_containments(&cd), "collar containments (planted)");

    // connected components against union-find on random occupancy grids
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut mismatches = 0;
    for k in 0..100 {
        let dim = 2 + k % 2;
        let side = if dim == 2 { 14 } else { 6 };
        let density = rng.random_range(0.2..0.7);
        let sites: Vec<Site> =
            LatticeBox::new(dim, Site::origin(), side).sites().into_iter().filter(|_| rng.random_bool(density)).collect();
        let region = Region::from_sites(dim, sites.iter().copied());
        for (mode, closed) in [(Connectivity::Graph, false), (Connectivity::Closed, true)] {
            let ours: Vec<Vec<Site>> = connected_components(&region, mode).iter().map(|c| c.sites().to_vec()).collect();
            if ours != union_find_components(region.sites(), closed) {
                mismatches += 1;
            }
        }
    }
    check(mismatches == 0, "connected components agree with union-find");
    let ok = failures.is_empty();
    let detail = format!("contour, geometry and collar fixtures: {} failed assertions {:?}; 100 grids × 2 adjacencies, {mismatches} component mismatches", failures.len(), failures);
    finish(13, "contour machinery", start, Duration::from_secs(300), ok, detail);
}
