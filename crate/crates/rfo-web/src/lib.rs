//! Browser bindings: block scales, a Green-field heat map and a live
//! Metropolis chain on a square.

use std::sync::Arc;

use wasm_bindgen::prelude::*;

use rfo::energy::BoundaryCondition;
use rfo::fields::{sample_alpha, solve_green, Bc, DisorderRealization, SolveOptions};
use rfo::geometry::{derive_scales, LatticeBox, Site};
use rfo::sampler::{Chain, SamplerConfig};

fn js_err(e: rfo::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn square(side: u32) -> Result<Arc<rfo::geometry::Region>, rfo::Error> {
    if !(1..=512).contains(&side) {
        return Err(rfo::Error::invalid("side must lie in 1..=512"));
    }
    Ok(Arc::new(LatticeBox::new(2, Site::origin(), side as i64).region()))
}

/// ℓ, L and the clamp flag for a field strength, as JSON.
pub fn scales_json(epsilon: f64) -> Result<String, rfo::Error> {
    Ok(serde_json::to_string(&derive_scales(epsilon)?)?)
}

/// Dirichlet Green field ε(−Δ+λ)⁻¹α on a side×side square, row-major.
pub fn green_values(side: u32, epsilon: f64, seed: u64, lambda: f64) -> Result<Vec<f64>, rfo::Error> {
    let region = square(side)?;
    let real = sample_alpha(region.clone(), seed, epsilon);
    Ok(solve_green(&real, &region, lambda, Bc::Dirichlet, &SolveOptions::default())?.values().to_vec())
}

#[wasm_bindgen]
pub fn scales(epsilon: f64) -> Result<String, JsValue> {
    scales_json(epsilon).map_err(js_err)
}

#[wasm_bindgen]
pub fn green_field(side: u32, epsilon: f64, seed: u64, lambda: f64) -> Result<Vec<f64>, JsValue> {
    green_values(side, epsilon, seed, lambda).map_err(js_err)
}

/// A free-boundary chain whose state the page redraws after each batch of sweeps.
#[wasm_bindgen]
pub struct Simulation {
    chain: Chain,
    sweeps: u32,
}

#[wasm_bindgen]
impl Simulation {
    #[wasm_bindgen(constructor)]
    pub fn new(side: u32, beta: f64, epsilon: f64, seed: u64) -> Result<Simulation, JsValue> {
        Simulation::build(side, beta, epsilon, seed).map_err(js_err)
    }

    /// Runs `n` sweeps and returns the acceptance rate.
    pub fn sweep(&mut self, n: u32) -> f64 {
        let mut acc = 0usize;
        for _ in 0..n {
            acc += self.chain.tune();
        }
        self.sweeps += n;
        acc as f64 / (n.max(1) as f64 * self.chain.angles().len() as f64)
    }

    /// Spin angles, row-major.
    pub fn angles(&self) -> Vec<f64> {
        self.chain.angles().to_vec()
    }

    /// Mean spin (M·e₁, M·e₂).
    pub fn magnetization(&self) -> Vec<f64> {
        let n = self.chain.angles().len() as f64;
        let (c, s) = self.chain.angles().iter().fold((0.0, 0.0), |(c, s), t| (c + t.cos(), s + t.sin()));
        vec![c / n, s / n]
    }

    pub fn energy(&self) -> f64 {
        -self.chain.neg_energy()
    }

    pub fn sweeps_done(&self) -> u32 {
        self.sweeps
    }
}

impl Simulation {
    pub fn build(side: u32, beta: f64, epsilon: f64, seed: u64) -> Result<Simulation, rfo::Error> {
        let region = square(side)?;
        let real: DisorderRealization = sample_alpha(region.clone(), seed, epsilon);
        let cfg = SamplerConfig::new(region, BoundaryCondition::Free, beta, seed, 1);
        Ok(Simulation { chain: Chain::new(&cfg, &real)?, sweeps: 0 })
    }
}
