//! Single-site Metropolis sampling of exp(−βH) for a fixed disorder realization.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::classification::blocks_inside;
use crate::energy::{BoundaryCondition, SpinConfig};
use crate::error::{Error, Result};
use crate::fields::DisorderRealization;
use crate::geometry::{Region, Site};
use crate::rng::derive_seed;
use crate::stencil::{direction_step, Stencil, NONE};

/// Acceptance rate the adaptive proposal steers toward during burn-in.
pub const TARGET_ACCEPTANCE: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Proposal {
    /// fresh angle uniform on the circle
    Uniform,
    /// θ + U(−w, w), w tuned during burn-in and frozen afterwards
    Adaptive { initial_width: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Start {
    Aligned,
    Random,
}

#[derive(Clone, Debug)]
pub struct SamplerConfig {
    pub region: Arc<Region>,
    pub bc: BoundaryCondition,
    pub beta: f64,
    pub seed: u64,
    /// measured sweeps after burn-in
    pub sweeps: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub proposal: Proposal,
    pub start: Start,
    /// side of the blocks whose magnetization is recorded
    pub block_side: Option<i64>,
}

impl SamplerConfig {
    pub fn new(region: Arc<Region>, bc: BoundaryCondition, beta: f64, seed: u64, sweeps: usize) -> SamplerConfig {
        SamplerConfig {
            region,
            bc,
            beta,
            seed,
            sweeps,
            burn_in: 0,
            thinning: 1,
            proposal: Proposal::Adaptive { initial_width: 1.0 },
            start: Start::Random,
            block_side: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::invalid(format!("β must be positive, got {}", self.beta)));
        }
        if self.sweeps == 0 || self.thinning == 0 {
            return Err(Error::invalid("sweeps and thinning must be at least 1"));
        }
        if self.region.is_empty() {
            return Err(Error::invalid("empty sampling region"));
        }
        if let Proposal::Adaptive { initial_width } = self.proposal {
            if !(initial_width > 0.0) {
                return Err(Error::invalid("proposal width must be positive"));
            }
        }
        Ok(())
    }
}

/// Markov chain state with precomputed neighbour tables.
pub struct Chain {
    angles: Vec<f64>,
    stencil: Stencil,
    /// outside neighbour angle per (site, direction), NaN when free or inside
    outside: Vec<f64>,
    field: Vec<f64>,
    beta: f64,
    proposal: Proposal,
    width: f64,
    rng: ChaCha8Rng,
}

impl Chain {
    pub fn new(cfg: &SamplerConfig, real: &DisorderRealization) -> Result<Chain> {
        cfg.validate()?;
        let region = &cfg.region;
        let stencil = Stencil::new(region);
        let dirs = stencil.dirs();
        let mut outside = vec![f64::NAN; region.len() * dirs];
        for (i, &x) in region.sites().iter().enumerate() {
            for (k, &j) in stencil.neighbors(i).iter().enumerate() {
                if j == NONE {
                    if let Some(b) = cfg.bc.outside_angle(direction_step(x, k))? {
                        outside[i * dirs + k] = b;
                    }
                }
            }
        }
        let field = real.alpha_on(region).into_iter().map(|a| real.epsilon * a).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let angles = match cfg.start {
            Start::Aligned => vec![0.0; region.len()],
            Start::Random => (0..region.len()).map(|_| rng.random_range(-PI..PI)).collect(),
        };
        let width = match cfg.proposal {
            Proposal::Uniform => PI,
            Proposal::Adaptive { initial_width } => initial_width.min(PI),
        };
        Ok(Chain { angles, stencil, outside, field, beta: cfg.beta, proposal: cfg.proposal, width, rng })
    }

    /// The site's share of −H at angle `t`.
    fn local(&self, i: usize, t: f64) -> f64 {
        let dirs = self.stencil.dirs();
        let mut v = self.field[i] * t.sin();
        for (k, &j) in self.stencil.neighbors(i).iter().enumerate() {
            if j != NONE {
                v += (t - self.angles[j as usize]).cos() - 1.0;
            } else {
                let b = self.outside[i * dirs + k];
                if !b.is_nan() {
                    v += (t - b).cos() - 1.0;
                }
            }
        }
        v
    }

    /// One sequential sweep; returns the number of accepted moves.
    pub fn sweep(&mut self) -> usize {
        let mut accepted = 0;
        for i in 0..self.angles.len() {
            let old = self.angles[i];
            let new = match self.proposal {
                Proposal::Uniform => self.rng.random_range(-PI..PI),
                Proposal::Adaptive { .. } => {
                    let t = old + self.rng.random_range(-self.width..self.width);
                    t - 2.0 * PI * ((t + PI) / (2.0 * PI)).floor()
                }
            };
            let gain = self.local(i, new) - self.local(i, old);
            let u: f64 = self.rng.random();
            if gain >= 0.0 || u < (self.beta * gain).exp() {
                self.angles[i] = new;
                accepted += 1;
            }
        }
        accepted
    }

    /// Burn-in sweep with the proposal width nudged toward the target rate.
    pub fn tune(&mut self) -> usize {
        let acc = self.sweep();
        if let Proposal::Adaptive { .. } = self.proposal {
            let rate = acc as f64 / self.angles.len() as f64;
            self.width = (self.width * (rate - TARGET_ACCEPTANCE).exp()).clamp(1e-3, PI);
        }
        acc
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    /// −H of the current state.
    pub fn neg_energy(&self) -> f64 {
        let dirs = self.stencil.dirs();
        let mut v = 0.0;
        for i in 0..self.angles.len() {
            let t = self.angles[i];
            v += self.field[i] * t.sin();
            for (k, &j) in self.stencil.neighbors(i).iter().enumerate() {
                if j != NONE {
                    if k % 2 == 1 {
                        v += (t - self.angles[j as usize]).cos() - 1.0;
                    }
                } else {
                    let b = self.outside[i * dirs + k];
                    if !b.is_nan() {
                        v += (t - b).cos() - 1.0;
                    }
                }
            }
        }
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Record {
    pub sweep: usize,
    /// H (not −H) of the recorded state
    pub energy: f64,
    pub magnetization: [f64; 2],
    pub blocks: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Series {
    pub beta: f64,
    pub seed: u64,
    pub block_corners: Vec<Site>,
    pub records: Vec<Record>,
    pub acceptance: f64,
    pub width: f64,
    pub final_angles: Vec<f64>,
}

impl Series {
    /// ⟨|M·e₁|⟩ over the records.
    pub fn mean_abs_m_e1(&self) -> f64 {
        self.records.iter().map(|r| r.magnetization[0].abs()).sum::<f64>() / self.records.len().max(1) as f64
    }

    pub fn mean_energy(&self) -> f64 {
        self.records.iter().map(|r| r.energy).sum::<f64>() / self.records.len().max(1) as f64
    }

    /// Angles of all recorded block magnetizations.
    pub fn block_angles(&self) -> Vec<f64> {
        self.records.iter().flat_map(|r| r.blocks.iter().map(|b| b[1].atan2(b[0]))).collect()
    }
}

/// Burn-in, then `sweeps` measured sweeps recording every `thinning`-th state.
pub fn metropolis_run(cfg: &SamplerConfig, real: &DisorderRealization) -> Result<Series> {
    let mut chain = Chain::new(cfg, real)?;
    let region = &cfg.region;
    let (corners, owner) = match cfg.block_side {
        Some(side) => {
            let blocks = blocks_inside(region, side)?;
            let mut owner = vec![usize::MAX; region.len()];
            for (b, q) in blocks.iter().enumerate() {
                for x in q.sites() {
                    if let Some(i) = region.position(x) {
                        owner[i] = b;
                    }
                }
            }
            (blocks.iter().map(|q| q.lo()).collect::<Vec<_>>(), owner)
        }
        None => (Vec::new(), Vec::new()),
    };
    for _ in 0..cfg.burn_in {
        chain.tune();
    }
    let n = region.len() as f64;
    let mut accepted = 0usize;
    let mut records = Vec::new();
    for s in 1..=cfg.sweeps {
        accepted += chain.sweep();
        if s % cfg.thinning == 0 {
            let mut m = [0.0; 2];
            let mut blocks = vec![[0.0; 2]; corners.len()];
            let mut counts = vec![0usize; corners.len()];
            for (i, &t) in chain.angles().iter().enumerate() {
                let (sn, cs) = t.sin_cos();
                m[0] += cs;
                m[1] += sn;
                if let Some(&b) = owner.get(i).filter(|b| **b != usize::MAX) {
                    blocks[b][0] += cs;
                    blocks[b][1] += sn;
                    counts[b] += 1;
                }
            }
            for (b, c) in blocks.iter_mut().zip(&counts) {
                b[0] /= *c as f64;
                b[1] /= *c as f64;
            }
            records.push(Record { sweep: s, energy: -chain.neg_energy(), magnetization: [m[0] / n, m[1] / n], blocks });
        }
    }
    Ok(Series {
        beta: cfg.beta,
        seed: cfg.seed,
        block_corners: corners,
        records,
        acceptance: accepted as f64 / (n * cfg.sweeps as f64),
        width: chain.width(),
        final_angles: chain.angles().to_vec(),
    })
}

/// Independent chains, one per realization, each seeded from `cfg.seed` and
/// its index. Results come back in input order whatever the worker count.
pub fn run_ensemble(cfg: &SamplerConfig, reals: &[DisorderRealization]) -> Result<Vec<Series>> {
    reals
        .par_iter()
        .enumerate()
        .map(|(k, real)| {
            let mut c = cfg.clone();
            c.seed = derive_seed(cfg.seed, k as u64);
            metropolis_run(&c, real)
        })
        .collect()
}

/// Standard error of a series mean from non-overlapping batch means.
pub fn batch_standard_error(xs: &[f64], batches: usize) -> f64 {
    let b = batches.max(2).min(xs.len().max(2));
    let size = xs.len() / b;
    if size == 0 {
        return f64::NAN;
    }
    let means: Vec<f64> = (0..b).map(|k| xs[k * size..(k + 1) * size].iter().sum::<f64>() / size as f64).collect();
    let mu = means.iter().sum::<f64>() / b as f64;
    let var = means.iter().map(|m| (m - mu).powi(2)).sum::<f64>() / (b - 1) as f64;
    (var / b as f64).sqrt()
}

/// SpinConfig of the chain's final state.
pub fn final_config(cfg: &SamplerConfig, series: &Series) -> Result<SpinConfig> {
    SpinConfig::new(cfg.region.clone(), series.final_angles.clone())
}
