//! Random-walk representation g_x = ε E_x ∫_0^{τ_R ∧ τ_λ} α(X_t) dt.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Bc, DisorderRealization};
use crate::error::{Error, Result};
use crate::geometry::{Region, Site};
use crate::rng::derive_seed;
use crate::stencil::{Stencil, NONE};

#[derive(Clone, Copy, Debug)]
pub struct WalkEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub walks: usize,
}

const CHUNK: usize = 4096;

fn exp_sample(rng: &mut ChaCha8Rng, rate: f64) -> f64 {
    let u: f64 = rng.random::<f64>();
    -(1.0 - u).ln() / rate
}

/// Continuous-time walk with rate-1 jumps along each lattice direction
/// (total rate 2d) killed at an independent Exp(λ) time. Dirichlet walks stop
/// on leaving the region; Neumann walks suppress outward jumps and need λ > 0.
pub fn fk_estimate(
    real: &DisorderRealization,
    subregion: &Region,
    lambda: f64,
    bc: Bc,
    x: Site,
    walks: usize,
    seed: u64,
) -> Result<WalkEstimate> {
    if lambda < 0.0 {
        return Err(Error::invalid("mass λ must be non-negative"));
    }
    if bc == Bc::Neumann && lambda == 0.0 {
        return Err(Error::invalid("reflected walk without killing never terminates"));
    }
    let start = subregion.position(x).ok_or_else(|| Error::invalid("walk start outside region"))?;
    if walks < 2 {
        return Err(Error::invalid("need at least two walks for an error estimate"));
    }
    let st = Stencil::new(subregion);
    let mut alpha = real.alpha_on(subregion);
    if bc == Bc::Neumann {
        let m = alpha.iter().sum::<f64>() / alpha.len() as f64;
        alpha.iter_mut().for_each(|a| *a -= m);
    }
    let dirs = st.dirs();
    let chunks = walks.div_ceil(CHUNK);
    let sums: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, c as u64));
            let count = CHUNK.min(walks - c * CHUNK);
            let (mut s1, mut s2) = (0.0, 0.0);
            for _ in 0..count {
                let mut t_left = if lambda > 0.0 { exp_sample(&mut rng, lambda) } else { f64::INFINITY };
                let mut i = start;
                let mut acc = 0.0;
                loop {
                    let rate = match bc {
                        Bc::Dirichlet => dirs as f64,
                        Bc::Neumann => st.degree(i) as f64,
                    };
                    let hold = exp_sample(&mut rng, rate);
                    if hold >= t_left {
                        acc += alpha[i] * t_left;
                        break;
                    }
                    acc += alpha[i] * hold;
                    t_left -= hold;
                    let next = match bc {
                        Bc::Dirichlet => st.neighbors(i)[rng.random_range(0..dirs)],
                        Bc::Neumann => {
                            let inside: Vec<u32> = st.neighbors(i).iter().copied().filter(|&j| j != NONE).collect();
                            inside[rng.random_range(0..inside.len())]
                        }
                    };
                    if next == NONE {
                        break;
                    }
                    i = next as usize;
                }
                let v = real.epsilon * acc;
                s1 += v;
                s2 += v * v;
            }
            (s1, s2)
        })
        .collect();
    let (s1, s2) = sums.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let n = walks as f64;
    let mean = s1 / n;
    let var = ((s2 - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(WalkEstimate { estimate: mean, std_error: (var / n).sqrt(), walks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{sample_alpha, ScalarField};
    use std::sync::Arc;

    #[test]
    fn single_site_holding_time() {
        let r = Arc::new(Region::from_sites(2, [Site::origin()]));
        let real = sample_alpha(r.clone(), 1, 0.5);
        let w = fk_estimate(&real, &r, 0.0, Bc::Dirichlet, Site::origin(), 20000, 3).unwrap();
        let exact = 0.5 * real.alpha_at(Site::origin()) / 4.0;
        assert!((w.estimate - exact).abs() <= 3.0 * w.std_error);
    }

    #[test]
    fn zero_field_is_exactly_zero() {
        let r = Arc::new(crate::geometry::LatticeBox::new(2, Site::origin(), 4).region());
        let real = DisorderRealization::from_field(1.0, ScalarField::zeros(r.clone()));
        let w = fk_estimate(&real, &r, 0.1, Bc::Dirichlet, Site::new(&[1, 1]), 100, 0).unwrap();
        assert_eq!(w.estimate, 0.0);
        assert!(fk_estimate(&real, &r, 0.0, Bc::Neumann, Site::new(&[1, 1]), 100, 0).is_err());
    }
}
