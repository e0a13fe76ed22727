//! Quenched Gaussian disorder, Green fields of the massive Laplacians and
//! the local potential built from their gradients.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Region, Site};
use crate::rng;
use crate::stencil::{direction_step, Stencil, NONE};

mod eigen;
mod solver;
mod spectral;
mod split;
mod walk;

pub use eigen::{box_of, eigen_solve_oracle, BoxSpectrum};
pub use solver::{apply_operator, solve_green, solve_source, SolveOptions};
pub use spectral::{spectral_sigmas, SpectralConstants};
pub use split::{harmonic_split, locality_gap, HarmonicSplit, LocalityGap};
pub use walk::{fk_estimate, WalkEstimate};

/// One finite real per site of a region, aligned with `region.sites()`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    region: Arc<Region>,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(region: Arc<Region>, values: Vec<f64>) -> Result<ScalarField> {
        if values.len() != region.len() {
            return Err(Error::invalid(format!(
                "field has {} values for {} sites",
                values.len(),
                region.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite field value {v}")));
        }
        Ok(ScalarField { region, values })
    }

    pub fn zeros(region: Arc<Region>) -> ScalarField {
        let n = region.len();
        ScalarField { region, values: vec![0.0; n] }
    }

    pub fn from_fn(region: Arc<Region>, f: impl Fn(Site) -> f64) -> ScalarField {
        let values = region.sites().iter().map(|&x| f(x)).collect();
        ScalarField { region, values }
    }

    pub fn region(&self) -> &Arc<Region> {
        &self.region
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, x: Site) -> Option<f64> {
        self.region.position(x).map(|i| self.values[i])
    }

    /// Value with zero extension outside the region.
    pub fn get_or_zero(&self, x: Site) -> f64 {
        self.get(x).unwrap_or(0.0)
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.sum() / self.values.len() as f64
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn l2_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn restrict(&self, to: &Region) -> Result<ScalarField> {
        let values = to
            .sites()
            .iter()
            .map(|&x| self.get(x).ok_or_else(|| Error::invalid("restriction outside field domain")))
            .collect::<Result<Vec<_>>>()?;
        ScalarField::new(Arc::new(to.clone()), values)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField { region: self.region.clone(), values: self.values.iter().map(|&v| f(v)).collect() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Bc {
    Dirichlet,
    Neumann,
}

impl Bc {
    pub fn code(self) -> u64 {
        match self {
            Bc::Dirichlet => 0,
            Bc::Neumann => 1,
        }
    }
}

/// ε(−Δ^{bc} + λ)^{-1} applied to the disorder (centred for Neumann).
#[derive(Clone, Debug)]
pub struct GreenField {
    pub field: ScalarField,
    pub lambda: f64,
    pub bc: Bc,
    pub epsilon: f64,
    /// sup-norm of the final operator residual
    pub residual: f64,
    pub iterations: usize,
}

impl GreenField {
    pub fn region(&self) -> &Arc<Region> {
        self.field.region()
    }

    pub fn values(&self) -> &[f64] {
        self.field.values()
    }

    /// Value at any site; zero outside the region (the Dirichlet extension).
    pub fn value(&self, x: Site) -> f64 {
        self.field.get_or_zero(x)
    }

    pub fn sup_norm(&self) -> f64 {
        self.field.sup_norm()
    }

    /// Squared gradients over the edge set natural to the boundary condition:
    /// e ∩ R ≠ ∅ with zero extension (Dirichlet), e ⊂ R (Neumann).
    pub fn edge_gradients(&self) -> Vec<f64> {
        let region = self.region();
        let st = Stencil::new(region);
        let g = self.values();
        let mut out = Vec::new();
        for i in 0..region.len() {
            for (k, &j) in st.neighbors(i).iter().enumerate() {
                if j == NONE {
                    if self.bc == Bc::Dirichlet {
                        out.push(g[i]);
                    }
                } else if k % 2 == 1 {
                    out.push(g[j as usize] - g[i]);
                }
            }
        }
        out
    }

    pub fn grad_sq_sum(&self) -> f64 {
        self.edge_gradients().iter().map(|v| v * v).sum()
    }

    pub fn grad_sup(&self) -> f64 {
        self.edge_gradients().iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Quenched disorder. Seeded realizations extend to all of Z^d through the
/// counter-based generator; explicit fields are zero off their region.
#[derive(Clone, Debug)]
pub struct DisorderRealization {
    pub seed: Option<u64>,
    pub epsilon: f64,
    alpha: ScalarField,
}

impl DisorderRealization {
    pub fn from_field(epsilon: f64, alpha: ScalarField) -> DisorderRealization {
        DisorderRealization { seed: None, epsilon, alpha }
    }

    pub fn region(&self) -> &Arc<Region> {
        self.alpha.region()
    }

    pub fn alpha(&self) -> &ScalarField {
        &self.alpha
    }

    pub fn alpha_at(&self, x: Site) -> f64 {
        match self.alpha.get(x) {
            Some(v) => v,
            None => match self.seed {
                Some(s) => rng::site_normal(s, x),
                None => 0.0,
            },
        }
    }

    pub fn alpha_on(&self, region: &Region) -> Vec<f64> {
        region.sites().iter().map(|&x| self.alpha_at(x)).collect()
    }

    /// Same disorder with a different field strength.
    pub fn with_epsilon(&self, epsilon: f64) -> DisorderRealization {
        DisorderRealization { seed: self.seed, epsilon, alpha: self.alpha.clone() }
    }

    /// The field α ↦ tα (explicit realizations only keep their region).
    pub fn scaled(&self, t: f64) -> DisorderRealization {
        let region = self.region().clone();
        let vals = self.alpha.values().iter().map(|v| v * t).collect();
        DisorderRealization { seed: None, epsilon: self.epsilon, alpha: ScalarField { region, values: vals } }
    }
}

/// α_x ~ N(0,1) keyed by (seed, x).
pub fn sample_alpha(region: Arc<Region>, seed: u64, epsilon: f64) -> DisorderRealization {
    let values: Vec<f64> = region.sites().par_iter().map(|&x| rng::site_normal(seed, x)).collect();
    DisorderRealization { seed: Some(seed), epsilon, alpha: ScalarField { region, values } }
}

/// `m_x = Σ_{y∼x} (g_y − g_x)²` over edges meeting `within`. Dirichlet fields
/// are read as zero off their region; Neumann fields only contribute edges
/// inside their region.
pub fn local_potential(g: &GreenField, within: &Region) -> Result<ScalarField> {
    let gr = g.region();
    let mut m = Vec::with_capacity(within.len());
    for &x in within.sites() {
        let gx = match gr.position(x) {
            Some(i) => g.values()[i],
            None if g.bc == Bc::Dirichlet => 0.0,
            None => return Err(Error::invalid("potential site outside a Neumann field's region")),
        };
        let mut s = 0.0;
        for k in 0..2 * within.dim() {
            let y = direction_step(x, k);
            let gy = match gr.position(y) {
                Some(j) => g.values()[j],
                None if g.bc == Bc::Dirichlet => 0.0,
                None => continue,
            };
            s += (gy - gx) * (gy - gx);
        }
        m.push(s);
    }
    ScalarField::new(Arc::new(within.clone()), m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::LatticeBox;

    fn cube(d: usize, side: i64) -> Arc<Region> {
        Arc::new(LatticeBox::new(d, Site::origin(), side).region())
    }

    #[test]
    fn alpha_is_a_function_of_the_site() {
        let a = sample_alpha(cube(2, 6), 11, 0.1);
        let shifted = Arc::new(LatticeBox::new(2, Site::new(&[3, 3]), 6).region());
        let b = sample_alpha(shifted, 11, 0.1);
        for x in [Site::new(&[3, 3]), Site::new(&[5, 4])] {
            assert_eq!(a.alpha().get(x), b.alpha().get(x));
        }
        assert_eq!(a.alpha_at(Site::new(&[100, -7])), b.alpha_at(Site::new(&[100, -7])));
    }

    #[test]
    fn potential_of_point_indicator() {
        let r = cube(2, 5);
        let v = Site::new(&[2, 2]);
        let field = ScalarField::from_fn(r.clone(), |x| if x == v { 1.0 } else { 0.0 });
        let g = GreenField { field, lambda: 0.0, bc: Bc::Dirichlet, epsilon: 1.0, residual: 0.0, iterations: 0 };
        let m = local_potential(&g, &r).unwrap();
        assert_eq!(m.get(v), Some(4.0));
        assert_eq!(m.get(Site::new(&[2, 3])), Some(1.0));
        assert_eq!(m.get(Site::new(&[0, 0])), Some(0.0));
    }
}
