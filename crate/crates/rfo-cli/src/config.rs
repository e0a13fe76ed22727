//! Run configuration: a flat TOML key-value file, overridable from the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::CliError;

/// Every key is optional; commands fill in their own defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// where a run is written is not part of what it computes
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub dim: Option<usize>,
    /// side of the domain, window or box
    pub side: Option<i64>,
    pub epsilon: Option<f64>,
    pub xi: Option<f64>,
    pub small: Option<i64>,
    pub large: Option<i64>,
    /// "calibrated" or "paper" thresholds
    pub profile: Option<String>,
    /// potential densities (units of ε²) overriding the profile
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub lambda: Option<f64>,
    /// fields: "dirichlet" | "neumann"; sampling: "free" | "e1"
    pub bc: Option<String>,
    pub beta: Option<f64>,
    pub sweeps: Option<usize>,
    pub burn_in: Option<usize>,
    pub thinning: Option<usize>,
    /// "adaptive" or "uniform"
    pub proposal: Option<String>,
    /// "random" or "aligned"
    pub start: Option<String>,
    pub block_side: Option<i64>,
    /// "aligned", "island" or the path of a spin dump
    pub configuration: Option<String>,
    /// side of the flipped square of the island configuration
    pub island: Option<i64>,
    /// write per-stage spin dumps of the surgery
    pub dump_stages: Option<bool>,
    /// "randbasic" or "dirty"
    pub suite: Option<String>,
    pub samples: Option<usize>,
    pub max_blocks: Option<usize>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Keys set in `other` win.
    pub fn merged(mut self, other: &Config) -> Config {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f.clone(); } )* };
        }
        take!(
            out, seed, dim, side, epsilon, xi, small, large, profile, a, b, lambda, bc, beta, sweeps, burn_in, thinning, proposal, start,
            block_side, configuration, island, dump_stages, suite, samples, max_blocks
        );
        self
    }
}

pub fn require<T: Clone>(v: &Option<T>, key: &str) -> Result<T, CliError> {
    v.clone().ok_or_else(|| CliError::Config(format!("missing required key `{key}`")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_config_errors() {
        assert!(toml::from_str::<Config>("seed = 1\nbogus = 2").is_err());
        let c: Config = toml::from_str("seed = 1\nepsilon = 0.3\nbc = \"free\"").unwrap();
        assert_eq!(c.seed, Some(1));
        assert_eq!(c.bc.as_deref(), Some("free"));
    }

    #[test]
    fn later_keys_override() {
        let a = Config { seed: Some(1), dim: Some(2), ..Default::default() };
        let b = Config { seed: Some(5), ..Default::default() };
        let m = a.merged(&b);
        assert_eq!((m.seed, m.dim), (Some(5), Some(2)));
    }
}
