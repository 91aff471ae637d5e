//! Run manifests: one TOML document with a section per stage.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sitebal_core::{SimConfig, TransportConfig};

use crate::error::CliError;

/// 25 log-spaced points from 1e−4 to 1e2, plus 0.03.
pub fn default_sweep_grid() -> Vec<f64> {
    let mut grid: Vec<f64> = (0..25)
        .map(|k| 10f64.powf(-4.0 + 6.0 * k as f64 / 24.0))
        .collect();
    grid.push(0.03);
    grid.sort_by(f64::total_cmp);
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub lambdas: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            lambdas: default_sweep_grid(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Replaces the bootstrap and simulation seeds when set.
    pub seed: Option<u64>,
    /// Level of the heterogeneity intervals.
    pub alpha: f64,
    pub transport: TransportConfig,
    pub sweep: SweepConfig,
    pub simulation: SimConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            alpha: 0.05,
            transport: TransportConfig::default(),
            sweep: SweepConfig::default(),
            simulation: SimConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e: toml::de::Error| e.message().to_string())
    }

    /// Applies a seed from the command line or the document to every stage.
    pub fn with_seed(mut self, flag: Option<u64>) -> Self {
        if let Some(seed) = flag.or(self.seed) {
            self.seed = Some(seed);
            self.transport.bootstrap.seed = seed;
            self.simulation.seed = seed;
        }
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use sitebal_core::Method;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn sections_round_trip() {
        let mut c = RunConfig::default();
        c.transport.lambda = 0.5;
        c.transport.estimators = vec![Method::Weighting, Method::Ipw];
        c.transport.features.interactions = vec![(0, 1)];
        c.simulation.reps = 3;
        let text = toml::to_string(&c).unwrap();
        assert_eq!(RunConfig::parse(&text).unwrap(), c);
    }

    #[test]
    fn unknown_estimator_is_rejected() {
        let err = RunConfig::parse("[transport]\nestimators = [\"weighting\", \"matching\"]\n")
            .unwrap_err();
        assert!(err.contains("matching"), "{err}");
    }

    #[test]
    fn flag_seed_wins() {
        let c = RunConfig::parse("seed = 3").unwrap().with_seed(Some(9));
        assert_eq!((c.transport.bootstrap.seed, c.simulation.seed), (9, 9));
        let c = RunConfig::parse("seed = 3").unwrap().with_seed(None);
        assert_eq!(c.simulation.seed, 3);
    }

    #[test]
    fn default_grid_includes_0_03() {
        let g = default_sweep_grid();
        assert_eq!(g.len(), 26);
        assert!(g.contains(&0.03));
        assert!((g[0] - 1e-4).abs() < 1e-18 && (g[25] - 1e2).abs() < 1e-10);
    }
}
