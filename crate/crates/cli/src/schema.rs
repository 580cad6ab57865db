//! Input documents of the subcommands that do not take a plain experiment
//! configuration.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use aao_core::experiments::{ErrorReport, ExperimentConfig, GridConfig};
use aao_core::neural::{NetParams, STANDARD_ARCH};

use crate::error::{CliError, CliResult};

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// One experiment or a batch of them.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum ExperimentInput {
    Single(Box<ExperimentConfig>),
    Batch(Vec<ExperimentConfig>),
}

impl ExperimentInput {
    pub fn into_vec(self) -> Vec<ExperimentConfig> {
        match self {
            ExperimentInput::Single(c) => vec![*c],
            ExperimentInput::Batch(v) => v,
        }
    }
}

/// Error measure minimised by a grid search.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    NonlinearityError,
    StateError,
    ParameterError,
    PdeResidual,
}

impl Metric {
    pub fn pick(self, e: &ErrorReport) -> f64 {
        match self {
            Metric::NonlinearityError => e.nonlinearity_error,
            Metric::StateError => e.state_error,
            Metric::ParameterError => e.parameter_error,
            Metric::PdeResidual => e.pde_residual,
        }
    }
}

/// Cartesian product of weight values around a base experiment. Absent
/// lists keep the base value.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSearchConfig {
    pub base: ExperimentConfig,
    #[serde(default)]
    pub beta_m: Option<Vec<f64>>,
    #[serde(default)]
    pub r_u: Option<Vec<f64>>,
    #[serde(default)]
    pub r_psi: Option<Vec<f64>>,
    #[serde(default)]
    pub r_theta: Option<Vec<f64>>,
    #[serde(default)]
    pub metric: Metric,
}

impl GridSearchConfig {
    pub fn candidates(&self) -> Vec<ExperimentConfig> {
        let w = self.base.weights;
        let axis = |v: &Option<Vec<f64>>, d: f64| v.clone().unwrap_or_else(|| vec![d]);
        let mut out = Vec::new();
        for &bm in &axis(&self.beta_m, w.beta_m) {
            for &ru in &axis(&self.r_u, w.r_u) {
                for &rp in &axis(&self.r_psi, w.r_psi) {
                    for &rt in &axis(&self.r_theta, w.r_theta) {
                        let mut c = self.base.clone();
                        c.weights.beta_m = bm;
                        c.weights.r_u = ru;
                        c.weights.r_psi = rp;
                        c.weights.r_theta = rt;
                        out.push(c);
                    }
                }
            }
        }
        out
    }
}

fn default_arch() -> Vec<usize> {
    STANDARD_ARCH.to_vec()
}
fn default_half_width() -> f64 {
    0.5
}
fn default_box() -> [f64; 2] {
    [-2.0, 2.0]
}
fn default_pairs() -> usize {
    100_000
}
fn default_tcc_pairs() -> usize {
    200
}
fn default_rho_fraction() -> f64 {
    0.5
}

/// Network and box to certify. Without `network`, a random network of
/// architecture `arch` is drawn with the run seed.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifyConfig {
    #[serde(default)]
    pub network: Option<NetParams>,
    #[serde(default = "default_arch")]
    pub arch: Vec<usize>,
    #[serde(default = "default_half_width")]
    pub half_width: f64,
    #[serde(default = "default_box", rename = "box")]
    pub bounds: [f64; 2],
    /// Random pairs for the Lipschitz difference quotients.
    #[serde(default = "default_pairs")]
    pub pairs: usize,
    /// Grid on which the tangential-cone estimate is sampled.
    #[serde(default)]
    pub grid: GridConfig,
    /// Ball radius as a fraction of the certified radius.
    #[serde(default = "default_rho_fraction")]
    pub rho_fraction: f64,
    #[serde(default = "default_tcc_pairs")]
    pub tcc_pairs: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

fn default_grids() -> Vec<[usize; 2]> {
    vec![[21, 20], [51, 50]]
}
fn default_draws() -> usize {
    20
}
fn default_fd_draws() -> usize {
    10
}
fn default_fd_step() -> f64 {
    1e-5
}
fn default_pairing_tol() -> f64 {
    1e-8
}
fn default_gradient_tol() -> f64 {
    1e-5
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdjointCheckConfig {
    /// `[nx, nt]` pairs on the unit interval with `T = 0.1`.
    #[serde(default = "default_grids")]
    pub grids: Vec<[usize; 2]>,
    #[serde(default = "default_draws")]
    pub draws: usize,
    /// Random states for the gradient check, run on the first grid.
    #[serde(default = "default_fd_draws")]
    pub gradient_draws: usize,
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
    #[serde(default = "default_pairing_tol")]
    pub pairing_tol: f64,
    #[serde(default = "default_gradient_tol")]
    pub gradient_tol: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for AdjointCheckConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{
        "truth": {"nonlinearity": "square"},
        "measurement": {"mode": "full"},
        "solver": {"method": "adam", "iters": 5}
    }"#;

    #[test]
    fn single_and_batch_inputs_parse() {
        let one: ExperimentInput = serde_json::from_str(BASE).unwrap();
        assert_eq!(one.into_vec().len(), 1);
        let many: ExperimentInput =
            serde_json::from_str(&format!("[{BASE}, {BASE}, {BASE}]")).unwrap();
        assert_eq!(many.into_vec().len(), 3);
    }

    #[test]
    fn candidates_span_the_product_of_lists() {
        let gs: GridSearchConfig = serde_json::from_str(&format!(
            r#"{{"base": {BASE}, "beta_m": [1, 2, 3], "r_psi": [0.1, 0.2]}}"#
        ))
        .unwrap();
        let c = gs.candidates();
        assert_eq!(c.len(), 6);
        assert!(c.iter().all(|k| k.weights.r_u == gs.base.weights.r_u));
        assert_eq!((c[5].weights.beta_m, c[5].weights.r_psi), (3.0, 0.2));
        assert_eq!(gs.metric, Metric::NonlinearityError);
    }

    #[test]
    fn defaults_fill_optional_documents() {
        let c = CertifyConfig::default();
        assert_eq!(c.arch, STANDARD_ARCH.to_vec());
        assert_eq!(c.bounds, [-2.0, 2.0]);
        let a = AdjointCheckConfig::default();
        assert_eq!(a.grids, vec![[21, 20], [51, 50]]);
        assert!(serde_json::from_str::<AdjointCheckConfig>(r#"{"draw": 3}"#).is_err());
    }
}
