//! JSON experiment description.
//!
//! A config is one document with the sections `grid`, `truth`,
//! `measurement`, `noise`, `solver`, `weights`, `baseline`, `output` and a
//! top-level `seed`. Unknown keys are rejected everywhere.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::MeasurementSpec;
use crate::neural::STANDARD_ARCH;
use crate::solvers::{AdamOptions, ObjectiveWeights, StoppingRule};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub grid: GridConfig,
    pub truth: TruthConfig,
    pub measurement: MeasurementConfig,
    #[serde(default)]
    pub noise: NoiseSpec,
    pub solver: SolverConfig,
    #[serde(default)]
    pub weights: ObjectiveWeights,
    #[serde(default)]
    pub baseline: BaselineConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let grid = self.grid.build()?;
        if self.truth.samples.is_empty() {
            return Err(Error::Config(
                "truth.samples must contain at least one sample".into(),
            ));
        }
        if self.truth.refine == 0 {
            return Err(Error::Config("truth.refine must be at least 1".into()));
        }
        self.measurement.build(&grid)?;
        self.noise.validate()?;
        self.weights.validate()?;
        match &self.solver {
            SolverConfig::Adam(o) => o.validate()?,
            SolverConfig::Landweber(r) => r.validate()?,
        }
        self.baseline.validate()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub nx: usize,
    pub nt: usize,
    pub x_lo: f64,
    pub x_hi: f64,
    pub t_end: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            nx: 51,
            nt: 50,
            x_lo: 0.0,
            x_hi: 1.0,
            t_end: 0.1,
        }
    }
}

impl GridConfig {
    pub fn build(&self) -> Result<Grid> {
        Grid::new(self.nx, self.nt, self.x_lo, self.x_hi, self.t_end)
    }
}

/// Ground-truth nonlinearities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truth {
    /// `2 − u`
    Linear,
    /// `u² − 1`
    Square,
    /// `(u − 0.1)(u − 0.5)(141.6u − 30)`
    CubicPoly,
    /// `cos(3πu)`
    Cosine,
}

impl Truth {
    pub fn eval(self, u: f64) -> f64 {
        match self {
            Self::Linear => 2.0 - u,
            Self::Square => u * u - 1.0,
            Self::CubicPoly => (u - 0.1) * (u - 0.5) * (141.6 * u - 30.0),
            Self::Cosine => (3.0 * PI * u).cos(),
        }
    }
}

/// A function of `x` given in closed form or by nodal values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    Zero,
    /// `amplitude · sin(mode · π (x − x_lo)/L)`
    Sine {
        amplitude: f64,
        mode: u32,
    },
    /// `amplitude · exp(−(x − center)² / (2 width²))`
    Gaussian {
        amplitude: f64,
        center: f64,
        width: f64,
    },
    Values {
        values: Vec<f64>,
    },
}

impl Profile {
    pub fn sample(&self, grid: &Grid) -> Result<Vec<f64>> {
        let v = match self {
            Self::Zero => vec![0.0; grid.nx()],
            Self::Sine { amplitude, mode } => {
                let (lo, len) = (grid.x_lo(), grid.length());
                grid.sample(|x| amplitude * (*mode as f64 * PI * (x - lo) / len).sin())
            }
            Self::Gaussian {
                amplitude,
                center,
                width,
            } => {
                if !(*width > 0.0) {
                    return Err(Error::Config(format!(
                        "Gaussian width must be positive, got {width}"
                    )));
                }
                grid.sample(|x| amplitude * (-(x - center).powi(2) / (2.0 * width * width)).exp())
            }
            Self::Values { values } => {
                if values.len() != grid.nx() {
                    return Err(Error::Config(format!(
                        "profile has {} values, grid has {} points",
                        values.len(),
                        grid.nx()
                    )));
                }
                values.clone()
            }
        };
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("profile has non-finite values".into()));
        }
        Ok(v)
    }
}

/// Initial state and source of one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    pub u0: Profile,
    pub phi: Profile,
}

impl SampleConfig {
    pub fn single() -> Self {
        Self {
            u0: Profile::Sine {
                amplitude: 1.0,
                mode: 1,
            },
            phi: Profile::Gaussian {
                amplitude: 10.0,
                center: 0.5,
                width: 0.15,
            },
        }
    }

    /// Three sources with bumps at different places.
    pub fn three_bumps() -> Vec<Self> {
        [(0.3, 8.0, 1.0), (0.5, 12.0, 0.8), (0.7, 10.0, 1.2)]
            .into_iter()
            .map(|(center, amplitude, a0)| Self {
                u0: Profile::Sine {
                    amplitude: a0,
                    mode: 1,
                },
                phi: Profile::Gaussian {
                    amplitude,
                    center,
                    width: 0.1,
                },
            })
            .collect()
    }
}

fn default_samples() -> Vec<SampleConfig> {
    vec![SampleConfig::single()]
}

fn default_refine() -> usize {
    4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthConfig {
    pub nonlinearity: Truth,
    #[serde(default = "default_samples")]
    pub samples: Vec<SampleConfig>,
    /// Estimate a source correction per sample instead of using the true source.
    #[serde(default)]
    pub estimate_source: bool,
    /// Time refinement factor of the synthesis grid.
    #[serde(default = "default_refine")]
    pub refine: usize,
}

fn unit_scale() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasurementConfig {
    Full {
        #[serde(default = "unit_scale")]
        scale: f64,
    },
    /// Either `count` evenly spaced snapshots or explicit `indices`.
    Snapshots {
        #[serde(default)]
        count: Option<usize>,
        #[serde(default)]
        indices: Option<Vec<usize>>,
        #[serde(default = "unit_scale")]
        scale: f64,
    },
}

impl MeasurementConfig {
    pub fn build(&self, grid: &Grid) -> Result<MeasurementSpec> {
        match self {
            Self::Full { scale } => {
                if !(scale.is_finite() && *scale != 0.0) {
                    return Err(Error::Config(format!(
                        "measurement scale must be nonzero, got {scale}"
                    )));
                }
                Ok(MeasurementSpec {
                    scale: *scale,
                    ..MeasurementSpec::full()
                })
            }
            Self::Snapshots {
                count,
                indices,
                scale,
            } => {
                let idx = match (count, indices) {
                    (Some(n), None) => MeasurementSpec::evenly_spaced(*n, grid)?,
                    (None, Some(i)) => i.clone(),
                    _ => {
                        return Err(Error::Config(
                            "snapshot measurement needs exactly one of `count` and `indices`"
                                .into(),
                        ))
                    }
                };
                MeasurementSpec::snapshots(idx, *scale, grid)
            }
        }
    }
}

/// Additive Gaussian noise on the observations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    /// Standard deviation `value` for every observed value.
    Sigma { value: f64 },
    /// Standard deviation `value` percent of the RMS of the clean data.
    Percent { value: f64 },
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self::Sigma { value: 0.0 }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        let v = match self {
            Self::Sigma { value } | Self::Percent { value } => *value,
        };
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::Contract(format!(
                "noise level must be finite and ≥ 0, got {v}"
            )));
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Self::Sigma { value } | Self::Percent { value } if *value == 0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum SolverConfig {
    Adam(AdamOptions),
    Landweber(StoppingRule),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Network,
    Polynomial,
    Trig,
}

fn default_dof() -> usize {
    29
}

fn default_init_half_width() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    /// Parameter count for the polynomial and trigonometric approximators.
    #[serde(default = "default_dof")]
    pub dof: usize,
    /// Layer widths of the network approximator.
    #[serde(default = "default_arch")]
    pub arch: Vec<usize>,
    /// Initial parameters are drawn uniformly from `[−w, w]`.
    #[serde(default = "default_init_half_width")]
    pub init_half_width: f64,
}

fn default_arch() -> Vec<usize> {
    STANDARD_ARCH.to_vec()
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            kind: BaselineKind::Network,
            dof: default_dof(),
            arch: default_arch(),
            init_half_width: default_init_half_width(),
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dof == 0 {
            return Err(Error::Config("baseline dof must be at least 1".into()));
        }
        if self.kind == BaselineKind::Trig && self.dof.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "trig baseline needs odd dof, got {}",
                self.dof
            )));
        }
        if !(self.init_half_width >= 0.0 && self.init_half_width.is_finite()) {
            return Err(Error::Config(
                "init_half_width must be finite and ≥ 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldFormat {
    Csv,
    Binary,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub fields: FieldFormat,
    pub trace: bool,
    pub plotdata: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            fields: FieldFormat::Csv,
            trace: true,
            plotdata: true,
        }
    }
}
