//! JSON experiment configuration.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{EnlargementSettings, FilterMode};
use crate::geometry::Polytope;
use crate::linsys::{LinearModel, PlantNoise, TubeGain};
use crate::mpsc::MpscTolerances;
use crate::scenario::DesignOptions;

use super::signal::LearningSignal;

pub const DEFAULT_HORIZON: usize = 20;
pub const DEFAULT_STEPS: usize = 500;

/// Matrices are row-major nested arrays.
pub type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub a: Rows,
    pub b: Rows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PolytopeSpec {
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Halfspaces { a: Rows, b: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub plant: ModelSpec,
    pub model: ModelSpec,
    pub state_constraints: PolytopeSpec,
    pub input_constraints: PolytopeSpec,
    pub gain: Rows,
    #[serde(default)]
    pub horizon: Option<usize>,
    /// Number of measurements drawn for the scenario design.
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    pub x0: Vec<f64>,
    #[serde(default = "default_mode")]
    pub mode: FilterMode,
    #[serde(default)]
    pub enlargement: Option<EnlargementSettings>,
    /// Steps after which the terminal hull is exported.
    #[serde(default)]
    pub snapshots: Vec<usize>,
    pub signal: LearningSignal,
    /// Per-coordinate bound of an optional uniform additive plant term.
    #[serde(default)]
    pub noise: Option<Vec<f64>>,
    #[serde(default)]
    pub tolerances: MpscTolerances,
    #[serde(default)]
    pub design: DesignOptions,
    /// Use this tube shape instead of a scenario design.
    #[serde(default)]
    pub fixed_omega: Option<Rows>,
    /// Start each solve from the previous certified solution.
    #[serde(default)]
    pub warm_start: bool,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_samples() -> usize {
    600
}

fn default_steps() -> usize {
    DEFAULT_STEPS
}

fn default_mode() -> FilterMode {
    FilterMode::Algorithm1
}

/// Configuration with every matrix converted and checked.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub plant: LinearModel,
    pub model: LinearModel,
    pub x_set: Polytope,
    pub u_set: Polytope,
    pub gain: TubeGain,
    pub horizon: usize,
    pub x0: DVector<f64>,
    pub noise: Option<PlantNoise>,
    pub fixed_omega: Option<DMatrix<f64>>,
}

pub fn matrix(rows: &Rows, path: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 {
        return Err(config_err(path, "matrix must be non-empty"));
    }
    if let Some(i) = rows.iter().position(|r| r.len() != ncols) {
        return Err(config_err(path, format!("row {i} has {} entries, expected {ncols}", rows[i].len())));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn rows(m: &DMatrix<f64>) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn config_err(path: &str, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.to_string(),
        message: message.into(),
    }
}

fn model(spec: &ModelSpec, path: &str) -> Result<LinearModel> {
    let a = matrix(&spec.a, &format!("{path}.a"))?;
    if !a.is_square() {
        return Err(config_err(&format!("{path}.a"), format!("A must be square, got {}×{}", a.nrows(), a.ncols())));
    }
    let b = matrix(&spec.b, &format!("{path}.b"))?;
    LinearModel::new(a, b).map_err(|e| config_err(path, e.to_string()))
}

impl PolytopeSpec {
    pub fn build(&self) -> Result<Polytope> {
        match self {
            PolytopeSpec::Box { lower, upper } => Polytope::from_box(lower, upper),
            PolytopeSpec::Halfspaces { a, b } => Polytope::new(matrix(a, "halfspaces.a")?, DVector::from_vec(b.clone())),
        }
    }

    /// Bounds when the set is given as a box.
    pub fn as_box(&self) -> Option<(&[f64], &[f64])> {
        match self {
            PolytopeSpec::Box { lower, upper } => Some((lower, upper)),
            PolytopeSpec::Halfspaces { .. } => None,
        }
    }
}

impl ExperimentConfig {
    pub fn horizon(&self) -> usize {
        self.horizon.unwrap_or(DEFAULT_HORIZON)
    }

    pub fn resolve(&self) -> Result<Resolved> {
        let plant = model(&self.plant, "plant")?;
        let model_ = model(&self.model, "model")?;
        if plant.state_dim() != model_.state_dim() || plant.input_dim() != model_.input_dim() {
            return Err(config_err("model", "plant and model dimensions differ"));
        }
        let n = model_.state_dim();
        let x_set = self
            .state_constraints
            .build()
            .map_err(|e| config_err("state_constraints", e.to_string()))?;
        let u_set = self
            .input_constraints
            .build()
            .map_err(|e| config_err("input_constraints", e.to_string()))?;
        if x_set.dim() != n {
            return Err(config_err("state_constraints", format!("expected dimension {n}, got {}", x_set.dim())));
        }
        if u_set.dim() != model_.input_dim() {
            return Err(config_err(
                "input_constraints",
                format!("expected dimension {}, got {}", model_.input_dim(), u_set.dim()),
            ));
        }
        let k = matrix(&self.gain, "gain")?;
        let gain = TubeGain::new(&model_, k).map_err(|e| config_err("gain", e.to_string()))?;
        let horizon = self.horizon();
        if horizon == 0 {
            return Err(config_err("horizon", "horizon must be at least 1"));
        }
        if self.x0.len() != n {
            return Err(config_err("x0", format!("expected {n} entries, got {}", self.x0.len())));
        }
        let noise = match &self.noise {
            Some(bound) if bound.len() != n => {
                return Err(config_err("noise", format!("expected {n} entries, got {}", bound.len())))
            }
            Some(bound) if bound.iter().any(|b| !(*b >= 0.0)) => {
                return Err(config_err("noise", "bounds must be non-negative"))
            }
            Some(bound) => Some(PlantNoise {
                bound: DVector::from_vec(bound.clone()),
            }),
            None => None,
        };
        let fixed_omega = self.fixed_omega.as_ref().map(|p| matrix(p, "fixed_omega")).transpose()?;
        if let Some(e) = &self.enlargement {
            if e.cadence == 0 {
                return Err(config_err("enlargement.cadence", "cadence must be at least 1"));
            }
        }
        self.signal.check(model_.input_dim()).map_err(|e| config_err("signal", e.to_string()))?;
        Ok(Resolved {
            plant,
            model: model_,
            x_set,
            u_set,
            gain,
            horizon,
            x0: DVector::from_vec(self.x0.clone()),
            noise,
            fixed_omega,
        })
    }
}

/// Parses and validates a configuration; warnings are returned for defaulted fields.
pub fn parse_config(text: &str) -> Result<(ExperimentConfig, Vec<String>)> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    let mut warnings = Vec::new();
    if cfg.horizon.is_none() {
        warnings.push(format!("field `horizon` missing; using default {DEFAULT_HORIZON}"));
    }
    cfg.resolve()?;
    Ok((cfg, warnings))
}

pub fn load_config(path: &Path) -> Result<(ExperimentConfig, Vec<String>)> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}
