//! Learning-input generators.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `a · sin(π·f·k + φ)`, with `f` given in units of π rad per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SineTerm {
    pub amplitude: f64,
    pub freq_pi: f64,
    #[serde(default)]
    pub phase: f64,
    /// Input channel the term drives.
    #[serde(default)]
    pub channel: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LearningSignal {
    Sinusoids { terms: Vec<SineTerm> },
    /// Replays the given columns of a CSV file (for instance `uL` of an earlier trace).
    CsvReplay { path: PathBuf, columns: Vec<String> },
    Constant { value: Vec<f64> },
}

/// A signal ready for evaluation; CSV data is loaded once.
#[derive(Debug, Clone, PartialEq)]
pub enum Signal {
    Sinusoids { terms: Vec<SineTerm>, dim: usize },
    Recorded(Vec<DVector<f64>>),
    Constant(DVector<f64>),
}

/// The two-tone learning input of the reference experiments.
pub fn reference_sinusoids() -> LearningSignal {
    LearningSignal::Sinusoids {
        terms: vec![
            SineTerm {
                amplitude: 2.0,
                freq_pi: 0.01,
                phase: 0.0,
                channel: 0,
            },
            SineTerm {
                amplitude: 0.5,
                freq_pi: 0.12,
                phase: 0.0,
                channel: 0,
            },
        ],
    }
}

impl LearningSignal {
    pub(crate) fn check(&self, input_dim: usize) -> Result<()> {
        match self {
            LearningSignal::Sinusoids { terms } => {
                if let Some(t) = terms.iter().find(|t| t.channel >= input_dim) {
                    return Err(Error::InvalidArgument(format!("channel {} out of range", t.channel)));
                }
                if terms.iter().any(|t| !(t.amplitude.is_finite() && t.freq_pi.is_finite() && t.phase.is_finite())) {
                    return Err(Error::InvalidArgument("sinusoid parameters must be finite".into()));
                }
            }
            LearningSignal::CsvReplay { columns, .. } => {
                if columns.len() != input_dim {
                    return Err(Error::InvalidArgument(format!(
                        "expected {input_dim} replay columns, got {}",
                        columns.len()
                    )));
                }
            }
            LearningSignal::Constant { value } => {
                if value.len() != input_dim {
                    return Err(Error::InvalidArgument(format!(
                        "expected {input_dim} values, got {}",
                        value.len()
                    )));
                }
            }
        }
        Ok(())
    }

    /// `base` resolves relative replay paths.
    pub fn load(&self, input_dim: usize, base: Option<&Path>) -> Result<Signal> {
        self.check(input_dim)?;
        Ok(match self {
            LearningSignal::Sinusoids { terms } => Signal::Sinusoids {
                terms: terms.clone(),
                dim: input_dim,
            },
            LearningSignal::Constant { value } => Signal::Constant(DVector::from_vec(value.clone())),
            LearningSignal::CsvReplay { path, columns } => {
                let path = match base {
                    Some(b) if path.is_relative() => b.join(path),
                    _ => path.clone(),
                };
                Signal::Recorded(read_columns(&path, columns)?)
            }
        })
    }
}

fn read_columns(path: &Path, columns: &[String]) -> Result<Vec<DVector<f64>>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let idx = columns
        .iter()
        .map(|c| {
            headers
                .iter()
                .position(|h| h == c)
                .ok_or_else(|| Error::InvalidArgument(format!("column `{c}` not found in {}", path.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let v = idx
            .iter()
            .map(|&i| {
                record[i]
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidArgument(format!("bad value `{}`: {e}", &record[i])))
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(DVector::from_vec(v));
    }
    if out.is_empty() {
        return Err(Error::EmptyData(format!("{} has no rows", path.display())));
    }
    Ok(out)
}

impl Signal {
    /// Number of steps the signal covers, if finite.
    pub fn recorded_len(&self) -> Option<usize> {
        match self {
            Signal::Recorded(v) => Some(v.len()),
            _ => None,
        }
    }

    pub fn at(&self, k: usize) -> DVector<f64> {
        match self {
            Signal::Sinusoids { terms, dim } => {
                let mut u = DVector::zeros(*dim);
                for t in terms {
                    u[t.channel] += t.amplitude * (std::f64::consts::PI * t.freq_pi * k as f64 + t.phase).sin();
                }
                u
            }
            Signal::Recorded(v) => v[k.min(v.len() - 1)].clone(),
            Signal::Constant(c) => c.clone(),
        }
    }
}
