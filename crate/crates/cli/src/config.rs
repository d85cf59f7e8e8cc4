//! The run configuration schema: a single JSON document describing the drift
//! map, the noise process and the numeric options.  Unknown fields are
//! rejected; serialization round-trips canonically.

use std::collections::BTreeMap;

use decomp_core::measure::NoiseModel;
use decomp_core::process::{NoiseProcess, TailRule};
use decomp_core::solver::SolverOpts;
use decomp_core::spectral::LinearMap;
use decomp_core::CoreError;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

fn d_k_min() -> i64 {
    -10
}
fn d_k_max() -> i64 {
    10
}
fn d_horizon() -> usize {
    1000
}
fn d_tol() -> f64 {
    1e-8
}
fn d_samples() -> usize {
    5000
}
fn d_p() -> f64 {
    2.0
}
fn d_permutations() -> usize {
    500
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TailRuleConfig {
    Stationary { model: NoiseModel },
    PushforwardPower { base: NoiseModel, map: Vec<Vec<f64>> },
    DecayMixtureFamily { a: f64 },
    ZeroTail,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessConfig {
    /// Explicit marginals keyed by the integer index (JSON object keys).
    #[serde(default)]
    pub window: BTreeMap<String, NoiseModel>,
    pub tail_rule: TailRuleConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dim: usize,
    /// Row-major matrix literal for the drift map.
    pub map: Vec<Vec<f64>>,
    pub process: ProcessConfig,
    /// Initial law for `simulate` (defaults to the point mass at 0).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<NoiseModel>,
    #[serde(default = "d_k_min")]
    pub k_min: i64,
    #[serde(default = "d_k_max")]
    pub k_max: i64,
    #[serde(default = "d_horizon")]
    pub horizon: usize,
    #[serde(default = "d_tol")]
    pub tol: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_samples")]
    pub samples: usize,
    #[serde(default = "d_p")]
    pub p: f64,
    #[serde(default = "d_permutations")]
    pub permutations: usize,
}

fn rows_to_map(rows: &[Vec<f64>], dim: usize) -> Result<LinearMap, CoreError> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(CoreError::Input(format!(
            "map literal must be {dim}x{dim}, got {} rows of lengths {:?}",
            rows.len(),
            rows.iter().map(|r| r.len()).collect::<Vec<_>>()
        )));
    }
    LinearMap::new(DMatrix::from_fn(dim, dim, |i, j| rows[i][j]))
}

impl RunConfig {
    pub fn map(&self) -> Result<LinearMap, CoreError> {
        rows_to_map(&self.map, self.dim)
    }

    pub fn process(&self) -> Result<NoiseProcess, CoreError> {
        let mut window = BTreeMap::new();
        for (key, model) in &self.process.window {
            let k: i64 = key.parse().map_err(|_| {
                CoreError::Input(format!("window key {key:?} is not an integer index"))
            })?;
            window.insert(k, model.clone());
        }
        let tail = match &self.process.tail_rule {
            TailRuleConfig::Stationary { model } => TailRule::Stationary(model.clone()),
            TailRuleConfig::PushforwardPower { base, map } => TailRule::PushforwardPower {
                base: base.clone(),
                map: rows_to_map(map, self.dim)?,
            },
            TailRuleConfig::DecayMixtureFamily { a } => TailRule::DecayMixtureFamily { a: *a },
            TailRuleConfig::ZeroTail => TailRule::ZeroTail,
        };
        NoiseProcess::new(self.dim, window, tail)
    }

    pub fn opts(&self, force: bool) -> SolverOpts {
        SolverOpts {
            horizon: self.horizon,
            tol: self.tol,
            p: self.p,
            samples: self.samples,
            seed: self.seed,
            permutations: self.permutations,
            force,
        }
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        if self.dim == 0 {
            return Err(CoreError::Input("dim must be >= 1".into()));
        }
        if self.k_min > self.k_max {
            return Err(CoreError::Input(format!(
                "empty window [{}, {}]",
                self.k_min, self.k_max
            )));
        }
        if let Some(init) = &self.initial {
            if init.dim() != self.dim {
                return Err(CoreError::DimensionMismatch {
                    expected: self.dim,
                    got: init.dim(),
                });
            }
        }
        self.map()?;
        self.process()?;
        Ok(())
    }
}
