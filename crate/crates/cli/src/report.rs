//! Machine-readable run reports: a versioned, self-contained JSON document
//! echoing the configuration (with content hash) alongside the command's
//! results.  Data files (sample clouds, paths) are CSV and referenced by name.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use decomp_core::error::{CoreError, Result};
use decomp_core::mc::TwoSampleResult;
use decomp_core::solver::{
    DecayReport, ExistenceReport, MeasureRepr, SolutionFamily, SolutionKind, VerificationReport,
};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const SCHEMA: &str = "decomp-solve/report/v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginalSummary {
    pub k: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cov: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_truncation: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolutionSummary {
    pub kind: SolutionKind,
    pub horizon: usize,
    pub certified: bool,
    pub shift_param_dim: usize,
    pub marginals: Vec<MarginalSummary>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSummary {
    pub k_start: i64,
    pub k_end: i64,
    pub n_paths: usize,
    pub paths_file: String,
    pub marginal_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fundamental_test: Option<TwoSampleResult>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub schema: String,
    pub command: String,
    pub config: RunConfig,
    pub config_sha256: String,
    pub seed: u64,
    pub wall_clock_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub existence: Option<ExistenceReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solution: Option<SolutionSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verification: Option<VerificationReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay: Option<DecayReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationSummary>,
}

pub fn config_hash(config: &RunConfig) -> String {
    let canonical = serde_json::to_string(config).expect("config serializes");
    let mut h = Sha256::new();
    h.update(canonical.as_bytes());
    format!("{:x}", h.finalize())
}

/// Write a file atomically (temp file + rename in the same directory).
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

fn vec_of(v: &DVector<f64>) -> Vec<f64> {
    v.iter().cloned().collect()
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Summarize a solution family, writing empirical marginals as CSV files
/// under `out_dir`.
pub fn summarize_solution(
    family: &SolutionFamily,
    out_dir: &Path,
) -> std::io::Result<SolutionSummary> {
    let mut marginals = Vec::new();
    for (&k, repr) in &family.window {
        let entry = match repr {
            MeasureRepr::Gaussian { mean, cov } => MarginalSummary {
                k,
                mean: Some(vec_of(mean)),
                cov: Some(rows_of(cov)),
                point: None,
                samples_file: None,
                seed: None,
                n_truncation: None,
            },
            MeasureRepr::Dirac { point } => MarginalSummary {
                k,
                mean: None,
                cov: None,
                point: Some(vec_of(point)),
                samples_file: None,
                seed: None,
                n_truncation: None,
            },
            MeasureRepr::Empirical {
                samples,
                seed,
                n_truncation,
            } => {
                let name = format!("samples_k{k}.csv");
                let mut buf = Vec::new();
                decomp_core::mc::write_samples_csv(samples, &mut buf)?;
                write_atomic(&out_dir.join(&name), &buf)?;
                MarginalSummary {
                    k,
                    mean: None,
                    cov: None,
                    point: None,
                    samples_file: Some(name),
                    seed: Some(*seed),
                    n_truncation: Some(*n_truncation),
                }
            }
        };
        marginals.push(entry);
    }
    Ok(SolutionSummary {
        kind: family.kind,
        horizon: family.horizon,
        certified: family.certified,
        shift_param_dim: family.shift_param_dim,
        marginals,
    })
}

pub fn read_samples_csv(path: &Path) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path)
        .map_err(|e| CoreError::Input(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CoreError::Input(format!("{}: empty CSV", path.display())))?;
    let d = header.split(',').count();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| {
            CoreError::Input(format!("{}: bad number on data row {}: {e}", path.display(), i + 1))
        })?;
        if row.len() != d {
            return Err(CoreError::Input(format!(
                "{}: row {} has {} fields, header has {d}",
                path.display(),
                i + 1,
                row.len()
            )));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CoreError::Input(format!("{}: no data rows", path.display())));
    }
    Ok(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
}

/// Rebuild a solution family from its report summary; empirical marginals are
/// loaded from the referenced CSV files (resolved against `base_dir`).
pub fn restore_solution(summary: &SolutionSummary, base_dir: &Path) -> Result<SolutionFamily> {
    let mut window = BTreeMap::new();
    for m in &summary.marginals {
        let repr = match (&m.mean, &m.cov, &m.point, &m.samples_file) {
            (Some(mean), Some(cov), None, None) => {
                let d = mean.len();
                if cov.len() != d || cov.iter().any(|r| r.len() != d) {
                    return Err(CoreError::Input(format!(
                        "marginal k={} has a malformed covariance literal",
                        m.k
                    )));
                }
                MeasureRepr::Gaussian {
                    mean: DVector::from_column_slice(mean),
                    cov: DMatrix::from_fn(d, d, |i, j| cov[i][j]),
                }
            }
            (None, None, Some(p), None) => MeasureRepr::Dirac {
                point: DVector::from_column_slice(p),
            },
            (None, None, None, Some(file)) => {
                let path: PathBuf = base_dir.join(file);
                MeasureRepr::Empirical {
                    samples: read_samples_csv(&path)?,
                    seed: m.seed.unwrap_or(0),
                    n_truncation: m.n_truncation.unwrap_or(0),
                }
            }
            _ => {
                return Err(CoreError::Input(format!(
                    "marginal k={} does not name exactly one representation",
                    m.k
                )))
            }
        };
        window.insert(m.k, repr);
    }
    if window.is_empty() {
        return Err(CoreError::Input("solution summary has no marginals".into()));
    }
    Ok(SolutionFamily {
        kind: summary.kind,
        window,
        shift_param_dim: summary.shift_param_dim,
        horizon: summary.horizon,
        certified: summary.certified,
    })
}
