//! Monte Carlo layer: forward path simulation of `eta_k = xi_k + phi(eta_{k-1})`,
//! backward partial-sum samplers `S_{k,N} = sum_{i=0}^N phi^i xi_{k-i}`, and
//! two-sample distributional tests (energy distance with permutation p-values,
//! empirical characteristic functions).

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::measure::{self, NoiseModel};
use crate::process::NoiseProcess;
use crate::rng::{derive_seed, rng_from_seed};
use crate::spectral::LinearMap;

/// An ensemble of forward-simulated paths, with the drawn noise retained so
/// the recursion residual is checkable exactly.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    pub k_start: i64,
    pub k_end: i64,
    pub n_paths: usize,
    /// One `n_paths x d` matrix per time index `k_start..=k_end`.
    pub states: Vec<DMatrix<f64>>,
    /// Noise drawn at each step `k_start+1..=k_end` (same layout).
    pub noise: Vec<DMatrix<f64>>,
    pub seed: u64,
}

impl PathEnsemble {
    /// Marginal sample cloud at time `k`.
    pub fn marginal(&self, k: i64) -> Option<&DMatrix<f64>> {
        if k < self.k_start || k > self.k_end {
            return None;
        }
        Some(&self.states[(k - self.k_start) as usize])
    }
}

/// Simulate `n` independent paths of `eta_k = xi_k + phi(eta_{k-1})` forward
/// from `k_start` (state drawn from `initial`) to `k_end`.
pub fn simulate_paths(
    process: &NoiseProcess,
    map: &LinearMap,
    initial: &NoiseModel,
    k_start: i64,
    k_end: i64,
    n: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    if n < 1 {
        return Err(CoreError::Input("need at least one path".into()));
    }
    if k_start >= k_end {
        return Err(CoreError::Input(format!(
            "need k_start < k_end, got [{k_start}, {k_end}]"
        )));
    }
    let d = process.dim();
    if map.dim() != d || initial.dim() != d {
        return Err(CoreError::DimensionMismatch {
            expected: d,
            got: map.dim().min(initial.dim()),
        });
    }
    let mut state = measure::sample(initial, n, derive_seed(seed, &[0]))?;
    let mut states = vec![state.clone()];
    let mut noise = Vec::new();
    let mut buf = vec![0.0; d];
    for (step, k) in (k_start + 1..=k_end).enumerate() {
        let model = process.model_at(k);
        let mut rng = rng_from_seed(derive_seed(seed, &[1, step as u64]));
        let mut xi = DMatrix::<f64>::zeros(n, d);
        for r in 0..n {
            measure::draw_one(&model, &mut rng, &mut buf);
            for i in 0..d {
                xi[(r, i)] = buf[i];
            }
        }
        state = &xi + &state * map.matrix().transpose();
        states.push(state.clone());
        noise.push(xi);
    }
    Ok(PathEnsemble {
        k_start,
        k_end,
        n_paths: n,
        states,
        noise,
        seed,
    })
}

/// Draw `n` i.i.d. samples of the backward partial sum
/// `S_{k,N} = sum_{i=0}^N phi^i xi_{k-i}`.
pub fn backward_partial_sample(
    process: &NoiseProcess,
    map: &LinearMap,
    k: i64,
    n_terms: usize,
    n: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    if n < 1 {
        return Err(CoreError::Input("need at least one sample".into()));
    }
    let d = process.dim();
    if map.dim() != d {
        return Err(CoreError::DimensionMismatch {
            expected: d,
            got: map.dim(),
        });
    }
    // phi^i and mu_{k-i} are fixed per term; draws interleave on one stream
    // per term index so the output is deterministic in (inputs, seed).
    let mut out = DMatrix::<f64>::zeros(n, d);
    let mut phi_pow = DMatrix::<f64>::identity(d, d);
    let mut buf = vec![0.0; d];
    for i in 0..=n_terms as i64 {
        let model = process.model_at(k - i);
        let mut rng = rng_from_seed(derive_seed(seed, &[2, i as u64]));
        for r in 0..n {
            measure::draw_one(&model, &mut rng, &mut buf);
            for row in 0..d {
                let mut s = 0.0;
                for col in 0..d {
                    s += phi_pow[(row, col)] * buf[col];
                }
                out[(r, row)] += s;
            }
        }
        phi_pow = map.matrix() * &phi_pow;
    }
    Ok(out)
}

/// Result of a permutation two-sample test.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TwoSampleResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n_a: usize,
    pub n_b: usize,
    pub permutations: usize,
    pub seed: u64,
}

/// Pair-sum accumulator for the 1-d sorted fast path: within- and
/// between-group sums of |v_i - v_j| in one O(N) scan over sorted values.
fn pair_sums_sorted(values: &[f64], labels: &[bool]) -> (f64, f64, f64) {
    let mut cnt_a = 0.0;
    let mut sum_a = 0.0;
    let mut cnt_b = 0.0;
    let mut sum_b = 0.0;
    let mut s_aa = 0.0;
    let mut s_bb = 0.0;
    let mut s_ab = 0.0;
    for (&v, &is_a) in values.iter().zip(labels) {
        if is_a {
            s_aa += v * cnt_a - sum_a;
            s_ab += v * cnt_b - sum_b;
            cnt_a += 1.0;
            sum_a += v;
        } else {
            s_bb += v * cnt_b - sum_b;
            s_ab += v * cnt_a - sum_a;
            cnt_b += 1.0;
            sum_b += v;
        }
    }
    (s_aa, s_bb, s_ab)
}

fn energy_statistic(s_aa: f64, s_bb: f64, s_ab: f64, n_a: usize, n_b: usize) -> f64 {
    let (na, nb) = (n_a as f64, n_b as f64);
    2.0 * s_ab / (na * nb) - 2.0 * s_aa / (na * na) - 2.0 * s_bb / (nb * nb)
}

/// Pooled-size ceiling for the distance-matrix path (d > 1); larger inputs
/// are deterministically thinned by stride.
const ENERGY_POOL_CAP: usize = 1500;

fn thin_rows(m: &DMatrix<f64>, cap: usize) -> DMatrix<f64> {
    let n = m.nrows();
    if n <= cap {
        return m.clone();
    }
    let idx: Vec<usize> = (0..cap).map(|i| i * n / cap).collect();
    DMatrix::from_fn(cap, m.ncols(), |r, c| m[(idx[r], c)])
}

/// Energy-distance two-sample test `2 E|X-Y| - E|X-X'| - E|Y-Y'|` with a
/// permutation p-value.  Statistic and p-value are deterministic in
/// `(a, b, permutations, seed)`.
pub fn energy_distance_test(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    permutations: usize,
    seed: u64,
) -> Result<TwoSampleResult> {
    if a.nrows() < 50 || b.nrows() < 50 {
        return Err(CoreError::Precondition(
            "energy test requires at least 50 samples per group".into(),
        ));
    }
    if permutations < 200 {
        return Err(CoreError::Precondition(
            "energy test requires at least 200 permutations".into(),
        ));
    }
    if a.ncols() != b.ncols() {
        return Err(CoreError::DimensionMismatch {
            expected: a.ncols(),
            got: b.ncols(),
        });
    }
    let d = a.ncols();
    let mut rng = rng_from_seed(derive_seed(seed, &[3]));

    if d == 1 {
        let n_a = a.nrows();
        let n_b = b.nrows();
        let mut pooled: Vec<(f64, bool)> = a
            .column(0)
            .iter()
            .map(|&v| (v, true))
            .chain(b.column(0).iter().map(|&v| (v, false)))
            .collect();
        pooled.sort_by(|x, y| x.0.total_cmp(&y.0));
        let values: Vec<f64> = pooled.iter().map(|p| p.0).collect();
        let labels: Vec<bool> = pooled.iter().map(|p| p.1).collect();
        let (s_aa, s_bb, s_ab) = pair_sums_sorted(&values, &labels);
        let observed = energy_statistic(s_aa, s_bb, s_ab, n_a, n_b);
        let mut exceed = 0usize;
        let mut perm_labels = labels.clone();
        for _ in 0..permutations {
            perm_labels.shuffle(&mut rng);
            let (saa, sbb, sab) = pair_sums_sorted(&values, &perm_labels);
            if energy_statistic(saa, sbb, sab, n_a, n_b) >= observed {
                exceed += 1;
            }
        }
        return Ok(TwoSampleResult {
            statistic: observed,
            p_value: (1 + exceed) as f64 / (1 + permutations) as f64,
            n_a,
            n_b,
            permutations,
            seed,
        });
    }

    // General d: precompute the pooled distance matrix (thinned when large).
    let cap_each = ENERGY_POOL_CAP / 2;
    let a = thin_rows(a, cap_each);
    let b = thin_rows(b, cap_each);
    let n_a = a.nrows();
    let n_b = b.nrows();
    let pool = n_a + n_b;
    let mut pts = DMatrix::<f64>::zeros(pool, d);
    pts.view_mut((0, 0), (n_a, d)).copy_from(&a);
    pts.view_mut((n_a, 0), (n_b, d)).copy_from(&b);
    let mut dist = DMatrix::<f64>::zeros(pool, pool);
    let mut total = 0.0;
    for i in 0..pool {
        for j in (i + 1)..pool {
            let mut s = 0.0;
            for c in 0..d {
                let diff = pts[(i, c)] - pts[(j, c)];
                s += diff * diff;
            }
            let v = s.sqrt();
            dist[(i, j)] = v;
            dist[(j, i)] = v;
            total += v;
        }
    }
    let stat_for = |idx_a: &[usize]| -> f64 {
        let mut in_a = vec![false; pool];
        for &i in idx_a {
            in_a[i] = true;
        }
        let mut s_aa = 0.0;
        for (ii, &i) in idx_a.iter().enumerate() {
            for &j in &idx_a[ii + 1..] {
                s_aa += dist[(i, j)];
            }
        }
        let mut s_bb = 0.0;
        let idx_b: Vec<usize> = (0..pool).filter(|i| !in_a[*i]).collect();
        for (ii, &i) in idx_b.iter().enumerate() {
            for &j in &idx_b[ii + 1..] {
                s_bb += dist[(i, j)];
            }
        }
        let s_ab = total - s_aa - s_bb;
        energy_statistic(s_aa, s_bb, s_ab, n_a, n_b)
    };
    let observed = stat_for(&(0..n_a).collect::<Vec<_>>());
    let mut indices: Vec<usize> = (0..pool).collect();
    let mut exceed = 0usize;
    for _ in 0..permutations {
        indices.shuffle(&mut rng);
        if stat_for(&indices[..n_a]) >= observed {
            exceed += 1;
        }
    }
    Ok(TwoSampleResult {
        statistic: observed,
        p_value: (1 + exceed) as f64 / (1 + permutations) as f64,
        n_a,
        n_b,
        permutations,
        seed,
    })
}

/// Sup over the grid of |ecf_a(t) - ecf_b(t)| where
/// `ecf(t) = n^{-1} sum_j exp(i t . x_j)`; a value in [0, 2].
pub fn ecf_distance(a: &DMatrix<f64>, b: &DMatrix<f64>, grid: &[DVector<f64>]) -> Result<f64> {
    if grid.is_empty() {
        return Err(CoreError::Input("empirical CF grid must be nonempty".into()));
    }
    if a.ncols() != b.ncols() {
        return Err(CoreError::DimensionMismatch {
            expected: a.ncols(),
            got: b.ncols(),
        });
    }
    let ecf = |pts: &DMatrix<f64>, t: &DVector<f64>| -> (f64, f64) {
        let n = pts.nrows();
        let mut re = 0.0;
        let mut im = 0.0;
        for r in 0..n {
            let phase = pts.row(r).transpose().dot(t);
            re += phase.cos();
            im += phase.sin();
        }
        (re / n as f64, im / n as f64)
    };
    let mut sup: f64 = 0.0;
    for t in grid {
        if t.len() != a.ncols() {
            return Err(CoreError::DimensionMismatch {
                expected: a.ncols(),
                got: t.len(),
            });
        }
        let (ra, ia) = ecf(a, t);
        let (rb, ib) = ecf(b, t);
        sup = sup.max(((ra - rb).powi(2) + (ia - ib).powi(2)).sqrt());
    }
    Ok(sup)
}

/// Write a sample cloud as CSV: header `x0,..,x{d-1}`, one row per draw, 17
/// significant digits.
pub fn write_samples_csv<W: Write>(points: &DMatrix<f64>, mut w: W) -> std::io::Result<()> {
    let d = points.ncols();
    let header: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
    writeln!(w, "{}", header.join(","))?;
    for r in 0..points.nrows() {
        let row: Vec<String> = (0..d).map(|c| format!("{:.16e}", points[(r, c)])).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}
