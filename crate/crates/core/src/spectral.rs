//! Linear-algebra substrate: the drift map `phi`, its contraction subspace
//! `C(phi) = { v | phi^n v -> 0 }`, matrix powers and operator covariance
//! series.
//!
//! The contraction subspace is extracted through an ordered real Schur
//! decomposition: eigenvalues with modulus below `1 - tol` are swapped to the
//! leading position so the leading Schur vectors span the stable invariant
//! subspace.  Eigenvalues too close to the unit circle (but not exactly on it)
//! make the classification unreliable and are rejected.

use nalgebra::{DMatrix, DVector};

use crate::error::{CoreError, Result};

/// Width of the band around the unit circle in which an eigenvalue modulus is
/// treated as exactly one (and classified as non-contracting) rather than as a
/// spectral-gap violation.  Exact unit-modulus spectra (identity, rotations)
/// are classifiable; nearby moduli are not.
const UNIT_BAND: f64 = 64.0 * f64::EPSILON;

/// The drift map `phi` as a dense d x d real matrix with cached spectral data.
#[derive(Debug, Clone)]
pub struct LinearMap {
    dim: usize,
    matrix: DMatrix<f64>,
    spectral_radius: f64,
    invertible: bool,
    condition: f64,
    inverse: Option<DMatrix<f64>>,
}

impl LinearMap {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let (r, c) = matrix.shape();
        if r != c || r == 0 {
            return Err(CoreError::Input(format!(
                "map must be a nonempty square matrix, got {r}x{c}"
            )));
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(CoreError::Input("map entries must be finite".into()));
        }
        let spectral_radius = matrix
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        let svd = matrix.clone().svd(false, false);
        let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
        let smin = svd
            .singular_values
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        let invertible = smin > smax * 1e-12 && smin > 0.0;
        let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        let inverse = if invertible {
            matrix.clone().try_inverse()
        } else {
            None
        };
        Ok(Self {
            dim: r,
            matrix,
            spectral_radius,
            invertible: inverse.is_some(),
            condition,
            inverse,
        })
    }

    pub fn identity(dim: usize) -> Self {
        Self::new(DMatrix::identity(dim, dim)).expect("identity is a valid map")
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(CoreError::Input(format!(
                "matrix literal must be square, got {d} rows"
            )));
        }
        let m = DMatrix::from_fn(d, d, |i, j| rows[i][j]);
        Self::new(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn spectral_radius(&self) -> f64 {
        self.spectral_radius
    }

    pub fn invertible(&self) -> bool {
        self.invertible
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    pub fn inverse(&self) -> Result<&DMatrix<f64>> {
        self.inverse
            .as_ref()
            .ok_or_else(|| CoreError::SingularMap("inverse requested".into()))
    }

    /// Compose the map with another: `self . other` (apply `other` first).
    pub fn compose(&self, other: &LinearMap) -> Result<LinearMap> {
        if self.dim != other.dim {
            return Err(CoreError::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        LinearMap::new(&self.matrix * &other.matrix)
    }

    /// `phi^n` for any integer `n`; negative powers require invertibility.
    pub fn power(&self, n: i64) -> Result<DMatrix<f64>> {
        let base = if n >= 0 {
            self.matrix.clone()
        } else {
            self.inverse()?.clone()
        };
        let mut e = n.unsigned_abs();
        let mut acc = DMatrix::identity(self.dim, self.dim);
        let mut sq = base;
        while e > 0 {
            if e & 1 == 1 {
                acc = &acc * &sq;
            }
            e >>= 1;
            if e > 0 {
                sq = &sq * &sq;
            }
        }
        Ok(acc)
    }

    /// `phi^n x` for a vector `x`.
    pub fn apply_power_vector(&self, n: i64, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.dim {
            return Err(CoreError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(self.power(n)? * x)
    }

    /// `phi^n X (phi^n)^T` for a matrix `X` (covariance pushforward).
    pub fn apply_power_matrix(&self, n: i64, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.dim || x.ncols() != self.dim {
            return Err(CoreError::DimensionMismatch {
                expected: self.dim,
                got: x.nrows(),
            });
        }
        let p = self.power(n)?;
        Ok(&p * x * p.transpose())
    }

    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.apply_power_vector(1, x)
    }
}

/// phi-invariant splitting `R^d = C(phi) (+) U` with projector and contraction
/// rate.
#[derive(Debug, Clone)]
pub struct ContractionSplit {
    /// Orthonormal d x c basis of the contraction subspace `C(phi)`.
    pub contraction_basis: DMatrix<f64>,
    /// Orthonormal d x (d-c) basis of the phi-invariant complement `U`.
    pub complement_basis: DMatrix<f64>,
    /// Projector onto `C(phi)` along `U`.
    pub projector: DMatrix<f64>,
    /// Spectral radius of phi restricted to `C(phi)` (0 when c = 0).
    pub contraction_rate: f64,
    /// Constant `K` with `|phi^n v| <= K (rate + tol)^n |v|` on `C(phi)`.
    pub decay_constant: f64,
    /// Classification tolerance used at construction.
    pub tol: f64,
}

impl ContractionSplit {
    pub fn dim(&self) -> usize {
        self.projector.nrows()
    }

    pub fn contraction_dim(&self) -> usize {
        self.contraction_basis.ncols()
    }

    /// Complement component `(I - P) x` of a vector.
    pub fn complement_component(&self, x: &DVector<f64>) -> DVector<f64> {
        x - &self.projector * x
    }
}

fn block_sizes(t: &DMatrix<f64>) -> Vec<usize> {
    let d = t.nrows();
    let scale = t.norm().max(1.0);
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < d {
        if i + 1 < d && t[(i + 1, i)].abs() > 1e-14 * scale {
            blocks.push(2);
            i += 2;
        } else {
            blocks.push(1);
            i += 1;
        }
    }
    blocks
}

/// Eigenvalue moduli of a 1x1 or 2x2 quasi-triangular diagonal block.
fn block_moduli(t: &DMatrix<f64>, start: usize, size: usize) -> Vec<f64> {
    if size == 1 {
        return vec![t[(start, start)].abs()];
    }
    let a = t[(start, start)];
    let b = t[(start, start + 1)];
    let c = t[(start + 1, start)];
    let d = t[(start + 1, start + 1)];
    let tr = 0.5 * (a + d);
    let disc = 0.25 * (a - d) * (a - d) + b * c;
    if disc < 0.0 {
        // Complex conjugate pair: common modulus sqrt(det).
        let m = (a * d - b * c).abs().sqrt();
        vec![m, m]
    } else {
        let s = disc.sqrt();
        vec![(tr + s).abs(), (tr - s).abs()]
    }
}

/// Whether a block counts as contracting (all moduli < 1 - tol).  Errors when
/// any modulus is inside the unreliable band around the unit circle.
fn classify_block(moduli: &[f64], tol: f64) -> Result<bool> {
    let mut stable = true;
    for &m in moduli {
        if (m - 1.0).abs() <= UNIT_BAND {
            stable = false;
            continue;
        }
        if m >= 1.0 - tol && m <= 1.0 + tol {
            return Err(CoreError::SpectralGapViolation { modulus: m, tol });
        }
        if m >= 1.0 {
            stable = false;
        }
    }
    // A 2x2 block with one stable and one unstable real eigenvalue cannot be
    // classified as a unit; the caller splits such blocks beforehand.
    if moduli.len() == 2 {
        let s0 = moduli[0] < 1.0 - tol;
        let s1 = moduli[1] < 1.0 - tol;
        if s0 != s1 {
            return Err(CoreError::Inconsistent(
                "mixed-stability 2x2 Schur block survived splitting".into(),
            ));
        }
    }
    Ok(stable)
}

/// Solve the small Sylvester equation `A11 X - X A22 = -A12` via Kronecker
/// vectorization.  Sizes stay tiny (p, q <= 2 for swaps; c x (d-c) for the
/// complement subspace).
fn solve_sylvester(
    a11: &DMatrix<f64>,
    a22: &DMatrix<f64>,
    a12: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let p = a11.nrows();
    let q = a22.nrows();
    let n = p * q;
    let mut sys = DMatrix::<f64>::zeros(n, n);
    // vec is column-major: x[(i, j)] sits at j*p + i.
    for j in 0..q {
        for i in 0..p {
            let row = j * p + i;
            for l in 0..p {
                sys[(row, j * p + l)] += a11[(i, l)];
            }
            for l in 0..q {
                sys[(row, l * p + i)] -= a22[(l, j)];
            }
        }
    }
    let mut rhs = DVector::<f64>::zeros(n);
    for j in 0..q {
        for i in 0..p {
            rhs[j * p + i] = -a12[(i, j)];
        }
    }
    let sol = sys
        .lu()
        .solve(&rhs)
        .ok_or_else(|| CoreError::Inconsistent("singular Sylvester system".into()))?;
    let mut x = DMatrix::<f64>::zeros(p, q);
    for j in 0..q {
        for i in 0..p {
            x[(i, j)] = sol[j * p + i];
        }
    }
    Ok(x)
}

/// Full orthonormal basis whose leading `q` columns span the columns of `m`
/// (modified Gram-Schmidt; sizes are at most 4x2 here).
fn full_orthonormal(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let q = m.ncols();
    let mut cols: Vec<DVector<f64>> = (0..q).map(|j| m.column(j).into_owned()).collect();
    for j in 0..n {
        cols.push(DVector::from_fn(n, |i, _| if i == j { 1.0 } else { 0.0 }));
    }
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(n);
    for mut v in cols {
        for _pass in 0..2 {
            for b in &basis {
                let d = b.dot(&v);
                v -= b * d;
            }
        }
        let norm = v.norm();
        if norm > 1e-10 {
            basis.push(v / norm);
            if basis.len() == n {
                break;
            }
        }
    }
    DMatrix::from_fn(n, n, |i, j| basis[j][i])
}

/// Swap two adjacent diagonal blocks of the quasi-triangular factor `t`,
/// updating the orthogonal factor `q` accordingly (dtrexc-style).
fn swap_adjacent_blocks(
    t: &mut DMatrix<f64>,
    q: &mut DMatrix<f64>,
    start: usize,
    p: usize,
    s: usize,
) -> Result<()> {
    let n = p + s;
    let a11 = t.view((start, start), (p, p)).into_owned();
    let a12 = t.view((start, start + p), (p, s)).into_owned();
    let a22 = t.view((start + p, start + p), (s, s)).into_owned();
    let x = solve_sylvester(&a11, &a22, &a12)?;
    // Columns of [X; I] span the invariant subspace of the trailing block.
    let mut m = DMatrix::<f64>::zeros(n, s);
    for j in 0..s {
        for i in 0..p {
            m[(i, j)] = x[(i, j)];
        }
        m[(p + j, j)] = 1.0;
    }
    let z = full_orthonormal(&m);
    let d = t.nrows();
    // T <- Z^T T Z on the affected rows/columns, Q <- Q Z on columns.
    let rows = t.view((start, 0), (n, d)).into_owned();
    let rotated = z.transpose() * rows;
    t.view_mut((start, 0), (n, d)).copy_from(&rotated);
    let cols = t.view((0, start), (d, n)).into_owned();
    let rotated = cols * &z;
    t.view_mut((0, start), (d, n)).copy_from(&rotated);
    let qcols = q.view((0, start), (d, n)).into_owned();
    let rotated = qcols * &z;
    q.view_mut((0, start), (d, n)).copy_from(&rotated);
    // Zero the structurally-null subdiagonal part introduced by the rotation.
    for j in start..start + s {
        for i in (j + 1)..start + n {
            if i >= start + s {
                t[(i, j)] = 0.0;
            }
        }
    }
    Ok(())
}

/// Split a 2x2 diagonal block with two real eigenvalues into two 1x1 blocks.
fn split_real_block(t: &mut DMatrix<f64>, q: &mut DMatrix<f64>, start: usize) -> Result<bool> {
    let a = t[(start, start)];
    let b = t[(start, start + 1)];
    let c = t[(start + 1, start)];
    let dd = t[(start + 1, start + 1)];
    let disc = 0.25 * (a - dd) * (a - dd) + b * c;
    if disc < 0.0 {
        return Ok(false);
    }
    let tr = 0.5 * (a + dd);
    let lam = tr + disc.sqrt();
    // Eigenvector of [[a, b], [c, d]] for lam.
    let (w0, w1) = if b.abs() + (lam - a).abs() >= c.abs() + (lam - dd).abs() {
        (b, lam - a)
    } else {
        (lam - dd, c)
    };
    let norm = (w0 * w0 + w1 * w1).sqrt();
    if norm < 1e-300 {
        return Ok(false);
    }
    let (g0, g1) = (w0 / norm, w1 / norm);
    let z = DMatrix::from_row_slice(2, 2, &[g0, -g1, g1, g0]);
    let d = t.nrows();
    let rows = t.view((start, 0), (2, d)).into_owned();
    let rotated = z.transpose() * rows;
    t.view_mut((start, 0), (2, d)).copy_from(&rotated);
    let cols = t.view((0, start), (d, 2)).into_owned();
    let rotated = cols * &z;
    t.view_mut((0, start), (d, 2)).copy_from(&rotated);
    let qcols = q.view((0, start), (d, 2)).into_owned();
    let rotated = qcols * &z;
    q.view_mut((0, start), (d, 2)).copy_from(&rotated);
    t[(start + 1, start)] = 0.0;
    Ok(true)
}

/// Compute the phi-invariant splitting `R^d = C(phi) (+) U` where `C(phi)` is
/// the span of generalized eigenvectors with eigenvalue modulus `< 1 - tol`.
pub fn contraction_split(map: &LinearMap, tol: f64) -> Result<ContractionSplit> {
    if !(tol > 0.0 && tol < 0.5) {
        return Err(CoreError::Input(format!(
            "classification tolerance must lie in (0, 0.5), got {tol}"
        )));
    }
    let d = map.dim();
    let schur = map.matrix().clone().schur();
    let (mut q, mut t) = schur.unpack();

    // Break up any 2x2 block carrying two real eigenvalues so classification
    // works per eigenvalue.
    let mut i = 0;
    while i < d {
        let blocks = block_sizes(&t);
        let mut start = 0;
        let mut found = false;
        for &sz in &blocks {
            if start == i && sz == 2 {
                let moduli = block_moduli(&t, start, 2);
                let s0 = moduli[0] < 1.0 - tol;
                let s1 = moduli[1] < 1.0 - tol;
                if s0 != s1 {
                    split_real_block(&mut t, &mut q, start)?;
                    found = true;
                }
                break;
            }
            start += sz;
        }
        if !found {
            i += 1;
        }
    }

    // Bubble contracting blocks to the front.
    loop {
        let blocks = block_sizes(&t);
        let mut starts = Vec::with_capacity(blocks.len());
        let mut s = 0;
        for &b in &blocks {
            starts.push(s);
            s += b;
        }
        let stability: Vec<bool> = blocks
            .iter()
            .zip(&starts)
            .map(|(&sz, &st)| classify_block(&block_moduli(&t, st, sz), tol))
            .collect::<Result<_>>()?;
        let mut swapped = false;
        for w in 0..blocks.len().saturating_sub(1) {
            if !stability[w] && stability[w + 1] {
                swap_adjacent_blocks(&mut t, &mut q, starts[w], blocks[w], blocks[w + 1])?;
                swapped = true;
                break;
            }
        }
        if !swapped {
            break;
        }
    }

    let blocks = block_sizes(&t);
    let mut c = 0;
    let mut rate: f64 = 0.0;
    let mut start = 0;
    for &sz in &blocks {
        let moduli = block_moduli(&t, start, sz);
        if classify_block(&moduli, tol)? {
            c += sz;
            rate = moduli.iter().cloned().fold(rate, f64::max);
        }
        start += sz;
    }

    let contraction_basis = q.view((0, 0), (d, c)).into_owned();
    let (complement_raw, complement_basis) = if c == d {
        let empty = DMatrix::<f64>::zeros(d, 0);
        (empty.clone(), empty)
    } else if c == 0 {
        (q.clone(), q.clone())
    } else {
        // In Schur coordinates the complement is spanned by [X; I] with
        // T11 X - X T22 = -T12.
        let t11 = t.view((0, 0), (c, c)).into_owned();
        let t12 = t.view((0, c), (c, d - c)).into_owned();
        let t22 = t.view((c, c), (d - c, d - c)).into_owned();
        let x = solve_sylvester(&t11, &t22, &t12)?;
        let mut m = DMatrix::<f64>::zeros(d, d - c);
        for j in 0..d - c {
            for i in 0..c {
                m[(i, j)] = x[(i, j)];
            }
            m[(c + j, j)] = 1.0;
        }
        let raw = &q * &m;
        let ortho = full_orthonormal(&raw)
            .view((0, 0), (d, d - c))
            .into_owned();
        (raw, ortho)
    };

    let projector = if c == 0 {
        DMatrix::<f64>::zeros(d, d)
    } else if c == d {
        DMatrix::<f64>::identity(d, d)
    } else {
        let mut basis = DMatrix::<f64>::zeros(d, d);
        basis.view_mut((0, 0), (d, c)).copy_from(&contraction_basis);
        basis.view_mut((0, c), (d, d - c)).copy_from(&complement_raw);
        let inv = basis.clone().lu().try_inverse().ok_or_else(|| {
            CoreError::Inconsistent("contraction and complement bases are degenerate".into())
        })?;
        let mut sel = DMatrix::<f64>::zeros(d, d);
        for i in 0..c {
            sel[(i, i)] = 1.0;
        }
        &basis * sel * inv
    };

    // Decay constant over a finite power horizon.
    let mut decay_constant = 1.0f64;
    if c > 0 {
        let base = rate + tol;
        let mut powers = contraction_basis.clone();
        let mut scale = 1.0f64;
        for _n in 0..=200 {
            for j in 0..c {
                let ratio = powers.column(j).norm() / scale;
                decay_constant = decay_constant.max(ratio);
            }
            powers = map.matrix() * powers;
            scale *= base;
            if scale < 1e-300 {
                break;
            }
        }
    }

    Ok(ContractionSplit {
        contraction_basis,
        complement_basis,
        projector,
        contraction_rate: rate,
        decay_constant,
        tol,
    })
}

/// Convergence verdict of a partial-sum series.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesStatus {
    Converged,
    Diverged,
    Undetermined,
}

/// Result of summing the covariance/mean series
/// `B_k = sum_i phi^i A_{k-i} (phi^i)^T`, `b_k = sum_i phi^i m_{k-i}`.
#[derive(Debug, Clone)]
pub struct SeriesResult {
    pub covariance: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub status: SeriesStatus,
    pub terms_used: usize,
    pub tail_bound: f64,
    pub term_norm_trace: Vec<f64>,
    /// Human-readable reason for the verdict (reported as evidence).
    pub reason: String,
}

fn fit_geometric_ratio(norms: &[f64]) -> Option<f64> {
    let tail: Vec<f64> = norms
        .iter()
        .rev()
        .take(20)
        .cloned()
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    if tail.len() < 3 {
        return None;
    }
    let mut ratios = Vec::new();
    for w in tail.windows(2) {
        if w[0] > 0.0 && w[1] > 0.0 {
            ratios.push(w[1] / w[0]);
        }
    }
    if ratios.len() < 2 {
        return None;
    }
    let log_mean = ratios.iter().map(|r| r.ln()).sum::<f64>() / ratios.len() as f64;
    Some(log_mean.exp())
}

fn check_psd(a: &DMatrix<f64>, what: &str) -> Result<()> {
    let sym = 0.5 * (a + a.transpose());
    let min_eig = sym
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let scale = a.norm().max(1.0);
    if min_eig < -1e-8 * scale {
        return Err(CoreError::Input(format!(
            "{what} is not positive semidefinite (min eigenvalue {min_eig})"
        )));
    }
    Ok(())
}

/// Sum the operator series `B_k = sum_{i>=0} phi^i A_{k-i} (phi^i)^T` and
/// `b_k = sum_{i>=0} phi^i m_{k-i}` by partial sums over `horizon` terms.
///
/// The verdict follows a decidable horizon-bounded rule: a fitted geometric
/// tail below `tol` certifies convergence; non-decaying term norms over the
/// last quarter of the horizon, or a partial sum above `cap`, declare
/// divergence; everything else is undetermined.
pub fn covariance_series<FA, FM>(
    map: &LinearMap,
    cov_seq: FA,
    mean_seq: FM,
    k: i64,
    horizon: usize,
    tol: f64,
    cap: f64,
) -> Result<SeriesResult>
where
    FA: Fn(i64) -> DMatrix<f64>,
    FM: Fn(i64) -> DVector<f64>,
{
    if horizon < 1 {
        return Err(CoreError::Input("horizon must be >= 1".into()));
    }
    if !(cap > 0.0) {
        return Err(CoreError::Input("cap must be positive".into()));
    }
    let d = map.dim();
    let mut b_cov = DMatrix::<f64>::zeros(d, d);
    let mut b_mean = DVector::<f64>::zeros(d);
    let mut phi_pow = DMatrix::<f64>::identity(d, d);
    let mut trace = Vec::with_capacity(horizon);

    for i in 0..horizon {
        let a = cov_seq(k - i as i64);
        if a.nrows() != d || a.ncols() != d {
            return Err(CoreError::DimensionMismatch {
                expected: d,
                got: a.nrows(),
            });
        }
        if i == 0 {
            check_psd(&a, "series term covariance")?;
        }
        let m = mean_seq(k - i as i64);
        if m.len() != d {
            return Err(CoreError::DimensionMismatch {
                expected: d,
                got: m.len(),
            });
        }
        let term_cov = &phi_pow * a * phi_pow.transpose();
        let term_mean = &phi_pow * m;
        let term_norm = term_cov.norm() + term_mean.norm();
        if !term_norm.is_finite() || b_cov.norm() + b_mean.norm() > cap {
            return Ok(SeriesResult {
                covariance: b_cov,
                mean: b_mean,
                status: SeriesStatus::Diverged,
                terms_used: i,
                tail_bound: f64::INFINITY,
                term_norm_trace: trace,
                reason: "cap exceeded".into(),
            });
        }
        b_cov += term_cov;
        b_mean += term_mean;
        trace.push(term_norm);
        phi_pow = map.matrix() * phi_pow;
    }

    // Symmetrize against roundoff drift.
    b_cov = 0.5 * (&b_cov + b_cov.transpose());

    let last = *trace.last().unwrap_or(&0.0);
    let all_tiny = trace.iter().rev().take(20).all(|&x| x <= tol * 1e-3);
    if all_tiny {
        return Ok(SeriesResult {
            covariance: b_cov,
            mean: b_mean,
            status: SeriesStatus::Converged,
            terms_used: horizon,
            tail_bound: last,
            term_norm_trace: trace,
            reason: "terms vanished".into(),
        });
    }
    if let Some(r) = fit_geometric_ratio(&trace) {
        if r < 1.0 {
            let tail = last * r / (1.0 - r);
            if tail <= tol {
                return Ok(SeriesResult {
                    covariance: b_cov,
                    mean: b_mean,
                    status: SeriesStatus::Converged,
                    terms_used: horizon,
                    tail_bound: tail,
                    term_norm_trace: trace,
                    reason: format!("geometric tail ratio {r:.6}"),
                });
            }
        }
    }
    let quarter = (horizon / 4).max(1);
    let mean_tail: f64 =
        trace.iter().rev().take(quarter).sum::<f64>() / quarter as f64;
    if mean_tail > tol {
        return Ok(SeriesResult {
            covariance: b_cov,
            mean: b_mean,
            status: SeriesStatus::Diverged,
            terms_used: horizon,
            tail_bound: f64::INFINITY,
            term_norm_trace: trace,
            reason: format!(
                "series term norm non-decaying: mean {mean_tail:.6e} over last {quarter} terms"
            ),
        });
    }
    Ok(SeriesResult {
        covariance: b_cov,
        mean: b_mean,
        status: SeriesStatus::Undetermined,
        terms_used: horizon,
        tail_bound: f64::INFINITY,
        term_norm_trace: trace,
        reason: "no certificate within horizon".into(),
    })
}

/// Solve the stationary fixed point `B = A + phi B phi^T` as a d^2 x d^2
/// linear system (independent oracle for the stationary covariance series).
pub fn lyapunov_fixed_point(map: &LinearMap, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = map.dim();
    if a.nrows() != d || a.ncols() != d {
        return Err(CoreError::DimensionMismatch {
            expected: d,
            got: a.nrows(),
        });
    }
    check_psd(a, "Lyapunov right-hand side")?;

    if map.spectral_radius() < 1.0 {
        return lyapunov_dense(map.matrix(), a);
    }
    // Expanding directions are allowed only when A is supported on C(phi):
    // solve the restricted problem on the contraction subspace.
    let split = contraction_split(map, 1e-8)?;
    let c = split.contraction_dim();
    if c == 0 {
        if a.norm() == 0.0 {
            return Ok(DMatrix::zeros(d, d));
        }
        return Err(CoreError::NoStationaryFixedPoint(map.spectral_radius()));
    }
    let s = &split.contraction_basis;
    let leak = a - s * (s.transpose() * a * s) * s.transpose();
    if leak.norm() > 1e-8 * a.norm().max(1.0) {
        return Err(CoreError::NoStationaryFixedPoint(map.spectral_radius()));
    }
    let g = s.transpose() * map.matrix() * s;
    let a_r = s.transpose() * a * s;
    let b_r = lyapunov_dense(&g, &a_r)?;
    Ok(s * b_r * s.transpose())
}

fn lyapunov_dense(phi: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = phi.nrows();
    let n = d * d;
    let mut sys = DMatrix::<f64>::zeros(n, n);
    // (I - phi (x) phi) vec(B) = vec(A), column-major vec.
    for j in 0..d {
        for i in 0..d {
            let row = j * d + i;
            sys[(row, row)] += 1.0;
            for l in 0..d {
                for m in 0..d {
                    sys[(row, l * d + m)] -= phi[(i, m)] * phi[(j, l)];
                }
            }
        }
    }
    let mut rhs = DVector::<f64>::zeros(n);
    for j in 0..d {
        for i in 0..d {
            rhs[j * d + i] = a[(i, j)];
        }
    }
    let sol = sys
        .lu()
        .solve(&rhs)
        .ok_or_else(|| CoreError::NoStationaryFixedPoint(f64::NAN))?;
    let mut b = DMatrix::<f64>::zeros(d, d);
    for j in 0..d {
        for i in 0..d {
            b[(i, j)] = sol[j * d + i];
        }
    }
    let b = 0.5 * (&b + b.transpose());
    let residual = (&b - a - phi * &b * phi.transpose()).norm();
    if residual > 1e-10 * (1.0 + b.norm()) {
        return Err(CoreError::NoStationaryFixedPoint(f64::NAN));
    }
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn diag(entries: &[f64]) -> LinearMap {
        let d = entries.len();
        LinearMap::new(DMatrix::from_fn(d, d, |i, j| {
            if i == j {
                entries[i]
            } else {
                0.0
            }
        }))
        .unwrap()
    }

    #[test]
    fn linear_map_caches_spectral_radius() {
        let m = diag(&[0.5, 2.0]);
        assert_relative_eq!(m.spectral_radius(), 2.0, epsilon = 1e-12);
        assert!(m.invertible());
    }

    #[test]
    fn split_diagonal_case() {
        let m = diag(&[0.5, 2.0]);
        let s = contraction_split(&m, 1e-6).unwrap();
        assert_eq!(s.contraction_dim(), 1);
        assert_relative_eq!(s.contraction_rate, 0.5, epsilon = 1e-10);
        assert_relative_eq!(s.contraction_basis.column(0)[0].abs(), 1.0, epsilon = 1e-10);
        assert_relative_eq!(s.complement_basis.column(0)[1].abs(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn split_identity_has_trivial_contraction() {
        let m = LinearMap::identity(3);
        let s = contraction_split(&m, 1e-6).unwrap();
        assert_eq!(s.contraction_dim(), 0);
        assert_eq!(s.projector.norm(), 0.0);
    }

    #[test]
    fn split_rejects_near_unit_modulus() {
        let m = diag(&[0.5, 1.0 + 1e-9]);
        let err = contraction_split(&m, 1e-6).unwrap_err();
        match err {
            CoreError::SpectralGapViolation { modulus, .. } => {
                assert!((modulus - 1.0).abs() < 1e-6);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn split_ill_conditioned_upper_triangular() {
        // Brute-force oracle: powers of phi on the basis vectors up to n = 200.
        let m = LinearMap::from_rows(&[vec![0.5, 1000.0], vec![0.0, 0.25]]).unwrap();
        let s = contraction_split(&m, 1e-6).unwrap();
        assert_eq!(s.contraction_dim(), 2);
        assert_relative_eq!(s.contraction_rate, 0.5, epsilon = 1e-9);
        let base = s.contraction_rate + s.tol;
        for j in 0..2 {
            let mut v = s.contraction_basis.column(j).into_owned();
            let mut bound = s.decay_constant;
            for _n in 0..200 {
                assert!(v.norm() <= bound * 1.0000001, "decay bound violated");
                v = m.matrix() * v;
                bound *= base;
            }
        }
    }

    #[test]
    fn split_mixed_spectrum_invariance() {
        // Non-normal map with stable and unstable directions mixed by a
        // similarity transform.
        let p = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, 0.5, 1.0, 1.0, 0.0, 1.0, 3.0]);
        let lam = DMatrix::from_row_slice(3, 3, &[0.3, 0.0, 0.0, 0.0, 1.7, 0.0, 0.0, 0.0, -0.6]);
        let a = &p * lam * p.clone().try_inverse().unwrap();
        let m = LinearMap::new(a).unwrap();
        let s = contraction_split(&m, 1e-6).unwrap();
        assert_eq!(s.contraction_dim(), 2);
        // Projector idempotent, both subspaces invariant.
        let pp = &s.projector * &s.projector;
        assert!((pp - &s.projector).norm() < 1e-8);
        let phi = m.matrix();
        let lhs = phi * &s.projector;
        let rhs = &s.projector * phi * &s.projector;
        assert!((lhs.clone() - rhs).norm() < 1e-7);
        let q = DMatrix::identity(3, 3) - &s.projector;
        let lhs = &q * phi * &q;
        let rhs = &q * phi;
        assert!((lhs - rhs).norm() < 1e-7);
    }

    #[test]
    fn split_complex_pair() {
        // Rotation scaled by 0.8 plus an expanding real direction.
        let m = LinearMap::from_rows(&[
            vec![0.8 * 0.6, -0.8 * 0.8, 0.0],
            vec![0.8 * 0.8, 0.8 * 0.6, 0.0],
            vec![0.3, -0.2, 1.5],
        ])
        .unwrap();
        let s = contraction_split(&m, 1e-6).unwrap();
        assert_eq!(s.contraction_dim(), 2);
        assert_relative_eq!(s.contraction_rate, 0.8, epsilon = 1e-8);
    }

    #[test]
    fn series_geometric_scalar() {
        // Closed-form oracle: sum 0.25^i = 4/3.
        let m = diag(&[0.5]);
        let res = covariance_series(
            &m,
            |_| DMatrix::from_element(1, 1, 1.0),
            |_| DVector::zeros(1),
            0,
            200,
            1e-10,
            1e12,
        )
        .unwrap();
        assert_eq!(res.status, SeriesStatus::Converged);
        assert_relative_eq!(res.covariance[(0, 0)], 4.0 / 3.0, epsilon = 1e-9);
    }

    #[test]
    fn series_constant_terms_diverge() {
        // Uniform variances pushed by phi^j: term i is identically 1/12.
        let a = 0.9f64;
        let m = diag(&[a]);
        let res = covariance_series(
            &m,
            |j| DMatrix::from_element(1, 1, a.powi(2 * j as i32) / 12.0),
            |_| DVector::zeros(1),
            0,
            1000,
            1e-8,
            1e12,
        )
        .unwrap();
        assert_eq!(res.status, SeriesStatus::Diverged);
        let mid = res.term_norm_trace[10];
        assert_relative_eq!(mid, 1.0 / 12.0, epsilon = 1e-9);
    }

    #[test]
    fn series_expanding_map_with_decaying_terms_converges() {
        // A_j = 8^j with phi = 2: term i is 4^i 8^{-i} = 2^{-i}, sum 2.
        let m = diag(&[2.0]);
        let res = covariance_series(
            &m,
            |j| DMatrix::from_element(1, 1, 8.0f64.powi(j as i32)),
            |_| DVector::zeros(1),
            0,
            200,
            1e-10,
            1e12,
        )
        .unwrap();
        assert_eq!(res.status, SeriesStatus::Converged);
        assert_relative_eq!(res.covariance[(0, 0)], 2.0, epsilon = 1e-9);
    }

    #[test]
    fn series_recursion_residual_on_adjacent_k() {
        let m = LinearMap::from_rows(&[vec![0.5, 0.1], vec![0.0, 0.3]]).unwrap();
        let cov = |j: i64| {
            DMatrix::from_row_slice(2, 2, &[1.0 + 0.1 * (j as f64).sin(), 0.2, 0.2, 0.5])
        };
        let mean = |j: i64| DVector::from_vec(vec![(j as f64).cos(), 0.1]);
        let tol = 1e-10;
        let b0 = covariance_series(&m, cov, mean, 0, 300, tol, 1e12).unwrap();
        let bm1 = covariance_series(&m, cov, mean, -1, 300, tol, 1e12).unwrap();
        let resid = (&b0.covariance
            - cov(0)
            - m.matrix() * &bm1.covariance * m.matrix().transpose())
        .norm();
        assert!(resid <= 10.0 * tol, "residual {resid}");
        let mresid = (&b0.mean - mean(0) - m.matrix() * &bm1.mean).norm();
        assert!(mresid <= 10.0 * tol);
    }

    #[test]
    fn lyapunov_matches_geometric_oracle() {
        let m = diag(&[0.5]);
        let b = lyapunov_fixed_point(&m, &DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert_relative_eq!(b[(0, 0)], 4.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn lyapunov_zero_case() {
        let m = diag(&[0.5, 0.2]);
        let b = lyapunov_fixed_point(&m, &DMatrix::zeros(2, 2)).unwrap();
        assert_eq!(b.norm(), 0.0);
    }

    #[test]
    fn lyapunov_agrees_with_series() {
        let m = LinearMap::from_rows(&[vec![0.5, 0.1], vec![0.0, 0.3]]).unwrap();
        let a = DMatrix::identity(2, 2);
        let b = lyapunov_fixed_point(&m, &a).unwrap();
        let s = covariance_series(&m, |_| a.clone(), |_| DVector::zeros(2), 0, 500, 1e-10, 1e12)
            .unwrap();
        assert!((b - s.covariance).norm() < 1e-8);
    }

    #[test]
    fn lyapunov_rejects_expanding_support() {
        let m = diag(&[2.0]);
        let err = lyapunov_fixed_point(&m, &DMatrix::from_element(1, 1, 1.0)).unwrap_err();
        assert!(matches!(err, CoreError::NoStationaryFixedPoint(_)));
    }

    #[test]
    fn lyapunov_restricted_to_contraction_subspace() {
        // phi = diag(0.5, 2) with A supported on the stable axis.
        let m = diag(&[0.5, 2.0]);
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let b = lyapunov_fixed_point(&m, &a).unwrap();
        assert_relative_eq!(b[(0, 0)], 4.0 / 3.0, epsilon = 1e-10);
        assert!(b[(1, 1)].abs() < 1e-12);
    }

    #[test]
    fn power_identity_and_diagonal() {
        let m = diag(&[0.5, 2.0]);
        let x = DVector::from_vec(vec![1.0, 1.0]);
        let y = m.apply_power_vector(0, &x).unwrap();
        assert_eq!(y, x);
        let y = m.apply_power_vector(3, &x).unwrap();
        assert_relative_eq!(y[0], 0.125, epsilon = 1e-14);
        assert_relative_eq!(y[1], 8.0, epsilon = 1e-14);
    }

    #[test]
    fn power_round_trip() {
        let m = LinearMap::from_rows(&[
            vec![0.9, 0.2, 0.0, 0.1],
            vec![0.1, 1.1, 0.3, 0.0],
            vec![0.0, 0.2, 0.7, 0.2],
            vec![0.3, 0.0, 0.1, 1.2],
        ])
        .unwrap();
        let x = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        let y = m.apply_power_vector(5, &x).unwrap();
        let z = m.apply_power_vector(-5, &y).unwrap();
        assert!((z - &x).norm() < 1e-8 * x.norm());
    }

    #[test]
    fn negative_power_on_singular_map_errors() {
        let m = LinearMap::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert!(!m.invertible());
        assert!(m.power(-1).is_err());
    }

    #[test]
    fn power_composition_semantics() {
        let m = LinearMap::from_rows(&[vec![0.6, 0.2], vec![0.1, 0.8]]).unwrap();
        let x = DVector::from_vec(vec![1.0, 2.0]);
        let ab = m.apply_power_vector(7, &x).unwrap();
        let a_b = m
            .apply_power_vector(3, &m.apply_power_vector(4, &x).unwrap())
            .unwrap();
        assert!((ab - a_b).norm() < 1e-10);
    }
}
