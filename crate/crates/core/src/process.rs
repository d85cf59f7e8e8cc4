//! Bi-infinite noise processes `(mu_k)_{k in Z}` represented as a finite
//! window plus an analytic tail rule, the Kolmogorov three-series path check,
//! the truncated logarithmic moment `M_p`, and the deterministic shift
//! recursion `y_k = x_k + phi(y_{k-1})`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::measure::{self, LogMomentMethod, LogMomentReport, NoiseModel};
use crate::rng::{derive_seed, rng_from_seed};
use crate::spectral::LinearMap;

/// Analytic rule defining `mu_k` outside the explicit window.
#[derive(Debug, Clone)]
pub enum TailRule {
    /// `mu_k = mu` for every k outside the window.
    Stationary(NoiseModel),
    /// `mu_k = psi^k(base)`; requires an invertible map for negative k.
    PushforwardPower { base: NoiseModel, map: LinearMap },
    /// The decaying two-part mixture family on R:
    /// `mu_0 = delta_0`, `mu_n = (1 - a^|n|) w_n + a^|n| w_n'` with `w_n`
    /// uniform on `[0, a^n]` (resp. `[-a^n, 0]`) and `w_n'` uniform on
    /// `[n, n+1]` (resp. `[-n-1, -n]`).
    DecayMixtureFamily { a: f64 },
    /// `mu_k = delta_0` outside the window.
    ZeroTail,
}

/// A bi-infinite noise process: explicit window plus analytic tail rule.
#[derive(Debug, Clone)]
pub struct NoiseProcess {
    dim: usize,
    window: BTreeMap<i64, NoiseModel>,
    tail_rule: TailRule,
}

impl NoiseProcess {
    pub fn new(
        dim: usize,
        window: BTreeMap<i64, NoiseModel>,
        tail_rule: TailRule,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(CoreError::Input("process dimension must be >= 1".into()));
        }
        for (k, m) in &window {
            if m.dim() != dim {
                return Err(CoreError::Input(format!(
                    "window model at k={k} has dimension {}, expected {dim}",
                    m.dim()
                )));
            }
        }
        match &tail_rule {
            TailRule::Stationary(m) => {
                if m.dim() != dim {
                    return Err(CoreError::DimensionMismatch {
                        expected: dim,
                        got: m.dim(),
                    });
                }
            }
            TailRule::PushforwardPower { base, map } => {
                if base.dim() != dim || map.dim() != dim {
                    return Err(CoreError::Input(
                        "pushforward-power tail dimensions disagree".into(),
                    ));
                }
                if !map.invertible() {
                    return Err(CoreError::SingularMap(
                        "pushforward-power tail requires an invertible map".into(),
                    ));
                }
            }
            TailRule::DecayMixtureFamily { a } => {
                if !(*a > 0.0 && *a < 1.0) {
                    return Err(CoreError::Input(format!(
                        "decay-mixture parameter must lie in (0, 1), got {a}"
                    )));
                }
                if dim != 1 {
                    return Err(CoreError::Input(
                        "decay-mixture family is one-dimensional".into(),
                    ));
                }
            }
            TailRule::ZeroTail => {}
        }
        Ok(Self {
            dim,
            window,
            tail_rule,
        })
    }

    pub fn stationary(model: NoiseModel) -> Result<Self> {
        let dim = model.dim();
        Self::new(dim, BTreeMap::new(), TailRule::Stationary(model))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn window(&self) -> &BTreeMap<i64, NoiseModel> {
        &self.window
    }

    pub fn tail_rule(&self) -> &TailRule {
        &self.tail_rule
    }

    /// The marginal law `mu_k`; total on Z.
    pub fn model_at(&self, k: i64) -> NoiseModel {
        if let Some(m) = self.window.get(&k) {
            return m.clone();
        }
        match &self.tail_rule {
            TailRule::Stationary(m) => m.clone(),
            TailRule::PushforwardPower { base, map } => {
                if k == 0 {
                    base.clone()
                } else {
                    let power = LinearMap::new(map.power(k).expect("validated invertible"))
                        .expect("powers of a valid map are valid");
                    measure::pushforward(base, &power).expect("dimensions validated")
                }
            }
            TailRule::DecayMixtureFamily { a } => decay_mixture_model(*a, k),
            TailRule::ZeroTail => NoiseModel::dirac_zero(self.dim),
        }
    }

    /// Whether every marginal equals the same law (no window overrides that
    /// differ from the stationary tail).
    pub fn stationary_model(&self) -> Option<&NoiseModel> {
        match &self.tail_rule {
            TailRule::Stationary(m) if self.window.is_empty() => Some(m),
            _ => None,
        }
    }
}

fn decay_mixture_model(a: f64, k: i64) -> NoiseModel {
    if k == 0 {
        return NoiseModel::dirac_zero(1);
    }
    let n = k.unsigned_abs() as i32;
    let an = a.powi(n);
    let (w, wp) = if k > 0 {
        (
            NoiseModel::uniform_box(DVector::from_element(1, 0.0), DVector::from_element(1, an))
                .expect("valid box"),
            NoiseModel::uniform_box(
                DVector::from_element(1, n as f64),
                DVector::from_element(1, n as f64 + 1.0),
            )
            .expect("valid box"),
        )
    } else {
        (
            NoiseModel::uniform_box(DVector::from_element(1, -an), DVector::from_element(1, 0.0))
                .expect("valid box"),
            NoiseModel::uniform_box(
                DVector::from_element(1, -(n as f64) - 1.0),
                DVector::from_element(1, -(n as f64)),
            )
            .expect("valid box"),
        )
    };
    NoiseModel::mixture(vec![1.0 - an, an], vec![w, wp]).expect("valid mixture")
}

/// One of the three partial sums with its tail certificate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeriesSum {
    pub partial: f64,
    /// Analytic bound (exact remainder where available) on the tail beyond
    /// the horizon; infinite when no certificate exists.
    pub tail: f64,
    pub certified: bool,
}

impl SeriesSum {
    pub fn total(&self) -> f64 {
        self.partial + self.tail
    }
}

/// Verdict of the independent-`l_p`-paths check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpVerdict {
    LpPathsYes,
    LpPathsNo,
    Undetermined,
}

/// Kolmogorov three-series report for `W_n = |X_n|^p` truncated at 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThreeSeriesReport {
    pub p: f64,
    pub s1: SeriesSum,
    pub s2: SeriesSum,
    pub s3: SeriesSum,
    pub verdict: LpVerdict,
    pub horizon: usize,
    pub evidence: String,
}

/// Truncated moments of `W = |X|^p`: `(P(W > 1), E[W 1{W<=1}], E[W^2 1{W<=1}])`.
fn truncated_p_moments(model: &NoiseModel, p: f64, seed: u64) -> (f64, f64, f64) {
    match model {
        NoiseModel::Dirac { point } => {
            let w = point.norm().powf(p);
            if w > 1.0 {
                (1.0, 0.0, 0.0)
            } else {
                (0.0, w, w * w)
            }
        }
        NoiseModel::UniformBox { lo, hi } if lo.len() == 1 => {
            uniform_truncated_moments(lo[0], hi[0], p)
        }
        NoiseModel::Mixture {
            weights,
            components,
        } => {
            let mut acc = (0.0, 0.0, 0.0);
            for (i, (w, c)) in weights.iter().zip(components).enumerate() {
                let (a, b, cc) = truncated_p_moments(c, p, derive_seed(seed, &[i as u64]));
                acc.0 += w * a;
                acc.1 += w * b;
                acc.2 += w * cc;
            }
            acc
        }
        NoiseModel::Shifted { base, offset } if base.dim() == 1 => {
            if let NoiseModel::UniformBox { lo, hi } = base.as_ref() {
                uniform_truncated_moments(lo[0] + offset[0], hi[0] + offset[0], p)
            } else {
                monte_carlo_truncated_moments(model, p, seed)
            }
        }
        _ => monte_carlo_truncated_moments(model, p, seed),
    }
}

/// Closed-form truncated moments for the 1-d uniform law on [a, b].
fn uniform_truncated_moments(a: f64, b: f64, p: f64) -> (f64, f64, f64) {
    if a == b {
        let w = a.abs().powf(p);
        return if w > 1.0 {
            (1.0, 0.0, 0.0)
        } else {
            (0.0, w, w * w)
        };
    }
    let len = b - a;
    // |t|^p > 1 iff |t| > 1.
    let inside_lo = a.max(-1.0);
    let inside_hi = b.min(1.0);
    let inside_len = (inside_hi - inside_lo).max(0.0);
    let p_out = (len - inside_len) / len;
    // integral of |t|^q over [x, y] with antiderivative sign(t)|t|^{q+1}/(q+1).
    let anti = |t: f64, q: f64| t.signum() * t.abs().powf(q + 1.0) / (q + 1.0);
    let (ey, ey2) = if inside_len > 0.0 {
        (
            (anti(inside_hi, p) - anti(inside_lo, p)) / len,
            (anti(inside_hi, 2.0 * p) - anti(inside_lo, 2.0 * p)) / len,
        )
    } else {
        (0.0, 0.0)
    };
    (p_out, ey, ey2)
}

fn monte_carlo_truncated_moments(model: &NoiseModel, p: f64, seed: u64) -> (f64, f64, f64) {
    let n = 20_000;
    let pts = measure::sample(model, n, seed).expect("sampling valid model");
    let mut t1 = 0.0;
    let mut ey = 0.0;
    let mut ey2 = 0.0;
    for r in 0..n {
        let w = pts.row(r).norm().powf(p);
        if w > 1.0 {
            t1 += 1.0;
        } else {
            ey += w;
            ey2 += w * w;
        }
    }
    let nf = n as f64;
    (t1 / nf, ey / nf, ey2 / nf)
}

const TERM_DECAY_TOL: f64 = 1e-10;

/// Three-series check for almost-sure `l_p` paths of the noise process.
///
/// The verdict is `yes` only when the analytic tail rule certifies all three
/// tails summable; identical positive stationary terms certify `no`; anything
/// else without a certificate stays undetermined.
pub fn lp_path_check(process: &NoiseProcess, p: f64, horizon: usize) -> Result<ThreeSeriesReport> {
    if !(1.0..f64::INFINITY).contains(&p) {
        return Err(CoreError::Input(format!("p must lie in [1, inf), got {p}")));
    }
    if horizon < 1 {
        return Err(CoreError::Input("horizon must be >= 1".into()));
    }
    let h = horizon as i64;
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    let mut s3 = 0.0;
    let mut term_trace = Vec::with_capacity(2 * horizon + 1);
    for n in -h..=h {
        let model = process.model_at(n);
        let (t1, ey, ey2) = truncated_p_moments(&model, p, derive_seed(7, &[n as u64]));
        let var = (ey2 - ey * ey).max(0.0);
        s1 += t1;
        s2 += ey;
        s3 += var;
        term_trace.push((n, t1 + ey));
    }

    // Tail certificates per tail rule.
    let (tail1, tail2, tail3, certified, mut evidence) = match process.tail_rule() {
        TailRule::ZeroTail => (0.0, 0.0, 0.0, true, "zero tail".to_string()),
        TailRule::Stationary(m) => {
            let (t1, ey, ey2) = truncated_p_moments(m, p, derive_seed(7, &[u64::MAX]));
            let var = (ey2 - ey * ey).max(0.0);
            if t1 + ey + var < 1e-14 {
                (0.0, 0.0, 0.0, true, "stationary tail vanishes".to_string())
            } else {
                return Ok(ThreeSeriesReport {
                    p,
                    s1: SeriesSum { partial: s1, tail: f64::INFINITY, certified: true },
                    s2: SeriesSum { partial: s2, tail: f64::INFINITY, certified: true },
                    s3: SeriesSum { partial: s3, tail: f64::INFINITY, certified: true },
                    verdict: LpVerdict::LpPathsNo,
                    horizon,
                    evidence: format!(
                        "stationary tail contributes the constant term {:.6e} infinitely often",
                        t1 + ey
                    ),
                });
            }
        }
        TailRule::DecayMixtureFamily { a } => {
            // Exact remainder for S1: sum_{|n| > H} a^|n|; bounds for S2, S3.
            let t1_tail = 2.0 * a.powi(h as i32 + 1) / (1.0 - a);
            let ap = a.powf(p);
            let t2_tail = 2.0 * ap.powi(h as i32 + 1) / (1.0 - ap);
            (
                t1_tail,
                t2_tail,
                t2_tail,
                true,
                format!("geometric decay-mixture tails with a = {a}"),
            )
        }
        TailRule::PushforwardPower { .. } => (
            f64::INFINITY,
            f64::INFINITY,
            f64::INFINITY,
            false,
            "pushforward-power tail carries no summability certificate".to_string(),
        ),
    };

    // Divergence evidence: per-|n| terms not decaying over the outer quarter.
    let quarter = (horizon / 4).max(1);
    let outer_mean: f64 = term_trace
        .iter()
        .filter(|(n, _)| n.unsigned_abs() as usize > horizon - quarter)
        .map(|(_, t)| *t)
        .sum::<f64>()
        / (2 * quarter) as f64;

    let verdict = if outer_mean > TERM_DECAY_TOL && !certified {
        evidence = format!(
            "series terms non-decaying: mean {outer_mean:.6e} over outermost {quarter} indices"
        );
        LpVerdict::LpPathsNo
    } else if certified {
        LpVerdict::LpPathsYes
    } else {
        LpVerdict::Undetermined
    };

    Ok(ThreeSeriesReport {
        p,
        s1: SeriesSum { partial: s1, tail: tail1, certified },
        s2: SeriesSum { partial: s2, tail: tail2, certified },
        s3: SeriesSum { partial: s3, tail: tail3, certified },
        verdict,
        horizon,
        evidence,
    })
}

/// One truncation level of the `M_p` estimate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MpLevel {
    pub n: usize,
    pub value: f64,
    pub std_error: f64,
}

/// Truncated logarithmic moment
/// `M_p = lim_n E[ log((sum_{|k|<=n} |V_k|^p)^{1/p} + 1) ]`
/// estimated over increasing truncation levels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MpReport {
    pub report: LogMomentReport,
    pub levels: Vec<MpLevel>,
    /// Last increment below three combined standard errors.
    pub stabilized: bool,
    /// Finite-window subadditive upper bound `sum_k E[log(|V_k| + 1)]`.
    pub subadditive_bound: f64,
}

/// Monte Carlo estimate of `M_p` with the level policy 5, 10, 20, 40, ...
pub fn mp_log_moment(
    process: &NoiseProcess,
    p: f64,
    n_levels: usize,
    samples: usize,
    seed: u64,
) -> Result<MpReport> {
    if n_levels < 2 {
        return Err(CoreError::Input("need at least 2 truncation levels".into()));
    }
    if samples < 1 {
        return Err(CoreError::Input("samples must be >= 1".into()));
    }
    let levels: Vec<usize> = (0..n_levels).map(|i| 5usize << i).collect();
    let max_level = *levels.last().unwrap();
    let check = lp_path_check(process, p, (2 * max_level).max(100))?;
    if check.verdict == LpVerdict::LpPathsNo {
        return Err(CoreError::Precondition(
            "process fails the l_p path check; M_p is undefined".into(),
        ));
    }

    let mut estimates = Vec::with_capacity(levels.len());
    for (li, &n) in levels.iter().enumerate() {
        let models: Vec<NoiseModel> =
            (-(n as i64)..=n as i64).map(|k| process.model_at(k)).collect();
        let mut rng = rng_from_seed(derive_seed(seed, &[li as u64]));
        let d = process.dim();
        let mut buf = vec![0.0; d];
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..samples {
            let mut acc = 0.0;
            for m in &models {
                measure::draw_one(m, &mut rng, &mut buf);
                let norm = buf.iter().map(|x| x * x).sum::<f64>().sqrt();
                acc += norm.powf(p);
            }
            let v = (acc.powf(1.0 / p) + 1.0).ln();
            sum += v;
            sum2 += v * v;
        }
        let mean = sum / samples as f64;
        let var = (sum2 / samples as f64 - mean * mean).max(0.0);
        estimates.push(MpLevel {
            n,
            value: mean,
            std_error: (var / samples as f64).sqrt(),
        });
    }

    let last = &estimates[estimates.len() - 1];
    let prev = &estimates[estimates.len() - 2];
    let combined_se = (last.std_error.powi(2) + prev.std_error.powi(2)).sqrt();
    let stabilized = (last.value - prev.value).abs() <= 3.0 * combined_se;

    let mut subadditive = 0.0;
    for k in -(max_level as i64)..=max_level as i64 {
        let r = measure::log_moment(
            &process.model_at(k),
            10_000,
            derive_seed(seed, &[0xadd, k as u64]),
        )?;
        subadditive += r.value;
    }

    Ok(MpReport {
        report: LogMomentReport {
            value: last.value,
            std_error: last.std_error,
            method: LogMomentMethod::MonteCarlo,
            n_used: samples,
            seed,
        },
        levels: estimates,
        stabilized,
        subadditive_bound: subadditive,
    })
}

/// Deterministic forcing sequence for the shift recursion.
#[derive(Debug, Clone)]
pub enum VectorSequence {
    Constant(DVector<f64>),
    Window {
        window: BTreeMap<i64, DVector<f64>>,
        outside: DVector<f64>,
    },
    /// `x_k = b^{-|k|} u`.
    SymmetricGeometric { b: f64, u: DVector<f64> },
}

impl VectorSequence {
    pub fn at(&self, k: i64) -> DVector<f64> {
        match self {
            VectorSequence::Constant(v) => v.clone(),
            VectorSequence::Window { window, outside } => {
                window.get(&k).cloned().unwrap_or_else(|| outside.clone())
            }
            VectorSequence::SymmetricGeometric { b, u } => {
                u * b.powi(-(k.unsigned_abs() as i32))
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            VectorSequence::Constant(v) => v.len(),
            VectorSequence::Window { outside, .. } => outside.len(),
            VectorSequence::SymmetricGeometric { u, .. } => u.len(),
        }
    }
}

/// A finite window of the deterministic recursion `y_k = x_k + phi(y_{k-1})`.
#[derive(Debug, Clone)]
pub struct ShiftSequence {
    pub window: BTreeMap<i64, DVector<f64>>,
    pub anchor: DVector<f64>,
}

impl ShiftSequence {
    pub fn at(&self, k: i64) -> Option<&DVector<f64>> {
        self.window.get(&k)
    }
}

/// Solve `y_k = x_k + phi(y_{k-1})` exactly on `[k_min, k_max]` with a free
/// anchor `y_0`; the backward direction uses `phi^{-1}`.
pub fn solve_shift_recursion(
    x: &VectorSequence,
    map: &LinearMap,
    anchor_y0: &DVector<f64>,
    k_min: i64,
    k_max: i64,
) -> Result<ShiftSequence> {
    if !map.invertible() {
        return Err(CoreError::SingularMap(
            "the shift recursion runs backward through phi^{-1}".into(),
        ));
    }
    if k_min > 0 || k_max < 0 || x.dim() != map.dim() || anchor_y0.len() != map.dim() {
        return Err(CoreError::Input(
            "window must contain 0 and dimensions must agree".into(),
        ));
    }
    let inv = map.inverse()?;
    let mut window = BTreeMap::new();
    window.insert(0, anchor_y0.clone());
    let mut y = anchor_y0.clone();
    for k in 1..=k_max {
        y = x.at(k) + map.matrix() * y;
        window.insert(k, y.clone());
    }
    let mut y = anchor_y0.clone();
    for k in (k_min..0).rev() {
        y = inv * (&y - x.at(k + 1));
        window.insert(k, y.clone());
    }
    Ok(ShiftSequence {
        window,
        anchor: anchor_y0.clone(),
    })
}

/// Verdict of the truncation-based `l_p` solvability test for
/// `y = x + tau(y)` with geometric forcing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpShiftVerdict {
    Solvable,
    Divergent,
    Undetermined,
}

#[derive(Debug, Clone)]
pub struct LpShiftReport {
    pub verdict: LpShiftVerdict,
    /// Norms of the partial sums `sum_{i<=N} phi^i x_{-i}` forced on `y_0`.
    pub witness: Vec<f64>,
    /// Certified finite `l_p` norm of the induced sequence, when solvable.
    pub lp_norm: Option<f64>,
}

const LP_SHIFT_CAP: f64 = 1e12;

/// Test whether `y = x + tau(y)` admits an `l_p` solution for the symmetric
/// geometric forcing `x_k = b^{-|k|} u` by computing the forced value
/// `y_0 = sum_{i>=0} phi^i(x_{-i})` under the `l_p` decay requirement.
pub fn lp_shift_solvable(
    b: f64,
    u: &DVector<f64>,
    map: &LinearMap,
    p: f64,
    horizon: usize,
) -> Result<LpShiftReport> {
    if !(b > 1.0) {
        return Err(CoreError::Input(format!("geometric base must exceed 1, got {b}")));
    }
    if horizon < 10 {
        return Err(CoreError::Input("horizon must be >= 10".into()));
    }
    if u.len() != map.dim() {
        return Err(CoreError::DimensionMismatch {
            expected: map.dim(),
            got: u.len(),
        });
    }
    if u.norm() == 0.0 {
        return Ok(LpShiftReport {
            verdict: LpShiftVerdict::Solvable,
            witness: vec![0.0],
            lp_norm: Some(0.0),
        });
    }
    let x = VectorSequence::SymmetricGeometric { b, u: u.clone() };

    let mut partial = DVector::<f64>::zeros(map.dim());
    let mut witness = Vec::new();
    let mut increments = Vec::new();
    let mut phi_pow = DMatrix::<f64>::identity(map.dim(), map.dim());
    for i in 0..=horizon as i64 {
        let term = &phi_pow * x.at(-i);
        increments.push(term.norm());
        partial += term;
        witness.push(partial.norm());
        if partial.norm() > LP_SHIFT_CAP {
            let growing = increments
                .windows(2)
                .rev()
                .take(5)
                .all(|w| w[1] >= w[0]);
            if growing {
                return Ok(LpShiftReport {
                    verdict: LpShiftVerdict::Divergent,
                    witness,
                    lp_norm: None,
                });
            }
            return Ok(LpShiftReport {
                verdict: LpShiftVerdict::Undetermined,
                witness,
                lp_norm: None,
            });
        }
        phi_pow = map.matrix() * phi_pow;
    }

    // Fitted ratio of the forcing increments.
    let ratio = {
        let tail: Vec<f64> = increments.iter().rev().take(10).cloned().collect();
        let mut rs = Vec::new();
        for w in tail.windows(2) {
            if w[0] > 0.0 && w[1] > 0.0 {
                rs.push(w[0] / w[1]);
            }
        }
        if rs.is_empty() {
            0.0
        } else {
            (rs.iter().map(|r| r.ln()).sum::<f64>() / rs.len() as f64).exp()
        }
    };
    if ratio >= 1.0 {
        return Ok(LpShiftReport {
            verdict: if *increments.last().unwrap() > increments[0] {
                LpShiftVerdict::Divergent
            } else {
                LpShiftVerdict::Undetermined
            },
            witness,
            lp_norm: None,
        });
    }

    // Converged: build the induced sequence y_k = sum_i phi^i x_{k-i} and
    // certify its l_p norm by edge decay.
    let h = horizon as i64;
    let mut norms = BTreeMap::new();
    for k in -h..=h {
        let mut y = DVector::<f64>::zeros(map.dim());
        let mut pw = DMatrix::<f64>::identity(map.dim(), map.dim());
        for i in 0..=horizon as i64 {
            y += &pw * x.at(k - i);
            pw = map.matrix() * pw;
            if pw.norm() * x.at(k - i).norm() > LP_SHIFT_CAP {
                break;
            }
        }
        norms.insert(k, y.norm());
    }
    let mut lp_sum = 0.0;
    for v in norms.values() {
        lp_sum += v.powf(p);
    }
    // Edge decay check on both ends.
    let edge_ok = |ks: Vec<i64>| -> bool {
        let vals: Vec<f64> = ks.iter().map(|k| norms[k]).collect();
        let mut decaying = true;
        for w in vals.windows(2) {
            if w[1] > 0.9999 * w[0] + 1e-300 && w[1] > 1e-12 {
                decaying = false;
            }
        }
        decaying || vals.iter().all(|&v| v < 1e-12)
    };
    let right: Vec<i64> = (h - 5..=h).collect();
    let left: Vec<i64> = (-h..=-h + 5).rev().collect();
    if edge_ok(right) && edge_ok(left) {
        Ok(LpShiftReport {
            verdict: LpShiftVerdict::Solvable,
            witness,
            lp_norm: Some(lp_sum.powf(1.0 / p)),
        })
    } else {
        Ok(LpShiftReport {
            verdict: LpShiftVerdict::Undetermined,
            witness,
            lp_norm: None,
        })
    }
}

/// Matrix of the weighted shift `tau(v)_i = phi(v_{i-1})` on a window of `len`
/// copies of R^d (block sub-diagonal = phi).
pub fn shift_operator_matrix(map: &LinearMap, len: usize) -> DMatrix<f64> {
    let d = map.dim();
    let mut t = DMatrix::<f64>::zeros(len * d, len * d);
    for b in 1..len {
        t.view_mut((b * d, (b - 1) * d), (d, d)).copy_from(map.matrix());
    }
    t
}
