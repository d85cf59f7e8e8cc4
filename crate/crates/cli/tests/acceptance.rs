//! End-to-end acceptance checks.  Each test prints a single pass/fail line;
//! run with `cargo test --test acceptance -- --nocapture` to see them all.

use std::panic::{catch_unwind, resume_unwind, UnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use approx::assert_abs_diff_eq;
use decomp_core::mc::energy_distance_test;
use decomp_core::measure::NoiseModel;
use decomp_core::process::{
    lp_path_check, lp_shift_solvable, shift_operator_matrix, LpShiftVerdict, LpVerdict,
    NoiseProcess, TailRule,
};
use decomp_core::rng::{derive_seed, rng_from_seed};
use decomp_core::solver::{
    analyze_existence, extremal_family, solve_fundamental, verify_solution, ExistenceStatus,
    MeasureRepr, SolverOpts,
};
use decomp_core::spectral::{
    contraction_split, covariance_series, lyapunov_fixed_point, LinearMap, SeriesStatus,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

fn criterion<F: FnOnce() + UnwindSafe>(n: usize, name: &str, body: F) {
    let outcome = catch_unwind(body);
    println!(
        "criterion {n:2} ({name}): {}",
        if outcome.is_ok() { "pass" } else { "FAIL" }
    );
    if let Err(e) = outcome {
        resume_unwind(e);
    }
}

fn scalar_map(a: f64) -> LinearMap {
    LinearMap::new(DMatrix::from_element(1, 1, a)).unwrap()
}

fn map_of(rows: &[&[f64]]) -> LinearMap {
    let d = rows.len();
    LinearMap::new(DMatrix::from_fn(d, d, |i, j| rows[i][j])).unwrap()
}

fn default_opts() -> SolverOpts {
    SolverOpts {
        horizon: 1000,
        tol: 1e-8,
        p: 2.0,
        samples: 5000,
        seed: 0,
        permutations: 500,
        force: false,
    }
}

/// A random matrix with the given spectral radius, via scaling.
fn random_stable(d: usize, radius: f64, rng: &mut impl Rng) -> LinearMap {
    loop {
        let m = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        let lm = match LinearMap::new(m.clone()) {
            Ok(l) => l,
            Err(_) => continue,
        };
        let rho = lm.spectral_radius();
        if rho < 1e-6 {
            continue;
        }
        if let Ok(scaled) = LinearMap::new(m * (radius / rho)) {
            return scaled;
        }
    }
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_decomp-solve"))
}

fn write_config(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

#[test]
fn acceptance_01_stationary_gaussian_fixed_point() {
    criterion(1, "series and Lyapunov solvers agree", || {
        let start = Instant::now();
        let map = scalar_map(0.5);
        let a = DMatrix::from_element(1, 1, 1.0);
        let series = covariance_series(
            &map,
            |_| a.clone(),
            |_| DVector::zeros(1),
            0,
            1000,
            1e-12,
            1e12,
        )
        .unwrap();
        assert_eq!(series.status, SeriesStatus::Converged);
        assert_abs_diff_eq!(series.covariance[(0, 0)], 4.0 / 3.0, epsilon = 1e-9);
        let lyap = lyapunov_fixed_point(&map, &a).unwrap();
        assert_abs_diff_eq!(lyap[(0, 0)], 4.0 / 3.0, epsilon = 1e-9);

        let mut rng = rng_from_seed(derive_seed(11, &[1]));
        for _ in 0..20 {
            let map = random_stable(2, rng.random_range(0.3..0.9), &mut rng);
            let g = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
            let a = &g * g.transpose() + DMatrix::identity(2, 2) * 0.1;
            let series = covariance_series(
                &map,
                |_| a.clone(),
                |_| DVector::zeros(2),
                0,
                5000,
                1e-13,
                1e12,
            )
            .unwrap();
            assert_eq!(series.status, SeriesStatus::Converged);
            let lyap = lyapunov_fixed_point(&map, &a).unwrap();
            assert!(
                (series.covariance - lyap).norm() <= 1e-8,
                "series and Lyapunov disagree"
            );
        }
        assert!(start.elapsed().as_secs_f64() < 1.0, "too slow");
    });
}

#[test]
fn acceptance_02_pushforward_power_non_existence() {
    criterion(2, "analyze certifies non-existence with evidence", || {
        let start = Instant::now();
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_config(
            dir.path(),
            "cfg.json",
            r#"{
              "dim": 1,
              "map": [[0.9]],
              "process": {
                "tail_rule": {
                  "kind": "pushforward_power",
                  "base": {"kind": "uniform_box", "lo": [0.0], "hi": [1.0]},
                  "map": [[0.9]]
                }
              },
              "horizon": 1000
            }"#,
        );
        let out = bin()
            .args(["analyze", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(dir.path())
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(3), "expected not_exists exit code");
        let report = std::fs::read_to_string(dir.path().join("analyze_report.json")).unwrap();
        assert!(report.contains("not_exists"));
        // The divergence evidence pins the constant per-term variance 1/12.
        assert!(report.contains("8.333333e-2"), "evidence lacks 1/12 term");
        assert!(report.contains("non-decaying"));
        assert!(start.elapsed().as_secs_f64() < 1.0, "too slow");
    });
}

#[test]
fn acceptance_03_expanding_map_summable_series() {
    criterion(3, "series converges despite an expanding map", || {
        let start = Instant::now();
        let map = scalar_map(2.0);
        let series = covariance_series(
            &map,
            |j| DMatrix::from_element(1, 1, 8.0f64.powi(j as i32)),
            |_| DVector::zeros(1),
            0,
            500,
            1e-12,
            1e12,
        )
        .unwrap();
        assert_eq!(series.status, SeriesStatus::Converged);
        assert_abs_diff_eq!(series.covariance[(0, 0)], 2.0, epsilon = 1e-9);
        assert!(start.elapsed().as_secs_f64() < 1.0, "too slow");
    });
}

#[test]
fn acceptance_04_stationary_gaussian_round_trip() {
    criterion(4, "one-step identity holds across the window", || {
        let map = map_of(&[&[0.5, 0.0], &[0.0, 2.0]]);
        let mean = DVector::from_column_slice(&[0.3, -0.7]);
        let cov = DMatrix::from_fn(2, 2, |i, j| if i == 0 && j == 0 { 0.5 } else { 0.0 });
        let model = NoiseModel::gaussian(mean.clone(), cov.clone()).unwrap();
        let process = NoiseProcess::stationary(model).unwrap();
        let opts = default_opts();

        let report = analyze_existence(&process, &map, &opts).unwrap();
        assert_eq!(report.status, ExistenceStatus::Exists);

        let family = solve_fundamental(&process, &map, -11, 10, &opts).unwrap();
        for k in -10..=10i64 {
            let (bp, cp) = match &family.window[&(k - 1)] {
                MeasureRepr::Gaussian { mean, cov } => (mean, cov),
                other => panic!("expected a Gaussian marginal, got {other:?}"),
            };
            let (bc, cc) = match &family.window[&k] {
                MeasureRepr::Gaussian { mean, cov } => (mean, cov),
                other => panic!("expected a Gaussian marginal, got {other:?}"),
            };
            let rc = (cc - &cov - map.matrix() * cp * map.matrix().transpose()).norm();
            let rm = (bc - &mean - map.matrix() * bp).norm();
            assert!(rc <= 1e-9, "covariance residual {rc} at k={k}");
            assert!(rm <= 1e-9, "mean residual {rm} at k={k}");
        }
    });
}

#[test]
fn acceptance_05_lp_shift_counterexample() {
    criterion(5, "shift equation splits into divergent/solvable", || {
        let start = Instant::now();
        let u = DVector::from_element(1, 1.0);

        let report = lp_shift_solvable(2.0, &u, &scalar_map(4.0), 2.0, 60).unwrap();
        assert_eq!(report.verdict, LpShiftVerdict::Divergent);
        // Forced partial sums are sum_{i<=N} (4/2)^i = 2^{N+1} - 1 exactly.
        for (i, w) in report.witness.iter().enumerate() {
            assert_eq!(*w, 2f64.powi(i as i32 + 1) - 1.0, "witness term {i}");
        }

        let report = lp_shift_solvable(2.0, &u, &scalar_map(0.25), 2.0, 60).unwrap();
        assert_eq!(report.verdict, LpShiftVerdict::Solvable);
        assert!(report.lp_norm.unwrap().is_finite());
        assert!(start.elapsed().as_secs_f64() < 1.0, "too slow");
    });
}

#[test]
fn acceptance_06_three_series_decay_mixture() {
    criterion(6, "three-series certificate with exact tail", || {
        let start = Instant::now();
        let process =
            NoiseProcess::new(1, Default::default(), TailRule::DecayMixtureFamily { a: 0.5 })
                .unwrap();
        let report = lp_path_check(&process, 2.0, 60).unwrap();
        assert_eq!(report.verdict, LpVerdict::LpPathsYes);
        assert!(report.s1.certified, "s1 tail not certified");
        assert_abs_diff_eq!(report.s1.total(), 2.0, epsilon = 1e-9);
        assert!(start.elapsed().as_secs_f64() < 1.0, "too slow");
    });
}

#[test]
fn acceptance_07_monte_carlo_fundamental() {
    criterion(7, "empirical moments and convolution identity", || {
        let start = Instant::now();
        let model = NoiseModel::uniform_box(
            DVector::from_element(1, 0.0),
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        let process = NoiseProcess::stationary(model).unwrap();
        let map = scalar_map(0.5);
        let mut opts = default_opts();
        opts.samples = 100_000;
        opts.seed = 7;

        let family = solve_fundamental(&process, &map, 0, 2, &opts).unwrap();
        let cloud = match &family.window[&0] {
            MeasureRepr::Empirical { samples, .. } => samples,
            other => panic!("expected an empirical marginal, got {other:?}"),
        };
        let n = cloud.nrows() as f64;
        let mean = cloud.column(0).sum() / n;
        let var = cloud.column(0).iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let m4 = cloud.column(0).iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
        let se_mean = (var / n).sqrt();
        let se_var = ((m4 - var * var) / n).sqrt();
        assert!((mean - 1.0).abs() <= 3.0 * se_mean, "mean {mean} off");
        assert!((var - 1.0 / 9.0).abs() <= 3.0 * se_var, "variance {var} off");

        let verification = verify_solution(&family, &process, &map, &opts).unwrap();
        assert!(verification.pass, "verification failed: {verification:?}");
        assert!(verification.min_p_value > 0.01);
        assert!(start.elapsed().as_secs_f64() < 30.0, "too slow");
    });
}

#[test]
fn acceptance_08_extremal_family_shifts() {
    criterion(8, "anchor shifts move means by map powers only", || {
        let start = Instant::now();
        let map = map_of(&[&[0.5, 0.2], &[0.0, 0.4]]);
        let cov = DMatrix::from_fn(2, 2, |i, j| [[1.0, 0.3], [0.3, 0.5]][i][j]);
        let model = NoiseModel::gaussian(DVector::zeros(2), cov).unwrap();
        let process = NoiseProcess::stationary(model).unwrap();
        let opts = default_opts();

        let base = solve_fundamental(&process, &map, -10, 10, &opts).unwrap();
        let e1 = DVector::from_column_slice(&[1.0, 0.0]);
        let shifted = extremal_family(&base, &e1, &map).unwrap();

        for k in -10..=10i64 {
            let (b0, c0) = match &base.window[&k] {
                MeasureRepr::Gaussian { mean, cov } => (mean, cov),
                other => panic!("expected a Gaussian marginal, got {other:?}"),
            };
            let (b1, c1) = match &shifted.window[&k] {
                MeasureRepr::Gaussian { mean, cov } => (mean, cov),
                other => panic!("expected a Gaussian marginal, got {other:?}"),
            };
            assert_eq!(c0, c1, "covariances must be identical at k={k}");
            let expected = map.apply_power_vector(k, &e1).unwrap();
            assert!(
                ((b1 - b0) - expected).norm() <= 1e-10,
                "mean gap at k={k} is not phi^k e1"
            );
        }
        assert!(verify_solution(&base, &process, &map, &opts).unwrap().pass);
        assert!(
            verify_solution(&shifted, &process, &map, &opts)
                .unwrap()
                .pass
        );
        assert!(start.elapsed().as_secs_f64() < 1.0, "too slow");
    });
}

#[test]
fn acceptance_09_contraction_split_suite() {
    criterion(9, "planted-spectrum contraction splits", || {
        let start = Instant::now();
        let mut rng = rng_from_seed(derive_seed(99, &[9]));
        for case in 0..100 {
            // Planted spectrum: a contracting block and a non-contracting
            // block (unit rotations and expansions), mixed by an orthogonal
            // similarity.
            let c_dim = rng.random_range(1..=2usize);
            let u_dim = rng.random_range(1..=2usize);
            let d = c_dim + u_dim;
            let mut m = DMatrix::zeros(d, d);
            for i in 0..c_dim {
                m[(i, i)] = rng.random_range(-0.85..0.85);
            }
            for i in 0..u_dim {
                m[(c_dim + i, c_dim + i)] = if rng.random_bool(0.5) {
                    rng.random_range(1.1..1.6)
                } else {
                    -rng.random_range(1.1..1.6)
                };
            }
            let g = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0f64..1.0));
            let q = g.qr().q();
            let m = &q * m * q.transpose();
            let map = LinearMap::new(m).unwrap();

            let split = contraction_split(&map, 1e-6).unwrap();
            assert_eq!(split.contraction_dim(), c_dim, "case {case}: wrong split");
            let p = &split.projector;
            assert!((p * p - p).norm() <= 1e-8, "case {case}: not idempotent");
            let id = DMatrix::identity(d, d);
            assert!(
                ((&id - p) * map.matrix() * p).norm() <= 1e-8,
                "case {case}: C(phi) not invariant"
            );
            let pow = map.power(30).unwrap();
            for j in 0..c_dim {
                let v: DVector<f64> = split.contraction_basis.column(j).into();
                let bound = split.decay_constant
                    * (split.contraction_rate + split.tol).powi(30);
                assert!(
                    (&pow * &v).norm() <= bound + 1e-10,
                    "case {case}: no geometric decay on C(phi)"
                );
            }
            for j in 0..u_dim {
                let u: DVector<f64> = split.complement_basis.column(j).into();
                assert!(
                    (&pow * &u).norm() >= 0.5,
                    "case {case}: complement direction decayed"
                );
            }
        }
        assert!(start.elapsed().as_secs_f64() < 5.0, "too slow");
    });
}

#[test]
fn acceptance_10_block_shift_operator_norm() {
    criterion(10, "finite-window shift operator norm", || {
        let start = Instant::now();
        let mut rng = rng_from_seed(derive_seed(10, &[10]));
        for _ in 0..5 {
            let m = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-2.0f64..2.0));
            let phi_norm = m.clone().svd(false, false).singular_values[0];
            let map = LinearMap::new(m).unwrap();
            for len in [2usize, 5, 10] {
                let t = shift_operator_matrix(&map, len);
                let t_norm = t.svd(false, false).singular_values[0];
                assert_abs_diff_eq!(t_norm, phi_norm, epsilon = 1e-8);
            }
        }
        assert!(start.elapsed().as_secs_f64() < 1.0, "too slow");
    });
}

#[test]
fn acceptance_11_repeat_runs_byte_identical() {
    criterion(11, "solve/simulate reruns are byte-identical", || {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_config(
            dir.path(),
            "cfg.json",
            r#"{
              "dim": 1,
              "map": [[0.5]],
              "process": {
                "tail_rule": {
                  "kind": "stationary",
                  "model": {"kind": "uniform_box", "lo": [0.0], "hi": [1.0]}
                }
              },
              "k_min": -2,
              "k_max": 2,
              "samples": 2000,
              "seed": 42
            }"#,
        );
        let run = |cmd: &str, out: &str| {
            let out_dir = dir.path().join(out);
            let status = bin()
                .args([cmd, "--config"])
                .arg(&cfg)
                .arg("--out")
                .arg(&out_dir)
                .status()
                .unwrap();
            assert!(status.success(), "{cmd} run failed");
            out_dir
        };
        let a = run("solve", "a");
        let b = run("solve", "b");
        for k in -2..=2i64 {
            let name = format!("samples_k{k}.csv");
            let fa = std::fs::read(a.join(&name)).unwrap();
            let fb = std::fs::read(b.join(&name)).unwrap();
            assert_eq!(fa, fb, "{name} differs between reruns");
        }
        let c = run("simulate", "c");
        let d = run("simulate", "d");
        let fc = std::fs::read(c.join("simulated_k2.csv")).unwrap();
        let fd = std::fs::read(d.join("simulated_k2.csv")).unwrap();
        assert_eq!(fc, fd, "simulated cloud differs between reruns");
    });
}

/// The energy test itself must stay calibrated: same-law groups rarely reject.
#[test]
fn energy_test_calibration_spot_check() {
    let model = NoiseModel::uniform_box(
        DVector::from_element(1, 0.0),
        DVector::from_element(1, 1.0),
    )
    .unwrap();
    let mut rejections = 0;
    for rep in 0..20u64 {
        let a = decomp_core::measure::sample(&model, 500, derive_seed(5, &[rep, 0])).unwrap();
        let b = decomp_core::measure::sample(&model, 500, derive_seed(5, &[rep, 1])).unwrap();
        let t = energy_distance_test(&a, &b, 200, derive_seed(5, &[rep, 2])).unwrap();
        if t.p_value <= 0.05 {
            rejections += 1;
        }
    }
    assert!(rejections <= 4, "energy test over-rejects under the null");
}
