//! Randomized invariants over the spectral and measure layers.

use decomp_core::measure::{self, NoiseModel};
use decomp_core::process::shift_operator_matrix;
use decomp_core::rng::derive_seed;
use decomp_core::spectral::{
    contraction_split, covariance_series, lyapunov_fixed_point, LinearMap, SeriesStatus,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn dense(d: usize, entries: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |i, j| entries[i * d + j])
}

/// Entries in [-1, 1], rescaled to the requested spectral radius; rejects
/// near-nilpotent draws.
fn stable_map(d: usize, entries: Vec<f64>, radius: f64) -> Option<LinearMap> {
    let m = dense(d, &entries);
    let lm = LinearMap::new(m.clone()).ok()?;
    let rho = lm.spectral_radius();
    if rho < 1e-3 {
        return None;
    }
    LinearMap::new(m * (radius / rho)).ok()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projector_is_idempotent_and_invariant(
        entries in prop::collection::vec(-1.0f64..1.0, 9),
        radius in 0.05f64..0.9,
    ) {
        let Some(map) = stable_map(3, entries, radius) else { return Ok(()); };
        let split = contraction_split(&map, 1e-6).unwrap();
        prop_assert_eq!(split.contraction_dim(), 3);
        let p = &split.projector;
        prop_assert!((p * p - p).norm() <= 1e-8);
        let id = DMatrix::identity(3, 3);
        prop_assert!(((&id - p) * map.matrix() * p).norm() <= 1e-8);
    }

    #[test]
    fn series_matches_lyapunov_on_stable_maps(
        entries in prop::collection::vec(-1.0f64..1.0, 4),
        g_entries in prop::collection::vec(-1.0f64..1.0, 4),
        radius in 0.05f64..0.85,
    ) {
        let Some(map) = stable_map(2, entries, radius) else { return Ok(()); };
        let g = dense(2, &g_entries);
        let a = &g * g.transpose() + DMatrix::identity(2, 2) * 0.05;
        let series = covariance_series(
            &map, |_| a.clone(), |_| DVector::zeros(2), 0, 5000, 1e-13, 1e12,
        ).unwrap();
        prop_assert_eq!(series.status, SeriesStatus::Converged);
        let lyap = lyapunov_fixed_point(&map, &a).unwrap();
        prop_assert!((series.covariance - lyap).norm() <= 1e-8);
    }

    #[test]
    fn sampling_is_seed_deterministic(
        lo in -3.0f64..0.0,
        width in 0.1f64..3.0,
        seed in any::<u64>(),
    ) {
        let model = NoiseModel::uniform_box(
            DVector::from_element(2, lo),
            DVector::from_element(2, lo + width),
        ).unwrap();
        let a = measure::sample(&model, 64, seed).unwrap();
        let b = measure::sample(&model, 64, seed).unwrap();
        prop_assert_eq!(&a, &b);
        let c = measure::sample(&model, 64, seed ^ 0x9e3779b97f4a7c15).unwrap();
        prop_assert_ne!(&a, &c);
    }

    #[test]
    fn model_serialization_round_trips(
        mean in prop::collection::vec(-5.0f64..5.0, 2),
        diag in prop::collection::vec(0.0f64..4.0, 2),
    ) {
        let model = NoiseModel::gaussian(
            DVector::from_column_slice(&mean),
            DMatrix::from_diagonal(&DVector::from_column_slice(&diag)),
        ).unwrap();
        let ser1 = serde_json::to_string(&model).unwrap();
        let back: NoiseModel = serde_json::from_str(&ser1).unwrap();
        let ser2 = serde_json::to_string(&back).unwrap();
        prop_assert_eq!(ser1, ser2);
    }

    #[test]
    fn block_shift_norm_is_the_map_norm(
        entries in prop::collection::vec(-2.0f64..2.0, 4),
        len in 2usize..8,
    ) {
        let m = dense(2, &entries);
        let phi_norm = m.clone().svd(false, false).singular_values[0];
        let Ok(map) = LinearMap::new(m) else { return Ok(()); };
        let t = shift_operator_matrix(&map, len);
        let t_norm = t.svd(false, false).singular_values[0];
        prop_assert!((t_norm - phi_norm).abs() <= 1e-8 * (1.0 + phi_norm));
    }

    #[test]
    fn derived_seeds_separate_label_paths(root in any::<u64>(), a in any::<u64>(), b in any::<u64>()) {
        prop_assume!(a != b);
        prop_assert_ne!(derive_seed(root, &[a]), derive_seed(root, &[b]));
        prop_assert_ne!(derive_seed(root, &[a, b]), derive_seed(root, &[b, a]));
    }
}
