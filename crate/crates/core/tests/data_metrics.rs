//! Dataset moment checks and metric-axiom tests, including the exhaustive
//! assignment oracle for the exact Wasserstein distance.

use entbridge::data_metrics::{
    empirical_cov, make_batch, msd, wasserstein2, DataError, DatasetSpec, W2_MAX_POINTS,
};
use entbridge::numerics::{sample_std_normal, Batch, RngState};
use ndarray::Array2;
use proptest::prelude::*;

fn batch_from(rows: usize, dim: usize, vals: &[f64]) -> Batch<f64> {
    Batch::new(Array2::from_shape_vec((rows, dim), vals.to_vec()).unwrap()).unwrap()
}

fn column_moments(b: &Batch<f64>, c: usize) -> (f64, f64) {
    let n = b.n() as f64;
    let mean = b.array().column(c).iter().sum::<f64>() / n;
    let var = b
        .array()
        .column(c)
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / (n - 1.0);
    (mean, var)
}

// ------------------------------------------------------------------ datasets

#[test]
fn gaussian_moments() {
    let spec = DatasetSpec::Gaussian { dim: 50, sigma: 1.0 };
    let mut rng = RngState::new(11, 0);
    let b = make_batch(&spec, 100_000, &mut rng).unwrap().into_marginal().unwrap();
    for c in 0..50 {
        let (mean, var) = column_moments(&b, c);
        assert!(mean.abs() < 0.02, "coordinate {c} mean {mean}");
        assert!((var - 1.0).abs() < 0.03, "coordinate {c} variance {var}");
    }
}

#[test]
fn gaussian_scale_applies() {
    let spec = DatasetSpec::Gaussian { dim: 1, sigma: 2.0 };
    let mut rng = RngState::new(12, 0);
    let b = make_batch(&spec, 50_000, &mut rng).unwrap().into_marginal().unwrap();
    let (_, var) = column_moments(&b, 0);
    assert!((var - 4.0).abs() < 0.15, "{var}");
}

#[test]
fn antithetic_pairs_cancel_exactly() {
    let spec = DatasetSpec::<f64>::AntitheticGaussian { dim: 5 };
    let mut rng = RngState::new(13, 0);
    let c = make_batch(&spec, 256, &mut rng).unwrap().into_coupled().unwrap();
    for (a, b) in c.x0().array().iter().zip(c.x1().array().iter()) {
        assert_eq!(a + b, 0.0);
    }
}

#[test]
fn eight_gaussians_stay_near_their_ring_centers() {
    let spec = DatasetSpec::EightGaussians { radius: 4.0, component_sd: 0.3 };
    let mut rng = RngState::new(14, 0);
    let b = make_batch(&spec, 2000, &mut rng).unwrap().into_marginal().unwrap();
    let centers: Vec<(f64, f64)> = (0..8)
        .map(|k| {
            let a = std::f64::consts::PI / 4.0 * k as f64;
            (4.0 * a.cos(), 4.0 * a.sin())
        })
        .collect();
    let mut hits = [0usize; 8];
    for i in 0..b.n() {
        let (x, y) = (b.array()[[i, 0]], b.array()[[i, 1]]);
        let (best, d) = centers
            .iter()
            .enumerate()
            .map(|(k, (cx, cy))| (k, ((x - cx).powi(2) + (y - cy).powi(2)).sqrt()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        assert!(d <= 4.0 * 0.3, "sample {i} at distance {d} from nearest center");
        hits[best] += 1;
    }
    assert!(hits.iter().all(|&h| h > 0), "a mixture component was never drawn: {hits:?}");
}

#[test]
fn planar_families_are_standardized() {
    for name in ["moons", "scurve"] {
        let spec = DatasetSpec::<f64>::from_name(name, 2).unwrap();
        let mut rng = RngState::new(15, 0);
        let b = make_batch(&spec, 100_000, &mut rng).unwrap().into_marginal().unwrap();
        for c in 0..2 {
            let (mean, var) = column_moments(&b, c);
            assert!(mean.abs() < 0.02, "{name} coordinate {c} mean {mean}");
            assert!((0.9..=1.1).contains(&var), "{name} coordinate {c} variance {var}");
        }
    }
}

#[test]
fn unknown_name_is_rejected() {
    let e = DatasetSpec::<f64>::from_name("spiral", 2).unwrap_err();
    assert_eq!(e.to_string(), "unknown dataset name: spiral");
}

#[test]
fn invalid_parameters_are_rejected() {
    assert!(matches!(
        DatasetSpec::Gaussian { dim: 0, sigma: 1.0 }.validate(),
        Err(DataError::InvalidSpec(_))
    ));
    assert!(matches!(
        DatasetSpec::Gaussian { dim: 3, sigma: -1.0 }.validate(),
        Err(DataError::InvalidSpec(_))
    ));
    assert!(matches!(
        DatasetSpec::Moons { noise: -0.05 }.validate(),
        Err(DataError::InvalidSpec(_))
    ));
}

#[test]
fn batch_kind_mismatches_are_reported() {
    let mut rng = RngState::new(16, 0);
    let m = make_batch(&DatasetSpec::Gaussian { dim: 2, sigma: 1.0 }, 4, &mut rng).unwrap();
    assert!(m.into_coupled().is_err());
    let c = make_batch(&DatasetSpec::<f64>::AntitheticGaussian { dim: 2 }, 4, &mut rng).unwrap();
    assert!(c.into_marginal().is_err());
}

// ------------------------------------------------------------------- metrics

#[test]
fn covariance_coefficient_examples() {
    let mut rng = RngState::new(17, 0);
    let a = sample_std_normal::<f64>(&mut rng, 10_000, 100);
    let self_cov = empirical_cov(&a, &a).unwrap();
    assert!((self_cov - 1.0).abs() < 0.01, "{self_cov}");
    let neg = Batch::new(a.array().mapv(|v| -v)).unwrap();
    let anti = empirical_cov(&a, &neg).unwrap();
    assert_eq!(anti, -self_cov);
    let b = sample_std_normal::<f64>(&mut rng, 10_000, 100);
    let indep = empirical_cov(&a, &b).unwrap();
    assert!(indep.abs() < 4.0 / (1e6f64).sqrt(), "{indep}");
}

#[test]
fn metric_shape_mismatches_error() {
    let a = batch_from(2, 2, &[0.0; 4]);
    let b = batch_from(2, 3, &[0.0; 6]);
    assert!(matches!(empirical_cov(&a, &b), Err(DataError::ShapeMismatch(_))));
    assert!(matches!(wasserstein2(&a, &b), Err(DataError::ShapeMismatch(_))));
    assert!(matches!(msd(&a, &b), Err(DataError::ShapeMismatch(_))));
}

#[test]
fn wasserstein_hand_values() {
    let mut rng = RngState::new(18, 0);
    let a = sample_std_normal::<f64>(&mut rng, 32, 3);
    assert_eq!(wasserstein2(&a, &a).unwrap(), 0.0);
    let p = batch_from(2, 1, &[0.0, 1.0]);
    let q = batch_from(2, 1, &[1.0, 2.0]);
    let w = wasserstein2(&p, &q).unwrap();
    assert!((w - 1.0).abs() < 1e-12, "{w}");
}

#[test]
fn wasserstein_rejects_oversized_clouds() {
    let n = W2_MAX_POINTS + 1;
    let a = Batch::new(Array2::from_elem((n, 1), 0.0)).unwrap();
    let e = wasserstein2(&a, &a).unwrap_err();
    assert!(matches!(e, DataError::CloudTooLarge { .. }));
    assert!(e.to_string().contains("1025"));
}

/// Minimum mean assignment cost by enumerating all permutations.
fn brute_force_w2(a: &Batch<f64>, b: &Batch<f64>) -> f64 {
    fn permute(free: &mut Vec<usize>, chosen: &mut Vec<usize>, a: &Batch<f64>, b: &Batch<f64>, best: &mut f64) {
        if free.is_empty() {
            let cost: f64 = chosen
                .iter()
                .enumerate()
                .map(|(i, &j)| {
                    (0..a.dim())
                        .map(|c| (a.array()[[i, c]] - b.array()[[j, c]]).powi(2))
                        .sum::<f64>()
                })
                .sum();
            *best = best.min(cost);
            return;
        }
        for k in 0..free.len() {
            let j = free.swap_remove(k);
            chosen.push(j);
            permute(free, chosen, a, b, best);
            chosen.pop();
            free.push(j);
            let last = free.len() - 1;
            free.swap(k, last);
        }
    }
    let mut best = f64::INFINITY;
    let mut free: Vec<usize> = (0..a.n()).collect();
    permute(&mut free, &mut Vec::new(), a, b, &mut best);
    (best / a.n() as f64).sqrt()
}

#[test]
fn wasserstein_matches_the_exhaustive_oracle() {
    let mut rng = RngState::new(19, 0);
    for n in [2usize, 3, 5, 8] {
        for _ in 0..3 {
            let a = sample_std_normal::<f64>(&mut rng, n, 2);
            let b = sample_std_normal::<f64>(&mut rng, n, 2);
            let fast = wasserstein2(&a, &b).unwrap();
            let slow = brute_force_w2(&a, &b);
            assert!((fast - slow).abs() < 1e-12, "n={n}: {fast} vs {slow}");
        }
    }
}

#[test]
fn wasserstein_translation_behavior() {
    let mut rng = RngState::new(20, 0);
    let a = sample_std_normal::<f64>(&mut rng, 40, 2);
    let b = sample_std_normal::<f64>(&mut rng, 40, 2);
    let base = wasserstein2(&a, &b).unwrap();
    let shift = |x: &Batch<f64>, v: [f64; 2]| {
        let mut arr = x.array().clone();
        for mut row in arr.rows_mut() {
            row[0] += v[0];
            row[1] += v[1];
        }
        Batch::new(arr).unwrap()
    };
    let v = [0.7, -1.2];
    let both = wasserstein2(&shift(&a, v), &shift(&b, v)).unwrap();
    assert!((both - base).abs() < 1e-9, "{both} vs {base}");
    let one = wasserstein2(&shift(&a, v), &b).unwrap();
    let norm = (v[0] * v[0] + v[1] * v[1]).sqrt();
    assert!((one - base).abs() <= norm + 1e-9, "moved by more than the shift norm");
}

#[test]
fn msd_hand_values() {
    let a = batch_from(2, 2, &[0.0, 0.0, 1.0, 1.0]);
    assert_eq!(msd(&a, &a).unwrap(), 0.0);
    let b = batch_from(2, 2, &[1.0, 1.0, 2.0, 2.0]);
    assert_eq!(msd(&a, &b).unwrap(), 1.0);
    let p = batch_from(1, 1, &[0.0]);
    let q = batch_from(1, 1, &[3.0]);
    assert_eq!(msd(&p, &q).unwrap(), 9.0);
}

// --------------------------------------------------------- metric properties

fn cloud(n: usize, d: usize) -> impl Strategy<Value = Batch<f64>> {
    prop::collection::vec(-5.0..5.0f64, n * d)
        .prop_map(move |v| batch_from(n, d, &v))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, ..ProptestConfig::default() })]

    #[test]
    fn wasserstein_is_symmetric_and_triangular(
        (a, b, c) in (1usize..=16, 1usize..=3).prop_flat_map(|(n, d)| {
            (cloud(n, d), cloud(n, d), cloud(n, d))
        })
    ) {
        let ab = wasserstein2(&a, &b).unwrap();
        let ba = wasserstein2(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-9);
        let ac = wasserstein2(&a, &c).unwrap();
        let cb = wasserstein2(&c, &b).unwrap();
        prop_assert!(ab <= ac + cb + 1e-9);
        prop_assert!(wasserstein2(&a, &a).unwrap() < 1e-12);
    }
}
