// SPDX-License-Identifier: MIT OR Apache-2.0

use gcc_core::threshold::{build_threshold, quantile_sorted, threshold_registry};
use gcc_core::{fit_gpd, mean_threshold, pot_threshold, GccError, PotConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

const N: usize = 10_000;

fn exponential(rate: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = Exp::new(rate).unwrap();
    (0..N).map(|_| d.sample(&mut rng)).collect()
}

/// Inverse-CDF draws from GPD(σ, ξ).
fn gpd(sigma: f64, xi: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..N)
        .map(|_| {
            let u: f64 = rng.random();
            sigma / xi * ((1.0 - u).powf(-xi) - 1.0)
        })
        .collect()
}

#[test]
fn exponential_tail_recovers_xi_zero() {
    for (rate, seed) in [(1.0, 1), (0.5, 2), (4.0, 3)] {
        let fit = fit_gpd(&exponential(rate, seed), 8).unwrap();
        assert!(fit.xi.abs() <= 0.05, "rate {rate}: xi {}", fit.xi);
        assert!(
            (fit.sigma * rate - 1.0).abs() <= 0.05,
            "rate {rate}: sigma {}",
            fit.sigma
        );
    }
}

#[test]
fn gpd_parameters_recovered() {
    let fit = fit_gpd(&gpd(2.0, 0.3, 7), 8).unwrap();
    assert!((fit.xi - 0.3).abs() <= 0.03, "xi {}", fit.xi);
    assert!((fit.sigma - 2.0).abs() <= 0.2, "sigma {}", fit.sigma);
}

#[test]
fn uniform_tail_threshold_is_near_analytic_quantile() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let scores: Vec<f64> = (0..N).map(|_| rng.random()).collect();
    let cfg = PotConfig {
        q0: 0.95,
        risk: 0.01,
        ..PotConfig::default()
    };
    let d = pot_threshold(&scores, &cfg);
    assert!(!d.fallback);
    assert!((d.tau - 0.99).abs() <= 0.01, "tau {}", d.tau);
}

#[test]
fn small_vectors_fall_back_to_initial_quantile() {
    let scores: Vec<f64> = (0..32).map(|i| f64::from(i) / 31.0).collect();
    let d = pot_threshold(&scores, &PotConfig::default());
    assert!(d.fallback);
    assert_eq!(d.tau, d.initial);
    let mut sorted = scores.clone();
    sorted.sort_by(f64::total_cmp);
    assert_eq!(d.initial, quantile_sorted(&sorted, 0.95));
}

#[test]
fn fit_gpd_errors() {
    assert!(matches!(
        fit_gpd(&[1.0, 2.0, 3.0], 8),
        Err(GccError::InsufficientTailData { got: 3, need: 8 })
    ));
    assert!(matches!(
        fit_gpd(&[0.5; 20], 8),
        Err(GccError::InsufficientTailVariation)
    ));
}

#[test]
fn quantile_is_type_seven() {
    let v = [1.0, 2.0, 3.0, 4.0];
    assert_eq!(quantile_sorted(&v, 0.0), 1.0);
    assert_eq!(quantile_sorted(&v, 1.0), 4.0);
    assert_eq!(quantile_sorted(&v, 0.5), 2.5);
    assert!((quantile_sorted(&v, 0.9) - 3.7).abs() < 1e-12);
}

#[test]
fn registry_strategies() {
    let reg = threshold_registry();
    let mut names = reg.names();
    names.sort();
    assert_eq!(names, ["iqr", "percentile", "pot"]);
    let cfg = PotConfig::default();
    let v: Vec<f64> = (0..101).map(f64::from).collect();
    assert_eq!(
        build_threshold("percentile", &cfg)
            .unwrap()
            .threshold(&v)
            .tau,
        95.0
    );
    // Q1 = 25, Q3 = 75
    assert_eq!(
        build_threshold("iqr", &cfg).unwrap().threshold(&v).tau,
        150.0
    );
    assert!(matches!(
        build_threshold("otsu", &cfg),
        Err(GccError::UnknownStrategy { .. })
    ));
    assert_eq!(mean_threshold(&[0.0, 0.5, 1.0]), 0.5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pot_cut_sits_at_or_above_initial(scores in prop::collection::vec(0.0f64..10.0, 1..400)) {
        let d = pot_threshold(&scores, &PotConfig::default());
        prop_assert!(d.tau.is_finite());
        prop_assert!(d.tau >= d.initial - 1e-12);
        if d.fallback {
            prop_assert_eq!(d.tau, d.initial);
        }
    }

    #[test]
    fn quantile_is_monotone(mut v in prop::collection::vec(-5.0f64..5.0, 1..50), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        v.sort_by(f64::total_cmp);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(quantile_sorted(&v, lo) <= quantile_sorted(&v, hi));
        prop_assert!(quantile_sorted(&v, lo) >= v[0] && quantile_sorted(&v, hi) <= v[v.len() - 1]);
    }
}
