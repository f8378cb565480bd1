mod common;

use collab_bandit::allocation::{certificate_holds, integer_allocation, is_feasible};
use collab_bandit::concentration::Threshold;
use rand::RngExt;

fn beta_fn(calibration: f64) -> impl Fn(&[u64]) -> f64 {
    move |counts: &[u64]| {
        let iterated: f64 = counts.iter().map(|&n| (4.0 + (n as f64).ln()).ln()).sum();
        2.0 * (calibration + 2.0 * iterated)
    }
}

#[test]
fn fixed_point_matches_exhaustive_minimum() {
    let mut rng = common::rng(17);
    for case in 0..200 {
        let agents = rng.random_range(1..=3);
        let delta = rng.random_range(0.01..0.5);
        let threshold = Threshold::new(delta, rng.random_range(2..=5), agents).unwrap();
        let beta = beta_fn(threshold.calibration());
        let n_prev: Vec<u64> = (0..agents).map(|_| rng.random_range(1..=20)).collect();
        let t: Vec<f64> = (0..agents)
            .map(|_| {
                if rng.random::<f64>() < 0.2 {
                    0.0
                } else {
                    rng.random_range(0.0..0.8)
                }
            })
            .collect();
        let lib = |c: &[u64]| threshold.beta(c).unwrap();
        let got = integer_allocation(&n_prev, &t, lib).unwrap();
        let total: u64 = got.d.iter().sum();
        assert!(is_feasible(&n_prev, &t, &got.d, &beta), "case {case}");
        let best = common::enumerate_min_total(&n_prev, &t, total + 2, &beta).expect("feasible point exists");
        assert_eq!(best, total, "case {case}: n {n_prev:?} t {t:?} d {:?}", got.d);
    }
}

#[test]
fn certificate_holds_on_large_targets() {
    let mut rng = common::rng(23);
    for case in 0..200 {
        let agents = rng.random_range(1..=8);
        let threshold = Threshold::new(rng.random_range(1e-4..0.5), 10, agents).unwrap();
        let beta = beta_fn(threshold.calibration());
        let n_prev: Vec<u64> = (0..agents).map(|_| rng.random_range(1..=10_000)).collect();
        let t: Vec<f64> = (0..agents).map(|_| 10f64.powf(rng.random_range(-2.0..4.0))).collect();
        let got = integer_allocation(&n_prev, &t, &beta).unwrap();
        assert!(is_feasible(&n_prev, &t, &got.d, &beta), "case {case}");
        assert!(certificate_holds(&n_prev, &t, &got.d, &beta), "case {case}");
    }
}
