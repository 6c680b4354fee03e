mod common;

use common::*;
use hlc_core::metrics::*;
use hlc_core::signal::Signal;
use proptest::prelude::*;

#[test]
fn attenuation_never_raises_threshold_stoi() {
    let x = &corpus(1, 11, 2.0)[0].signal;
    let spec = ThresholdNoiseSpec::with_seed(2);
    let mut prev = f64::INFINITY;
    for k in 0..=8 {
        let db = -10.0 * k as f64;
        let s = stoi_thr(x, &x.scaled(10f64.powf(db / 20.0)), &spec).unwrap();
        assert!(s <= prev + 1e-3, "{db} dB: {s} after {prev}");
        prev = s;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn level_of_self_concatenation_is_unchanged(v in prop::collection::vec(-1.0f64..1.0, 1..400)) {
        prop_assume!(v.iter().any(|x| x.abs() > 1e-3));
        let x = Signal::new(v.clone(), RATE).unwrap();
        let xx = Signal::new([v.clone(), v].concat(), RATE).unwrap();
        prop_assert!((level_db(&x) - level_db(&xx)).abs() <= 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn stoi_ignores_global_scale(gx in 0.01f64..100.0, gy in 0.01f64..100.0, seed in 0u64..100) {
        let u = corpus(2, seed, 1.0);
        let (x, y) = (&u[0].signal, &u[1].signal);
        let s = stoi(x, y).unwrap();
        let t = stoi(&x.scaled(gx), &y.scaled(gy)).unwrap();
        prop_assert!((s - t).abs() <= 1e-9, "{s} vs {t}");
    }
}
