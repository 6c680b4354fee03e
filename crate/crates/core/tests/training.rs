mod common;

use common::*;
use hlc_core::dpn::BandLayout;
use hlc_core::hl::{Audiogram, HlConfig, HlModel};
use hlc_core::train::{prepare, train, Init, TrainConfig, TrainMode};

#[test]
fn fine_tuning_from_identity_improves_validation() {
    let config = TrainConfig {
        alpha: 1.0,
        init: Init::Identity,
        excerpt_frames: 300,
        batch_size: 5,
        max_epochs: 20,
        lr: 0.05,
        ..TrainConfig::desk()
    };
    let model = HlModel::new(HlConfig::default()).unwrap();
    let u = corpus(10, 21, 1.0);
    let tr = prepare(&u[..7], &config, 0).unwrap();
    let va = prepare(&u[7..], &config, 1).unwrap();
    let out = train(&config, &model, &tr, &va, &BandLayout::default(), &mut |_| {}).unwrap();
    assert_eq!(out.history.len(), 21);
    assert!(out.diverged.is_none());
    let start = out.history[0].val_stoi_thr;
    let best = out.history.iter().map(|r| r.val_stoi_thr).fold(f64::MIN, f64::max);
    assert_eq!(out.best_val, best);
    assert_eq!(out.history[out.best_epoch].val_stoi_thr, best);
    assert!(best > start + 0.01, "start {start}, best {best}");
}

#[test]
fn listener_independent_offsets_follow_severity() {
    let config = TrainConfig {
        mode: TrainMode::ListenerIndependent {
            audiograms: vec!["flat:50".into(), "flat:80".into()],
        },
        condition: hlc_core::eval::Condition::DpnLi,
        excerpt_frames: 200,
        batch_size: 3,
        max_epochs: 10,
        hidden: 16,
        lr: 0.02,
        ..TrainConfig::desk()
    };
    let model = HlModel::new(HlConfig::default()).unwrap();
    let u = corpus(8, 31, 1.0);
    let tr = prepare(&u[..6], &config, 0).unwrap();
    let va = prepare(&u[6..], &config, 1).unwrap();
    let out = train(&config, &model, &tr, &va, &BandLayout::default(), &mut |r| eprintln!("{r:?}")).unwrap();
    let z = |level: f64| {
        let a = Audiogram::flat(format!("flat{level}"), level).unwrap();
        out.best.resolved(Some(&a)).unwrap().offsets
    };
    let (z50, z80) = (z(50.0), z(80.0));
    for (c, (a, b)) in z50.iter().zip(&z80).enumerate() {
        assert!(b >= a, "band {c}: z(80) {b} < z(50) {a}");
    }
}
