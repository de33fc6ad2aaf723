mod common;

use airsign_core::align::{build_template, dtw_align, dtw_distance, DtwConfig};
use airsign_core::auth::svm::{dual_objective, train_labeled};
use airsign_core::auth::SmoConfig;
use airsign_core::eval::{compute_metrics, metrics::roc_curve};
use airsign_core::ident::{augment_registration, AugmentConfig, CnnArch, Network};
use airsign_core::signal::{prepare, PreprocessConfig};
use airsign_core::synth::{gen_corpus, CorpusConfig};
use common::*;
use proptest::prelude::*;
use rand::Rng;

fn series(max_len: usize, dims: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-5.0f64..5.0, dims), 1..=max_len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(120))]

    #[test]
    fn dtw_equals_exhaustive_path_search((a, b) in (1usize..=3).prop_flat_map(|d| (series(7, d), series(7, d)))) {
        let (sa, sb) = (signal(&a), signal(&b));
        let want = brute_force_dtw(&a, &b);
        let got = dtw_distance(&sa, &sb, &DtwConfig::default()).unwrap();
        prop_assert!((got - want).abs() <= 1e-9 * want.max(1.0), "dp {got} brute {want}");
        let aligned = dtw_align(&sb, &sa, &DtwConfig::default()).unwrap();
        prop_assert_eq!(aligned.samples.len(), a.len());
        prop_assert!((aligned.distance - brute_force_dtw(&a, &b)).abs() <= 1e-9 * want.max(1.0));
    }

    #[test]
    fn roc_rates_match_hand_counts(
        g in prop::collection::vec(-3.0f64..3.0, 1..60),
        i in prop::collection::vec(-3.0f64..3.0, 1..60),
    ) {
        for p in roc_curve(&g, &i).unwrap() {
            let (far, frr) = hand_rates(&g, &i, p.threshold);
            prop_assert!((p.far - far).abs() < 1e-12 && (p.frr - frr).abs() < 1e-12);
        }
        let m = compute_metrics(&g, &i, &[]).unwrap();
        let (far, frr) = hand_rates(&g, &i, m.threshold);
        prop_assert!((m.far - far).abs() < 1e-12 && (m.frr - frr).abs() < 1e-12);
    }

    #[test]
    fn template_of_copies_is_exact(rows in series(12, 3), k in 2usize..6) {
        let s = signal(&rows);
        let t = build_template(&vec![s.clone(); k], &DtwConfig::default()).unwrap();
        prop_assert!(t.sigma.as_slice().iter().all(|&v| v == 0.0));
        prop_assert_eq!(t.mean.as_slice(), s.samples().as_slice());
    }
}

#[test]
fn two_signal_template_matches_hand_computation() {
    let a = vec![vec![0.0, 0.0], vec![10.0, 10.0]];
    let b = vec![vec![1.0, 0.0], vec![10.0, 12.0]];
    let t = build_template(&[signal(&a), signal(&b)], &DtwConfig::default()).unwrap();
    for i in 0..2 {
        for j in 0..2 {
            let (x, y) = (a[i][j], b[i][j]);
            assert!((t.mean.get(i, j) - (x + y) / 2.0).abs() < 1e-12);
            assert!((t.sigma.get(i, j) - (x - y).abs() / 2f64.sqrt()).abs() < 1e-12);
        }
    }
}

/// Random instances of up to six 2D points with both labels present.
fn svm_instance(seed: u64) -> (Vec<[f64; 2]>, Vec<f64>) {
    let mut r = airsign_core::rng::rng(seed);
    let n = r.random_range(3..=6);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..n {
        let label = if i == 0 {
            -1.0
        } else if i == 1 || r.random_bool(0.5) {
            1.0
        } else {
            -1.0
        };
        let shift = if r.random_bool(0.7) { label } else { -label * 0.3 };
        x.push([
            shift + r.random_range(-1.2..1.2),
            0.5 * shift + r.random_range(-1.2..1.2),
        ]);
        y.push(label);
    }
    (x, y)
}

#[test]
fn smo_reaches_the_dual_optimum() {
    let cfg = SmoConfig::default();
    for seed in 0..12 {
        let (x, y) = svm_instance(seed);
        let flat: Vec<f64> = x.iter().flatten().copied().collect();
        let fit = train_labeled(&flat, 2, &y, &cfg, seed).unwrap();
        let got = dual_objective(&flat, 2, &y, &fit.alphas);
        let want = svm_optimum_2d(&x, &y, cfg.c);
        assert!((got - want).abs() < 1e-4, "seed {seed}: dual {got} optimum {want}");
    }
}

#[test]
fn smo_separates_a_separable_set() {
    let x = [
        [-2.0, -1.0],
        [-1.5, -2.0],
        [-3.0, -0.5],
        [2.0, 1.0],
        [1.0, 2.5],
        [2.5, 0.5],
    ];
    let y = [-1.0, -1.0, -1.0, 1.0, 1.0, 1.0];
    let flat: Vec<f64> = x.iter().flatten().copied().collect();
    let fit = train_labeled(
        &flat,
        2,
        &y,
        &SmoConfig {
            c: 100.0,
            ..Default::default()
        },
        1,
    )
    .unwrap();
    for (p, &l) in x.iter().zip(&y) {
        assert!(l * fit.svm.decision(p) > 0.0);
    }
    let want = svm_optimum_2d(&x, &y, 100.0);
    assert!((dual_objective(&flat, 2, &y, &fit.alphas) - want).abs() < 1e-4);
}

#[test]
fn cnn_gradient_matches_central_differences() {
    for seed in [1, 2] {
        let worst = gradient_check(&mini_network(), seed);
        assert!(worst < 1e-4, "worst relative error {worst}");
    }
}

#[test]
fn cnn_probabilities_are_normalized() {
    let net = Network::new(CnnArch::standard(9, 50)).unwrap();
    let mut r = airsign_core::rng::rng(3);
    let p = net.init_params(&mut r);
    let x: Vec<f64> = (0..4 * 256 * 9).map(|_| r.random_range(-3.0..3.0)).collect();
    let tr = net.forward(&p, &x, 4, None);
    for row in tr.probs.chunks(50) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        assert!(row.iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn augmentation_of_real_registrations() {
    let corpus = gen_corpus(&CorpusConfig {
        n_users: 2,
        spoofers: 0,
        ..Default::default()
    })
    .unwrap();
    let reg: Vec<_> = corpus.accounts[0]
        .reg
        .iter()
        .map(|t| prepare(t, &PreprocessConfig::default()).unwrap())
        .collect();
    let cfg = AugmentConfig::default();
    let a = augment_registration(&reg, &cfg, 10).unwrap();
    let b = augment_registration(&reg, &cfg, 10).unwrap();
    let c = augment_registration(&reg, &cfg, 11).unwrap();
    assert_eq!(a.signals.len(), 125);
    assert_eq!(a.signals, b.signals);
    assert_ne!(a.signals, c.signals);
    assert!(a.signals.iter().all(|s| s.dims() == reg[0].dims()));
}
