//! Property tests of the spec invariants.

use a2j::anchors::{generate_anchor_grid, Joint, JointTarget};
use a2j::data_synth::{generate_sample, read_dataset, write_dataset, SynthConfig};
use a2j::diffmath::{pure, smooth_l1_tau, NdArray};
use a2j::train_eval::mpjpe;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_sums_to_one_and_is_shift_invariant(
        values in prop::collection::vec(-30.0f64..30.0, 1..24),
        shift in -50.0f64..50.0,
    ) {
        let x = NdArray::from_vec(&[values.len()], values.clone()).unwrap();
        let y = pure::softmax(&x, 0).unwrap();
        let sum: f64 = y.data().iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-6);
        prop_assert!(y.data().iter().all(|&v| v > 0.0));
        let shifted = x.map(|v| v + shift);
        let y2 = pure::softmax(&shifted, 0).unwrap();
        for (a, b) in y.data().iter().zip(y2.data()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn anchor_count_formula_holds(
        side in 1usize..12,
        stride_pow in 1usize..5,
        depths in prop::collection::vec(-150.0f64..150.0, 1..6),
    ) {
        let stride = 1 << stride_pow;
        let image = side * stride;
        let set = generate_anchor_grid(image, stride, &depths).unwrap();
        prop_assert_eq!(set.len(), side * side * depths.len());
        for a in set.anchors() {
            prop_assert!(a.x > 0.0 && a.x < image as f64);
            prop_assert!(a.y > 0.0 && a.y < image as f64);
        }
    }

    #[test]
    fn smooth_l1_is_even_nonnegative_and_monotone(
        x in -40.0f64..40.0,
        tau in 0.1f64..8.0,
    ) {
        let v = smooth_l1_tau(x, tau);
        prop_assert!(v >= 0.0);
        prop_assert!((v - smooth_l1_tau(-x, tau)).abs() < 1e-12);
        if x != 0.0 {
            prop_assert!(v > 0.0);
        }
        // branch continuity at |x| = tau
        let inner = tau * tau / (2.0 * tau);
        let outer = tau - tau / 2.0;
        prop_assert!((inner - outer).abs() < 1e-12);
    }

    #[test]
    fn mpjpe_is_invariant_to_per_hand_translation(
        tx in -30.0f64..30.0,
        ty in -30.0f64..30.0,
        td in -80.0f64..80.0,
        seed in 0u64..500,
    ) {
        let cfg = SynthConfig::default();
        let sample = generate_sample(&cfg, seed).unwrap();
        let gt = &sample.targets;
        let exact: Vec<(f64, f64, f64)> =
            gt.joints.iter().map(|j| (j.x, j.y, j.depth)).collect();
        let translated: Vec<(f64, f64, f64)> = exact
            .iter()
            .enumerate()
            .map(|(i, &(x, y, d))| {
                if gt.hand_of(i) == 0 {
                    (x + tx, y + ty, d + td)
                } else {
                    (x - ty, y + tx, d - td)
                }
            })
            .collect();
        let base = mpjpe(&exact, gt).unwrap();
        let shifted = mpjpe(&translated, gt).unwrap();
        prop_assert!(base.abs() < 1e-9);
        prop_assert!(shifted.abs() < 1e-7, "translation leaked: {}", shifted);
    }

    #[test]
    fn dataset_round_trip_is_lossless(seed in 0u64..2000, count in 1usize..5) {
        let cfg = SynthConfig::default();
        let records: Vec<_> = (0..count)
            .map(|i| generate_sample(&cfg, seed + i as u64).unwrap())
            .collect();
        let path = std::env::temp_dir().join(format!("a2j_prop_{seed}_{count}.a2jd"));
        write_dataset(&records, &path).unwrap();
        let back = read_dataset(&path).unwrap();
        std::fs::remove_file(&path).ok();
        prop_assert_eq!(records, back);
    }

    #[test]
    fn validity_marking_never_validates_and_is_idempotent(
        depths in prop::collection::vec(-400.0f64..400.0, 2..10),
        radius in 50.0f64..300.0,
    ) {
        use a2j::anchors::mark_valid_joints;
        let joints: Vec<Joint> = depths
            .iter()
            .map(|&d| Joint { x: 1.0, y: 1.0, depth: d, valid: true })
            .collect();
        let target = JointTarget { joints, hand_roots: vec![0] };
        let once = mark_valid_joints(target.clone(), radius);
        let twice = mark_valid_joints(once.clone(), radius);
        prop_assert_eq!(&once, &twice);
        let root_depth = depths[0];
        for (j, d) in once.joints.iter().zip(&depths) {
            prop_assert_eq!(j.valid, (d - root_depth).abs() <= radius);
        }
    }
}
