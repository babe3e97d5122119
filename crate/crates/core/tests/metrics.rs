mod common;

use proptest::prelude::*;
use ttr_core::metrics::{sdlogj_region, JacobianRegion};
use ttr_core::synth::{make_smooth_field, make_translation_field};
use ttr_core::*;

fn labels_from(dims: Dims, spacing: [f64; 3], bits: &[bool]) -> LabelMap {
    LabelMap::new(dims, spacing, bits.iter().map(|&b| b as u16).collect()).unwrap()
}

fn ball(dims: Dims, c: [f64; 3], r: f64, label: u16) -> LabelMap {
    LabelMap::from_fn(dims, [1.0; 3], |i, j, k| {
        let d2 = (i as f64 - c[0]).powi(2) + (j as f64 - c[1]).powi(2) + (k as f64 - c[2]).powi(2);
        if d2 <= r * r { label } else { 0 }
    })
    .unwrap()
}

fn mask_strategy() -> impl Strategy<Value = (Dims, Vec<bool>, Vec<bool>)> {
    (3usize..=10, 3usize..=10, 3usize..=10).prop_flat_map(|(x, y, z)| {
        let n = x * y * z;
        (
            Just(Dims::new(x, y, z)),
            prop::collection::vec(prop::bool::weighted(0.4), n),
            prop::collection::vec(prop::bool::weighted(0.4), n),
        )
    })
}

#[test]
fn hand_examples() {
    // Two 2x2x2 cubes overlapping in half their voxels.
    let d = Dims::cube(4);
    let a = LabelMap::from_fn(d, [1.0; 3], |i, j, k| (i < 2 && j < 2 && k < 2) as u16).unwrap();
    let b = LabelMap::from_fn(d, [1.0; 3], |i, j, k| ((1..3).contains(&i) && j < 2 && k < 2) as u16).unwrap();
    assert!((dice(&a, &b, 1).unwrap() - 0.5).abs() <= 1e-12);

    // Single voxels three apart along x with 2mm spacing.
    let d = Dims::new(8, 3, 3);
    let a = LabelMap::from_fn(d, [2.0, 1.0, 1.0], |i, j, k| (i == 1 && j == 1 && k == 1) as u16).unwrap();
    let b = LabelMap::from_fn(d, [2.0, 1.0, 1.0], |i, j, k| (i == 4 && j == 1 && k == 1) as u16).unwrap();
    assert!((hd95(&a, &b, 1, [2.0, 1.0, 1.0]).unwrap() - 6.0).abs() <= 1e-12);

    let id = DisplacementField::zeros(Dims::cube(6), [1.0; 3]);
    assert_eq!(sdlogj(&id).unwrap(), (0.0, 0.0));
}

#[test]
fn identical_masks() {
    let a = ball(Dims::cube(12), [5.5, 6.0, 5.0], 3.5, 2);
    assert_eq!(dice(&a, &a, 2).unwrap(), 1.0);
    assert_eq!(hd95(&a, &a, 2, [1.0; 3]).unwrap(), 0.0);
}

#[test]
fn empty_label_cases() {
    let d = Dims::cube(5);
    let empty = LabelMap::new(d, [1.0; 3], vec![0; d.len()]).unwrap();
    let full = ball(d, [2.0; 3], 1.0, 1);
    assert_eq!(dice(&empty, &empty, 1).unwrap(), 1.0);
    assert_eq!(dice(&empty, &full, 1).unwrap(), 0.0);
    assert!(matches!(hd95(&empty, &full, 1, [1.0; 3]), Err(Error::UndefinedHd95(1))));
}

#[test]
fn hd95_with_anisotropic_spacing_matches_brute_force() {
    let d = Dims::new(12, 10, 11);
    let spacing = [0.7, 1.3, 2.1];
    let a = ball(d, [5.0, 4.5, 5.0], 3.2, 1);
    let b = ball(d, [6.0, 5.0, 4.0], 2.6, 1);
    let ma: Vec<bool> = a.data().iter().map(|&l| l == 1).collect();
    let mb: Vec<bool> = b.data().iter().map(|&l| l == 1).collect();
    let got = hd95(&a, &b, 1, spacing).unwrap();
    let expect = common::brute_hd95(&ma, &mb, d, spacing);
    assert!((got - expect).abs() <= 1e-9, "{got} vs {expect}");
}

#[test]
fn sdlogj_matches_naive_on_smooth_fields() {
    for seed in 0..4 {
        let f = make_smooth_field(Dims::new(12, 11, 10), [1.0; 3], 1.5, 2.0, seed).unwrap();
        let (s, folded) = sdlogj(&f).unwrap();
        let (es, ef) = common::naive_sdlogj(&f);
        assert!((s - es).abs() <= 1e-9, "{s} vs {es}");
        assert_eq!(folded, ef);
        assert!(s > 0.0);
    }
}

#[test]
fn folded_voxels_are_counted_not_logged() {
    let d = Dims::new(8, 4, 4);
    // u_x = -2x on the left half folds it; the right half is identity.
    let f = DisplacementField::from_fn(d, [1.0; 3], |i, _, _| if i < 4 { [-2.0 * i as f64, 0.0, 0.0] } else { [-6.0, 0.0, 0.0] }).unwrap();
    let (s, folded) = sdlogj(&f).unwrap();
    let (es, ef) = common::naive_sdlogj(&f);
    assert!(folded > 0.0 && folded < 1.0);
    assert_eq!(folded, ef);
    assert!((s - es).abs() <= 1e-12);

    let all_folded = DisplacementField::from_fn(d, [1.0; 3], |i, _, _| [-2.0 * i as f64, 0.0, 0.0]).unwrap();
    assert!(matches!(sdlogj(&all_folded), Err(Error::AllFolded)));
}

#[test]
fn interior_region_excludes_faces() {
    let f = make_smooth_field(Dims::cube(10), [1.0; 3], 1.0, 2.0, 9).unwrap();
    let (all, _) = sdlogj_region(&f, JacobianRegion::All).unwrap();
    let (inner, _) = sdlogj_region(&f, JacobianRegion::Interior).unwrap();
    assert!(all.is_finite() && inner.is_finite());
    assert_ne!(all, inner);
}

#[test]
fn evaluate_integer_shift() {
    let d = Dims::cube(14);
    let moving = ball(d, [7.0; 3], 3.0, 4);
    // Pulling by +2 along x moves the ball to x = 5.
    let fixed = ball(d, [5.0, 7.0, 7.0], 3.0, 4);
    let shift = make_translation_field(d, [1.0; 3], [2.0, 0.0, 0.0]);
    let r = evaluate(&fixed, &moving, &shift, [1.0; 3]).unwrap();
    assert_eq!(r.dice_per_label[&4], 1.0);
    assert_eq!(r.hd95_per_label[&4], Some(0.0));
    assert_eq!(r.sdlogj, 0.0);
    assert_eq!(r.folded_fraction, 0.0);
    assert_eq!(r.dice_mean, 1.0);

    let zero = DisplacementField::zeros(d, [1.0; 3]);
    let r = evaluate(&fixed, &moving, &zero, [1.0; 3]).unwrap();
    assert!(r.dice_mean < 1.0);
    assert!(r.hd95_per_label[&4].unwrap() > 0.0);
}

#[test]
fn evaluate_requires_shared_labels() {
    let d = Dims::cube(8);
    let a = ball(d, [4.0; 3], 2.0, 1);
    let b = ball(d, [4.0; 3], 2.0, 2);
    let zero = DisplacementField::zeros(d, [1.0; 3]);
    assert!(matches!(evaluate(&a, &b, &zero, [1.0; 3]), Err(Error::NoCommonLabels)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn dice_and_hd95_match_brute_force((d, a, b) in mask_strategy(), sx in 0.5f64..2.5, sz in 0.5f64..2.5) {
        let spacing = [sx, 1.0, sz];
        let la = labels_from(d, spacing, &a);
        let lb = labels_from(d, spacing, &b);
        let got = dice(&la, &lb, 1).unwrap();
        prop_assert!((got - common::brute_dice(la.data(), lb.data(), 1)).abs() <= 1e-12);
        prop_assert_eq!(got, dice(&lb, &la, 1).unwrap());
        prop_assert!((0.0..=1.0).contains(&got));

        if a.iter().any(|&x| x) && b.iter().any(|&x| x) {
            let h = hd95(&la, &lb, 1, spacing).unwrap();
            let expect = common::brute_hd95(&a, &b, d, spacing);
            prop_assert!((h - expect).abs() <= 1e-9, "{} vs {}", h, expect);
            prop_assert_eq!(h, hd95(&lb, &la, 1, spacing).unwrap());
            prop_assert!(h >= 0.0);
        }
    }

    #[test]
    fn sdlogj_is_translation_invariant(seed in 0u64..1000, t in prop::array::uniform3(-3.0f64..3.0)) {
        let d = Dims::cube(9);
        let f = make_smooth_field(d, [1.0; 3], 1.0, 2.0, seed).unwrap();
        let shifted = DisplacementField::from_fn(d, [1.0; 3], |i, j, k| {
            let u = f.get(i, j, k);
            [u[0] + t[0], u[1] + t[1], u[2] + t[2]]
        }).unwrap();
        let (a, fa) = sdlogj(&f).unwrap();
        let (b, fb) = sdlogj(&shifted).unwrap();
        prop_assert!((a - b).abs() <= 1e-9);
        prop_assert_eq!(fa, fb);
    }
}
