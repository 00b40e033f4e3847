//! Augmentation blending, pseudo-label mixing and copy-paste.

use ipacp::bcp::{bcp_images, bcp_labels, pair_indices};
use ipacp::mix::{adaptive_blend, disagreement_blend, masked_strong_view};
use ipacp::pseudo::{ema_label_mix, ipt_mix, pseudo_schedule, vot_mix, vot_phase_end, EmaTargets, PseudoMode};
use ipacp::volume::{argmax_labels, BinaryMask, Dims, LabelMap, ProbMap, Volume};
use proptest::prelude::*;

fn vol(dims: Dims, f: impl Fn(usize) -> f64) -> Volume {
    Volume::new(dims, (0..dims.len()).map(f).collect()).unwrap()
}

fn single(p: &[f64]) -> ProbMap {
    ProbMap::from_voxels(Dims::cube(1), &[p.to_vec()]).unwrap()
}

#[test]
fn masked_strong_view_examples() {
    let dims = Dims::cube(4);
    let weak = vol(dims, |i| i as f64 / 64.0);
    let strong = vol(dims, |i| 1.0 - i as f64 / 64.0);
    assert_eq!(masked_strong_view(&weak, &strong, &BinaryMask::ones(dims)).unwrap(), strong);
    assert_eq!(masked_strong_view(&weak, &strong, &BinaryMask::zeros(dims)).unwrap(), Volume::zeros(dims));
    let hole = BinaryMask::from_fn(dims, |z, y, x| !(z == 1 && y < 2 && x >= 2));
    let out = masked_strong_view(&weak, &strong, &hole).unwrap();
    for i in 0..dims.len() {
        let expected = if hole.data()[i] == 1 { strong.data()[i] } else { 0.0 };
        assert_eq!(out.data()[i], expected);
    }
}

#[test]
fn blend_examples() {
    let dims = Dims::cube(2);
    let w = Volume::filled(dims, 0.2);
    let s = Volume::filled(dims, 0.6);
    assert_eq!(adaptive_blend(&w, &s, 0.0).unwrap(), w);
    assert_eq!(adaptive_blend(&w, &s, 1.0).unwrap(), s);
    for x in adaptive_blend(&w, &s, 0.5).unwrap().data() {
        assert!((x - 0.4).abs() < 1e-15);
    }
    assert!(adaptive_blend(&w, &s, 1.5).is_err());

    let u = Volume::filled(dims, 0.3);
    assert_eq!(disagreement_blend(&u, &s, &BinaryMask::zeros(dims)).unwrap(), u);
    assert_eq!(disagreement_blend(&u, &s, &BinaryMask::ones(dims)).unwrap(), s);
}

#[test]
fn checkerboard_disagreement_against_loop() {
    let dims = Dims::new(3, 4, 5).unwrap();
    let u = vol(dims, |i| (i as f64 * 0.37).fract());
    let s = vol(dims, |i| (i as f64 * 0.91).fract());
    let board = BinaryMask::from_fn(dims, |z, y, x| (z + y + x) % 2 == 0);
    let out = disagreement_blend(&u, &s, &board).unwrap();
    for z in 0..3 {
        for y in 0..4 {
            for x in 0..5 {
                let expected = if (z + y + x) % 2 == 0 { s.get(z, y, x) } else { u.get(z, y, x) };
                assert_eq!(out.get(z, y, x), expected);
            }
        }
    }
}

#[test]
fn ipt_examples() {
    let pt = single(&[0.4, 0.6]);
    let ps = single(&[0.8, 0.2]);
    // e = 1: (0.6, 0.4); e = 9: (0.44, 0.56)
    assert_eq!(ipt_mix(&pt, &ps, 1).unwrap().data(), &[0]);
    assert_eq!(ipt_mix(&pt, &ps, 9).unwrap().data(), &[1]);
    assert_eq!(vot_mix(&pt, &ps).unwrap().data(), &[0]);
    for e in [1, 2, 50, 1000] {
        assert_eq!(ipt_mix(&pt, &pt, e).unwrap(), argmax_labels(&pt));
    }
    assert_eq!(vot_mix(&ps, &ps).unwrap(), argmax_labels(&ps));
}

#[test]
fn ema_label_examples() {
    let pt = single(&[0.3, 0.7]);
    let ps = single(&[0.9, 0.1]);
    let prior = single(&[0.5, 0.5]);
    let (_, l) = ema_label_mix(&prior, &pt, &ps, 0.0).unwrap();
    assert_eq!(l, vot_mix(&pt, &ps).unwrap());

    let mean = single(&[0.6, 0.4]);
    let (fixed, _) = ema_label_mix(&mean, &mean, &mean, 0.9).unwrap();
    for (a, b) in fixed.data().iter().zip(mean.data()) {
        assert!((a - b).abs() < 1e-15);
    }

    // Two steps from a uniform prior with mean input (0.6, 0.4):
    // step 1: 0.9*0.5 + 0.1*0.6 = 0.51; step 2: 0.9*0.51 + 0.1*0.6 = 0.519
    let (s1, _) = ema_label_mix(&prior, &pt, &ps, 0.9).unwrap();
    let (s2, l2) = ema_label_mix(&s1, &pt, &ps, 0.9).unwrap();
    assert!((s1.prob(0, 0) - 0.51).abs() < 1e-12);
    assert!((s2.prob(0, 0) - 0.519).abs() < 1e-12);
    assert!((s2.prob(0, 1) - 0.481).abs() < 1e-12);
    assert_eq!(l2.data(), &[0]);
}

#[test]
fn schedule_examples() {
    let pt = single(&[0.4, 0.6]);
    let ps = single(&[0.8, 0.2]);
    assert_eq!(vot_phase_end(100), 20);
    let at = |e| pseudo_schedule(&pt, &ps, e, 100, PseudoMode::VotThenIpt, None).unwrap();
    assert_eq!(at(20), vot_mix(&pt, &ps).unwrap());
    assert_eq!(at(21), ipt_mix(&pt, &ps, 21).unwrap());
    for e in 1..=100 {
        assert_eq!(
            pseudo_schedule(&pt, &ps, e, 100, PseudoMode::Ipt, None).unwrap(),
            ipt_mix(&pt, &ps, e).unwrap()
        );
    }
    // e = E: teacher weight E / (E + 1)
    let close_t = single(&[0.499, 0.501]);
    let close_s = single(&[0.6, 0.4]);
    let mixed = 100.0 / 101.0 * 0.501 + 1.0 / 101.0 * 0.4;
    let expected = u8::from(mixed > 0.5);
    assert_eq!(pseudo_schedule(&close_t, &close_s, 100, 100, PseudoMode::Ipt, None).unwrap().data(), &[expected]);
    assert!(pseudo_schedule(&pt, &ps, 0, 100, PseudoMode::Ipt, None).is_err());
    assert!(pseudo_schedule(&pt, &ps, 101, 100, PseudoMode::Ipt, None).is_err());
    let mut targets = EmaTargets::new(0.9);
    let l = pseudo_schedule(&pt, &ps, 3, 100, PseudoMode::Ema, Some((&mut targets, "a"))).unwrap();
    assert_eq!(l, vot_mix(&pt, &ps).unwrap());
    assert!(targets.targets.contains_key("a"));
    assert!(pseudo_schedule(&pt, &ps, 3, 100, PseudoMode::Ema, None).is_err());
}

#[test]
fn pairs_and_copy_paste_examples() {
    assert_eq!(pair_indices(2).unwrap(), vec![(0, 1)]);
    assert_eq!(pair_indices(4).unwrap(), vec![(0, 2), (1, 3)]);
    assert_eq!(pair_indices(6).unwrap(), vec![(0, 3), (1, 4), (2, 5)]);
    assert!(pair_indices(3).is_err() && pair_indices(0).is_err());

    let dims = Dims::cube(3);
    let x = vol(dims, |i| i as f64);
    let u = vol(dims, |i| -(i as f64));
    let ones = BinaryMask::ones(dims);
    let zeros = BinaryMask::zeros(dims);
    assert_eq!(bcp_images(&x, &u, &x, &u, &ones, &ones).unwrap().0, x);
    assert_eq!(bcp_images(&x, &u, &x, &u, &zeros, &zeros).unwrap().0, u);

    let y = LabelMap::new(dims, 2, (0..27).map(|i| (i % 2) as u8).collect()).unwrap();
    let p = LabelMap::new(dims, 2, (0..27).map(|i| (i % 3 == 0) as u8).collect()).unwrap();
    assert_eq!(bcp_labels(&y, &p, &y, &p, &ones, &ones).unwrap().0, y);
    let m = BinaryMask::from_fn(dims, |z, y, x| (z * 9 + y * 3 + x) % 4 != 1);
    let (a, b) = bcp_labels(&y, &y, &y, &y, &m, &m.complement()).unwrap();
    assert_eq!(a, y);
    assert_eq!(b, y);
}

fn volume(dims: Dims) -> impl Strategy<Value = Volume> {
    prop::collection::vec(0.0f64..1.0, dims.len()).prop_map(move |d| Volume::new(dims, d).unwrap())
}

fn mask(dims: Dims) -> impl Strategy<Value = BinaryMask> {
    prop::collection::vec(0u8..2, dims.len()).prop_map(move |d| BinaryMask::new(dims, d).unwrap())
}

fn labels(dims: Dims, classes: u8) -> impl Strategy<Value = LabelMap> {
    prop::collection::vec(0u8..classes, dims.len()).prop_map(move |d| LabelMap::new(dims, classes as usize, d).unwrap())
}

const D: Dims = Dims {
    depth: 3,
    height: 4,
    width: 3,
};

proptest! {
    #[test]
    fn blend_is_convex(w in volume(D), s in volume(D), mu in 0.0f64..=1.0) {
        let out = adaptive_blend(&w, &s, mu).unwrap();
        for ((o, a), b) in out.data().iter().zip(w.data()).zip(s.data()) {
            prop_assert!(*o >= a.min(*b) && *o <= a.max(*b));
        }
    }

    #[test]
    fn disagreement_blend_idempotent(u in volume(D), s in volume(D), d in mask(D)) {
        let once = disagreement_blend(&u, &s, &d).unwrap();
        prop_assert_eq!(disagreement_blend(&once, &s, &d).unwrap(), once);
    }

    #[test]
    fn zero_score_and_agreement_give_weak_view(w in volume(D), s in volume(D), m in mask(D)) {
        let ms = masked_strong_view(&w, &s, &m).unwrap();
        let out = disagreement_blend(&adaptive_blend(&w, &ms, 0.0).unwrap(), &ms, &BinaryMask::zeros(D)).unwrap();
        prop_assert_eq!(out, w);
    }

    #[test]
    fn copy_paste_partitions(x in volume(D), u in volume(D), y in labels(D, 3), p in labels(D, 3), m in mask(D)) {
        let (xl, xu) = bcp_images(&x, &u, &x, &u, &m, &m.complement()).unwrap();
        let (back_x, back_u) = bcp_images(&xl, &xu, &xl, &xu, &m, &m.complement()).unwrap();
        // m selects x in the first output and u in the second (via the complement)
        for i in 0..D.len() {
            let sel = m.data()[i] == 1;
            prop_assert_eq!(xl.data()[i], if sel { x.data()[i] } else { u.data()[i] });
            prop_assert_eq!(xu.data()[i], if sel { x.data()[i] } else { u.data()[i] });
        }
        let _ = (back_x, back_u);
        let (yl, yu) = bcp_labels(&y, &p, &y, &p, &m, &m).unwrap();
        for i in 0..D.len() {
            let sel = m.data()[i] == 1;
            prop_assert_eq!(yl.data()[i], if sel { y.data()[i] } else { p.data()[i] });
            prop_assert_eq!(yu.data()[i], if sel { p.data()[i] } else { y.data()[i] });
        }
    }
}
