use ipacp::io::{read_labels, read_volume, sidecar_path, write_labels, write_volume};
use ipacp::volume::{argmax_labels, clip_intensity, minmax_normalize, Dims, LabelMap, ProbMap, Volume};
use ipacp::Error;
use proptest::prelude::*;

fn line(values: &[f64]) -> Volume {
    Volume::new(Dims::new(1, 1, values.len()).unwrap(), values.to_vec()).unwrap()
}

#[test]
fn clip_to_windows() {
    let v = clip_intensity(&line(&[-500.0, 0.0, 400.0]), -200.0, 300.0).unwrap();
    assert_eq!(v.data(), &[-200.0, 0.0, 300.0]);
    let inside = line(&[1.0, 2.0, 3.0]);
    assert_eq!(clip_intensity(&inside, 0.0, 5.0).unwrap(), inside);
    let v = clip_intensity(&line(&[-1024.0, 3071.0]), -100.0, 200.0).unwrap();
    assert_eq!(v.data(), &[-100.0, 200.0]);
    assert!(clip_intensity(&inside, 2.0, 1.0).is_err());
}

#[test]
fn normalize_examples() {
    assert_eq!(minmax_normalize(&line(&[0.0, 5.0, 10.0])).data(), &[0.0, 0.5, 1.0]);
    assert_eq!(minmax_normalize(&line(&[7.0; 4])).data(), &[0.0; 4]);
    // (x + 200) / 500
    assert_eq!(minmax_normalize(&line(&[-200.0, 50.0, 300.0])).data(), &[0.0, 0.5, 1.0]);
}

#[test]
fn argmax_examples() {
    let one = Dims::cube(1);
    assert_eq!(argmax_labels(&ProbMap::from_voxels(one, &[vec![0.3, 0.7]]).unwrap()).data(), &[1]);
    assert_eq!(argmax_labels(&ProbMap::from_voxels(one, &[vec![0.5, 0.5]]).unwrap()).data(), &[0]);
    let u = argmax_labels(&ProbMap::uniform(Dims::cube(3), 3));
    assert!(u.data().iter().all(|&l| l == 0));
}

#[test]
fn file_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let dims = Dims::cube(4);
    let v = Volume::from_fn(dims, |z, y, x| ((z * 31 + y * 7 + x) as f64).sin() * 1e3).unwrap();
    let p = dir.path().join("v.vol");
    write_volume(&v, &p).unwrap();
    let bytes = std::fs::read(&p).unwrap();
    let back = read_volume(&p).unwrap();
    assert_eq!(back, v);
    write_volume(&back, &p).unwrap();
    assert_eq!(std::fs::read(&p).unwrap(), bytes);

    std::fs::write(&p, &bytes[..bytes.len() - 8]).unwrap();
    assert!(matches!(read_volume(&p), Err(Error::LengthMismatch { .. })));

    std::fs::write(sidecar_path(&p), r#"{"dims":[0,4,4],"dtype":"f64"}"#).unwrap();
    assert!(matches!(read_volume(&p), Err(Error::InvalidDims(_))));

    let l = LabelMap::new(dims, 3, (0..64).map(|i| (i % 3) as u8).collect()).unwrap();
    let lp = dir.path().join("l.vol");
    write_labels(&l, &lp).unwrap();
    assert_eq!(read_labels(&lp).unwrap(), l);
    assert!(read_volume(&lp).is_err());
}

fn small_volume() -> impl Strategy<Value = Volume> {
    (1usize..5, 1usize..5, 1usize..5).prop_flat_map(|(d, h, w)| {
        prop::collection::vec(-1e3f64..1e3, d * h * w)
            .prop_map(move |data| Volume::new(Dims::new(d, h, w).unwrap(), data).unwrap())
    })
}

proptest! {
    #[test]
    fn clip_is_idempotent(v in small_volume(), lo in -500f64..0.0, span in 0f64..800.0) {
        let once = clip_intensity(&v, lo, lo + span).unwrap();
        prop_assert_eq!(clip_intensity(&once, lo, lo + span).unwrap(), once);
    }

    #[test]
    fn normalize_ignores_positive_affine(v in small_volume(), a in 0.1f64..50.0, b in -100f64..100.0) {
        let moved = Volume::new(v.dims(), v.data().iter().map(|x| a * x + b).collect()).unwrap();
        let (n1, n2) = (minmax_normalize(&v), minmax_normalize(&moved));
        for (x, y) in n1.data().iter().zip(n2.data()) {
            prop_assert!((x - y).abs() <= 1e-6);
        }
    }

    #[test]
    fn argmax_ignores_monotone_rescaling(raw in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 3), 1..20), k in 0.2f64..5.0) {
        let voxels: Vec<Vec<f64>> = raw.iter().map(|v| { let s: f64 = v.iter().sum(); v.iter().map(|x| x / s).collect() }).collect();
        let dims = Dims::new(1, 1, voxels.len()).unwrap();
        let p = ProbMap::from_voxels(dims, &voxels).unwrap();
        // x -> x^k, renormalised, keeps per-voxel order
        let q: Vec<Vec<f64>> = voxels.iter().map(|v| { let w: Vec<f64> = v.iter().map(|x| x.powf(k)).collect(); let s: f64 = w.iter().sum(); w.iter().map(|x| x / s).collect() }).collect();
        let q = ProbMap::from_voxels(dims, &q).unwrap();
        let (a, b) = (argmax_labels(&p), argmax_labels(&q));
        for (i, v) in voxels.iter().enumerate() {
            let mut sorted = v.clone();
            sorted.sort_by(|x, y| y.partial_cmp(x).unwrap());
            if sorted[0] - sorted[1] > 1e-9 {
                prop_assert_eq!(a.data()[i], b.data()[i]);
            }
        }
    }

    #[test]
    fn round_trip_is_byte_identical(v in small_volume()) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.vol");
        write_volume(&v, &p).unwrap();
        let first = std::fs::read(&p).unwrap();
        let back = read_volume(&p).unwrap();
        prop_assert_eq!(&back, &v);
        write_volume(&back, &p).unwrap();
        prop_assert_eq!(std::fs::read(&p).unwrap(), first);
    }
}
