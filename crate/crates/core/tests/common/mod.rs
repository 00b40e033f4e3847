//! Brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use ipacp::volume::BinaryMask;

pub fn points(m: &BinaryMask) -> Vec<[usize; 3]> {
    let d = m.dims();
    (0..d.len())
        .filter(|&i| m.data()[i] == 1)
        .map(|i| {
            let (z, y, x) = d.coords(i);
            [z, y, x]
        })
        .collect()
}

/// Shell by direct neighbour inspection.
pub fn brute_surface(m: &BinaryMask) -> Vec<[usize; 3]> {
    let d = m.dims().as_array();
    let inside = |p: [i64; 3]| {
        (0..3).all(|a| p[a] >= 0 && p[a] < d[a] as i64) && m.get(p[0] as usize, p[1] as usize, p[2] as usize)
    };
    points(m)
        .into_iter()
        .filter(|p| {
            let q = p.map(|c| c as i64);
            (0..3).any(|a| {
                [-1i64, 1].iter().any(|&s| {
                    let mut n = q;
                    n[a] += s;
                    !inside(n)
                })
            })
        })
        .collect()
}

pub fn brute_directed(from: &[[usize; 3]], to: &[[usize; 3]], sp: [f64; 3]) -> Vec<f64> {
    from.iter()
        .map(|p| {
            to.iter()
                .map(|q| {
                    (0..3)
                        .map(|a| ((p[a] as f64 - q[a] as f64) * sp[a]).powi(2))
                        .sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect()
}

pub fn rank95(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let k = (0.95 * s.len() as f64).ceil() as usize;
    s[k.max(1) - 1]
}

pub fn brute_hd95_asd(a: &BinaryMask, b: &BinaryMask, sp: [f64; 3]) -> (f64, f64) {
    let (sa, sb) = (brute_surface(a), brute_surface(b));
    let ab = brute_directed(&sa, &sb, sp);
    let ba = brute_directed(&sb, &sa, sp);
    let hd = rank95(&ab).max(rank95(&ba));
    let mean = (ab.iter().sum::<f64>() + ba.iter().sum::<f64>()) / (ab.len() + ba.len()) as f64;
    (hd, mean)
}

pub fn random_mask(dims: ipacp::volume::Dims, density: f64, r: &mut impl rand::Rng) -> BinaryMask {
    loop {
        let m = BinaryMask::from_fn(dims, |_, _, _| r.random::<f64>() < density);
        if m.count_ones() > 0 {
            return m;
        }
    }
}
