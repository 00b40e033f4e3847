//! Intensity-only transforms for the strong augmentation path. None of these
//! move voxels: output voxel `(z, y, x)` depends on input voxel `(z, y, x)` and,
//! for smoothing and Gibbs ringing, on its neighbourhood.

use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::rng;
use crate::volume::{Dims, Volume};

/// Additive zero-mean Gaussian noise with absolute standard deviation `std`.
pub fn gaussian_noise(v: &Volume, std: f64, noise_seed: u64) -> Volume {
    if std == 0.0 {
        return v.clone();
    }
    let normal = Normal::new(0.0, std).expect("finite noise std");
    let mut r = rng::seeded(noise_seed);
    let mut out = v.clone();
    for x in out.data_mut() {
        *x += normal.sample(&mut r);
    }
    out
}

/// Exponents `(a, b, c)` of the monomials `z^a y^b x^c` with total degree <= `degree`.
pub fn bias_monomials(degree: usize) -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    for total in 0..=degree {
        for a in 0..=total {
            for b in 0..=total - a {
                out.push([a, b, total - a - b]);
            }
        }
    }
    out
}

fn centred_coord(i: usize, n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        2.0 * i as f64 / (n - 1) as f64 - 1.0
    }
}

/// Multiply by `exp(poly(z, y, x))` on coordinates normalised to `[-1, 1]`.
pub fn bias_field(v: &Volume, degree: usize, coefficients: &[f64]) -> Volume {
    let terms = bias_monomials(degree);
    assert_eq!(terms.len(), coefficients.len(), "one coefficient per monomial");
    let dims = v.dims();
    let mut out = v.clone();
    let data = out.data_mut();
    for z in 0..dims.depth {
        let cz = centred_coord(z, dims.depth);
        for y in 0..dims.height {
            let cy = centred_coord(y, dims.height);
            for x in 0..dims.width {
                let cx = centred_coord(x, dims.width);
                let poly: f64 = terms
                    .iter()
                    .zip(coefficients)
                    .map(|(e, k)| {
                        k * cz.powi(e[0] as i32) * cy.powi(e[1] as i32) * cx.powi(e[2] as i32)
                    })
                    .sum();
                data[dims.index(z, y, x)] *= poly.exp();
            }
        }
    }
    out
}

fn fft_axis(buf: &mut [Complex<f64>], dims: Dims, axis: usize, inverse: bool, planner: &mut FftPlanner<f64>) {
    let n = dims.as_array()[axis];
    let fft = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    let mut line = vec![Complex::new(0.0, 0.0); n];
    let [d, h, w] = dims.as_array();
    let (outer_a, outer_b) = match axis {
        0 => (h, w),
        1 => (d, w),
        _ => (d, h),
    };
    for a in 0..outer_a {
        for b in 0..outer_b {
            let index = |k: usize| match axis {
                0 => dims.index(k, a, b),
                1 => dims.index(a, k, b),
                _ => dims.index(a, b, k),
            };
            for (k, slot) in line.iter_mut().enumerate() {
                *slot = buf[index(k)];
            }
            fft.process(&mut line);
            for (k, slot) in line.iter().enumerate() {
                buf[index(k)] = *slot;
            }
        }
    }
}

/// Gibbs ringing: truncate k-space to a centred box whose half-width along
/// each axis is `(1 - alpha)` of the Nyquist extent, then transform back.
/// `alpha = 0` keeps every frequency.
pub fn gibbs_noise(v: &Volume, alpha: f64) -> Volume {
    let dims = v.dims();
    let mut buf: Vec<Complex<f64>> = v.data().iter().map(|&x| Complex::new(x, 0.0)).collect();
    let mut planner = FftPlanner::new();
    for axis in 0..3 {
        fft_axis(&mut buf, dims, axis, false, &mut planner);
    }
    let keep = |k: usize, n: usize| {
        let f = if k <= n / 2 { k as f64 } else { n as f64 - k as f64 };
        f <= (1.0 - alpha) * (n as f64 / 2.0)
    };
    for z in 0..dims.depth {
        for y in 0..dims.height {
            for x in 0..dims.width {
                if !(keep(z, dims.depth) && keep(y, dims.height) && keep(x, dims.width)) {
                    buf[dims.index(z, y, x)] = Complex::new(0.0, 0.0);
                }
            }
        }
    }
    for axis in 0..3 {
        fft_axis(&mut buf, dims, axis, true, &mut planner);
    }
    let scale = 1.0 / dims.len() as f64;
    let mut out = v.clone();
    for (o, c) in out.data_mut().iter_mut().zip(&buf) {
        *o = c.re * scale;
    }
    out
}

/// Gamma contrast on the volume's own intensity range.
pub fn adjust_contrast(v: &Volume, gamma: f64) -> Volume {
    let (lo, hi) = v.min_max();
    let range = hi - lo;
    if range <= 0.0 {
        return v.clone();
    }
    v.map(|x| ((x - lo) / range).clamp(0.0, 1.0).powf(gamma) * range + lo)
}

pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Separable Gaussian blur with edge replication.
pub fn gaussian_smooth(v: &Volume, sigma: f64) -> Volume {
    if sigma <= 0.0 {
        return v.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    let dims = v.dims();
    let n = dims.as_array();
    let mut cur = v.data().to_vec();
    for axis in 0..3 {
        let mut next = vec![0.0; cur.len()];
        for z in 0..dims.depth {
            for y in 0..dims.height {
                for x in 0..dims.width {
                    let p = [z, y, x];
                    let mut acc = 0.0;
                    for (k, w) in kernel.iter().enumerate() {
                        let mut q = p;
                        let shifted = p[axis] as i64 + k as i64 - radius;
                        q[axis] = shifted.clamp(0, n[axis] as i64 - 1) as usize;
                        acc += w * cur[dims.index(q[0], q[1], q[2])];
                    }
                    next[dims.index(z, y, x)] = acc;
                }
            }
        }
        cur = next;
    }
    let mut out = Volume::from_raw(dims, cur);
    out.set_spacing(v.spacing());
    out
}
