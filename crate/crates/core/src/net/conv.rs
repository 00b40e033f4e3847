//! Channel-major dense kernels: 3x3x3 same-padded convolution, pointwise
//! convolution, block average pooling and nearest upsampling.

use crate::volume::Dims;

/// Voxel offset of kernel tap `k` in `0..27`, each component in `-1..=1`.
#[inline]
fn tap(k: usize) -> [isize; 3] {
    [(k / 9) as isize - 1, (k / 3 % 3) as isize - 1, (k % 3) as isize - 1]
}

/// Output index range along one axis for which `i + off` stays inside `0..n`.
#[inline]
fn valid(n: usize, off: isize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = (n as isize - off.max(0)) as usize;
    (lo, hi)
}

/// Row-level iteration over every in-grid (output row, shifted input row)
/// pair for tap `k`: calls `f(out_start, in_start, len)`.
#[inline]
fn for_rows(dims: Dims, k: usize, mut f: impl FnMut(usize, usize, usize)) {
    let [d, h, w] = dims.as_array();
    let [dz, dy, dx] = tap(k);
    let (z0, z1) = valid(d, dz);
    let (y0, y1) = valid(h, dy);
    let (x0, x1) = valid(w, dx);
    if x1 <= x0 {
        return;
    }
    for z in z0..z1 {
        let zi = (z as isize + dz) as usize;
        for y in y0..y1 {
            let yi = (y as isize + dy) as usize;
            let o = (z * h + y) * w + x0;
            let i = (zi * h + yi) * w + (x0 as isize + dx) as usize;
            f(o, i, x1 - x0);
        }
    }
}

/// `weights` laid out `[cout][cin][27]`.
pub(crate) fn conv3_forward(
    input: &[f64],
    cin: usize,
    dims: Dims,
    weights: &[f64],
    bias: &[f64],
    cout: usize,
) -> Vec<f64> {
    let n = dims.len();
    let mut out = vec![0.0; cout * n];
    for co in 0..cout {
        let plane = &mut out[co * n..(co + 1) * n];
        plane.fill(bias[co]);
        for ci in 0..cin {
            let src = &input[ci * n..(ci + 1) * n];
            for k in 0..27 {
                let wv = weights[(co * cin + ci) * 27 + k];
                for_rows(dims, k, |o, i, len| {
                    for (a, b) in plane[o..o + len].iter_mut().zip(&src[i..i + len]) {
                        *a += wv * b;
                    }
                });
            }
        }
    }
    out
}

/// Accumulates weight and bias gradients, and the input gradient when asked.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv3_backward(
    input: &[f64],
    cin: usize,
    dims: Dims,
    weights: &[f64],
    cout: usize,
    grad_out: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    mut grad_in: Option<&mut [f64]>,
) {
    let n = dims.len();
    for co in 0..cout {
        let g = &grad_out[co * n..(co + 1) * n];
        grad_b[co] += g.iter().sum::<f64>();
        for ci in 0..cin {
            let src = &input[ci * n..(ci + 1) * n];
            for k in 0..27 {
                let widx = (co * cin + ci) * 27 + k;
                let mut acc = 0.0;
                for_rows(dims, k, |o, i, len| {
                    acc += g[o..o + len]
                        .iter()
                        .zip(&src[i..i + len])
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
                });
                grad_w[widx] += acc;
                if let Some(gi) = grad_in.as_deref_mut() {
                    let wv = weights[widx];
                    let dst = &mut gi[ci * n..(ci + 1) * n];
                    for_rows(dims, k, |o, i, len| {
                        for (a, b) in dst[i..i + len].iter_mut().zip(&g[o..o + len]) {
                            *a += wv * b;
                        }
                    });
                }
            }
        }
    }
}

/// `weights` laid out `[cout][cin]`.
pub(crate) fn conv1_forward(
    input: &[f64],
    cin: usize,
    n: usize,
    weights: &[f64],
    bias: &[f64],
    cout: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; cout * n];
    for co in 0..cout {
        let plane = &mut out[co * n..(co + 1) * n];
        plane.fill(bias[co]);
        for ci in 0..cin {
            let wv = weights[co * cin + ci];
            for (a, b) in plane.iter_mut().zip(&input[ci * n..(ci + 1) * n]) {
                *a += wv * b;
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv1_backward(
    input: &[f64],
    cin: usize,
    n: usize,
    weights: &[f64],
    cout: usize,
    grad_out: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    grad_in: &mut [f64],
) {
    for co in 0..cout {
        let g = &grad_out[co * n..(co + 1) * n];
        grad_b[co] += g.iter().sum::<f64>();
        for ci in 0..cin {
            let src = &input[ci * n..(ci + 1) * n];
            grad_w[co * cin + ci] += g.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
            let wv = weights[co * cin + ci];
            for (a, b) in grad_in[ci * n..(ci + 1) * n].iter_mut().zip(g) {
                *a += wv * b;
            }
        }
    }
}

/// Mean over non-overlapping `f^3` blocks. `dims` must be divisible by `f`.
pub(crate) fn avg_pool(input: &[f64], channels: usize, dims: Dims, f: usize) -> Vec<f64> {
    let [d, h, w] = dims.as_array();
    let (pd, ph, pw) = (d / f, h / f, w / f);
    let (n, pn) = (dims.len(), pd * ph * pw);
    let scale = 1.0 / (f * f * f) as f64;
    let mut out = vec![0.0; channels * pn];
    for c in 0..channels {
        let src = &input[c * n..(c + 1) * n];
        let dst = &mut out[c * pn..(c + 1) * pn];
        for z in 0..d {
            for y in 0..h {
                let row = &src[(z * h + y) * w..(z * h + y + 1) * w];
                let prow = &mut dst[((z / f) * ph + y / f) * pw..((z / f) * ph + y / f + 1) * pw];
                for (x, v) in row.iter().enumerate() {
                    prow[x / f] += v;
                }
            }
        }
        dst.iter_mut().for_each(|v| *v *= scale);
    }
    out
}

/// Adjoint of [`avg_pool`], accumulated into `grad_in`.
pub(crate) fn avg_pool_backward(
    grad_out: &[f64],
    channels: usize,
    dims: Dims,
    f: usize,
    grad_in: &mut [f64],
) {
    let [d, h, w] = dims.as_array();
    let (ph, pw) = (h / f, w / f);
    let (n, pn) = (dims.len(), (d / f) * ph * pw);
    let scale = 1.0 / (f * f * f) as f64;
    for c in 0..channels {
        let g = &grad_out[c * pn..(c + 1) * pn];
        let dst = &mut grad_in[c * n..(c + 1) * n];
        for z in 0..d {
            for y in 0..h {
                let prow = &g[((z / f) * ph + y / f) * pw..];
                let row = &mut dst[(z * h + y) * w..(z * h + y + 1) * w];
                for (x, v) in row.iter_mut().enumerate() {
                    *v += prow[x / f] * scale;
                }
            }
        }
    }
}

/// Nearest-neighbour upsampling by `f` to `dims`.
pub(crate) fn upsample(input: &[f64], channels: usize, dims: Dims, f: usize) -> Vec<f64> {
    let [d, h, w] = dims.as_array();
    let (ph, pw) = (h / f, w / f);
    let (n, pn) = (dims.len(), (d / f) * ph * pw);
    let mut out = vec![0.0; channels * n];
    for c in 0..channels {
        let src = &input[c * pn..(c + 1) * pn];
        let dst = &mut out[c * n..(c + 1) * n];
        for z in 0..d {
            for y in 0..h {
                let prow = &src[((z / f) * ph + y / f) * pw..];
                let row = &mut dst[(z * h + y) * w..(z * h + y + 1) * w];
                for (x, v) in row.iter_mut().enumerate() {
                    *v = prow[x / f];
                }
            }
        }
    }
    out
}

pub(crate) fn upsample_backward(grad_out: &[f64], channels: usize, dims: Dims, f: usize) -> Vec<f64> {
    let [d, h, w] = dims.as_array();
    let (ph, pw) = (h / f, w / f);
    let (n, pn) = (dims.len(), (d / f) * ph * pw);
    let mut out = vec![0.0; channels * pn];
    for c in 0..channels {
        let g = &grad_out[c * n..(c + 1) * n];
        let dst = &mut out[c * pn..(c + 1) * pn];
        for z in 0..d {
            for y in 0..h {
                let row = &g[(z * h + y) * w..(z * h + y + 1) * w];
                let prow = &mut dst[((z / f) * ph + y / f) * pw..((z / f) * ph + y / f + 1) * pw];
                for (x, v) in row.iter().enumerate() {
                    prow[x / f] += v;
                }
            }
        }
    }
    out
}
