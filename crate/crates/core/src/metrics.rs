//! Overlap and surface-distance metrics on binary masks.
//!
//! Surface distances use an exact separable squared Euclidean distance
//! transform of the other mask's surface, honouring voxel spacing.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_same_dims, Error, Result, Side};
use crate::volume::{BinaryMask, Dims};

fn counts(a: &BinaryMask, b: &BinaryMask) -> Result<(usize, usize, usize)> {
    ensure_same_dims(a.dims(), b.dims())?;
    let mut inter = 0;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        inter += usize::from(x == 1 && y == 1);
    }
    Ok((a.count_ones(), b.count_ones(), inter))
}

/// `2|a & b| / (|a| + |b|)`, 1 when both are empty.
pub fn dice_score(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let (na, nb, i) = counts(a, b)?;
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * i as f64 / (na + nb) as f64)
}

/// `|a & b| / |a | b|`, 1 when both are empty.
pub fn jaccard(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let (na, nb, i) = counts(a, b)?;
    let union = na + nb - i;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(i as f64 / union as f64)
}

/// Voxelwise binary root-mean-square error, in percent.
pub fn rmse(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    ensure_same_dims(a.dims(), b.dims())?;
    let diff = a.data().iter().zip(b.data()).filter(|(x, y)| x != y).count();
    Ok(100.0 * (diff as f64 / a.dims().len() as f64).sqrt())
}

/// Foreground voxels with at least one 6-neighbour in the background or
/// outside the grid.
pub fn surface_voxels(m: &BinaryMask) -> BinaryMask {
    let dims = m.dims();
    let [d, h, w] = dims.as_array();
    let data = m.data();
    let fg = |z: isize, y: isize, x: isize| {
        z >= 0
            && y >= 0
            && x >= 0
            && (z as usize) < d
            && (y as usize) < h
            && (x as usize) < w
            && data[dims.index(z as usize, y as usize, x as usize)] == 1
    };
    BinaryMask::from_fn(dims, |z, y, x| {
        if data[dims.index(z, y, x)] == 0 {
            return false;
        }
        let (z, y, x) = (z as isize, y as isize, x as isize);
        [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
            .iter()
            .any(|&(dz, dy, dx)| !fg(z + dz, y + dy, x + dx))
    })
}

/// Exact 1D lower envelope of parabolas `w2 (q - p)^2 + f(p)`. Infinite
/// entries are not sites.
fn edt_1d(f: &[f64], w2: f64, out: &mut [f64], sites: &mut Vec<usize>, bounds: &mut Vec<f64>) {
    sites.clear();
    bounds.clear();
    let key = |p: usize| f[p] + w2 * (p * p) as f64;
    for q in 0..f.len() {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            match sites.last() {
                None => {
                    sites.push(q);
                    break;
                }
                Some(&p) => {
                    let s = (key(q) - key(p)) / (2.0 * w2 * (q - p) as f64);
                    if s <= *bounds.last().expect("one bound per site") {
                        sites.pop();
                        bounds.pop();
                    } else {
                        sites.push(q);
                        bounds.push(s);
                        break;
                    }
                }
            }
        }
        if sites.len() == 1 && bounds.is_empty() {
            bounds.push(f64::NEG_INFINITY);
        }
    }
    if sites.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while k + 1 < sites.len() && bounds[k + 1] < q as f64 {
            k += 1;
        }
        let p = sites[k];
        let dq = q as f64 - p as f64;
        *o = w2 * dq * dq + f[p];
    }
}

/// Squared distance from every voxel to the nearest set voxel of `m`.
pub fn squared_distance_map(m: &BinaryMask, spacing: [f64; 3]) -> Vec<f64> {
    let dims = m.dims();
    let [d, h, w] = dims.as_array();
    let mut g: Vec<f64> = m
        .data()
        .iter()
        .map(|&v| if v == 1 { 0.0 } else { f64::INFINITY })
        .collect();
    let mut sites = Vec::new();
    let mut bounds = Vec::new();
    let mut line_in = Vec::new();
    let mut line_out = Vec::new();
    let mut pass = |g: &mut Vec<f64>, len: usize, w2: f64, index: &dyn Fn(usize, usize) -> usize, lines: usize| {
        line_in.resize(len, 0.0);
        line_out.resize(len, 0.0);
        for l in 0..lines {
            for i in 0..len {
                line_in[i] = g[index(l, i)];
            }
            edt_1d(&line_in, w2, &mut line_out, &mut sites, &mut bounds);
            for i in 0..len {
                g[index(l, i)] = line_out[i];
            }
        }
    };
    pass(&mut g, w, spacing[2] * spacing[2], &|l, i| l * w + i, d * h);
    pass(&mut g, h, spacing[1] * spacing[1], &|l, i| (l / w * h + i) * w + l % w, d * w);
    pass(&mut g, d, spacing[0] * spacing[0], &|l, i| i * h * w + l, h * w);
    g
}

fn check_spacing(spacing: [f64; 3]) -> Result<()> {
    if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::InvalidParameter(format!("spacing {spacing:?} must be positive")));
    }
    Ok(())
}

/// Distances from each surface voxel of `from` to the surface of `to`, in
/// voxel index order.
pub fn directed_surface_distances(from: &BinaryMask, to: &BinaryMask, spacing: [f64; 3]) -> Result<Vec<f64>> {
    ensure_same_dims(from.dims(), to.dims())?;
    check_spacing(spacing)?;
    let sf = surface_voxels(from);
    let dist = squared_distance_map(&surface_voxels(to), spacing);
    Ok(sf
        .data()
        .iter()
        .zip(&dist)
        .filter(|(&s, _)| s == 1)
        .map(|(_, &d2)| d2.sqrt())
        .collect())
}

/// Nearest-rank percentile of an unsorted list; `q` in `(0, 100]`.
pub fn nearest_rank(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((q / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

/// Both directed distance lists, or `None` when both masks are empty.
fn surface_pair(a: &BinaryMask, b: &BinaryMask, spacing: [f64; 3]) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
    ensure_same_dims(a.dims(), b.dims())?;
    match (a.count_ones(), b.count_ones()) {
        (0, 0) => Ok(None),
        (0, _) => Err(Error::EmptyMask(Side::Prediction)),
        (_, 0) => Err(Error::EmptyMask(Side::Reference)),
        _ => Ok(Some((
            directed_surface_distances(a, b, spacing)?,
            directed_surface_distances(b, a, spacing)?,
        ))),
    }
}

/// Symmetric 95th-percentile surface distance. `a` is the prediction and
/// `b` the reference; both empty gives 0.
pub fn hd95(a: &BinaryMask, b: &BinaryMask, spacing: [f64; 3]) -> Result<f64> {
    Ok(match surface_pair(a, b, spacing)? {
        None => 0.0,
        Some((ab, ba)) => nearest_rank(&ab, 95.0).max(nearest_rank(&ba, 95.0)),
    })
}

/// Mean of both directed surface distance lists pooled together.
pub fn asd(a: &BinaryMask, b: &BinaryMask, spacing: [f64; 3]) -> Result<f64> {
    Ok(match surface_pair(a, b, spacing)? {
        None => 0.0,
        Some((ab, ba)) => {
            let total: f64 = ab.iter().sum::<f64>() + ba.iter().sum::<f64>();
            total / (ab.len() + ba.len()) as f64
        }
    })
}

/// One evaluated case. Overlap metrics and RMSE are in percent; distances
/// are `None` when exactly one mask is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub id: String,
    pub dice: f64,
    pub jaccard: f64,
    pub rmse: f64,
    pub hd95: Option<f64>,
    pub asd: Option<f64>,
}

pub fn evaluate_case(id: &str, pred: &BinaryMask, reference: &BinaryMask, spacing: [f64; 3]) -> Result<CaseMetrics> {
    let undefined = |e: Error| match e {
        Error::EmptyMask(_) => Ok(None),
        other => Err(other),
    };
    Ok(CaseMetrics {
        id: id.to_string(),
        dice: 100.0 * dice_score(pred, reference)?,
        jaccard: 100.0 * jaccard(pred, reference)?,
        rmse: rmse(pred, reference)?,
        hd95: hd95(pred, reference, spacing).map(Some).or_else(undefined)?,
        asd: asd(pred, reference, spacing).map(Some).or_else(undefined)?,
    })
}

/// Mean and population standard deviation over the defined values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
    pub undefined: usize,
}

impl Summary {
    pub fn of(values: impl IntoIterator<Item = Option<f64>>) -> Self {
        let mut defined = Vec::new();
        let mut undefined = 0;
        for v in values {
            match v {
                Some(x) => defined.push(x),
                None => undefined += 1,
            }
        }
        if defined.is_empty() {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
                count: 0,
                undefined,
            };
        }
        let n = defined.len() as f64;
        let mean = defined.iter().sum::<f64>() / n;
        let var = defined.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
            count: defined.len(),
            undefined,
        }
    }
}

pub fn grid_points(dims: Dims, m: &BinaryMask) -> Vec<[usize; 3]> {
    m.data()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v == 1)
        .map(|(i, _)| {
            let (z, y, x) = dims.coords(i);
            [z, y, x]
        })
        .collect()
}
