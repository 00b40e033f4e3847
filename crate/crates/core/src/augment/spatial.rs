//! Geometry-changing transforms for the weak augmentation path.
//!
//! Every transform maps an output voxel back to a source location, so the
//! output grid always keeps the input dims. Samples falling outside the
//! source are zero (intensities) or background (labels).

use serde::{Deserialize, Serialize};

use crate::volume::{Dims, LabelMap, Volume};

/// Anatomical plane a right-angle rotation acts in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plane {
    /// (z, y) plane.
    Sagittal,
    /// (z, x) plane.
    Coronal,
}

impl Plane {
    pub fn axes(self) -> (usize, usize) {
        match self {
            Plane::Sagittal => (0, 1),
            Plane::Coronal => (0, 2),
        }
    }

    /// Whether quarter turns keep the grid shape.
    pub fn is_square(self, dims: Dims) -> bool {
        let d = dims.as_array();
        let (a, b) = self.axes();
        d[a] == d[b]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interp {
    Nearest,
    Linear,
}

/// Source index for each output voxel under a permutation-type transform.
fn gather<T: Copy>(dims: Dims, data: &[T], src: impl Fn([usize; 3]) -> [usize; 3]) -> Vec<T> {
    let mut out = Vec::with_capacity(data.len());
    for z in 0..dims.depth {
        for y in 0..dims.height {
            for x in 0..dims.width {
                let [sz, sy, sx] = src([z, y, x]);
                out.push(data[dims.index(sz, sy, sx)]);
            }
        }
    }
    out
}

fn flip_map(dims: Dims, axis: usize) -> impl Fn([usize; 3]) -> [usize; 3] {
    let n = dims.as_array()[axis];
    move |mut p| {
        p[axis] = n - 1 - p[axis];
        p
    }
}

fn rot_map(dims: Dims, plane: Plane, turns: u8) -> impl Fn([usize; 3]) -> [usize; 3] {
    let (a, b) = plane.axes();
    let d = dims.as_array();
    let (na, nb) = (d[a], d[b]);
    move |p| {
        let mut s = p;
        match turns % 4 {
            0 => {}
            1 => {
                s[a] = p[b];
                s[b] = na - 1 - p[a];
            }
            2 => {
                s[a] = na - 1 - p[a];
                s[b] = nb - 1 - p[b];
            }
            _ => {
                s[a] = nb - 1 - p[b];
                s[b] = p[a];
            }
        }
        s
    }
}

pub fn flip(v: &Volume, axis: usize) -> Volume {
    let mut out = Volume::from_raw(v.dims(), gather(v.dims(), v.data(), flip_map(v.dims(), axis)));
    out.set_spacing(v.spacing());
    out
}

pub fn flip_labels(l: &LabelMap, axis: usize) -> LabelMap {
    LabelMap::from_raw(
        l.dims(),
        l.classes(),
        gather(l.dims(), l.data(), flip_map(l.dims(), axis)),
    )
}

/// Rotate by `turns` quarter turns. Odd turns need a square plane.
pub fn rot90(v: &Volume, plane: Plane, turns: u8) -> Volume {
    assert!(turns % 2 == 0 || plane.is_square(v.dims()));
    let mut out = Volume::from_raw(
        v.dims(),
        gather(v.dims(), v.data(), rot_map(v.dims(), plane, turns)),
    );
    out.set_spacing(v.spacing());
    out
}

pub fn rot90_labels(l: &LabelMap, plane: Plane, turns: u8) -> LabelMap {
    assert!(turns % 2 == 0 || plane.is_square(l.dims()));
    LabelMap::from_raw(
        l.dims(),
        l.classes(),
        gather(l.dims(), l.data(), rot_map(l.dims(), plane, turns)),
    )
}

/// Inverse affine map about the grid centre: `src = matrix * (p - c) + c + offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverseAffine {
    pub matrix: [[f64; 3]; 3],
    pub offset: [f64; 3],
}

impl InverseAffine {
    pub fn zoom(factor: f64) -> Self {
        let s = 1.0 / factor;
        Self {
            matrix: [[s, 0.0, 0.0], [0.0, s, 0.0], [0.0, 0.0, s]],
            offset: [0.0; 3],
        }
    }

    fn source(&self, dims: Dims, p: [usize; 3]) -> [f64; 3] {
        let c = dims.as_array().map(|n| (n as f64 - 1.0) / 2.0);
        let r = [p[0] as f64 - c[0], p[1] as f64 - c[1], p[2] as f64 - c[2]];
        let mut s = [0.0; 3];
        for (i, row) in self.matrix.iter().enumerate() {
            s[i] = row[0] * r[0] + row[1] * r[1] + row[2] * r[2] + c[i] + self.offset[i];
        }
        s
    }
}

fn sample_linear(v: &Volume, s: [f64; 3]) -> f64 {
    let dims = v.dims();
    let n = dims.as_array();
    let base = s.map(f64::floor);
    let frac = [s[0] - base[0], s[1] - base[1], s[2] - base[2]];
    let mut acc = 0.0;
    for corner in 0..8 {
        let mut w = 1.0;
        let mut idx = [0usize; 3];
        let mut inside = true;
        for axis in 0..3 {
            let hi = (corner >> (2 - axis)) & 1 == 1;
            w *= if hi { frac[axis] } else { 1.0 - frac[axis] };
            let i = base[axis] as i64 + i64::from(hi);
            if i < 0 || i >= n[axis] as i64 {
                inside = false;
            } else {
                idx[axis] = i as usize;
            }
        }
        if inside && w != 0.0 {
            acc += w * v.data()[dims.index(idx[0], idx[1], idx[2])];
        }
    }
    acc
}

fn nearest_index(dims: Dims, s: [f64; 3]) -> Option<usize> {
    let n = dims.as_array();
    let mut idx = [0usize; 3];
    for axis in 0..3 {
        let i = (s[axis] + 0.5).floor();
        if i < 0.0 || i >= n[axis] as f64 {
            return None;
        }
        idx[axis] = i as usize;
    }
    Some(dims.index(idx[0], idx[1], idx[2]))
}

pub fn resample(v: &Volume, map: &InverseAffine, interp: Interp) -> Volume {
    let dims = v.dims();
    let mut data = Vec::with_capacity(dims.len());
    for z in 0..dims.depth {
        for y in 0..dims.height {
            for x in 0..dims.width {
                let s = map.source(dims, [z, y, x]);
                data.push(match interp {
                    Interp::Linear => sample_linear(v, s),
                    Interp::Nearest => nearest_index(dims, s).map_or(0.0, |i| v.data()[i]),
                });
            }
        }
    }
    let mut out = Volume::from_raw(dims, data);
    out.set_spacing(v.spacing());
    out
}

pub fn resample_labels(l: &LabelMap, map: &InverseAffine) -> LabelMap {
    let dims = l.dims();
    let mut data = Vec::with_capacity(dims.len());
    for z in 0..dims.depth {
        for y in 0..dims.height {
            for x in 0..dims.width {
                let s = map.source(dims, [z, y, x]);
                data.push(nearest_index(dims, s).map_or(0, |i| l.data()[i]));
            }
        }
    }
    LabelMap::from_raw(dims, l.classes(), data)
}
