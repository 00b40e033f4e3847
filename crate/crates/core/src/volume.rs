//! Dense 3D grids shared by every stage of the pipeline.
//!
//! All grids are stored row-major with depth as the slowest axis, so voxel
//! `(z, y, x)` lives at `(z * height + y) * width + x`. Probability maps add a
//! leading class axis (`class * voxels + voxel`).

use serde::{Deserialize, Serialize};

use crate::error::{ensure_same_dims, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub depth: usize,
    pub height: usize,
    pub width: usize,
}

impl Dims {
    pub fn new(depth: usize, height: usize, width: usize) -> Result<Self> {
        if depth == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidDims(format!(
                "({depth}, {height}, {width}) has a zero extent"
            )));
        }
        Ok(Self {
            depth,
            height,
            width,
        })
    }

    /// Cube with equal extents. Panics on zero.
    pub fn cube(edge: usize) -> Self {
        Self::new(edge, edge, edge).expect("cube edge must be positive")
    }

    pub fn len(&self) -> usize {
        self.depth * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.height + y) * self.width + x
    }

    #[inline]
    pub fn coords(&self, index: usize) -> (usize, usize, usize) {
        let x = index % self.width;
        let rest = index / self.width;
        (rest / self.height, rest % self.height, x)
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.depth, self.height, self.width]
    }

    pub fn from_array(a: [usize; 3]) -> Result<Self> {
        Self::new(a[0], a[1], a[2])
    }

    pub fn min_extent(&self) -> usize {
        self.depth.min(self.height).min(self.width)
    }

    pub fn divisible_by(&self, factor: usize) -> bool {
        factor > 0
            && self.depth % factor == 0
            && self.height % factor == 0
            && self.width % factor == 0
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.depth, self.height, self.width)
    }
}

/// Real-valued scalar field: an image or one of its augmented views.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: Dims,
    data: Vec<f64>,
    spacing: Option<[f64; 3]>,
}

impl Volume {
    pub fn new(dims: Dims, data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::LengthMismatch {
                expected: dims.len(),
                actual: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self {
            dims,
            data,
            spacing: None,
        })
    }

    /// Caller guarantees length and finiteness.
    pub(crate) fn from_raw(dims: Dims, data: Vec<f64>) -> Self {
        debug_assert_eq!(dims.len(), data.len());
        Self {
            dims,
            data,
            spacing: None,
        }
    }

    pub fn zeros(dims: Dims) -> Self {
        Self::filled(dims, 0.0)
    }

    pub fn filled(dims: Dims, value: f64) -> Self {
        assert!(value.is_finite());
        Self::from_raw(dims, vec![value; dims.len()])
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(dims.len());
        for z in 0..dims.depth {
            for y in 0..dims.height {
                for x in 0..dims.width {
                    data.push(f(z, y, x));
                }
            }
        }
        Self::new(dims, data)
    }

    pub fn with_spacing(mut self, spacing: [f64; 3]) -> Result<Self> {
        if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "spacing {spacing:?} must be positive"
            )));
        }
        self.spacing = Some(spacing);
        Ok(self)
    }

    pub(crate) fn set_spacing(&mut self, spacing: Option<[f64; 3]>) {
        self.spacing = spacing;
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn spacing(&self) -> Option<[f64; 3]> {
        self.spacing
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> f64 {
        self.data[self.dims.index(z, y, x)]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Voxelwise map; the result must stay finite.
    pub(crate) fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let mut out = Self::from_raw(self.dims, self.data.iter().map(|&v| f(v)).collect());
        out.spacing = self.spacing;
        out
    }

    /// Extract the sub-grid starting at `origin` with extent `dims`.
    pub fn crop(&self, origin: [usize; 3], dims: Dims) -> Result<Self> {
        let src = self.dims;
        if origin[0] + dims.depth > src.depth
            || origin[1] + dims.height > src.height
            || origin[2] + dims.width > src.width
        {
            return Err(Error::InvalidDims(format!(
                "crop {dims} at {origin:?} exceeds {src}"
            )));
        }
        let mut data = Vec::with_capacity(dims.len());
        for z in 0..dims.depth {
            for y in 0..dims.height {
                let start = src.index(origin[0] + z, origin[1] + y, origin[2]);
                data.extend_from_slice(&self.data[start..start + dims.width]);
            }
        }
        let mut out = Self::from_raw(dims, data);
        out.spacing = self.spacing;
        Ok(out)
    }
}

/// Per-voxel class probabilities, class-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    dims: Dims,
    classes: usize,
    data: Vec<f64>,
}

/// Tolerance on the per-voxel class sum.
pub const PROB_SUM_TOL: f64 = 1e-5;

impl ProbMap {
    pub fn new(dims: Dims, classes: usize, data: Vec<f64>) -> Result<Self> {
        if classes < 2 {
            return Err(Error::InvalidProbMap(format!(
                "need at least 2 classes, got {classes}"
            )));
        }
        let n = dims.len();
        if data.len() != n * classes {
            return Err(Error::LengthMismatch {
                expected: n * classes,
                actual: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidProbMap(format!(
                "value {} at {i} outside [0, 1]",
                data[i]
            )));
        }
        for v in 0..n {
            let s: f64 = (0..classes).map(|c| data[c * n + v]).sum();
            if (s - 1.0).abs() > PROB_SUM_TOL {
                return Err(Error::InvalidProbMap(format!(
                    "voxel {v} sums to {s}"
                )));
            }
        }
        Ok(Self {
            dims,
            classes,
            data,
        })
    }

    pub(crate) fn from_raw(dims: Dims, classes: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(dims.len() * classes, data.len());
        Self {
            dims,
            classes,
            data,
        }
    }

    /// Build from per-voxel probability vectors, one `Vec` per voxel.
    pub fn from_voxels(dims: Dims, voxels: &[Vec<f64>]) -> Result<Self> {
        let classes = voxels.first().map_or(0, Vec::len);
        let n = dims.len();
        if voxels.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: voxels.len(),
            });
        }
        let mut data = vec![0.0; n * classes];
        for (v, probs) in voxels.iter().enumerate() {
            if probs.len() != classes {
                return Err(Error::InvalidProbMap(format!(
                    "voxel {v} has {} classes, expected {classes}",
                    probs.len()
                )));
            }
            for (c, &p) in probs.iter().enumerate() {
                data[c * n + v] = p;
            }
        }
        Self::new(dims, classes, data)
    }

    pub fn uniform(dims: Dims, classes: usize) -> Self {
        Self::from_raw(dims, classes, vec![1.0 / classes as f64; dims.len() * classes])
    }

    /// One-hot encoding of a label map.
    pub fn one_hot(labels: &LabelMap) -> Self {
        let n = labels.dims().len();
        let classes = labels.classes();
        let mut data = vec![0.0; n * classes];
        for (v, &l) in labels.data().iter().enumerate() {
            data[l as usize * n + v] = 1.0;
        }
        Self::from_raw(labels.dims(), classes, data)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn class_plane(&self, class: usize) -> &[f64] {
        let n = self.dims.len();
        &self.data[class * n..(class + 1) * n]
    }

    #[inline]
    pub fn prob(&self, voxel: usize, class: usize) -> f64 {
        self.data[class * self.dims.len() + voxel]
    }

    pub fn voxel(&self, voxel: usize) -> Vec<f64> {
        (0..self.classes).map(|c| self.prob(voxel, c)).collect()
    }

    /// Largest class probability at a voxel.
    pub fn max_prob(&self, voxel: usize) -> f64 {
        (0..self.classes)
            .map(|c| self.prob(voxel, c))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub(crate) fn check_compatible(&self, other: &ProbMap) -> Result<()> {
        ensure_same_dims(self.dims, other.dims)?;
        if self.classes != other.classes {
            return Err(Error::ClassMismatch {
                left: self.classes,
                right: other.classes,
            });
        }
        Ok(())
    }

    /// Convex combination `w_self * self + w_other * other`.
    pub(crate) fn weighted_sum(&self, w_self: f64, other: &ProbMap, w_other: f64) -> ProbMap {
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| w_self * a + w_other * b)
            .collect();
        ProbMap::from_raw(self.dims, self.classes, data)
    }
}

/// Integer class labels in `[0, classes)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    dims: Dims,
    classes: usize,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(dims: Dims, classes: usize, data: Vec<u8>) -> Result<Self> {
        if !(2..=256).contains(&classes) {
            return Err(Error::InvalidParameter(format!(
                "label maps need 2..=256 classes, got {classes}"
            )));
        }
        if data.len() != dims.len() {
            return Err(Error::LengthMismatch {
                expected: dims.len(),
                actual: data.len(),
            });
        }
        if let Some(&value) = data.iter().find(|&&l| l as usize >= classes) {
            return Err(Error::InvalidLabel { value, classes });
        }
        Ok(Self {
            dims,
            classes,
            data,
        })
    }

    pub(crate) fn from_raw(dims: Dims, classes: usize, data: Vec<u8>) -> Self {
        debug_assert!(data.iter().all(|&l| (l as usize) < classes));
        Self {
            dims,
            classes,
            data,
        }
    }

    pub fn zeros(dims: Dims, classes: usize) -> Self {
        Self::from_raw(dims, classes, vec![0; dims.len()])
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> u8 {
        self.data[self.dims.index(z, y, x)]
    }

    /// Foreground (label > 0) as a binary mask.
    pub fn foreground(&self) -> BinaryMask {
        BinaryMask::from_raw(self.dims, self.data.iter().map(|&l| u8::from(l > 0)).collect())
    }

    /// Voxels carrying exactly `class`.
    pub fn class_mask(&self, class: u8) -> BinaryMask {
        BinaryMask::from_raw(
            self.dims,
            self.data.iter().map(|&l| u8::from(l == class)).collect(),
        )
    }

    pub fn crop(&self, origin: [usize; 3], dims: Dims) -> Result<Self> {
        let src = self.dims;
        if origin[0] + dims.depth > src.depth
            || origin[1] + dims.height > src.height
            || origin[2] + dims.width > src.width
        {
            return Err(Error::InvalidDims(format!(
                "crop {dims} at {origin:?} exceeds {src}"
            )));
        }
        let mut data = Vec::with_capacity(dims.len());
        for z in 0..dims.depth {
            for y in 0..dims.height {
                let start = src.index(origin[0] + z, origin[1] + y, origin[2]);
                data.extend_from_slice(&self.data[start..start + dims.width]);
            }
        }
        Ok(Self::from_raw(dims, self.classes, data))
    }
}

/// Strictly binary voxel mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    dims: Dims,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(dims: Dims, data: Vec<u8>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::LengthMismatch {
                expected: dims.len(),
                actual: data.len(),
            });
        }
        if let Some(&value) = data.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidLabel { value, classes: 2 });
        }
        Ok(Self { dims, data })
    }

    pub(crate) fn from_raw(dims: Dims, data: Vec<u8>) -> Self {
        debug_assert!(data.iter().all(|&v| v <= 1));
        Self { dims, data }
    }

    pub fn ones(dims: Dims) -> Self {
        Self::from_raw(dims, vec![1; dims.len()])
    }

    pub fn zeros(dims: Dims) -> Self {
        Self::from_raw(dims, vec![0; dims.len()])
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for z in 0..dims.depth {
            for y in 0..dims.height {
                for x in 0..dims.width {
                    data.push(u8::from(f(z, y, x)));
                }
            }
        }
        Self::from_raw(dims, data)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> bool {
        self.data[self.dims.index(z, y, x)] == 1
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn count_zeros(&self) -> usize {
        self.data.len() - self.count_ones()
    }

    pub fn complement(&self) -> Self {
        Self::from_raw(self.dims, self.data.iter().map(|&v| 1 - v).collect())
    }

    /// Reinterpret as a two-class label map.
    pub fn to_labels(&self) -> LabelMap {
        LabelMap::from_raw(self.dims, 2, self.data.clone())
    }
}

/// Clamp every voxel into `[lo, hi]`.
pub fn clip_intensity(v: &Volume, lo: f64, hi: f64) -> Result<Volume> {
    if !(lo < hi) {
        return Err(Error::InvalidRange { lo, hi });
    }
    Ok(v.map(|x| x.clamp(lo, hi)))
}

/// Rescale to `[0, 1]`; a constant volume maps to zeros.
pub fn minmax_normalize(v: &Volume) -> Volume {
    let (lo, hi) = v.min_max();
    if hi > lo {
        let range = hi - lo;
        v.map(|x| ((x - lo) / range).clamp(0.0, 1.0))
    } else {
        v.map(|_| 0.0)
    }
}

/// Per-voxel argmax, ties resolved to the lowest class index.
pub fn argmax_labels(p: &ProbMap) -> LabelMap {
    let n = p.dims().len();
    let data = (0..n)
        .map(|v| {
            let mut best = 0usize;
            let mut best_p = p.prob(v, 0);
            for c in 1..p.classes() {
                let q = p.prob(v, c);
                if q > best_p {
                    best = c;
                    best_p = q;
                }
            }
            best as u8
        })
        .collect();
    LabelMap::from_raw(p.dims(), p.classes(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(values: &[f64]) -> Volume {
        Volume::new(Dims::new(1, 1, values.len()).unwrap(), values.to_vec()).unwrap()
    }

    #[test]
    fn clip_to_ct_windows() {
        let v = line(&[-500.0, 0.0, 400.0]);
        assert_eq!(clip_intensity(&v, -200.0, 300.0).unwrap().data(), &[-200.0, 0.0, 300.0]);
        let v = line(&[-1024.0, 3071.0]);
        assert_eq!(clip_intensity(&v, -100.0, 200.0).unwrap().data(), &[-100.0, 200.0]);
    }

    #[test]
    fn clip_inside_window_is_identity() {
        let v = line(&[0.1, 0.5, 0.9]);
        assert_eq!(clip_intensity(&v, 0.0, 1.0).unwrap(), v);
    }

    #[test]
    fn clip_rejects_inverted_range() {
        let v = line(&[0.0]);
        assert!(matches!(clip_intensity(&v, 1.0, 1.0), Err(Error::InvalidRange { .. })));
        assert!(matches!(clip_intensity(&v, 2.0, 1.0), Err(Error::InvalidRange { .. })));
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(minmax_normalize(&line(&[0.0, 5.0, 10.0])).data(), &[0.0, 0.5, 1.0]);
        assert_eq!(minmax_normalize(&line(&[-200.0, 50.0, 300.0])).data(), &[0.0, 0.5, 1.0]);
        assert_eq!(minmax_normalize(&line(&[7.0; 5])).data(), &[0.0; 5]);
    }

    #[test]
    fn argmax_ties_go_low() {
        let dims = Dims::new(1, 1, 3).unwrap();
        let p = ProbMap::from_voxels(
            dims,
            &[vec![0.3, 0.7], vec![0.5, 0.5], vec![0.9, 0.1]],
        )
        .unwrap();
        assert_eq!(argmax_labels(&p).data(), &[1, 0, 0]);
        let u = ProbMap::uniform(Dims::cube(2), 3);
        assert!(argmax_labels(&u).data().iter().all(|&l| l == 0));
    }

    #[test]
    fn constructors_validate() {
        let d = Dims::cube(2);
        assert!(matches!(Volume::new(d, vec![0.0; 7]), Err(Error::LengthMismatch { .. })));
        let mut bad = vec![0.0; 8];
        bad[3] = f64::NAN;
        assert!(matches!(Volume::new(d, bad), Err(Error::NonFinite(3))));
        assert!(Dims::new(0, 4, 4).is_err());
        assert!(LabelMap::new(d, 2, vec![2; 8]).is_err());
        assert!(BinaryMask::new(d, vec![3; 8]).is_err());
        assert!(ProbMap::new(d, 2, vec![0.5; 15]).is_err());
        assert!(ProbMap::new(d, 2, vec![0.6; 16]).is_err());
    }

    #[test]
    fn index_round_trip() {
        let d = Dims::new(3, 4, 5).unwrap();
        for i in 0..d.len() {
            let (z, y, x) = d.coords(i);
            assert_eq!(d.index(z, y, x), i);
        }
    }

    #[test]
    fn crop_extracts_subgrid() {
        let d = Dims::new(4, 4, 4).unwrap();
        let v = Volume::from_fn(d, |z, y, x| (z * 100 + y * 10 + x) as f64).unwrap();
        let c = v.crop([1, 2, 0], Dims::new(2, 2, 3).unwrap()).unwrap();
        assert_eq!(c.get(0, 0, 0), 120.0);
        assert_eq!(c.get(1, 1, 2), 232.0);
        assert!(v.crop([3, 0, 0], Dims::new(2, 1, 1).unwrap()).is_err());
    }
}
