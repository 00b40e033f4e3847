//! Synthetic tumour phantoms, dataset splits and batch sampling.
//!
//! A phantom is a noisy background of mean 0.3 with ellipsoidal lesions of
//! mean `0.3 + contrast`. Lesion edges ramp linearly over one voxel centred
//! on the ellipsoid surface, so the label is exactly the set of voxels at or
//! above `0.3 + contrast / 2` when there is no noise.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::augment::intensity::gaussian_smooth;
use crate::error::{Error, Result};
use crate::io;
use crate::masking::HoleSpec;
use crate::rng::{self, Rng, Role};
use crate::volume::{minmax_normalize, Dims, LabelMap, Volume};

pub const BACKGROUND_MEAN: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Few large lesions.
    Large,
    /// Many small lesions.
    Small,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "large" => Ok(Profile::Large),
            "small" => Ok(Profile::Small),
            other => Err(Error::InvalidConfig(format!("unknown profile {other:?}"))),
        }
    }
}

impl std::fmt::Display for Profile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Profile::Large => "large",
            Profile::Small => "small",
        })
    }
}

impl Profile {
    pub fn spec(self) -> PhantomSpec {
        match self {
            Profile::Large => PhantomSpec {
                dims: Dims::cube(64),
                tumor_count: (1, 2),
                tumor_radius: (6.0, 12.0),
                ..PhantomSpec::default()
            },
            Profile::Small => PhantomSpec::default(),
        }
    }

    /// Mask hole ranges for this regime, scaled to `dims`.
    pub fn holes(self, dims: Dims) -> HoleSpec {
        match self {
            Profile::Large => HoleSpec::LARGE_TUMOUR.scaled_to(dims),
            Profile::Small => HoleSpec::SMALL_TUMOUR.scaled_to(dims),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: Dims,
    pub tumor_count: (usize, usize),
    /// Per-axis semi-axis range in voxels.
    pub tumor_radius: (f64, f64),
    /// Lesion brightness above background, in `(0, 1]`.
    pub contrast: f64,
    /// Standard deviation of the background noise.
    pub noise_std: f64,
    /// Gaussian smoothing applied to the noise, in voxels; 0 keeps it white.
    pub texture_sigma: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            dims: Dims::cube(48),
            tumor_count: (3, 8),
            tumor_radius: (2.0, 4.0),
            contrast: 0.25,
            noise_std: 0.1,
            texture_sigma: 0.0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let (clo, chi) = self.tumor_count;
        let (rlo, rhi) = self.tumor_radius;
        if clo == 0 || clo > chi {
            return Err(Error::InvalidConfig(format!("tumor count range {:?}", self.tumor_count)));
        }
        if !(rlo >= 1.0 && rlo <= rhi) {
            return Err(Error::InvalidConfig(format!("tumor radius range {:?}", self.tumor_radius)));
        }
        // lesion plus falloff must fit strictly inside the grid
        if 2.0 * (rhi + 1.0) >= self.dims.min_extent() as f64 {
            return Err(Error::InvalidConfig(format!(
                "radius {rhi} does not fit in {}",
                self.dims
            )));
        }
        if !(self.contrast > 0.0 && self.contrast <= 1.0) {
            return Err(Error::InvalidConfig(format!("contrast {} outside (0, 1]", self.contrast)));
        }
        if !(self.noise_std >= 0.0 && self.texture_sigma >= 0.0) {
            return Err(Error::InvalidConfig("noise parameters must be non-negative".into()));
        }
        Ok(())
    }
}

/// Phantom intensities before normalisation, and the lesion labels.
pub fn gen_phantom_raw(spec: &PhantomSpec, rng: &mut Rng) -> Result<(Volume, LabelMap)> {
    spec.validate()?;
    let dims = spec.dims;
    let extents = dims.as_array();
    let n_tumors = rng.random_range(spec.tumor_count.0..=spec.tumor_count.1);
    let mut weight = vec![0.0f64; dims.len()];
    let mut labels = vec![0u8; dims.len()];
    for _ in 0..n_tumors {
        let mut radii = [0.0; 3];
        let mut centre = [0.0; 3];
        for a in 0..3 {
            radii[a] = rng.random_range(spec.tumor_radius.0..=spec.tumor_radius.1);
            let margin = radii[a] + 1.0;
            centre[a] = rng.random_range(margin..=extents[a] as f64 - 1.0 - margin);
        }
        let mean_r = (radii[0] + radii[1] + radii[2]) / 3.0;
        let lo: [usize; 3] = std::array::from_fn(|a| (centre[a] - radii[a] - 1.0).floor().max(0.0) as usize);
        let hi: [usize; 3] =
            std::array::from_fn(|a| ((centre[a] + radii[a] + 1.0).ceil() as usize).min(extents[a] - 1));
        for z in lo[0]..=hi[0] {
            for y in lo[1]..=hi[1] {
                for x in lo[2]..=hi[2] {
                    let p = [z as f64, y as f64, x as f64];
                    let rho = (0..3)
                        .map(|a| ((p[a] - centre[a]) / radii[a]).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    let i = dims.index(z, y, x);
                    let w = (0.5 + (1.0 - rho) * mean_r).clamp(0.0, 1.0);
                    if rho <= 1.0 {
                        labels[i] = 1;
                        weight[i] = weight[i].max(w.max(0.5));
                    } else {
                        weight[i] = weight[i].max(w.min(0.5f64.next_down()));
                    }
                }
            }
        }
    }
    let mut noise = vec![0.0; dims.len()];
    if spec.noise_std > 0.0 {
        let normal = Normal::new(0.0, spec.noise_std).expect("validated noise std");
        for v in noise.iter_mut() {
            *v = normal.sample(rng);
        }
        if spec.texture_sigma > 0.0 {
            let smooth = gaussian_smooth(&Volume::new(dims, noise)?, spec.texture_sigma);
            // restore the requested amplitude after smoothing
            let sd = (smooth.data().iter().map(|v| v * v).sum::<f64>() / dims.len() as f64).sqrt();
            let k = if sd > 0.0 { spec.noise_std / sd } else { 0.0 };
            noise = smooth.data().iter().map(|v| v * k).collect();
        }
    }
    let data = weight
        .iter()
        .zip(&noise)
        .map(|(w, e)| BACKGROUND_MEAN + spec.contrast * w + e)
        .collect();
    Ok((Volume::new(dims, data)?, LabelMap::new(dims, 2, labels)?))
}

/// Normalised phantom: intensities min-max scaled to `[0, 1]`.
pub fn gen_phantom(spec: &PhantomSpec, rng: &mut Rng) -> Result<(Volume, LabelMap)> {
    let (v, l) = gen_phantom_raw(spec, rng)?;
    Ok((minmax_normalize(&v), l))
}

pub fn case_id(index: usize) -> String {
    format!("case_{index:03}")
}

/// `n` phantoms, case `i` drawn from its own stream so cases are independent
/// of `n`.
pub fn gen_cases(spec: &PhantomSpec, n: usize, seed: u64) -> Result<Vec<(String, Volume, LabelMap)>> {
    (0..n)
        .map(|i| {
            let (v, l) = gen_phantom(spec, &mut rng::stream(seed, i as u64, Role::Phantom, 0))?;
            Ok((case_id(i), v, l))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub labeled: Vec<String>,
    pub unlabeled: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl DatasetSplit {
    pub fn all(&self) -> impl Iterator<Item = &String> {
        self.labeled
            .iter()
            .chain(&self.unlabeled)
            .chain(&self.validation)
            .chain(&self.test)
    }

    pub fn part(&self, name: &str) -> Result<&[String]> {
        match name {
            "labeled" => Ok(&self.labeled),
            "unlabeled" => Ok(&self.unlabeled),
            "validation" | "val" => Ok(&self.validation),
            "test" => Ok(&self.test),
            other => Err(Error::InvalidConfig(format!("unknown split {other:?}"))),
        }
    }
}

/// Shuffle `ids`, carve off validation and test cases, then label
/// `floor(ratio * remaining)` of the rest.
pub fn make_split_ids(
    ids: &[String],
    labeled_ratio: f64,
    n_validation: usize,
    n_test: usize,
    rng: &mut Rng,
) -> Result<DatasetSplit> {
    if !(labeled_ratio > 0.0 && labeled_ratio <= 1.0) {
        return Err(Error::InvalidConfig(format!("labeled ratio {labeled_ratio} outside (0, 1]")));
    }
    if n_validation + n_test > ids.len() {
        return Err(Error::InvalidConfig(format!(
            "{} held-out cases requested from {}",
            n_validation + n_test,
            ids.len()
        )));
    }
    let mut order = ids.to_vec();
    order.shuffle(rng);
    let test = order.split_off(order.len() - n_test);
    let validation = order.split_off(order.len() - n_validation);
    let n_labeled = ((labeled_ratio * order.len() as f64) + 1e-9).floor() as usize;
    if n_labeled == 0 && !order.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "ratio {labeled_ratio} labels no case out of {}",
            order.len()
        )));
    }
    let unlabeled = order.split_off(n_labeled);
    let mut split = DatasetSplit {
        labeled: order,
        unlabeled,
        validation,
        test,
    };
    for part in [&mut split.labeled, &mut split.unlabeled, &mut split.validation, &mut split.test] {
        part.sort();
    }
    Ok(split)
}

pub fn make_split(
    n: usize,
    labeled_ratio: f64,
    n_validation: usize,
    n_test: usize,
    rng: &mut Rng,
) -> Result<DatasetSplit> {
    let ids: Vec<String> = (0..n).map(case_id).collect();
    make_split_ids(&ids, labeled_ratio, n_validation, n_test, rng)
}

/// Deterministic batch schedule: iteration `i`'s batches are a pure
/// function of `(seed, i)`.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    labeled: Vec<String>,
    unlabeled: Vec<String>,
    batch_size: usize,
    seed: u64,
}

fn cycle_batch(ids: &[String], batch_size: usize, seed: u64, slot: u32, iteration: u64) -> Vec<String> {
    if ids.is_empty() {
        return Vec::new();
    }
    let per_cycle = (ids.len() / batch_size).max(1) as u64;
    let cycle = iteration / per_cycle;
    let offset = (iteration % per_cycle) as usize * batch_size;
    let mut order: Vec<&String> = ids.iter().collect();
    order.shuffle(&mut rng::stream(seed, cycle, Role::Shuffle, slot));
    (0..batch_size).map(|k| order[(offset + k) % ids.len()].clone()).collect()
}

impl BatchSampler {
    pub fn new(split: &DatasetSplit, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        if split.labeled.is_empty() {
            return Err(Error::MissingData("split has no labeled cases".into()));
        }
        Ok(Self {
            labeled: split.labeled.clone(),
            unlabeled: split.unlabeled.clone(),
            batch_size,
            seed,
        })
    }

    /// Iterations per epoch: one pass over the unlabeled ids.
    pub fn iters_per_epoch(&self) -> u64 {
        let pool = if self.unlabeled.is_empty() { &self.labeled } else { &self.unlabeled };
        (pool.len() / self.batch_size).max(1) as u64
    }

    /// 1-based epoch of an iteration.
    pub fn epoch_of(&self, iteration: u64) -> u64 {
        iteration / self.iters_per_epoch() + 1
    }

    pub fn total_epochs(&self, total_iters: u64) -> u64 {
        total_iters.div_ceil(self.iters_per_epoch()).max(1)
    }

    /// `(labeled batch, unlabeled batch)`; the unlabeled batch is empty when
    /// the split has no unlabeled cases.
    pub fn batches(&self, iteration: u64) -> (Vec<String>, Vec<String>) {
        (
            cycle_batch(&self.labeled, self.batch_size, self.seed, 1, iteration),
            cycle_batch(&self.unlabeled, self.batch_size, self.seed, 0, iteration),
        )
    }
}

/// Batches for iterations `0..n`.
pub fn sample_batches(split: &DatasetSplit, batch_size: usize, seed: u64, n: u64) -> Result<Vec<(Vec<String>, Vec<String>)>> {
    let s = BatchSampler::new(split, batch_size, seed)?;
    Ok((0..n).map(|i| s.batches(i)).collect())
}

/// An in-memory dataset keyed by case id.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: BTreeMap<String, Volume>,
    pub labels: BTreeMap<String, LabelMap>,
    pub split: DatasetSplit,
}

fn image_path(root: &Path, id: &str) -> PathBuf {
    root.join("images").join(format!("{id}.vol"))
}

fn label_path(root: &Path, id: &str) -> PathBuf {
    root.join("labels").join(format!("{id}.vol"))
}

impl Dataset {
    pub fn from_cases(cases: Vec<(String, Volume, LabelMap)>, split: DatasetSplit) -> Result<Self> {
        let mut images = BTreeMap::new();
        let mut labels = BTreeMap::new();
        for (id, v, l) in cases {
            images.insert(id.clone(), v);
            labels.insert(id, l);
        }
        let ds = Self { images, labels, split };
        ds.check()?;
        Ok(ds)
    }

    fn check(&self) -> Result<()> {
        for id in self.split.all() {
            if !self.images.contains_key(id) || !self.labels.contains_key(id) {
                return Err(Error::MissingData(format!("case {id} listed in split but absent")));
            }
        }
        Ok(())
    }

    pub fn image(&self, id: &str) -> Result<&Volume> {
        self.images
            .get(id)
            .ok_or_else(|| Error::MissingData(format!("no image for {id}")))
    }

    pub fn label(&self, id: &str) -> Result<&LabelMap> {
        self.labels
            .get(id)
            .ok_or_else(|| Error::MissingData(format!("no label for {id}")))
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        fs::create_dir_all(root.join("images"))?;
        fs::create_dir_all(root.join("labels"))?;
        for (id, v) in &self.images {
            io::write_volume(v, &image_path(root, id))?;
        }
        for (id, l) in &self.labels {
            io::write_labels(l, &label_path(root, id))?;
        }
        fs::write(root.join("split.json"), serde_json::to_string_pretty(&self.split)?)?;
        Ok(())
    }

    pub fn load(root: &Path) -> Result<Self> {
        let split_path = root.join("split.json");
        if !split_path.exists() {
            return Err(Error::MissingData(format!("{} not found", split_path.display())));
        }
        let split: DatasetSplit = serde_json::from_str(&fs::read_to_string(&split_path)?)?;
        let mut images = BTreeMap::new();
        let mut labels = BTreeMap::new();
        for id in split.all() {
            images.insert(id.clone(), io::read_volume(&image_path(root, id))?);
            labels.insert(id.clone(), io::read_labels(&label_path(root, id))?);
        }
        Ok(Self { images, labels, split })
    }
}

/// Parameters of a generated dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetPlan {
    pub spec: PhantomSpec,
    pub n_train: usize,
    pub n_validation: usize,
    pub n_test: usize,
    pub labeled_ratio: f64,
    pub seed: u64,
}

impl DatasetPlan {
    pub fn for_profile(profile: Profile, seed: u64) -> Self {
        Self {
            spec: profile.spec(),
            n_train: 40,
            n_validation: 0,
            n_test: 20,
            labeled_ratio: 0.1,
            seed,
        }
    }

    pub fn generate(&self) -> Result<Dataset> {
        let n = self.n_train + self.n_validation + self.n_test;
        let cases = gen_cases(&self.spec, n, self.seed)?;
        let ids: Vec<String> = cases.iter().map(|c| c.0.clone()).collect();
        let split = make_split_ids(
            &ids,
            self.labeled_ratio,
            self.n_validation,
            self.n_test,
            &mut rng::stream(self.seed, 0, Role::Split, 0),
        )?;
        Dataset::from_cases(cases, split)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn single_lesion_volume_matches_ellipsoid() {
        for r in [3.0, 5.0, 8.0] {
            let spec = PhantomSpec {
                dims: Dims::cube(32),
                tumor_count: (1, 1),
                tumor_radius: (r, r),
                noise_std: 0.0,
                ..PhantomSpec::default()
            };
            let (_, l) = gen_phantom(&spec, &mut rng::seeded(4)).unwrap();
            let expected = 4.0 / 3.0 * std::f64::consts::PI * r * r * r;
            let got = l.foreground().count_ones() as f64;
            assert!((got - expected).abs() <= 0.15 * expected, "r={r}: {got} vs {expected}");
        }
    }

    #[test]
    fn noiseless_threshold_recovers_labels() {
        let spec = PhantomSpec {
            noise_std: 0.0,
            contrast: 0.4,
            ..PhantomSpec::default()
        };
        for s in 0..5 {
            let (v, l) = gen_phantom_raw(&spec, &mut rng::seeded(s)).unwrap();
            let t = BACKGROUND_MEAN + spec.contrast / 2.0;
            let thresholded: Vec<u8> = v.data().iter().map(|&x| u8::from(x >= t)).collect();
            assert_eq!(thresholded, l.data());
        }
    }

    #[test]
    fn full_contrast_separates_tumour() {
        let spec = PhantomSpec {
            noise_std: 0.0,
            contrast: 1.0,
            ..PhantomSpec::default()
        };
        let (v, l) = gen_phantom(&spec, &mut rng::seeded(1)).unwrap();
        let tumour_min = v.data().iter().zip(l.data()).filter(|(_, &y)| y == 1).map(|(x, _)| *x).fold(f64::INFINITY, f64::min);
        let bg_max = v.data().iter().zip(l.data()).filter(|(_, &y)| y == 0).map(|(x, _)| *x).fold(f64::NEG_INFINITY, f64::max);
        assert!(tumour_min > bg_max);
    }

    #[test]
    fn same_seed_same_phantom() {
        let spec = Profile::Small.spec();
        assert_eq!(
            gen_phantom(&spec, &mut rng::seeded(8)).unwrap(),
            gen_phantom(&spec, &mut rng::seeded(8)).unwrap()
        );
    }

    #[test]
    fn infeasible_radius_rejected() {
        let spec = PhantomSpec {
            dims: Dims::cube(8),
            tumor_radius: (2.0, 4.0),
            ..PhantomSpec::default()
        };
        assert!(matches!(gen_phantom(&spec, &mut rng::seeded(0)), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn split_sizes() {
        let s = make_split(390, 0.1, 30, 0, &mut rng::seeded(0)).unwrap();
        assert_eq!(s.labeled.len(), 36);
        let s = make_split(100, 0.1, 0, 0, &mut rng::seeded(0)).unwrap();
        assert_eq!(s.labeled.len(), 10);
        let s = make_split(20, 1.0, 0, 5, &mut rng::seeded(0)).unwrap();
        assert_eq!((s.labeled.len(), s.unlabeled.len(), s.test.len()), (15, 0, 5));
        let s = make_split(60, 0.2, 5, 15, &mut rng::seeded(3)).unwrap();
        let all: BTreeSet<&String> = s.all().collect();
        assert_eq!(all.len(), 60);
        assert_eq!(s, make_split(60, 0.2, 5, 15, &mut rng::seeded(3)).unwrap());
    }

    #[test]
    fn labeled_ids_cycle() {
        let split = DatasetSplit {
            labeled: (0..4).map(case_id).collect(),
            unlabeled: (4..40).map(case_id).collect(),
            validation: vec![],
            test: vec![],
        };
        let b = sample_batches(&split, 2, 11, 40).unwrap();
        for i in (0..40).step_by(2) {
            let a: BTreeSet<_> = b[i].0.iter().chain(&b[i + 1].0).collect();
            assert_eq!(a.len(), 4, "each aligned pair of labeled batches covers all labeled ids");
        }
        for epoch in 0..2 {
            let seen: BTreeSet<_> = b[epoch * 18..(epoch + 1) * 18].iter().flat_map(|x| x.1.iter()).collect();
            assert_eq!(seen.len(), 36);
        }
        assert_eq!(b, sample_batches(&split, 2, 11, 40).unwrap());
    }
}
