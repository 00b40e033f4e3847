//! Weak (spatial) and strong (intensity) augmentation families.
//!
//! Each candidate op fires independently with its family probability, in a
//! fixed order. Everything that was sampled is kept in an [`AugmentRecord`],
//! which replays to a bit-identical result.

pub mod intensity;
pub mod spatial;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_same_dims, Result};
use crate::rng::{self, Rng};
use crate::volume::{LabelMap, Volume};
pub use spatial::{Interp, InverseAffine, Plane};

/// One sampled augmentation with its concrete parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum AppliedOp {
    Flip { axis: usize },
    Rotate90 { plane: Plane, turns: u8 },
    Zoom { factor: f64 },
    Affine { matrix: [[f64; 3]; 3], offset: [f64; 3] },
    GaussianNoise { std: f64, noise_seed: u64 },
    BiasField { degree: usize, coefficients: Vec<f64> },
    GibbsNoise { alpha: f64 },
    Contrast { gamma: f64 },
    GaussianSmooth { sigma: f64 },
}

impl AppliedOp {
    pub fn is_spatial(&self) -> bool {
        matches!(
            self,
            AppliedOp::Flip { .. }
                | AppliedOp::Rotate90 { .. }
                | AppliedOp::Zoom { .. }
                | AppliedOp::Affine { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AugmentRecord {
    pub seed: u64,
    pub applied_ops: Vec<AppliedOp>,
}

impl AugmentRecord {
    pub fn is_identity(&self) -> bool {
        self.applied_ops.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("record serialises")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeakConfig {
    pub prob: f64,
    pub zoom: (f64, f64),
    /// Largest rotation about any axis for the affine op, radians.
    pub affine_max_angle: f64,
    pub affine_max_scale: f64,
    pub affine_max_shift: f64,
}

impl Default for WeakConfig {
    fn default() -> Self {
        Self {
            prob: 0.3,
            zoom: (0.9, 1.1),
            affine_max_angle: std::f64::consts::PI / 18.0,
            affine_max_scale: 0.05,
            affine_max_shift: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrongConfig {
    pub prob: f64,
    /// Noise std as a fraction of the intensity range.
    pub noise_std: (f64, f64),
    pub bias_degree: usize,
    pub bias_coeff: f64,
    pub gibbs_alpha: (f64, f64),
    pub gamma: (f64, f64),
    pub smooth_sigma: (f64, f64),
}

impl Default for StrongConfig {
    fn default() -> Self {
        Self {
            prob: 0.5,
            noise_std: (0.01, 0.1),
            bias_degree: 3,
            bias_coeff: 0.3,
            gibbs_alpha: (0.2, 0.8),
            gamma: (1.2, 2.0),
            smooth_sigma: (0.5, 1.5),
        }
    }
}

fn uniform(rng: &mut Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn rotation_matrix(angles: [f64; 3]) -> [[f64; 3]; 3] {
    let (s0, c0) = angles[0].sin_cos();
    let (s1, c1) = angles[1].sin_cos();
    let (s2, c2) = angles[2].sin_cos();
    // rotation about z (acting on y,x), then y (z,x), then x (z,y)
    let rz = [[1.0, 0.0, 0.0], [0.0, c0, -s0], [0.0, s0, c0]];
    let ry = [[c1, 0.0, -s1], [0.0, 1.0, 0.0], [s1, 0.0, c1]];
    let rx = [[c2, -s2, 0.0], [s2, c2, 0.0], [0.0, 0.0, 1.0]];
    matmul(&matmul(&rz, &ry), &rx)
}

fn matmul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn sample_weak_ops(v: &Volume, cfg: &WeakConfig, rng: &mut Rng) -> Vec<AppliedOp> {
    let mut ops = Vec::new();
    if rng.random::<f64>() < cfg.prob {
        ops.push(AppliedOp::Flip { axis: 0 });
    }
    if rng.random::<f64>() < cfg.prob {
        let plane = if rng.random::<bool>() {
            Plane::Sagittal
        } else {
            Plane::Coronal
        };
        let turns = if plane.is_square(v.dims()) {
            rng.random_range(1..=3u8)
        } else {
            2
        };
        ops.push(AppliedOp::Rotate90 { plane, turns });
    }
    if rng.random::<f64>() < cfg.prob {
        ops.push(AppliedOp::Zoom {
            factor: uniform(rng, cfg.zoom),
        });
    }
    if rng.random::<f64>() < cfg.prob {
        let a = cfg.affine_max_angle;
        let angles = [
            uniform(rng, (-a, a)),
            uniform(rng, (-a, a)),
            uniform(rng, (-a, a)),
        ];
        let s = cfg.affine_max_scale;
        let scale = [
            1.0 + uniform(rng, (-s, s)),
            1.0 + uniform(rng, (-s, s)),
            1.0 + uniform(rng, (-s, s)),
        ];
        let t = cfg.affine_max_shift;
        let offset = [
            uniform(rng, (-t, t)),
            uniform(rng, (-t, t)),
            uniform(rng, (-t, t)),
        ];
        let mut matrix = rotation_matrix(angles);
        for row in matrix.iter_mut() {
            for (j, m) in row.iter_mut().enumerate() {
                *m *= scale[j];
            }
        }
        ops.push(AppliedOp::Affine { matrix, offset });
    }
    ops
}

fn sample_strong_ops(v: &Volume, cfg: &StrongConfig, rng: &mut Rng) -> Vec<AppliedOp> {
    let mut ops = Vec::new();
    let (lo, hi) = v.min_max();
    if rng.random::<f64>() < cfg.prob {
        let frac = uniform(rng, cfg.noise_std);
        ops.push(AppliedOp::GaussianNoise {
            std: frac * (hi - lo).max(0.0),
            noise_seed: rng.random(),
        });
    }
    if rng.random::<f64>() < cfg.prob {
        let k = cfg.bias_coeff;
        let coefficients = (0..intensity::bias_monomials(cfg.bias_degree).len())
            .map(|_| uniform(rng, (-k, k)))
            .collect();
        ops.push(AppliedOp::BiasField {
            degree: cfg.bias_degree,
            coefficients,
        });
    }
    if rng.random::<f64>() < cfg.prob {
        ops.push(AppliedOp::GibbsNoise {
            alpha: uniform(rng, cfg.gibbs_alpha),
        });
    }
    if rng.random::<f64>() < cfg.prob {
        ops.push(AppliedOp::Contrast {
            gamma: uniform(rng, cfg.gamma),
        });
    }
    if rng.random::<f64>() < cfg.prob {
        ops.push(AppliedOp::GaussianSmooth {
            sigma: uniform(rng, cfg.smooth_sigma),
        });
    }
    ops
}

fn apply_op(v: &Volume, op: &AppliedOp, interp: Interp) -> Volume {
    match op {
        AppliedOp::Flip { axis } => spatial::flip(v, *axis),
        AppliedOp::Rotate90 { plane, turns } => spatial::rot90(v, *plane, *turns),
        AppliedOp::Zoom { factor } => spatial::resample(v, &InverseAffine::zoom(*factor), interp),
        AppliedOp::Affine { matrix, offset } => spatial::resample(
            v,
            &InverseAffine {
                matrix: *matrix,
                offset: *offset,
            },
            interp,
        ),
        AppliedOp::GaussianNoise { std, noise_seed } => {
            intensity::gaussian_noise(v, *std, *noise_seed)
        }
        AppliedOp::BiasField {
            degree,
            coefficients,
        } => intensity::bias_field(v, *degree, coefficients),
        AppliedOp::GibbsNoise { alpha } => intensity::gibbs_noise(v, *alpha),
        AppliedOp::Contrast { gamma } => intensity::adjust_contrast(v, *gamma),
        AppliedOp::GaussianSmooth { sigma } => intensity::gaussian_smooth(v, *sigma),
    }
}

fn apply_op_labels(l: &LabelMap, op: &AppliedOp) -> LabelMap {
    match op {
        AppliedOp::Flip { axis } => spatial::flip_labels(l, *axis),
        AppliedOp::Rotate90 { plane, turns } => spatial::rot90_labels(l, *plane, *turns),
        AppliedOp::Zoom { factor } => spatial::resample_labels(l, &InverseAffine::zoom(*factor)),
        AppliedOp::Affine { matrix, offset } => spatial::resample_labels(
            l,
            &InverseAffine {
                matrix: *matrix,
                offset: *offset,
            },
        ),
        _ => l.clone(),
    }
}

/// Replay a record's spatial ops on intensities with the given interpolation.
pub fn replay_weak(v: &Volume, record: &AugmentRecord, interp: Interp) -> Volume {
    record
        .applied_ops
        .iter()
        .filter(|op| op.is_spatial())
        .fold(v.clone(), |acc, op| apply_op(&acc, op, interp))
}

/// Replay a record's spatial ops on labels (nearest neighbour).
pub fn replay_weak_labels(l: &LabelMap, record: &AugmentRecord) -> LabelMap {
    record
        .applied_ops
        .iter()
        .filter(|op| op.is_spatial())
        .fold(l.clone(), |acc, op| apply_op_labels(&acc, op))
}

/// Replay a record's intensity ops, clamping to `[0, 1]` as the strong path does.
pub fn replay_strong(v: &Volume, record: &AugmentRecord) -> Volume {
    if record.applied_ops.is_empty() {
        return v.clone();
    }
    record
        .applied_ops
        .iter()
        .filter(|op| !op.is_spatial())
        .fold(v.clone(), |acc, op| apply_op(&acc, op, Interp::Linear))
        .map(|x| x.clamp(0.0, 1.0))
}

/// Random flip / right-angle rotation / zoom / small affine, each with
/// probability `cfg.prob`. Labels follow the same geometry.
pub fn weak_augment(
    v: &Volume,
    labels: Option<&LabelMap>,
    cfg: &WeakConfig,
    rng: &mut Rng,
) -> Result<(Volume, Option<LabelMap>, AugmentRecord)> {
    if let Some(l) = labels {
        ensure_same_dims(v.dims(), l.dims())?;
    }
    let seed: u64 = rng.random();
    let mut local = rng::seeded(seed);
    let record = AugmentRecord {
        seed,
        applied_ops: sample_weak_ops(v, cfg, &mut local),
    };
    let out = replay_weak(v, &record, Interp::Linear);
    let out_labels = labels.map(|l| replay_weak_labels(l, &record));
    Ok((out, out_labels, record))
}

/// Gaussian noise / bias field / Gibbs ringing / gamma contrast / Gaussian
/// smoothing, each with probability `cfg.prob`; output clamped to `[0, 1]`.
pub fn strong_augment(v: &Volume, cfg: &StrongConfig, rng: &mut Rng) -> (Volume, AugmentRecord) {
    let seed: u64 = rng.random();
    let mut local = rng::seeded(seed);
    let record = AugmentRecord {
        seed,
        applied_ops: sample_strong_ops(v, cfg, &mut local),
    };
    (replay_strong(v, &record), record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Dims, ProbMap};

    fn phantom(dims: Dims) -> (Volume, LabelMap) {
        let v = Volume::from_fn(dims, |z, y, x| {
            let r = (z as f64 - 3.0).powi(2) + (y as f64 - 4.0).powi(2) + (x as f64 - 2.5).powi(2);
            if r < 6.0 { 0.8 } else { 0.2 + 0.01 * (x as f64) }
        })
        .unwrap();
        let l = LabelMap::new(
            dims,
            2,
            v.data().iter().map(|&x| u8::from(x > 0.5)).collect(),
        )
        .unwrap();
        (v, l)
    }

    #[test]
    fn zero_probability_is_identity() {
        let (v, l) = phantom(Dims::cube(8));
        let weak = WeakConfig {
            prob: 0.0,
            ..WeakConfig::default()
        };
        let strong = StrongConfig {
            prob: 0.0,
            ..StrongConfig::default()
        };
        let mut r = rng::seeded(1);
        let (wv, wl, rec) = weak_augment(&v, Some(&l), &weak, &mut r).unwrap();
        assert!(rec.is_identity());
        assert_eq!(wv, v);
        assert_eq!(wl.unwrap(), l);
        let (sv, rec) = strong_augment(&v, &strong, &mut r);
        assert!(rec.is_identity());
        assert_eq!(sv, v);
    }

    #[test]
    fn some_seed_draws_no_weak_op() {
        let (v, _) = phantom(Dims::cube(8));
        let cfg = WeakConfig::default();
        // 0.7^4 ~ 0.24 of draws fire nothing
        let hit = (0..64u64).find_map(|s| {
            let (out, _, rec) = weak_augment(&v, None, &cfg, &mut rng::seeded(s)).unwrap();
            rec.is_identity().then_some(out)
        });
        assert_eq!(hit.expect("an identity draw within 64 seeds"), v);
    }

    #[test]
    fn records_replay_bit_exactly() {
        let (v, l) = phantom(Dims::cube(8));
        for s in 0..20 {
            let mut r = rng::seeded(s);
            let (wv, wl, wrec) = weak_augment(&v, Some(&l), &WeakConfig::default(), &mut r).unwrap();
            assert_eq!(replay_weak(&v, &wrec, Interp::Linear), wv);
            assert_eq!(replay_weak_labels(&l, &wrec), wl.unwrap());
            let (sv, srec) = strong_augment(&wv, &StrongConfig::default(), &mut r);
            assert_eq!(replay_strong(&wv, &srec), sv);
            let parsed: AugmentRecord = serde_json::from_str(&srec.to_json()).unwrap();
            assert_eq!(parsed, srec);
            assert_eq!(replay_strong(&wv, &parsed), sv);
        }
    }

    #[test]
    fn same_seed_same_output() {
        let (v, l) = phantom(Dims::cube(8));
        let a = weak_augment(&v, Some(&l), &WeakConfig::default(), &mut rng::seeded(9)).unwrap();
        let b = weak_augment(&v, Some(&l), &WeakConfig::default(), &mut rng::seeded(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn strong_path_is_intensity_only() {
        let (v, _) = phantom(Dims::cube(8));
        for s in 0..50 {
            let (out, rec) = strong_augment(&v, &StrongConfig::default(), &mut rng::seeded(s));
            assert!(rec.applied_ops.iter().all(|op| !op.is_spatial()));
            assert!(out.data().iter().all(|x| (0.0..=1.0).contains(x)));
        }
    }

    #[test]
    fn flip_record_applied_twice_restores() {
        let (v, _) = phantom(Dims::cube(6));
        let rec = AugmentRecord {
            seed: 0,
            applied_ops: vec![AppliedOp::Flip { axis: 0 }],
        };
        let once = replay_weak(&v, &rec, Interp::Linear);
        assert_ne!(once, v);
        assert_eq!(replay_weak(&once, &rec, Interp::Linear), v);
    }

    #[test]
    fn label_geometry_matches_one_hot_intensity_replay() {
        let (v, l) = phantom(Dims::cube(8));
        let onehot = ProbMap::one_hot(&l);
        for s in 0..40 {
            let (_, wl, rec) =
                weak_augment(&v, Some(&l), &WeakConfig { prob: 0.6, ..WeakConfig::default() }, &mut rng::seeded(s))
                    .unwrap();
            let wl = wl.unwrap();
            let fg = Volume::new(l.dims(), onehot.class_plane(1).to_vec()).unwrap();
            let moved = replay_weak(&fg, &rec, Interp::Nearest);
            let thresholded: Vec<u8> = moved.data().iter().map(|&x| u8::from(x > 0.5)).collect();
            assert_eq!(thresholded, wl.data(), "seed {s}");
        }
    }
}
