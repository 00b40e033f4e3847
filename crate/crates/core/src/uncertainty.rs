//! Teacher/student disagreement, two-way KL divergence and the
//! high-uncertainty score that drives adaptive augmentation.

use crate::error::{Error, Result};
use crate::volume::{argmax_labels, BinaryMask, Dims, ProbMap};

pub const DEFAULT_KL_EPS: f64 = 1e-8;
pub const DEFAULT_TAU: f64 = 0.9;

/// Per-voxel divergences in both directions.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyPair {
    pub dims: Dims,
    pub d_s_to_t: Vec<f64>,
    pub d_t_to_s: Vec<f64>,
}

/// 1 where the student's and teacher's argmax labels differ.
pub fn prediction_disagreement(p_s: &ProbMap, p_t: &ProbMap) -> Result<BinaryMask> {
    p_s.check_compatible(p_t)?;
    let ls = argmax_labels(p_s);
    let lt = argmax_labels(p_t);
    let data = ls
        .data()
        .iter()
        .zip(lt.data())
        .map(|(a, b)| u8::from(a != b))
        .collect();
    Ok(BinaryMask::from_raw(p_s.dims(), data))
}

/// `sum_c p_c * ln((p_c + eps) / (q_c + eps))`, floored at zero: the eps
/// smoothing can push near-identical distributions a hair below zero.
fn kl_voxel(p: &ProbMap, q: &ProbMap, voxel: usize, eps: f64) -> f64 {
    let mut acc = 0.0;
    for c in 0..p.classes() {
        let pc = p.prob(voxel, c);
        let qc = q.prob(voxel, c);
        if pc > 0.0 {
            acc += pc * ((pc + eps) / (qc + eps)).ln();
        }
    }
    acc.max(0.0)
}

pub fn kl_two_way(p_s: &ProbMap, p_t: &ProbMap, eps: f64) -> Result<UncertaintyPair> {
    p_s.check_compatible(p_t)?;
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("kl eps {eps} must be positive")));
    }
    let n = p_s.dims().len();
    Ok(UncertaintyPair {
        dims: p_s.dims(),
        d_s_to_t: (0..n).map(|v| kl_voxel(p_s, p_t, v, eps)).collect(),
        d_t_to_s: (0..n).map(|v| kl_voxel(p_t, p_s, v, eps)).collect(),
    })
}

/// Mean over voxels of the KL terms of whichever model is not confident
/// (`max prob < tau`) at that voxel, clamped to `[0, 1]`.
pub fn high_uncertainty_score(
    p_s: &ProbMap,
    p_t: &ProbMap,
    u: &UncertaintyPair,
    tau: f64,
) -> Result<f64> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidParameter(format!("tau {tau} outside (0, 1)")));
    }
    p_s.check_compatible(p_t)?;
    crate::error::ensure_same_dims(p_s.dims(), u.dims)?;
    let n = p_s.dims().len();
    let mut total = 0.0;
    for v in 0..n {
        if p_t.max_prob(v) < tau {
            total += u.d_t_to_s[v];
        }
        if p_s.max_prob(v) < tau {
            total += u.d_s_to_t[v];
        }
    }
    Ok((total / n as f64).clamp(0.0, 1.0))
}
