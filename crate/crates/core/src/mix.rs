//! Uncertainty-adaptive blending of the weak and masked-strong views.

use crate::error::{ensure_same_dims, Error, Result};
use crate::volume::{BinaryMask, Volume};

/// The student's input: the strong view with mask holes zeroed.
pub fn masked_strong_view(weak: &Volume, strong: &Volume, mask: &BinaryMask) -> Result<Volume> {
    ensure_same_dims(weak.dims(), strong.dims())?;
    ensure_same_dims(strong.dims(), mask.dims())?;
    let data = strong
        .data()
        .iter()
        .zip(mask.data())
        .map(|(&s, &m)| if m == 1 { s } else { 0.0 })
        .collect();
    let mut out = Volume::from_raw(strong.dims(), data);
    out.set_spacing(strong.spacing());
    Ok(out)
}

/// `(1 - mu) * weak + mu * masked_strong`.
pub fn adaptive_blend(weak: &Volume, masked_strong: &Volume, mu: f64) -> Result<Volume> {
    if !(0.0..=1.0).contains(&mu) {
        return Err(Error::InvalidParameter(format!("mu {mu} outside [0, 1]")));
    }
    ensure_same_dims(weak.dims(), masked_strong.dims())?;
    let data = weak
        .data()
        .iter()
        .zip(masked_strong.data())
        .map(|(&w, &s)| (1.0 - mu) * w + mu * s)
        .collect();
    let mut out = Volume::from_raw(weak.dims(), data);
    out.set_spacing(weak.spacing());
    Ok(out)
}

/// Disagreeing voxels take the masked strong view; the rest keep the blend.
pub fn disagreement_blend(
    blended: &Volume,
    masked_strong: &Volume,
    disagreement: &BinaryMask,
) -> Result<Volume> {
    ensure_same_dims(blended.dims(), masked_strong.dims())?;
    ensure_same_dims(blended.dims(), disagreement.dims())?;
    let data = blended
        .data()
        .iter()
        .zip(masked_strong.data())
        .zip(disagreement.data())
        .map(|((&b, &s), &d)| if d == 1 { s } else { b })
        .collect();
    let mut out = Volume::from_raw(blended.dims(), data);
    out.set_spacing(blended.spacing());
    Ok(out)
}
