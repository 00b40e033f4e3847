//! Bidirectional copy-paste between labeled and unlabeled samples.
//!
//! For a pair `(i, j)` with masks `m_i`, `m_j`:
//!
//! ```text
//! X_l->u = m_i * x_i + (1 - m_i) * u_i      Y_l->u = m_i * y_i + (1 - m_i) * P_i
//! X_u->l = m_j * u_j + (1 - m_j) * x_j      Y_u->l = m_j * P_j + (1 - m_j) * y_j
//! ```
//!
//! Mask value 1 selects the first-listed source. Selection is exact; labels
//! are never interpolated, and no connected-component filtering is applied.

use crate::error::{ensure_same_dims, Error, Result};
use crate::volume::{BinaryMask, LabelMap, Volume};

/// Pairs `(i, i + batch/2)` for the first half of the batch.
pub fn pair_indices(batch_size: usize) -> Result<Vec<(usize, usize)>> {
    if batch_size == 0 || batch_size % 2 != 0 {
        return Err(Error::InvalidParameter(format!(
            "batch size {batch_size} must be even and positive"
        )));
    }
    let half = batch_size / 2;
    Ok((0..half).map(|i| (i, i + half)).collect())
}

/// `m * a + (1 - m) * b` as a voxel selection.
pub fn select_volume(mask: &BinaryMask, a: &Volume, b: &Volume) -> Result<Volume> {
    ensure_same_dims(mask.dims(), a.dims())?;
    ensure_same_dims(a.dims(), b.dims())?;
    let data = mask
        .data()
        .iter()
        .zip(a.data().iter().zip(b.data()))
        .map(|(&m, (&x, &y))| if m == 1 { x } else { y })
        .collect();
    let mut out = Volume::from_raw(a.dims(), data);
    out.set_spacing(a.spacing());
    Ok(out)
}

pub fn select_labels(mask: &BinaryMask, a: &LabelMap, b: &LabelMap) -> Result<LabelMap> {
    ensure_same_dims(mask.dims(), a.dims())?;
    ensure_same_dims(a.dims(), b.dims())?;
    if a.classes() != b.classes() {
        return Err(Error::ClassMismatch {
            left: a.classes(),
            right: b.classes(),
        });
    }
    let data = mask
        .data()
        .iter()
        .zip(a.data().iter().zip(b.data()))
        .map(|(&m, (&x, &y))| if m == 1 { x } else { y })
        .collect();
    Ok(LabelMap::from_raw(a.dims(), a.classes(), data))
}

/// Returns `(X_l->u, X_u->l)`.
pub fn bcp_images(
    x_i: &Volume,
    u_i: &Volume,
    x_j: &Volume,
    u_j: &Volume,
    m_i: &BinaryMask,
    m_j: &BinaryMask,
) -> Result<(Volume, Volume)> {
    Ok((select_volume(m_i, x_i, u_i)?, select_volume(m_j, u_j, x_j)?))
}

/// Returns `(Y_l->u, Y_u->l)`.
pub fn bcp_labels(
    y_i: &LabelMap,
    pmix_i: &LabelMap,
    y_j: &LabelMap,
    pmix_j: &LabelMap,
    m_i: &BinaryMask,
    m_j: &BinaryMask,
) -> Result<(LabelMap, LabelMap)> {
    Ok((select_labels(m_i, y_i, pmix_i)?, select_labels(m_j, pmix_j, y_j)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Dims;

    #[test]
    fn pairs_match_half_offset() {
        assert_eq!(pair_indices(2).unwrap(), vec![(0, 1)]);
        assert_eq!(pair_indices(4).unwrap(), vec![(0, 2), (1, 3)]);
        assert_eq!(pair_indices(6).unwrap(), vec![(0, 3), (1, 4), (2, 5)]);
        assert!(pair_indices(3).is_err());
        assert!(pair_indices(0).is_err());
    }

    #[test]
    fn mask_extremes_pick_one_source() {
        let d = Dims::cube(2);
        let x = Volume::filled(d, 0.25);
        let u = Volume::filled(d, 0.75);
        let (lu, ul) = bcp_images(&x, &u, &x, &u, &BinaryMask::ones(d), &BinaryMask::zeros(d)).unwrap();
        assert_eq!(lu, x);
        assert_eq!(ul, x);
        let (lu, ul) = bcp_images(&x, &u, &x, &u, &BinaryMask::zeros(d), &BinaryMask::ones(d)).unwrap();
        assert_eq!(lu, u);
        assert_eq!(ul, u);
    }

    #[test]
    fn labels_equal_to_pseudo_ignore_mask() {
        let d = Dims::cube(2);
        let y = LabelMap::new(d, 2, vec![0, 1, 1, 0, 1, 0, 0, 1]).unwrap();
        let m = BinaryMask::new(d, vec![1, 0, 1, 0, 0, 1, 1, 0]).unwrap();
        let (a, b) = bcp_labels(&y, &y, &y, &y, &m, &m).unwrap();
        assert_eq!(a, y);
        assert_eq!(b, y);
        let (a, _) = bcp_labels(&y, &LabelMap::zeros(d, 2), &y, &y, &BinaryMask::ones(d), &m).unwrap();
        assert_eq!(a, y);
    }

    #[test]
    fn mismatches_are_errors() {
        let a = Volume::zeros(Dims::cube(2));
        let b = Volume::zeros(Dims::cube(3));
        let m = BinaryMask::ones(Dims::cube(2));
        assert!(bcp_images(&a, &b, &a, &a, &m, &m).is_err());
        let l2 = LabelMap::zeros(Dims::cube(2), 2);
        let l3 = LabelMap::zeros(Dims::cube(2), 3);
        assert!(bcp_labels(&l2, &l3, &l2, &l2, &m, &m).is_err());
    }
}
