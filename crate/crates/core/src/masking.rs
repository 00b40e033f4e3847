//! Random multi-hole binary masks.
//!
//! A mask starts as all ones (kept region) and gets a random number of
//! axis-aligned cuboid holes set to zero (cut region). Holes may overlap but
//! always lie fully inside the grid.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::volume::{BinaryMask, Dims};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HoleSpec {
    /// Inclusive range of hole counts.
    pub count: (usize, usize),
    /// Inclusive range of per-axis hole edges, in voxels.
    pub size: (usize, usize),
}

impl HoleSpec {
    /// Many small tumours: 10-30 holes of edge 10-20 at 160-voxel scale.
    pub const SMALL_TUMOUR: HoleSpec = HoleSpec {
        count: (10, 30),
        size: (10, 20),
    };
    /// Few large tumours: 5-40 holes of edge 10-40 at 160-voxel scale.
    pub const LARGE_TUMOUR: HoleSpec = HoleSpec {
        count: (5, 40),
        size: (10, 40),
    };

    /// Scale hole edges by `min_extent / 160`, keeping edges at least 1.
    pub fn scaled_to(self, dims: Dims) -> HoleSpec {
        let f = dims.min_extent() as f64 / 160.0;
        let scale = |e: usize| ((e as f64 * f).round() as usize).max(1);
        HoleSpec {
            count: self.count,
            size: (scale(self.size.0), scale(self.size.1)),
        }
    }

    pub fn validate(&self, dims: Dims) -> Result<()> {
        let (clo, chi) = self.count;
        let (slo, shi) = self.size;
        if clo > chi || slo > shi || slo == 0 {
            return Err(Error::InvalidConfig(format!(
                "hole ranges count {:?} size {:?} must be ordered with positive sizes",
                self.count, self.size
            )));
        }
        if shi > dims.min_extent() {
            return Err(Error::InvalidConfig(format!(
                "hole edge {shi} exceeds grid {dims}"
            )));
        }
        Ok(())
    }
}

impl HoleSpec {
    pub fn generate(&self, dims: Dims, rng: &mut Rng) -> Result<BinaryMask> {
        gen_multihole_mask(dims, self.count, self.size, rng)
    }
}

pub fn gen_multihole_mask(
    dims: Dims,
    n_holes: (usize, usize),
    hole_size: (usize, usize),
    rng: &mut Rng,
) -> Result<BinaryMask> {
    let spec = HoleSpec {
        count: n_holes,
        size: hole_size,
    };
    spec.validate(dims)?;
    let mut mask = BinaryMask::ones(dims);
    let n = rng.random_range(spec.count.0..=spec.count.1);
    let extents = dims.as_array();
    for _ in 0..n {
        let mut start = [0usize; 3];
        let mut edge = [0usize; 3];
        for axis in 0..3 {
            edge[axis] = rng.random_range(spec.size.0..=spec.size.1);
            start[axis] = rng.random_range(0..=extents[axis] - edge[axis]);
        }
        let data = mask.data_mut();
        for z in start[0]..start[0] + edge[0] {
            for y in start[1]..start[1] + edge[1] {
                let row = dims.index(z, y, start[2]);
                data[row..row + edge[2]].fill(0);
            }
        }
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn no_holes_keeps_everything() {
        let spec = HoleSpec {
            count: (0, 0),
            size: (2, 3),
        };
        let m = spec.generate(Dims::cube(8), &mut rng::seeded(0)).unwrap();
        assert_eq!(m, BinaryMask::ones(Dims::cube(8)));
    }

    #[test]
    fn full_size_hole_cuts_everything() {
        let spec = HoleSpec {
            count: (1, 1),
            size: (8, 8),
        };
        let m = spec.generate(Dims::cube(8), &mut rng::seeded(0)).unwrap();
        assert_eq!(m.count_ones(), 0);
    }

    #[test]
    fn oversized_hole_is_a_config_error() {
        let spec = HoleSpec {
            count: (1, 2),
            size: (2, 9),
        };
        let dims = Dims::new(16, 8, 16).unwrap();
        assert!(matches!(
            gen_multihole_mask(dims, spec.count, spec.size, &mut rng::seeded(0)),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn zero_count_bounded_by_hole_volume() {
        let spec = HoleSpec {
            count: (1, 4),
            size: (2, 5),
        };
        for s in 0..100 {
            let m = spec.generate(Dims::cube(12), &mut rng::seeded(s)).unwrap();
            assert!(m.count_zeros() <= 4 * 125);
            assert!(m.count_zeros() >= 8);
        }
    }

    #[test]
    fn same_seed_same_mask() {
        let spec = HoleSpec::SMALL_TUMOUR.scaled_to(Dims::cube(48));
        let a = spec.generate(Dims::cube(48), &mut rng::seeded(5)).unwrap();
        let b = spec.generate(Dims::cube(48), &mut rng::seeded(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn profile_scaling() {
        assert_eq!(HoleSpec::SMALL_TUMOUR.scaled_to(Dims::cube(160)), HoleSpec::SMALL_TUMOUR);
        assert_eq!(HoleSpec::SMALL_TUMOUR.scaled_to(Dims::cube(48)).size, (3, 6));
        assert_eq!(HoleSpec::LARGE_TUMOUR.scaled_to(Dims::cube(64)).size, (4, 16));
    }
}
