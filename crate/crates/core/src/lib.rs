//! Semi-supervised volumetric tumour segmentation with uncertainty-adaptive
//! augmentation, iterative pseudo-label transition and bidirectional
//! copy-paste, on a small CPU reference network.

pub mod augment;
pub mod bcp;
pub mod error;
pub mod io;
pub mod masking;
pub mod metrics;
pub mod mix;
pub mod net;
pub mod phantom;
pub mod pseudo;
pub mod rng;
pub mod train;
pub mod uncertainty;
pub mod volume;

pub use error::{Error, Result};
