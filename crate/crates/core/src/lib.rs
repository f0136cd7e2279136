//! Boundary-sensitive training machinery for binary portrait segmentation.
//!
//! The crate is organised bottom-up:
//!
//! * [`raster`]: mask, scalar and tensor containers plus PNG and `BSNT` I/O.
//! * [`geometry`]: contour extraction, exact Euclidean distance transform,
//!   band dilation, crop/flip augmentation and 6-channel input assembly.
//! * [`kernels`]: the per-image soft-label field, the mean mask and the
//!   position-prior weight map.
//! * [`loss`]: per-pixel softmax and the soft-label, weighted and combined
//!   cross-entropy losses with analytic gradients.
//! * [`net`]: a small fully convolutional network with an attribute head,
//!   SGD training loop, checkpoints and finite-difference gradient checks.
//! * [`eval`]: mean IoU, boundary-band IoU and trimap export.
//! * [`synth`]: seeded synthetic portrait-like data used by tests and demos.

pub mod error;
pub mod eval;
pub mod geometry;
pub mod kernels;
pub mod loss;
pub mod net;
pub mod raster;
pub mod synth;

pub use error::{Error, Result};
pub use raster::{BinaryMask, ScalarField, TensorField};

/// Per-pixel class order used everywhere: foreground, boundary, background.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Class {
    Foreground = 0,
    Boundary = 1,
    Background = 2,
}

impl Class {
    pub const ALL: [Class; 3] = [Class::Foreground, Class::Boundary, Class::Background];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Class> {
        Class::ALL.get(index).copied()
    }
}

/// Number of segmentation classes.
pub const NUM_CLASSES: usize = 3;

/// The crate-wide seeded generator. All randomness in a run flows from one seed.
pub type SeededRng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    use rand::SeedableRng;
    SeededRng::seed_from_u64(seed)
}
