//! Object-based hyperspectral image classification with multiresolution
//! graph networks.
//!
//! The pipeline runs, in order:
//!
//! 1. [`hsi_io`]: load a cube, normalize bands to `[0, 1]`, PCA-reduce.
//! 2. [`segmentation`]: Felzenszwalb superpixels with a minimum-size pass.
//! 3. [`features`]: mean, neighbor-weighted and centroid features per
//!    superpixel, plus seed labels from sampled training pixels.
//! 4. [`graph`]: the symmetric kNN superpixel graph.
//! 5. [`model`] / [`training`]: a two-layer GCN baseline and the
//!    multiresolution MOB-GCN, both trained with the LGC loss on top of the
//!    small autodiff engine in [`tensor`].
//! 6. [`scale_select`]: automatic choice of the resolution list from peaks
//!    of the normalized rate-of-change curve of cluster heterogeneity.
//!
//! [`pipeline`] wires the stages together; [`synth`] generates synthetic
//! scenes with planted classes for offline verification.

pub mod error;
pub mod features;
pub mod graph;
pub mod hsi_io;
pub mod linalg;
pub mod model;
pub mod npy;
pub mod pipeline;
pub mod render;
pub mod scale_select;
pub mod segmentation;
pub mod synth;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};

/// Deterministic RNG used for every seeded operation.
pub type SeededRng = rand_chacha::ChaCha8Rng;

/// Builds the crate RNG from a 64-bit seed.
pub fn seeded_rng(seed: u64) -> SeededRng {
    use rand::SeedableRng;
    SeededRng::seed_from_u64(seed)
}
