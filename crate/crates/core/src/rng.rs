//! Seeded randomness.
//!
//! Every random draw in the crate goes through [`ChaCha8Rng`] seeded with a
//! `u64` via `SeedableRng::seed_from_u64`. Normal variates come from
//! `rand_distr::StandardNormal` (ziggurat method). Matrices are filled in
//! row-major order, so a seed fixes the same matrix regardless of the storage
//! layout used afterwards.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Rng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// `rows x cols` matrix of i.i.d. standard normals, drawn row by row.
pub fn normal_matrix(rng: &mut Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_row_iterator(rows, cols, (0..rows * cols).map(|_| normal(rng)))
}

pub fn normal_vector(rng: &mut Rng, len: usize) -> DVector<f64> {
    DVector::from_iterator(len, (0..len).map(|_| normal(rng)))
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a base seed and a sequence of coordinates.
///
/// The derivation is order-sensitive and depends only on its inputs, so trial
/// seeds can be computed independently by any worker.
pub fn derive_seed(base: u64, coords: &[u64]) -> u64 {
    coords
        .iter()
        .fold(mix64(base), |acc, &c| mix64(acc ^ mix64(c)))
}
