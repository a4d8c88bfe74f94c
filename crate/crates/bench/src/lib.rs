//! Shared fixtures for the benchmarks in `benches/`.

use irls_core::measurement::gaussian_dense;
use irls_core::rng::{normal_matrix, rng_from_seed};
use irls_core::{generate_ground_truth, DenseMatrix, MeasurementOperator, WeightState};
use nalgebra::DVector;

/// One recovery instance plus a weight taken from a perturbed ground truth.
pub struct Fixture {
    pub r: usize,
    pub s: usize,
    pub x: DenseMatrix,
    pub op: MeasurementOperator,
    pub y: DVector<f64>,
    pub weight: WeightState,
    pub probe: DenseMatrix,
}

impl Fixture {
    /// `m = factor * r (s + n2 - r)` Gaussian measurements.
    pub fn new(n1: usize, n2: usize, r: usize, s: usize, factor: usize, seed: u64) -> Self {
        let gt = generate_ground_truth(n1, n2, r, s, seed).expect("valid dimensions");
        let m = factor * r * (s + n2 - r);
        let op = gaussian_dense(n1, n2, m, seed + 1).expect("valid dimensions");
        let y = op.apply(&gt.x).expect("shape matches");
        let mut rng = rng_from_seed(seed + 2);
        let near = &gt.x + normal_matrix(&mut rng, n1, n2) * 1e-3;
        let weight = WeightState::build(&near, 1e-2, 1e-2).expect("positive parameters");
        let probe = normal_matrix(&mut rng, n1, n2);
        Fixture { r, s, x: gt.x, op, y, weight, probe }
    }
}
