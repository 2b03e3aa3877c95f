//! Shared fixtures for the benchmarks.
use isf_core::data::{generate_dataset, shaw_pierre_field, GeneratorConfig, ShawPierre, TrajectoryDataset};
use isf_core::RealPoly;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Polynomial map with coefficients uniform in [-1, 1].
pub fn random_map(n: usize, out: usize, alpha: usize, seed: u64) -> RealPoly {
    let mut p = RealPoly::zeros(n, out, alpha).expect("valid shape");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for c in p.coeffs_mut().iter_mut() {
        *c = rng.random_range(-1.0..1.0);
    }
    p
}

pub fn shaw_pierre() -> RealPoly {
    shaw_pierre_field(ShawPierre::default()).expect("model")
}

pub fn training_data(trajectories: usize) -> TrajectoryDataset {
    let cfg = GeneratorConfig { trajectories, seed: 1, ..Default::default() };
    generate_dataset(&shaw_pierre(), &cfg).expect("dataset")
}
