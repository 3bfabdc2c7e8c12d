//! Xavier-uniform parameter initialization.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Tensor2;

/// Draws a `rows x cols` tensor uniformly from
/// `[-sqrt(6/(rows+cols)), +sqrt(6/(rows+cols))]`, deterministically
/// for a fixed seed.
pub fn xavier_init(rows: usize, cols: usize, rng_seed: u64) -> Tensor2 {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    xavier_from_rng(rows, cols, &mut rng)
}

/// Same distribution, drawing from a caller-owned stream so a whole
/// model can be initialized from one seed.
pub fn xavier_from_rng(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor2 {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Tensor2::from_vec(rows, cols, data).expect("sized by construction")
}

#[cfg(test)]
pub(crate) fn test_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
