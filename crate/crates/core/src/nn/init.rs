use crate::nn::DenseMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Glorot-uniform init: entries uniform in ±sqrt(6/(fan_in+fan_out)),
/// deterministic for a given seed.
pub fn glorot_init(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    glorot_from_rng(rows, cols, &mut rng)
}

pub fn glorot_from_rng(rows: usize, cols: usize, rng: &mut impl Rng) -> DenseMatrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_matrix() {
        assert_eq!(glorot_init(4, 7, 42), glorot_init(4, 7, 42));
    }

    #[test]
    fn different_seeds_differ() {
        assert_ne!(glorot_init(4, 7, 1), glorot_init(4, 7, 2));
    }

    #[test]
    fn entries_within_bound() {
        let m = glorot_init(10, 6, 9);
        let bound = (6.0 / 16.0f64).sqrt();
        assert!(m.data().iter().all(|v| v.abs() <= bound));
    }
}
