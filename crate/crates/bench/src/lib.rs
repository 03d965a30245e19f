//! Deterministic inputs shared by the benchmarks.

use lanesnn_core::{Grid2D, Rng};

/// A raw-sized cropped frame (1280x300) with uniform intensities.
pub fn cropped_frame(seed: u64) -> Grid2D {
    let mut rng = Rng::new(seed);
    Grid2D::from_fn(300, 1280, |_, _| rng.uniform()).expect("non-empty")
}

/// `n` network-sized inputs (80x20).
pub fn network_inputs(n: usize, seed: u64) -> Vec<Grid2D> {
    let mut rng = Rng::new(seed);
    (0..n)
        .map(|_| Grid2D::from_fn(20, 80, |_, _| rng.uniform() * 0.3).expect("non-empty"))
        .collect()
}
