//! Shared inputs for the benchmarks.

use otmatch_core::data::gen_synthetic;
use otmatch_core::diffcore::random_matrix;
use otmatch_core::{Matrix, PairedCorpus};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Cost matrix with entries in `[0, 2]`, like cosine distances.
pub fn cost_matrix(n: usize, m: usize, seed: u64) -> Matrix {
    random_matrix(n, m, 0.0, 2.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Part and word embeddings of the given sizes.
pub fn embeddings(parts: usize, words: usize, dim: usize, seed: u64) -> (Matrix, Matrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (
        random_matrix(parts, dim, -1.0, 1.0, &mut rng),
        random_matrix(words, dim, -1.0, 1.0, &mut rng),
    )
}

pub fn corpus(shapes: usize, points: usize) -> PairedCorpus {
    gen_synthetic(7, shapes, 4, points).expect("valid synthetic settings")
}
