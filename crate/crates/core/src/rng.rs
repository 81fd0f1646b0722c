//! Seeded random streams. Every candidate draws from its own ChaCha stream
//! keyed by `(seed, index)`, so results do not depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::field::{Grid, Latent};

pub type Rng = ChaCha8Rng;

pub fn stream(seed: u64, index: u64) -> Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(index);
    r
}

pub fn gaussian_grid(rng: &mut Rng, width: usize, height: usize) -> Grid {
    Grid::from_fn(width, height, |_, _| StandardNormal.sample(rng))
}

pub fn gaussian_latent(rng: &mut Rng, width: usize, height: usize) -> Latent {
    Latent(gaussian_grid(rng, width, height))
}
