//! Seeded random number generation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::grid::GridFunction;
use crate::scalar::Real;

/// Identity of the generator behind every seeded draw, recorded in reports.
pub const GENERATOR: &str = "ChaCha8Rng (rand_chacha 0.9)";

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream for sub-task `index` of a run seeded with `seed`.
pub fn substream(seed: u64, index: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index.wrapping_add(1));
    rng
}

pub fn standard_normal<T: Real, R: Rng + ?Sized>(rng: &mut R, n: usize, spacing: T) -> GridFunction<T> {
    let values = (0..n).map(|_| T::lit(rng.sample::<f64, _>(StandardNormal))).collect();
    GridFunction::from_raw(values, spacing)
}

/// Uniform sample from the weighted-norm ball of `radius` around `center`.
pub fn uniform_in_ball<T: Real, R: Rng + ?Sized>(rng: &mut R, center: &GridFunction<T>, radius: T) -> GridFunction<T> {
    let n = center.len();
    loop {
        let dir = standard_normal(rng, n, center.spacing());
        let norm = dir.norm();
        if norm > T::zero() {
            let u: f64 = rng.random();
            let r = radius * T::lit(u.powf(1.0 / n as f64));
            return center.zip_map_unchecked(&dir, |c, d| c + r * d / norm);
        }
    }
}
