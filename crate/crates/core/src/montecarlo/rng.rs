use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};

/// The generator for path `index` of a run seeded with `seed`.
pub(crate) fn path_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

#[inline]
pub(crate) fn fill_normal(rng: &mut ChaCha8Rng, out: &mut [f64]) {
    for z in out {
        *z = rng.sample(StandardNormal);
    }
}

/// Waiting time of a Poisson stream with rate `rate`.
#[inline]
pub(crate) fn exponential(rng: &mut ChaCha8Rng, rate: f64) -> f64 {
    let e: f64 = rng.sample(Exp1);
    e / rate
}
