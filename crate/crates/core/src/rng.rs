//! Seeded random streams.
//!
//! Every consumer draws from `ChaCha8Rng` seeded with the run seed and a
//! stream id. Stream ids are partitioned by purpose so that, for one seed,
//! Monte Carlo draws, eigensolver probes and surrogate sampling never share
//! a stream. Monte Carlo sample `i` always uses stream `MC_BASE + i`, which
//! makes results independent of how samples are distributed over workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const MC_BASE: u64 = 0;
pub const EIGEN_BASE: u64 = 1 << 62;
pub const SURROGATE_SAMPLER_BASE: u64 = 1 << 61;
pub const OPTIMIZER_BASE: u64 = 1 << 60;
pub const MEASURE_BASE: u64 = 1 << 59;

pub type Rng = ChaCha8Rng;

pub fn stream(seed: u64, id: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Fill `out` with i.i.d. standard normals.
pub fn fill_standard_normal(rng: &mut Rng, out: &mut [f64]) {
    use rand::Rng as _;
    for x in out.iter_mut() {
        *x = rng.sample(rand_distr::StandardNormal);
    }
}
