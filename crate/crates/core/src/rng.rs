//! Deterministic random streams.
//!
//! Every stochastic routine takes an explicit `u64` seed and draws from a
//! ChaCha stream, so results do not depend on scheduling or thread count.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::panel::{Panel, PanelKind};

/// Stream identifiers used to split one seed into independent sub-streams.
pub mod stream {
    pub const INNOVATIONS: u64 = 1;
    pub const STARTS: u64 = 2;
    pub const ZERO_REPLACEMENT: u64 = 3;
    pub const AUX: u64 = 4;
}

/// A ChaCha generator on sub-stream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seed of Monte Carlo replication `r`.
#[inline]
pub fn replication_seed(seed: u64, r: u64) -> u64 {
    seed ^ r
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// `n x t_len` panel of i.i.d. standard normal innovations.
pub fn seeded_normal_panel(n: usize, t_len: usize, seed: u64) -> Result<Panel> {
    if n == 0 || t_len == 0 {
        return Err(Error::Invalid("panel dimensions must be positive".into()));
    }
    let mut rng = stream_rng(seed, stream::INNOVATIONS);
    // Fill time point by time point so a longer panel extends a shorter one.
    let mut m = DMatrix::zeros(n, t_len);
    for t in 0..t_len {
        for i in 0..n {
            m[(i, t)] = standard_normal(&mut rng);
        }
    }
    Panel::new(m, PanelKind::Innovations)
}
