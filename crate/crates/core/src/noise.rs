//! Counter-based noise addressed by `(replicate, particle, step, channel)`.
//!
//! Each draw is one Philox4x32-10 block evaluated at a counter built from
//! the coordinates, keyed by the master seed. Nothing is carried between
//! draws, so results are independent of evaluation order and thread count.
//! Gaussians are obtained by the inverse normal CDF of a single uniform.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use std::sync::OnceLock;

/// Identifier recorded in run manifests.
pub const ALGORITHM_ID: &str = "philox4x32-10+inverse-normal-cdf";

/// Channel holding the initial-condition uniform of each particle (at step 0).
pub const CHANNEL_INITIAL: u32 = 0;
/// Channel holding the Brownian increment of each particle at each step.
pub const CHANNEL_INCREMENT: u32 = 1;

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

#[inline(always)]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = (a as u64) * (b as u64);
    ((p >> 32) as u32, p as u32)
}

/// The Philox4x32 bijection with 10 rounds.
#[inline]
pub fn philox4x32_10(counter: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let mut c = counter;
    let mut k = key;
    for round in 0..10 {
        if round > 0 {
            k[0] = k[0].wrapping_add(PHILOX_W0);
            k[1] = k[1].wrapping_add(PHILOX_W1);
        }
        let (hi0, lo0) = mulhilo(PHILOX_M0, c[0]);
        let (hi1, lo1) = mulhilo(PHILOX_M1, c[2]);
        c = [hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0];
    }
    c
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn standard_normal() -> &'static Normal {
    static N: OnceLock<Normal> = OnceLock::new();
    N.get_or_init(|| Normal::new(0.0, 1.0).expect("unit normal"))
}

/// Inverse CDF of the standard normal distribution.
#[inline]
pub fn normal_quantile(u: f64) -> f64 {
    standard_normal().inverse_cdf(u)
}

/// Seed hierarchy for one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoisePlan {
    pub master_seed: u64,
}

impl NoisePlan {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed }
    }

    pub fn algorithm_id(&self) -> &'static str {
        ALGORITHM_ID
    }

    /// An independent plan for a sub-experiment labelled `tag`.
    pub fn fork(&self, tag: u64) -> Self {
        Self::new(splitmix64(self.master_seed ^ splitmix64(tag.wrapping_add(0x6A09_E667_F3BC_C909))))
    }

    /// Raw 64 bits at the given coordinates.
    #[inline]
    pub fn bits(&self, replicate: usize, particle: usize, step: usize, channel: u32) -> u64 {
        debug_assert!(replicate <= u32::MAX as usize);
        debug_assert!(particle <= u32::MAX as usize);
        debug_assert!(step <= u32::MAX as usize);
        let key = [self.master_seed as u32, (self.master_seed >> 32) as u32];
        let out = philox4x32_10(
            [particle as u32, step as u32, channel, replicate as u32],
            key,
        );
        ((out[1] as u64) << 32) | out[0] as u64
    }

    /// Uniform draw on the open interval (0, 1) with 53 random bits.
    #[inline]
    pub fn uniform(&self, replicate: usize, particle: usize, step: usize, channel: u32) -> f64 {
        let bits = self.bits(replicate, particle, step, channel) >> 11;
        (bits as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal draw at the given coordinates.
    #[inline]
    pub fn gaussian(&self, replicate: usize, particle: usize, step: usize, channel: u32) -> f64 {
        normal_quantile(self.uniform(replicate, particle, step, channel))
    }

    /// Initial-condition uniform for `particle`.
    #[inline]
    pub fn initial_uniform(&self, replicate: usize, particle: usize) -> f64 {
        self.uniform(replicate, particle, 0, CHANNEL_INITIAL)
    }

    /// Fills `out[k]` with the increment draw of particle `first + k` at `step`.
    pub fn fill_increments(&self, replicate: usize, step: usize, first: usize, out: &mut [f64]) {
        for (k, g) in out.iter_mut().enumerate() {
            *g = self.gaussian(replicate, first + k, step, CHANNEL_INCREMENT);
        }
    }
}
