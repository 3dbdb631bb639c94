//! Seedable, portable random streams.
//!
//! Every stream is a xoshiro256++ generator. Its 256-bit state is expanded
//! from a 64-bit seed with SplitMix64, so a given seed produces the same
//! sequence on every platform. Independent streams for nested indices
//! (repetition, mechanism, provider, ...) come from [`derive_seed`].

use rand::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// One SplitMix64 output step applied to `x`.
#[inline]
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the stream addressed by `path` under `master`.
///
/// `h₀ = splitmix64(master)`, then `hᵢ₊₁ = splitmix64(hᵢ ^ splitmix64(pathᵢ))`.
/// Distinct paths give statistically independent seeds; the mapping is a
/// pure function, so streams can be created in any order or on any thread.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(master), |h, &part| {
        splitmix64(h ^ splitmix64(part))
    })
}

/// Uniform integer in `0..n` by Lemire's multiply-and-reject method; the
/// slow-path division only runs when the low product word falls below `n`.
#[inline]
pub fn uniform_below<R: RngCore + ?Sized>(rng: &mut R, n: u64) -> u64 {
    debug_assert!(n > 0);
    let mut m = (rng.next_u64() as u128) * (n as u128);
    if (m as u64) < n {
        let threshold = n.wrapping_neg() % n;
        while (m as u64) < threshold {
            m = (rng.next_u64() as u128) * (n as u128);
        }
    }
    (m >> 64) as u64
}

/// A deterministic pseudo-random stream.
#[derive(Debug, Clone)]
pub struct RngStream(Xoshiro256PlusPlus);

impl RngStream {
    pub fn from_seed(seed: u64) -> Self {
        Self(Xoshiro256PlusPlus::seed_from_u64(seed))
    }

    /// Stream at `path` below `master`; see [`derive_seed`].
    pub fn derive(master: u64, path: &[u64]) -> Self {
        Self::from_seed(derive_seed(master, path))
    }
}

impl RngCore for RngStream {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    #[inline]
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}
