//! Deterministic random streams.
//!
//! Every consumer of randomness (parameter init, epoch shuffles, noise
//! draws, neutral-pool draws, the synthetic generator) derives its own
//! ChaCha8 stream from the master seed plus a label path, e.g.
//! `stream(seed, &[label::SHUFFLE, stage, epoch])`. Streams are therefore
//! independent of each other and of evaluation order: adding a consumer or
//! reordering work cannot silently shift anyone else's draws.

use rand_core::RngCore;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use alloc::vec::Vec;

use crate::fmath;
use crate::tensor::Tensor;

/// Stream labels. Values are arbitrary but must never be reused for two
/// different purposes under the same remaining tag path.
pub mod label {
    pub const PARAM_INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const IDA: u64 = 3;
    pub const NEUTRAL_DRAW: u64 = 4;
    pub const SYNTH: u64 = 5;
    pub const STUB_DATA: u64 = 6;
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent ChaCha8 stream from a master seed and a tag path.
pub fn stream(master: u64, tags: &[u64]) -> ChaCha8Rng {
    // Fold the tag path into a single state with splitmix rounds, then
    // expand that state into the 32-byte ChaCha seed.
    let mut state = master ^ 0x6A09_E667_F3BC_C908;
    let _ = splitmix64(&mut state);
    for &tag in tags {
        state ^= tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let _ = splitmix64(&mut state);
    }
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

/// Uniform draw in `[0, 1)` with 53 bits of precision.
pub fn uniform(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform draw in `[lo, hi)`.
pub fn uniform_in(rng: &mut impl RngCore, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * uniform(rng)
}

/// Uniform integer in `[0, n)` via rejection sampling (no modulo bias).
pub fn below(rng: &mut impl RngCore, n: usize) -> usize {
    assert!(n > 0, "below: empty range");
    let n64 = n as u64;
    let zone = u64::MAX - (u64::MAX % n64);
    loop {
        let v = rng.next_u64();
        if v < zone {
            return (v % n64) as usize;
        }
    }
}

/// Standard normal draw via the polar (Marsaglia) method.
pub fn normal(rng: &mut impl RngCore) -> f64 {
    loop {
        let u = 2.0 * uniform(rng) - 1.0;
        let v = 2.0 * uniform(rng) - 1.0;
        let s = u * u + v * v;
        if s > 0.0 && s < 1.0 {
            return u * fmath::sqrt(-2.0 * fmath::ln(s) / s);
        }
    }
}

/// In-place Fisher-Yates shuffle.
pub fn shuffle<T>(rng: &mut impl RngCore, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = below(rng, i + 1);
        items.swap(i, j);
    }
}

/// Glorot-uniform weight matrix: entries in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot(rows: usize, cols: usize, rng: &mut impl RngCore) -> Tensor {
    let limit = fmath::sqrt(6.0 / (rows + cols) as f64);
    let mut t = Tensor::zeros(rows, cols);
    for x in t.data_mut() {
        *x = uniform_in(rng, -limit, limit);
    }
    t
}

/// `k` distinct indices drawn uniformly from `0..n` (partial Fisher-Yates).
/// Panics if `k > n`; use repeated [`below`] draws for with-replacement.
pub fn sample_distinct(rng: &mut impl RngCore, n: usize, k: usize) -> Vec<usize> {
    assert!(k <= n, "sample_distinct: k={k} > n={n}");
    let mut indices: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + below(rng, n - i);
        indices.swap(i, j);
    }
    indices.truncate(k);
    indices
}
