//! Deterministic seeding: every replica batch gets its own ChaCha stream
//! derived from the master seed, so results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finaliser, used to derive independent sub-seeds.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed for the `index`-th child of `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index.wrapping_add(0x632B_E59B_D9B4_E019)))
}

/// Generator for stream `stream` of the master seed.
pub fn stream_rng(master: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng
}

/// Replicas handed to a single rng stream. Work is split into batches of
/// this size so parallel and sequential runs draw identical numbers.
pub const BATCH: usize = 1024;

/// Runs `f(batch_rng, start, len)` over `0..total` in fixed-size batches in
/// parallel and concatenates the outputs in batch order.
pub fn par_batches<T, F>(master: u64, total: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng, usize, usize) -> Vec<T> + Sync,
{
    use rayon::prelude::*;
    let n_batches = total.div_ceil(BATCH);
    let chunks: Vec<Vec<T>> = (0..n_batches)
        .into_par_iter()
        .map(|b| {
            let start = b * BATCH;
            let len = BATCH.min(total - start);
            let mut rng = stream_rng(master, b as u64);
            f(&mut rng, start, len)
        })
        .collect();
    chunks.into_iter().flatten().collect()
}
