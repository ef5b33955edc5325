//! Deterministic sharded sampling.
//!
//! A run of `total` draws is split into [`SHARDS`] contiguous shards. Shard
//! `j` owns a ChaCha8 stream keyed by `seed_from_u64(seed)` with stream id
//! `j`, and receives `total / SHARDS` draws plus one if `j < total % SHARDS`.
//! Shards execute in parallel but their results are combined in shard order,
//! so the output depends only on `(seed, total)` and not on the thread count.

use rand_chacha::rand_core::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use std::sync::OnceLock;

/// Fixed shard count; part of the reproducibility contract.
pub const SHARDS: usize = 16;

/// Environment variable capping the worker threads.
pub const THREADS_ENV: &str = "SMALLBALL_THREADS";

pub fn shard_rng(seed: u64, shard: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(shard as u64);
    rng
}

/// `(offset, count)` of every shard.
pub fn shard_layout(total: usize) -> Vec<(usize, usize)> {
    let base = total / SHARDS;
    let extra = total % SHARDS;
    let mut offset = 0;
    (0..SHARDS)
        .map(|j| {
            let count = base + usize::from(j < extra);
            let out = (offset, count);
            offset += count;
            out
        })
        .collect()
}

/// Uniform on the open interval `(0, 1)` from the top 53 bits.
pub fn open_uniform(rng: &mut ChaCha8Rng) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal (ziggurat).
pub fn std_normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let threads = std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|&n| n > 0)
            .unwrap_or(0);
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("failed to build worker pool")
    })
}

/// Run `work(offset, count, rng)` on every shard and return the results in
/// shard order.
pub fn run_sharded<T, F>(seed: u64, total: usize, work: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, usize, &mut ChaCha8Rng) -> T + Sync,
{
    let layout = shard_layout(total);
    pool().install(|| {
        layout
            .par_iter()
            .enumerate()
            .map(|(j, &(offset, count))| {
                let mut rng = shard_rng(seed, j);
                work(offset, count, &mut rng)
            })
            .collect()
    })
}
