//! Deterministic parallel reduction.
//!
//! Every aggregate in this crate is a sum over unit index. To keep results
//! bit-reproducible regardless of thread count, sums run over a pairwise tree
//! whose shape depends only on the slice length: blocks of at most [`LEAF`]
//! elements are added left to right, longer slices split at the midpoint.
//! Threads only change where the two halves execute, never the order in which
//! partial sums combine.

use rayon::prelude::*;

const LEAF: usize = 64;
const PAR_GRAIN: usize = 4096;

pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let (lo, hi) = values.split_at(values.len() / 2);
    if values.len() >= PAR_GRAIN {
        let (a, b) = rayon::join(|| pairwise_sum(lo), || pairwise_sum(hi));
        a + b
    } else {
        pairwise_sum(lo) + pairwise_sum(hi)
    }
}

pub fn pairwise_mean(values: &[f64]) -> f64 {
    pairwise_sum(values) / values.len() as f64
}

/// Fills `out[i] = f(i)` in parallel. Each element depends only on its index,
/// so the buffer contents are independent of scheduling.
pub fn fill_parallel<F>(out: &mut [f64], f: F)
where
    F: Fn(usize) -> f64 + Sync,
{
    out.par_chunks_mut(PAR_GRAIN).enumerate().for_each(|(chunk_idx, chunk)| {
        let base = chunk_idx * PAR_GRAIN;
        for (j, slot) in chunk.iter_mut().enumerate() {
            *slot = f(base + j);
        }
    });
}
