//! Reproducible floating-point reductions.
//!
//! Sums are formed from partials over fixed-size chunks, and the partials are
//! added left to right. The chunking does not depend on the worker count, so
//! the result is bit-identical for any thread pool size.

use rayon::prelude::*;

/// Chunk length used by every reduction in the crate.
pub const REDUCE_CHUNK: usize = 256;

/// Per-point work in parallel loops is grouped into chunks of this many nodes.
pub const POINT_CHUNK: usize = 64;

pub fn ordered_sum(values: &[f64]) -> f64 {
    if values.len() <= REDUCE_CHUNK {
        return values.iter().sum();
    }
    let partials: Vec<f64> = values
        .par_chunks(REDUCE_CHUNK)
        .map(|c| c.iter().sum::<f64>())
        .collect();
    partials.iter().sum()
}

/// `sum_i a_i * b_i * w_i`, in the same fixed order as [`ordered_sum`].
pub fn weighted_dot(a: &[f64], b: &[f64], w: &[f64]) -> f64 {
    let products: Vec<f64> = a
        .iter()
        .zip(b)
        .zip(w)
        .map(|((x, y), z)| x * y * z)
        .collect();
    ordered_sum(&products)
}
