//! Row-parallel helpers. With the `parallel` feature the closures run on the
//! rayon pool; without it they run in order on the calling thread. Each
//! output element is computed by the same sequential code either way, so
//! results are bit-identical across the two builds.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Below this many rows the sequential path is used even when parallel.
pub const MIN_PARALLEL_ROWS: usize = 64;

/// Fill `out` by calling `f(i, &mut out[i*width..(i+1)*width])` for each row.
pub fn for_each_row<F>(out: &mut [f64], width: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if out.len() / width.max(1) >= MIN_PARALLEL_ROWS {
        out.par_chunks_mut(width)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
        return;
    }
    out.chunks_mut(width).enumerate().for_each(|(i, row)| f(i, row));
}

/// `(0..n).map(f).collect()`, possibly in parallel; order is preserved.
pub fn map_collect<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}
