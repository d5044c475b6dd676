//! Row-parallel loops over row-major particle buffers.
//!
//! With the `parallel` feature the loops fan out over rayon's pool; without
//! it every mode runs sequentially. Each row is written by exactly one
//! closure call and no loop performs a cross-row reduction, so results are
//! bitwise identical in either mode.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    /// Parallel when the buffer is large enough to amortize scheduling.
    #[default]
    Auto,
    Parallel,
    Sequential,
}

/// Below this many scalars per loop, `Auto` stays on the calling thread.
const AUTO_MIN_WORK: usize = 8192;

impl Execution {
    fn go_parallel(self, rows: usize, row_len: usize) -> bool {
        if !cfg!(feature = "parallel") {
            return false;
        }
        match self {
            Execution::Sequential => false,
            Execution::Parallel => rows > 1,
            Execution::Auto => rows > 1 && rows * row_len.max(1) >= AUTO_MIN_WORK,
        }
    }
}

/// Calls `f(chunk_start_row, chunk)` over consecutive blocks of at most
/// `rows_per_chunk` rows.
pub fn for_each_row_chunk<F>(exec: Execution, data: &mut [f64], row_len: usize, rows_per_chunk: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if row_len == 0 {
        return;
    }
    let rows = data.len() / row_len;
    let chunk = rows_per_chunk.max(1) * row_len;
    #[cfg(feature = "parallel")]
    if exec.go_parallel(rows, row_len) {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(c, block)| f(c * rows_per_chunk.max(1), block));
        return;
    }
    let _ = rows;
    for (c, block) in data.chunks_mut(chunk).enumerate() {
        f(c * rows_per_chunk.max(1), block);
    }
}

/// Calls `f(row, a_row, b_row)` for every row of two equally shaped buffers.
pub fn for_each_row_pair<F>(exec: Execution, a: &mut [f64], b: &mut [f64], row_len: usize, f: F)
where
    F: Fn(usize, &mut [f64], &mut [f64]) + Sync + Send,
{
    assert_eq!(a.len(), b.len());
    if row_len == 0 {
        return;
    }
    let rows = a.len() / row_len;
    #[cfg(feature = "parallel")]
    if exec.go_parallel(rows, row_len) {
        use rayon::prelude::*;
        a.par_chunks_mut(row_len)
            .zip(b.par_chunks_mut(row_len))
            .enumerate()
            .for_each(|(i, (ra, rb))| f(i, ra, rb));
        return;
    }
    let _ = rows;
    for (i, (ra, rb)) in a.chunks_mut(row_len).zip(b.chunks_mut(row_len)).enumerate() {
        f(i, ra, rb);
    }
}

/// Maps `f` over `0..n`, preserving order.
pub fn map_indexed<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if !matches!(exec, Execution::Sequential) && n > 1 {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}
