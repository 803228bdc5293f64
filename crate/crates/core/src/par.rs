//! Execution helpers: data-parallel with the `parallel` feature (rayon),
//! plain loops otherwise. Every helper writes each output slot from exactly
//! one task, so results are bitwise identical across thread counts.

/// Apply `f` to each row slice of `data` (row-major, `cols` wide). Rows are
/// batched so tiny per-row work does not drown in scheduling overhead.
#[cfg(feature = "parallel")]
pub fn for_each_row<F>(data: &mut [f64], cols: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    use rayon::prelude::*;
    if cols == 0 {
        return;
    }
    // Small outputs are not worth a dispatch; results are bitwise identical
    // either way since every slot runs the same per-row code.
    if data.len() < 4096 {
        for (i, row) in data.chunks_mut(cols).enumerate() {
            f(i, row);
        }
        return;
    }
    let rows = data.len() / cols;
    let min_rows = (4096 / cols.max(1)).clamp(1, rows.max(1));
    data.par_chunks_mut(cols)
        .enumerate()
        .with_min_len(min_rows)
        .for_each(|(i, row)| f(i, row));
}

#[cfg(not(feature = "parallel"))]
pub fn for_each_row<F>(data: &mut [f64], cols: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if cols == 0 {
        return;
    }
    for (i, row) in data.chunks_mut(cols).enumerate() {
        f(i, row);
    }
}

/// Map an index range to a Vec, preserving index order. Tasks are assumed
/// coarse (a layer, a query); use `map_indexed_fine` for per-node work.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..len).into_par_iter().map(f).collect()
}

/// As `map_indexed`, batched for cheap per-index work.
#[cfg(feature = "parallel")]
pub fn map_indexed_fine<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..len).into_par_iter().with_min_len(64).map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed_fine<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..len).map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..len).map(f).collect()
}

/// Sum `f(i)` over `0..len` with a fixed chunk width, so the reduction order
/// does not depend on the thread count.
pub fn sum_indexed<F>(len: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    const CHUNK: usize = 1024;
    if len == 0 {
        return 0.0;
    }
    let chunks = len.div_ceil(CHUNK);
    let partial = |c: usize| {
        let start = c * CHUNK;
        let end = (start + CHUNK).min(len);
        let mut acc = 0.0;
        for i in start..end {
            acc += f(i);
        }
        acc
    };
    // Few chunks are cheaper to walk in place; the chunk partials and their
    // combination order are the same either way, so the sum is bit-identical.
    if chunks <= 8 {
        return (0..chunks).map(partial).sum();
    }
    let partials = map_indexed(chunks, partial);
    partials.iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_map_covers_all_rows() {
        let mut data = vec![0.0; 12];
        for_each_row(&mut data, 3, |i, row| {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (i * 3 + j) as f64;
            }
        });
        let expect: Vec<f64> = (0..12).map(|x| x as f64).collect();
        assert_eq!(data, expect);
    }

    #[test]
    fn indexed_sum_close_to_linear_and_repeatable() {
        let seq: f64 = (0..5000).map(|i| (i as f64).sqrt()).sum();
        let a = sum_indexed(5000, |i| (i as f64).sqrt());
        let b = sum_indexed(5000, |i| (i as f64).sqrt());
        assert!((a - seq).abs() < 1e-9 * seq.abs());
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn indexed_sum_independent_of_thread_count() {
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| sum_indexed(50_000, |i| 1.0 / (1.0 + i as f64)))
        };
        assert_eq!(run(1).to_bits(), run(4).to_bits());
    }
}
