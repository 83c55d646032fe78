//! Deterministic parallel map-reduce over path indices.
//!
//! Indices are cut into fixed-size chunks independent of the thread count.
//! Each chunk folds its paths in order and chunk results are combined left to
//! right, so the floating-point reduction tree never depends on scheduling.

use rayon::prelude::*;

use crate::error::Result;

pub const CHUNK: u64 = 512;

/// Folds `fold` over `0..n` in parallel chunks and merges the chunk states in
/// index order.
pub fn map_reduce<A, I, F, G>(n: u64, init: I, fold: F, merge: G) -> Result<A>
where
    A: Send,
    I: Fn() -> A + Sync,
    F: Fn(&mut A, u64) -> Result<()> + Sync,
    G: Fn(&mut A, A),
{
    let chunks = n.div_ceil(CHUNK);
    let parts: Vec<Result<A>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = init();
            let hi = ((c + 1) * CHUNK).min(n);
            for i in c * CHUNK..hi {
                fold(&mut acc, i)?;
            }
            Ok(acc)
        })
        .collect();
    let mut total = init();
    for part in parts {
        merge(&mut total, part?);
    }
    Ok(total)
}

/// Runs `f` for every index and returns the results in index order.
pub fn map_collect<T, F>(n: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    (0..n).into_par_iter().map(&f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn result_independent_of_pool_size() {
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    map_reduce(
                        10_000,
                        || 0.0f64,
                        |a, i| {
                            *a += (i as f64).sqrt().sin() * 1e-3;
                            Ok(())
                        },
                        |a, b| *a += b,
                    )
                    .unwrap()
                })
        };
        assert_eq!(run(1).to_bits(), run(3).to_bits());
    }

    #[test]
    fn errors_propagate() {
        let r: Result<u64> = map_reduce(
            100,
            || 0,
            |_, i| {
                if i == 57 {
                    Err(crate::Error::PathBudgetExceeded(1))
                } else {
                    Ok(())
                }
            },
            |a, b| *a += b,
        );
        assert!(r.is_err());
    }
}
