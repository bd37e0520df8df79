//! Deterministic parallel map/reduce.
//!
//! Work is split into fixed-size chunks, each chunk is folded sequentially,
//! and the per-chunk partials are combined by a balanced pairwise tree. The
//! partition never depends on the thread count, so results are bit-identical
//! across runs and machines for a fixed chunk size.

use rayon::prelude::*;

use crate::error::Result;

pub(crate) fn chunked_map_reduce<I, T, F, C>(items: &[I], chunk: usize, map_chunk: F, combine: C) -> Result<Option<T>>
where
    I: Sync,
    T: Send,
    F: Fn(&[I]) -> Result<T> + Sync,
    C: Fn(T, T) -> T,
{
    let partials = items
        .par_chunks(chunk.max(1))
        .map(&map_chunk)
        .collect::<Result<Vec<T>>>()?;
    Ok(tree_reduce(partials, combine))
}

pub(crate) fn tree_reduce<T, C: Fn(T, T) -> T>(mut level: Vec<T>, combine: C) -> Option<T> {
    while level.len() > 1 {
        let mut next = Vec::with_capacity(level.len().div_ceil(2));
        let mut it = level.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(combine(a, b)),
                None => next.push(a),
            }
        }
        level = next;
    }
    level.pop()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tree_reduce_pairs_in_order() {
        let s = tree_reduce(
            vec!["a", "b", "c", "d", "e"].into_iter().map(String::from).collect(),
            |x, y| format!("({x}{y})"),
        );
        assert_eq!(s.as_deref(), Some("(((ab)(cd))e)"));
        assert_eq!(tree_reduce(Vec::<f64>::new(), |a, b| a + b), None);
    }

    #[test]
    fn chunked_sum_is_reproducible() {
        let xs: Vec<f64> = (0..10_000).map(|i| (i as f64).sin() * 1e-3).collect();
        let run = || {
            chunked_map_reduce(&xs, 37, |c| Ok(c.iter().sum::<f64>()), |a, b| a + b)
                .unwrap()
                .unwrap()
        };
        let first = run();
        for _ in 0..5 {
            assert_eq!(run().to_bits(), first.to_bits());
        }
    }
}
