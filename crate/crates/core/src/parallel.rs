//! Frame-chunked parallel map with an order-preserving merge.
//!
//! Chunk boundaries depend only on the frame count, and partial results are
//! folded in chunk order on the calling thread. Reductions therefore produce
//! the same bits whatever the size of the rayon pool.

use rayon::prelude::*;

pub(crate) const CHUNK_FRAMES: usize = 2048;

pub(crate) fn chunk_ranges(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .step_by(CHUNK_FRAMES)
        .map(|start| (start, CHUNK_FRAMES.min(n - start)))
        .collect()
}

/// Apply `f(start, len)` to every chunk of `0..n`; results come back in
/// chunk order.
pub(crate) fn map_chunks<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, usize) -> T + Sync,
{
    chunk_ranges(n).into_par_iter().map(|(s, l)| f(s, l)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_cover_range_in_order() {
        let r = chunk_ranges(2 * CHUNK_FRAMES + 5);
        assert_eq!(r, vec![(0, CHUNK_FRAMES), (CHUNK_FRAMES, CHUNK_FRAMES), (2 * CHUNK_FRAMES, 5)]);
        let starts = map_chunks(2 * CHUNK_FRAMES + 5, |s, _| s);
        assert_eq!(starts, vec![0, CHUNK_FRAMES, 2 * CHUNK_FRAMES]);
    }
}
