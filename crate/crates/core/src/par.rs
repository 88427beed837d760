//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) the helpers fan out over rayon's
//! global pool; without it they run on the calling thread. Output ordering and
//! per-item arithmetic are identical in both modes, so results are bit-exact
//! regardless of which path ran.
//!
//! [`set_enabled`] flips between the two paths at runtime, which is what the
//! benches use to compare them inside a single binary.

use std::sync::atomic::{AtomicBool, Ordering};

static ENABLED: AtomicBool = AtomicBool::new(cfg!(feature = "parallel"));

/// Work smaller than this (in scalar multiply-adds) stays on the calling thread.
#[cfg(feature = "parallel")]
const MIN_PARALLEL_WORK: usize = 1 << 14;

/// Turn the parallel path on or off. A no-op when built without `parallel`.
pub fn set_enabled(on: bool) {
    ENABLED.store(on && cfg!(feature = "parallel"), Ordering::Relaxed);
}

pub fn enabled() -> bool {
    ENABLED.load(Ordering::Relaxed)
}

/// Apply `f(row_index, row)` to every `row_len`-wide row of `out`.
pub fn for_each_row<T, F>(out: &mut [T], row_len: usize, work_per_row: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if row_len == 0 {
        return;
    }
    let rows = out.len() / row_len;
    #[cfg(feature = "parallel")]
    if enabled() && rows > 1 && rows.saturating_mul(work_per_row) >= MIN_PARALLEL_WORK {
        use rayon::prelude::*;
        out.par_chunks_mut(row_len).enumerate().for_each(|(i, row)| f(i, row));
        return;
    }
    let _ = (rows, work_per_row);
    out.chunks_mut(row_len).enumerate().for_each(|(i, row)| f(i, row));
}

/// Order-preserving map.
pub fn map<I, O, F>(items: &[I], f: F) -> Vec<O>
where
    I: Sync,
    O: Send,
    F: Fn(&I) -> O + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if enabled() && items.len() > 1 {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    items.iter().map(f).collect()
}

/// Order-preserving map over `0..n`.
pub fn map_range<O, F>(n: usize, f: F) -> Vec<O>
where
    O: Send,
    F: Fn(usize) -> O + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if enabled() && n > 1 {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order_in_both_modes() {
        let items: Vec<u64> = (0..1000).collect();
        set_enabled(false);
        let seq = map(&items, |x| x * 3 + 1);
        set_enabled(true);
        let par = map(&items, |x| x * 3 + 1);
        assert_eq!(seq, par);
        assert_eq!(seq[10], 31);
    }

    #[test]
    fn rows_cover_whole_buffer() {
        let mut buf = vec![0usize; 4096 * 8];
        for_each_row(&mut buf, 8, 1 << 12, |i, row| row.iter_mut().for_each(|v| *v = i));
        assert!(buf.chunks(8).enumerate().all(|(i, r)| r.iter().all(|&v| v == i)));
    }
}
