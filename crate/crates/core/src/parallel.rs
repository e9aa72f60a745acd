//! Fixed-size worker pool with static block scheduling.

use std::sync::Arc;

use rayon::{ThreadPool, ThreadPoolBuilder};

use crate::error::{Error, Result};

/// Runs per-entity closures either inline or on a dedicated rayon pool.
///
/// Work is split into one contiguous block per worker, so which thread
/// handles an entity is a pure function of the entity index.
#[derive(Clone)]
pub struct Workers {
    pool: Option<Arc<ThreadPool>>,
    count: usize,
}

impl std::fmt::Debug for Workers {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Workers").field("count", &self.count).finish()
    }
}

impl Workers {
    pub fn new(count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidArgument("workers must be at least 1".into()));
        }
        let pool = if count == 1 {
            None
        } else {
            let pool = ThreadPoolBuilder::new()
                .num_threads(count)
                .thread_name(|i| format!("dolda-worker-{i}"))
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
            Some(Arc::new(pool))
        };
        Ok(Self { pool, count })
    }

    pub fn serial() -> Self {
        Self { pool: None, count: 1 }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Calls `f(block_start, block)` for each contiguous block of `items`.
    pub fn for_each_block<T, F>(&self, items: &mut [T], f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync,
    {
        match &self.pool {
            None => f(0, items),
            Some(pool) => {
                let block = items.len().div_ceil(self.count).max(1);
                let f = &f;
                pool.scope(|s| {
                    for (b, chunk) in items.chunks_mut(block).enumerate() {
                        s.spawn(move |_| f(b * block, chunk));
                    }
                });
            }
        }
    }

    /// Like [`for_each_block`](Self::for_each_block) but the blocks are
    /// `stride`-sized rows of a flat buffer (e.g. one row per topic).
    pub fn for_each_row<T, F>(&self, flat: &mut [T], stride: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync,
    {
        if stride == 0 {
            return;
        }
        let rows = flat.len() / stride;
        match &self.pool {
            None => {
                for (r, row) in flat.chunks_mut(stride).enumerate() {
                    f(r, row);
                }
            }
            Some(pool) => {
                let per = rows.div_ceil(self.count).max(1);
                let f = &f;
                pool.scope(|s| {
                    for (b, chunk) in flat.chunks_mut(per * stride).enumerate() {
                        s.spawn(move |_| {
                            for (i, row) in chunk.chunks_mut(stride).enumerate() {
                                f(b * per + i, row);
                            }
                        });
                    }
                });
            }
        }
    }

    /// Calls `f(block_start, block)` on contiguous blocks of `items` and
    /// returns the results in block order.
    pub fn map_blocks_mut<T, R, F>(&self, items: &mut [T], f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(usize, &mut [T]) -> R + Sync,
    {
        match &self.pool {
            None => vec![f(0, items)],
            Some(pool) => {
                let block = items.len().div_ceil(self.count).max(1);
                let chunks: Vec<_> = items.chunks_mut(block).collect();
                let mut out: Vec<Option<R>> = chunks.iter().map(|_| None).collect();
                let f = &f;
                pool.scope(|s| {
                    for (b, (slot, chunk)) in out.iter_mut().zip(chunks).enumerate() {
                        s.spawn(move |_| *slot = Some(f(b * block, chunk)));
                    }
                });
                out.into_iter().map(|r| r.expect("block finished")).collect()
            }
        }
    }

    /// Maps `0..n` through `f` block-wise and returns per-block results in
    /// block order.
    pub fn map_blocks<R, F>(&self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(std::ops::Range<usize>) -> R + Sync,
    {
        match &self.pool {
            None => vec![f(0..n)],
            Some(pool) => {
                let block = n.div_ceil(self.count).max(1);
                let ranges: Vec<_> = (0..n).step_by(block).map(|s| s..(s + block).min(n)).collect();
                let mut out: Vec<Option<R>> = ranges.iter().map(|_| None).collect();
                let f = &f;
                pool.scope(|s| {
                    for (slot, range) in out.iter_mut().zip(ranges) {
                        s.spawn(move |_| *slot = Some(f(range)));
                    }
                });
                out.into_iter().map(|r| r.expect("block finished")).collect()
            }
        }
    }
}
