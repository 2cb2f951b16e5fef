//! Sequential and rayon-backed execution of the crate's data-parallel loops.
//!
//! Two kinds of loops exist: independent jobs whose outputs are collected in
//! index order (sweep cells, batch trajectories), and sum reductions
//! (normal-equation assembly). Independent jobs give identical results in
//! either mode. Reductions in parallel mode are summed per fixed-size chunk
//! and the chunk partials are combined in ascending order, so a parallel run
//! is reproducible from run to run but rounds differently from the
//! sequential left-to-right sum.

use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Window count per partial sum in parallel reductions.
pub const REDUCE_CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecMode {
    #[default]
    Sequential,
    Parallel,
}

impl ExecMode {
    pub fn from_flag(parallel: bool) -> Self {
        if parallel {
            ExecMode::Parallel
        } else {
            ExecMode::Sequential
        }
    }

    /// Whether work is actually dispatched to rayon.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == ExecMode::Parallel
    }
}

/// Runs `f(0), …, f(n-1)` and returns the outputs in index order.
pub fn map_indexed<T, F>(n: usize, mode: ExecMode, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = mode;
    (0..n).map(f).collect()
}

/// Sums `term(i)` for `i in 0..n` into an accumulator of type `A`.
///
/// `init` builds a zero accumulator, `add` folds one index into it and
/// `merge` adds a partial accumulator into another.
pub fn reduce_indexed<A, I, F, M>(n: usize, mode: ExecMode, init: I, add: F, merge: M) -> A
where
    A: Send,
    I: Fn() -> A + Sync + Send,
    F: Fn(&mut A, usize) + Sync + Send,
    M: Fn(&mut A, A) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() && n > REDUCE_CHUNK {
        let chunks = n.div_ceil(REDUCE_CHUNK);
        let partials: Vec<A> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut acc = init();
                let end = ((c + 1) * REDUCE_CHUNK).min(n);
                for i in c * REDUCE_CHUNK..end {
                    add(&mut acc, i);
                }
                acc
            })
            .collect();
        let mut total = init();
        for p in partials {
            merge(&mut total, p);
        }
        return total;
    }
    let _ = (mode, &merge);
    let mut acc = init();
    for i in 0..n {
        add(&mut acc, i);
    }
    acc
}
