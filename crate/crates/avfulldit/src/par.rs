//! Data-parallel map helpers. With the `parallel` feature (default) the
//! work runs on the rayon pool; without it the same API runs sequentially.
//! Output order always matches input order, so results are identical
//! either way — parallelism is only ever applied to independent per-item
//! work (clip generation, per-clip scoring, per-seed sampling), never to a
//! training loop.

/// Map a function over items, in parallel when the feature is enabled.
#[cfg(feature = "parallel")]
pub fn par_map<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    items.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn par_map<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    items.into_iter().map(f).collect()
}

/// Always-sequential map with the same signature, for baseline timing.
pub fn seq_map<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    items.into_iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn par_map_preserves_order() {
        let out = par_map((0..300).collect::<Vec<usize>>(), |i| i * 2);
        assert_eq!(out, (0..300).map(|i| i * 2).collect::<Vec<usize>>());
        let seq = seq_map((0..300).collect::<Vec<usize>>(), |i| i * 2);
        assert_eq!(out, seq);
    }
}
