//! Data-parallel helpers. With the `parallel` feature (default) work is spread
//! over the rayon pool; without it, or with [`Parallelism::Sequential`], the
//! same closures run in order on the calling thread. Results are always
//! returned in input order so downstream reductions are deterministic.

/// Execution strategy for the batch helpers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Parallelism {
    #[cfg_attr(feature = "parallel", default)]
    #[cfg(feature = "parallel")]
    Rayon,
    #[cfg_attr(not(feature = "parallel"), default)]
    Sequential,
}

impl Parallelism {
    pub fn name(self) -> &'static str {
        match self {
            #[cfg(feature = "parallel")]
            Parallelism::Rayon => "rayon",
            Parallelism::Sequential => "sequential",
        }
    }
}

/// Map `f` over `0..len`, collecting results in index order.
pub fn map_indices<T, F>(len: usize, mode: Parallelism, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match mode {
        #[cfg(feature = "parallel")]
        Parallelism::Rayon => {
            use rayon::prelude::*;
            (0..len).into_par_iter().map(f).collect()
        }
        Parallelism::Sequential => (0..len).map(f).collect(),
    }
}

/// Map `f` over a slice, collecting results in slice order.
pub fn map_slice<S, T, F>(items: &[S], mode: Parallelism, f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
{
    match mode {
        #[cfg(feature = "parallel")]
        Parallelism::Rayon => {
            use rayon::prelude::*;
            items.par_iter().map(f).collect()
        }
        Parallelism::Sequential => items.iter().map(f).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let out = map_indices(100, Parallelism::default(), |i| i * i);
        assert_eq!(out, (0..100).map(|i| i * i).collect::<Vec<_>>());
        let seq = map_slice(&out, Parallelism::Sequential, |x| x + 1);
        assert_eq!(seq[9], 82);
    }
}
