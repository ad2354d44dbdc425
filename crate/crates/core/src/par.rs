//! Iterator selection for the `parallel` feature.
//!
//! Call sites only use adaptors whose names and semantics agree between
//! `rayon` and `std`: `map`, `filter`, `filter_map`, `min_by`, `max_by`,
//! `any`, `all`, `sum`, `count`, `collect` and `for_each`.

/// `into_par_iter()` with the `parallel` feature, `into_iter()` without.
#[macro_export]
#[doc(hidden)]
macro_rules! par_iter {
    ($e:expr) => {{
        #[cfg(feature = "parallel")]
        {
            rayon::iter::IntoParallelIterator::into_par_iter($e)
        }
        #[cfg(not(feature = "parallel"))]
        {
            ::std::iter::IntoIterator::into_iter($e)
        }
    }};
}

/// Whether the crate was built with rayon.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

/// Runs `f` on a single worker thread, the reference for sequential timings.
#[cfg(feature = "parallel")]
pub fn sequential<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .expect("single-thread pool")
        .install(f)
}

#[cfg(not(feature = "parallel"))]
pub fn sequential<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    f()
}

/// Traits needed by `par_iter!` call sites.
pub mod prelude {
    #[cfg(feature = "parallel")]
    pub use rayon::iter::{IndexedParallelIterator, ParallelIterator};
}
