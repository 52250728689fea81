use rayon::prelude::*;

use crate::error::{Error, Result};

pub const DEFAULT_MAX_PARALLEL_REQUESTS: usize = 8;

/// Bounded fan-out for provider calls. Results keep input order.
pub struct Workers {
    pool: rayon::ThreadPool,
}

impl Workers {
    pub fn new(max_parallel: usize) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(max_parallel.max(1))
            .thread_name(|i| format!("vfr-worker-{i}"))
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        Ok(Self { pool })
    }

    pub fn map<T, U, F>(&self, items: &[T], f: F) -> Result<Vec<U>>
    where
        T: Sync,
        U: Send,
        F: Fn(&T) -> Result<U> + Sync + Send,
    {
        self.pool.install(|| items.par_iter().map(f).collect())
    }
}

impl Default for Workers {
    fn default() -> Self {
        Self::new(DEFAULT_MAX_PARALLEL_REQUESTS).expect("default worker pool")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_order() {
        let w = Workers::new(3).unwrap();
        let out = w.map(&(0..100).collect::<Vec<_>>(), |x| Ok(x * 2)).unwrap();
        assert_eq!(out, (0..100).map(|x| x * 2).collect::<Vec<_>>());
    }

    #[test]
    fn propagates_errors() {
        let w = Workers::new(2).unwrap();
        let r = w.map(&[1, 2, 3], |&x| if x == 2 { Err(Error::EmptyInput) } else { Ok(x) });
        assert!(r.is_err());
    }
}
