//! Data-parallel fan-out for independent work items (scan points, seeds,
//! bootstrap replicas) and the seed derivation that keeps them reproducible.
//!
//! With the `parallel` feature, [`Execution::Parallel`] maps over a rayon
//! pool. Without it, every request runs sequentially. Results are returned in
//! index order either way, and each item derives its own seed, so the output
//! does not depend on the execution mode.

use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// Whether this build can actually run items concurrently.
    pub fn is_parallel(&self) -> bool {
        cfg!(feature = "parallel") && *self == Execution::Parallel
    }
}

/// `(0..n).map(f)` collected in order, concurrently when enabled.
pub fn map_indexed<R, F>(exec: Execution, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Seed for item `index` of `stage`: the first eight bytes (little endian)
/// of `SHA-256("<master>/<stage>/<index>")`.
pub fn derive_seed(master: u64, stage: &str, index: u64) -> u64 {
    let digest = Sha256::digest(format!("{master}/{stage}/{index}").as_bytes());
    let mut b = [0u8; 8];
    b.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let f = |i: usize| derive_seed(42, "x", i as u64) % 1000;
        assert_eq!(map_indexed(Execution::Sequential, 50, f), map_indexed(Execution::Parallel, 50, f));
    }

    #[test]
    fn seeds_differ_by_stage_and_index() {
        assert_eq!(derive_seed(1, "scan", 0), derive_seed(1, "scan", 0));
        assert_ne!(derive_seed(1, "scan", 0), derive_seed(1, "scan", 1));
        assert_ne!(derive_seed(1, "scan", 0), derive_seed(1, "tomo", 0));
        assert_ne!(derive_seed(1, "scan", 0), derive_seed(2, "scan", 0));
    }
}
