//! Parametric bootstrap of the entanglement metrics.
//!
//! Each replica redraws the raw zero-lag count of every setting as
//! `Poisson(N P_nu(rho_hat) + B_nu)`, subtracts the recorded background
//! `B_nu` with clamping, and reruns the maximum-likelihood fit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use super::{metrics, mle_reconstruct, CountsRow, CountsTable, MetricErrors, MleResult};
use crate::error::{Error, Result};
use crate::exec::{derive_seed, map_indexed, Execution};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapConfig {
    pub replicas: usize,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            replicas: 500,
            seed: 0,
            execution: Execution::default(),
        }
    }
}

fn resample(table: &CountsTable, fit: &MleResult, rng: &mut ChaCha8Rng) -> CountsTable {
    let rows = table
        .rows
        .iter()
        .map(|r| {
            let mean = fit.flux * r.setting.probability(&fit.rho).max(0.0) + r.background.max(0.0);
            let raw = if mean > 0.0 {
                Poisson::new(mean).expect("positive mean").sample(rng) as u64
            } else {
                0
            };
            CountsRow::from_raw(r.setting.clone(), raw, r.background, r.duration_s)
        })
        .collect();
    CountsTable { rows }
}

fn std_dev(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Standard deviations of fidelity, concurrence and tangle over replicas.
/// Replicas whose optimizer fails to converge contribute their best iterate.
pub fn bootstrap_errors(table: &CountsTable, fit: &MleResult, cfg: &BootstrapConfig) -> Result<MetricErrors> {
    if cfg.replicas < 2 {
        return Err(Error::validation("bootstrap needs at least 2 replicas"));
    }
    let samples = map_indexed(cfg.execution, cfg.replicas, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "bootstrap", i as u64));
        let replica = resample(table, fit, &mut rng);
        match mle_reconstruct(&replica) {
            Ok(r) => Some(metrics(&r.rho)),
            Err(Error::Convergence { best, .. }) => Some(metrics(&best)),
            Err(_) => None,
        }
    });
    let ok: Vec<_> = samples.into_iter().flatten().collect();
    if ok.len() < 2 {
        return Err(Error::validation("too few bootstrap replicas could be reconstructed"));
    }
    let col = |f: fn(&super::EntanglementMetrics) -> f64| ok.iter().map(f).collect::<Vec<_>>();
    Ok(MetricErrors {
        fidelity: std_dev(&col(|m| m.fidelity_singlet)),
        concurrence: std_dev(&col(|m| m.concurrence)),
        tangle: std_dev(&col(|m| m.tangle)),
    })
}
