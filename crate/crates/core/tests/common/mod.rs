#![allow(dead_code)]

use ionherald::polarization::TwoQubitDensityMatrix;
use ionherald::tomography::{design_16, CountsRow, CountsTable};
use nalgebra::{Matrix2, Matrix4};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

fn gauss_c(rng: &mut impl Rng) -> Complex64 {
    Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

/// Ginibre-ensemble density matrix: full rank with probability one.
pub fn random_rho(rng: &mut impl Rng) -> TwoQubitDensityMatrix {
    let g = Matrix4::from_fn(|_, _| gauss_c(rng));
    let m = g * g.adjoint();
    let tr = m.trace();
    TwoQubitDensityMatrix::new(m / tr).expect("Ginibre matrix is a valid state")
}

/// Haar-random 2x2 unitary (up to a global phase).
pub fn random_unitary(rng: &mut impl Rng) -> Matrix2<Complex64> {
    let (a, b) = (gauss_c(rng), gauss_c(rng));
    let n = (a.norm_sqr() + b.norm_sqr()).sqrt();
    let (a, b) = (a / n, b / n);
    Matrix2::new(a, b, -b.conj(), a.conj())
}

/// Raw counts drawn as `Poisson(flux * P_nu)`, no background.
pub fn poisson_table(rho: &TwoQubitDensityMatrix, flux: f64, rng: &mut impl Rng) -> CountsTable {
    let rows = design_16()
        .into_iter()
        .map(|s| {
            let mean = flux * s.probability(rho).max(0.0);
            let raw = if mean > 0.0 {
                Poisson::new(mean).unwrap().sample(rng) as u64
            } else {
                0
            };
            CountsRow::from_raw(s, raw, 0.0, 1.0)
        })
        .collect();
    CountsTable { rows }
}
