use nalgebra::{Matrix4, SymmetricEigen};
use num_complex::Complex64;

use super::stokes_paulis;
use crate::polarization::{kron, TwoQubitDensityMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricErrors {
    pub fidelity: f64,
    pub concurrence: f64,
    pub tangle: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntanglementMetrics {
    pub fidelity_singlet: f64,
    pub concurrence: f64,
    /// Square of the concurrence.
    pub tangle: f64,
    pub errors: Option<MetricErrors>,
}

/// `<Psi-|rho|Psi->`.
pub fn singlet_fidelity(rho: &TwoQubitDensityMatrix) -> f64 {
    rho.ket_expectation(&TwoQubitDensityMatrix::singlet_ket())
}

/// Wootters concurrence `max(0, l1 - l2 - l3 - l4)`.
///
/// The `l_i` are the square roots of the eigenvalues of
/// `rho (Y(x)Y) rho* (Y(x)Y)`, computed as the singular values of
/// `sqrt(rho) S` with `S = (Y(x)Y) sqrt(rho)* (Y(x)Y)`, since
/// `sqrt(rho) rho~ sqrt(rho) = (sqrt(rho) S)(sqrt(rho) S)^dagger`.
/// Rounding noise in the null space of `rho` then enters the small `l_i`
/// only at second order.
pub fn concurrence(rho: &TwoQubitDensityMatrix) -> f64 {
    let m = rho.matrix();
    let herm = (m + m.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(herm);
    let mut sqrt_rho = Matrix4::<Complex64>::zeros();
    for k in 0..4 {
        let w = eig.eigenvalues[k].max(0.0).sqrt();
        if w == 0.0 {
            continue;
        }
        let v = eig.eigenvectors.column(k);
        sqrt_rho += v * v.adjoint() * Complex64::new(w, 0.0);
    }
    let y = stokes_paulis()[3];
    let yy = kron(&y, &y);
    let spin_flipped = yy * sqrt_rho.map(|z| z.conj()) * yy;
    let mut l: Vec<f64> = (sqrt_rho * spin_flipped)
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .collect();
    l.sort_by(|a, b| b.total_cmp(a));
    (l[0] - l[1] - l[2] - l[3]).max(0.0)
}

pub fn metrics(rho: &TwoQubitDensityMatrix) -> EntanglementMetrics {
    let c = concurrence(rho);
    EntanglementMetrics {
        fidelity_singlet: singlet_fidelity(rho).clamp(0.0, 1.0),
        concurrence: c,
        tangle: c * c,
        errors: None,
    }
}
