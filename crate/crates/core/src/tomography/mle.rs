//! Maximum-likelihood reconstruction over physical density matrices.
//!
//! `rho(t) = T^dagger T / Tr(T^dagger T)` with `T` lower triangular: four real
//! diagonal entries and six complex sub-diagonal entries, 16 real parameters.
//! The Poisson likelihood `sum_nu [N P_nu - n_nu ln(N P_nu)]` is minimized
//! with the flux `N` profiled out (`N = sum n / sum P`), which makes the
//! objective independent of the scale of `T`. A quadratic penalty on
//! `|t|^2 - 1` pins that scale without moving the optimum in `rho`.

use nalgebra::{Cholesky, Matrix4, SMatrix, SVector, Vector4};
use num_complex::Complex64;

use super::{linear_inversion, CountsTable};
use crate::error::{Error, Result};
use crate::polarization::TwoQubitDensityMatrix;

const NPARAM: usize = 16;
type Params = SVector<f64, NPARAM>;
type Hessian = SMatrix<f64, NPARAM, NPARAM>;

/// Sub-diagonal positions of `T`, in parameter order after the diagonal.
const OFF_DIAG: [(usize, usize); 6] = [(1, 0), (2, 0), (2, 1), (3, 0), (3, 1), (3, 2)];

/// Fixed quasi-Newton protocol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MleConfig {
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Armijo sufficient-decrease constant.
    pub armijo_c1: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
    /// Weight of the white-noise admixture that makes the start point full rank.
    pub start_mixing: f64,
    /// A stalled line search is accepted as converged below this gradient norm.
    pub stall_grad_tol: f64,
}

impl Default for MleConfig {
    fn default() -> Self {
        Self {
            grad_tol: 1e-9,
            max_iter: 100_000,
            armijo_c1: 1e-4,
            backtrack: 0.5,
            max_backtracks: 80,
            start_mixing: 1e-8,
            stall_grad_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleResult {
    pub rho: TwoQubitDensityMatrix,
    /// Profiled flux estimate `sum n / sum P`.
    pub flux: f64,
    /// Profiled Poisson negative log-likelihood at `rho`.
    pub nll: f64,
    pub iterations: usize,
    pub grad_norm: f64,
}

fn t_from_params(t: &Params) -> Matrix4<Complex64> {
    let mut m = Matrix4::zeros();
    for i in 0..4 {
        m[(i, i)] = Complex64::new(t[i], 0.0);
    }
    for (k, &(i, j)) in OFF_DIAG.iter().enumerate() {
        m[(i, j)] = Complex64::new(t[4 + 2 * k], t[5 + 2 * k]);
    }
    m
}

fn params_from_t(m: &Matrix4<Complex64>) -> Params {
    let mut t = Params::zeros();
    for i in 0..4 {
        t[i] = m[(i, i)].re;
    }
    for (k, &(i, j)) in OFF_DIAG.iter().enumerate() {
        t[4 + 2 * k] = m[(i, j)].re;
        t[5 + 2 * k] = m[(i, j)].im;
    }
    t
}

fn rho_from_params(t: &Params) -> TwoQubitDensityMatrix {
    let tm = t_from_params(t);
    let m = tm.adjoint() * tm;
    let tr = m.trace().re;
    let m = m / Complex64::new(tr, 0.0);
    // Exact Hermitian symmetrization; T^dagger T is PSD by construction.
    TwoQubitDensityMatrix::from_matrix_unchecked((m + m.adjoint()) * Complex64::new(0.5, 0.0))
}

/// Lower-triangular `T` with `T^dagger T = rho`, via Cholesky of the
/// index-reversed matrix.
fn params_from_rho(rho: &Matrix4<Complex64>) -> Option<Params> {
    let rev = Matrix4::from_fn(|i, j| rho[(3 - i, 3 - j)]);
    let l = Cholesky::new(rev)?.unpack();
    let upper = Matrix4::from_fn(|i, j| l[(3 - i, 3 - j)]);
    Some(params_from_t(&upper.adjoint()))
}

/// Objective state shared by value and gradient evaluation.
struct Objective {
    kets: Vec<Vector4<Complex64>>,
    /// Counts normalized to unit total.
    weights: Vec<f64>,
    penalty: f64,
}

impl Objective {
    fn new(table: &CountsTable) -> Result<Self> {
        let total = table.total();
        if !(total > 0.0) {
            return Err(Error::validation("counts table holds no coincidences"));
        }
        Ok(Self {
            kets: table.rows.iter().map(|r| r.setting.ket()).collect(),
            weights: table.rows.iter().map(|r| r.coincidences / total).collect(),
            penalty: 1.0,
        })
    }

    /// Value and gradient; the value is infinite where a counted setting has
    /// zero model probability.
    fn eval(&self, t: &Params, want_grad: bool) -> (f64, Params) {
        let tm = t_from_params(t);
        let images: Vec<Vector4<Complex64>> = self.kets.iter().map(|k| tm * k).collect();
        let probs: Vec<f64> = images.iter().map(|u| u.norm_squared()).collect();
        let sum_p: f64 = probs.iter().sum();
        let scale = t.norm_squared() - 1.0;
        let mut f = sum_p.ln() + self.penalty * scale * scale;
        for (w, p) in self.weights.iter().zip(&probs) {
            if *w > 0.0 {
                if *p <= 0.0 {
                    return (f64::INFINITY, Params::zeros());
                }
                f -= w * p.ln();
            }
        }
        if !f.is_finite() {
            return (f64::INFINITY, Params::zeros());
        }
        if !want_grad {
            return (f, Params::zeros());
        }
        // d p_nu / dT_ij (Wirtinger) = (T k)_i conj(k_j); accumulate with the
        // chain-rule coefficients into one 4x4 matrix.
        let mut g = Matrix4::<Complex64>::zeros();
        for ((u, k), (w, p)) in images.iter().zip(&self.kets).zip(self.weights.iter().zip(&probs)) {
            let mut c = 1.0 / sum_p;
            if *w > 0.0 {
                c -= w / p;
            }
            g += u * k.adjoint() * Complex64::new(c, 0.0);
        }
        let mut grad = Params::zeros();
        for i in 0..4 {
            grad[i] = 2.0 * g[(i, i)].re;
        }
        for (k, &(i, j)) in OFF_DIAG.iter().enumerate() {
            grad[4 + 2 * k] = 2.0 * g[(i, j)].re;
            grad[5 + 2 * k] = 2.0 * g[(i, j)].im;
        }
        grad += t * (4.0 * self.penalty * scale);
        (f, grad)
    }
}

/// Profiled Poisson negative log-likelihood of `rho` for `table`:
/// `min_N sum [N P - n ln(N P)]`. Infinite when a counted setting has zero
/// probability under `rho`.
pub fn negative_log_likelihood(table: &CountsTable, rho: &TwoQubitDensityMatrix) -> f64 {
    let probs: Vec<f64> = table
        .rows
        .iter()
        .map(|r| r.setting.probability(rho).max(0.0))
        .collect();
    let total_n = table.total();
    let total_p: f64 = probs.iter().sum();
    if total_n == 0.0 {
        return 0.0;
    }
    if total_p <= 0.0 {
        return f64::INFINITY;
    }
    let flux = total_n / total_p;
    let mut nll = total_n;
    for (r, p) in table.rows.iter().zip(&probs) {
        if r.coincidences > 0.0 {
            if *p <= 0.0 {
                return f64::INFINITY;
            }
            nll -= r.coincidences * (flux * p).ln();
        }
    }
    nll
}

/// Projected linear-inversion estimate mixed with a trace of white noise.
fn start_point(table: &CountsTable, cfg: &MleConfig) -> Result<Params> {
    let rho0 = match linear_inversion(table).and_then(|r| r.project_to_physical()) {
        Ok(r) => r,
        Err(Error::Inversion(e)) => return Err(Error::Inversion(e)),
        Err(_) => TwoQubitDensityMatrix::maximally_mixed(),
    };
    let mixed = rho0.mixed_with_noise(1.0 - cfg.start_mixing)?;
    params_from_rho(mixed.matrix())
        .or_else(|| params_from_rho(TwoQubitDensityMatrix::maximally_mixed().matrix()))
        .ok_or_else(|| Error::validation("could not factor the start point"))
}

pub fn mle_reconstruct(table: &CountsTable) -> Result<MleResult> {
    mle_reconstruct_with(table, &MleConfig::default())
}

/// BFGS with Armijo backtracking from the projected linear-inversion point.
pub fn mle_reconstruct_with(table: &CountsTable, cfg: &MleConfig) -> Result<MleResult> {
    table.validate()?;
    let obj = Objective::new(table)?;
    let mut t = start_point(table, cfg)?;
    let (mut f, mut g) = obj.eval(&t, true);
    if !f.is_finite() {
        // The projected estimate gives zero probability to a counted setting.
        t = params_from_rho(TwoQubitDensityMatrix::maximally_mixed().matrix()).expect("identity factors");
        (f, g) = obj.eval(&t, true);
    }
    let mut h = Hessian::identity();
    let mut iterations = 0;
    let mut fresh_hessian = true;
    let mut flat_steps = 0;

    let finish = |t: &Params, iterations: usize, grad_norm: f64| -> MleResult {
        let rho = rho_from_params(t);
        let total_p: f64 = table.rows.iter().map(|r| r.setting.probability(&rho)).sum();
        MleResult {
            flux: table.total() / total_p,
            nll: negative_log_likelihood(table, &rho),
            rho,
            iterations,
            grad_norm,
        }
    };

    while iterations < cfg.max_iter {
        let gnorm = g.norm();
        if gnorm <= cfg.grad_tol {
            return Ok(finish(&t, iterations, gnorm));
        }
        iterations += 1;

        let mut dir = -(h * g);
        let mut slope = g.dot(&dir);
        if !(slope < 0.0) {
            h = Hessian::identity();
            dir = -g;
            slope = -gnorm * gnorm;
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..cfg.max_backtracks {
            let cand = t + dir * step;
            let (fc, _) = obj.eval(&cand, false);
            if fc.is_finite() && fc <= f + cfg.armijo_c1 * step * slope {
                accepted = Some(cand);
                break;
            }
            step *= cfg.backtrack;
        }

        let Some(t_new) = accepted else {
            if gnorm <= cfg.stall_grad_tol {
                // No representable decrease left: rounding floor reached.
                return Ok(finish(&t, iterations, gnorm));
            }
            if !fresh_hessian {
                h = Hessian::identity();
                fresh_hessian = true;
                continue;
            }
            return Err(Error::Convergence {
                iterations,
                grad_norm: gnorm,
                best: Box::new(rho_from_params(&t)),
            });
        };

        let (f_new, g_new) = obj.eval(&t_new, true);
        // Near the optimum the decrease drops below the resolution of f and
        // the gradient hits its own rounding floor.
        if f - f_new <= 4.0 * f64::EPSILON * f.abs().max(1.0) {
            flat_steps += 1;
            if flat_steps >= 5 && gnorm <= cfg.stall_grad_tol {
                return Ok(finish(&t_new, iterations, g_new.norm()));
            }
        } else {
            flat_steps = 0;
        }
        let s = t_new - t;
        let y = g_new - g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if fresh_hessian {
                // Scale the initial inverse Hessian to the observed curvature.
                h *= sy / y.norm_squared();
            }
            let rho_k = 1.0 / sy;
            let hy = h * y;
            let yhy = y.dot(&hy);
            h += (s * s.transpose()) * ((sy + yhy) * rho_k * rho_k)
                - (hy * s.transpose() + s * hy.transpose()) * rho_k;
            fresh_hessian = false;
        }
        t = t_new;
        f = f_new;
        g = g_new;
    }
    Err(Error::Convergence {
        iterations,
        grad_norm: g.norm(),
        best: Box::new(rho_from_params(&t)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tomography::{design_16, metrics, CountsTable};

    #[test]
    fn parameter_round_trip_through_cholesky() {
        let rho = TwoQubitDensityMatrix::werner(0.7).unwrap();
        let t = params_from_rho(rho.matrix()).unwrap();
        assert!(rho_from_params(&t).trace_distance(&rho) < 1e-14);
        let tm = t_from_params(&t);
        for i in 0..4 {
            for j in (i + 1)..4 {
                assert_eq!(tm[(i, j)], Complex64::new(0.0, 0.0));
            }
        }
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let rho = TwoQubitDensityMatrix::werner(0.8).unwrap();
        let mut table = CountsTable::expected(&rho, &design_16(), 300.0);
        table.rows[3].coincidences += 7.0;
        table.rows[9].coincidences = 0.0;
        let obj = Objective::new(&table).unwrap();
        let t = Params::from_fn(|i, _| 0.3 + 0.05 * i as f64 * if i % 3 == 0 { -1.0 } else { 1.0 });
        let (_, g) = obj.eval(&t, true);
        let h = 1e-6;
        for k in 0..NPARAM {
            let mut tp = t;
            let mut tm = t;
            tp[k] += h;
            tm[k] -= h;
            let fd = (obj.eval(&tp, false).0 - obj.eval(&tm, false).0) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-7, "param {k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn noiseless_singlet_is_recovered() {
        let table = CountsTable::expected(&TwoQubitDensityMatrix::singlet(), &design_16(), 1000.0);
        let fit = mle_reconstruct(&table).unwrap();
        fit.rho.validate().unwrap();
        assert!(metrics(&fit.rho).fidelity_singlet >= 1.0 - 1e-8);
        assert!((fit.flux - 1000.0).abs() < 1e-3);
    }

    #[test]
    fn empty_table_is_an_error() {
        let table = CountsTable::expected(&TwoQubitDensityMatrix::singlet(), &design_16(), 0.0);
        assert!(mle_reconstruct(&table).is_err());
    }

    #[test]
    fn iteration_cap_reports_best_iterate() {
        let table = CountsTable::expected(&TwoQubitDensityMatrix::werner(0.5).unwrap(), &design_16(), 100.0);
        let cfg = MleConfig {
            max_iter: 1,
            start_mixing: 0.5,
            ..MleConfig::default()
        };
        match mle_reconstruct_with(&table, &cfg) {
            Err(Error::Convergence { iterations, best, .. }) => {
                assert_eq!(iterations, 1);
                best.validate().unwrap();
            }
            other => panic!("expected convergence error, got {other:?}"),
        }
    }
}
