//! Single-photon polarization states, the three measurement bases, and the
//! two-photon density matrices they act on.
//!
//! All 4x4 operators use the product ordering `HH, HV, VH, VV`, with the
//! first factor being the photon sent to the ion and the second the trigger
//! photon. Circular handedness is fixed as `R = (H + iV)/sqrt(2)`, which maps
//! to the north pole `s3 = +1` of the Poincare sphere.

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;

use nalgebra::{Matrix2, Matrix4, SymmetricEigen, Vector4};
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Norm deviation accepted by operations that consume a [`PolarizationState`].
pub const NORM_TOLERANCE: f64 = 1e-6;
/// Maximum elementwise deviation from Hermiticity of a density matrix.
pub const HERMITIAN_TOLERANCE: f64 = 1e-10;
pub const TRACE_TOLERANCE: f64 = 1e-10;
/// Eigenvalues down to this floor are treated as zero, not negative.
pub const PSD_FLOOR: f64 = -1e-9;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Pure polarization state of one photon as a Jones vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarizationState {
    pub h: Complex64,
    pub v: Complex64,
}

impl PolarizationState {
    /// Builds a state from amplitudes, rejecting inputs whose norm is off by
    /// more than [`NORM_TOLERANCE`] and renormalizing the rest exactly.
    pub fn new(h: Complex64, v: Complex64) -> Result<Self> {
        let s = Self { h, v };
        s.check_normalized()?;
        Ok(s.renormalized())
    }

    /// Normalizes arbitrary non-zero amplitudes.
    pub fn from_unnormalized(h: Complex64, v: Complex64) -> Result<Self> {
        let n = (h.norm_sqr() + v.norm_sqr()).sqrt();
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::validation("polarization amplitudes are zero or not finite"));
        }
        Ok(Self { h: h / n, v: v / n })
    }

    /// Linear polarization at `angle_rad` from horizontal.
    pub fn linear(angle_rad: f64) -> Self {
        Self {
            h: Complex64::new(angle_rad.cos(), 0.0),
            v: Complex64::new(angle_rad.sin(), 0.0),
        }
    }

    pub fn h() -> Self {
        Self { h: ONE, v: ZERO }
    }

    pub fn v() -> Self {
        Self { h: ZERO, v: ONE }
    }

    pub fn d() -> Self {
        Self {
            h: Complex64::new(FRAC_1_SQRT_2, 0.0),
            v: Complex64::new(FRAC_1_SQRT_2, 0.0),
        }
    }

    pub fn a() -> Self {
        Self {
            h: Complex64::new(FRAC_1_SQRT_2, 0.0),
            v: Complex64::new(-FRAC_1_SQRT_2, 0.0),
        }
    }

    pub fn r() -> Self {
        Self {
            h: Complex64::new(FRAC_1_SQRT_2, 0.0),
            v: Complex64::new(0.0, FRAC_1_SQRT_2),
        }
    }

    pub fn l() -> Self {
        Self {
            h: Complex64::new(FRAC_1_SQRT_2, 0.0),
            v: Complex64::new(0.0, -FRAC_1_SQRT_2),
        }
    }

    /// One of the six cardinal states by its letter (`H V D A R L`).
    pub fn from_label(label: &str) -> Option<Self> {
        match label.trim() {
            "H" | "h" => Some(Self::h()),
            "V" | "v" => Some(Self::v()),
            "D" | "d" => Some(Self::d()),
            "A" | "a" => Some(Self::a()),
            "R" | "r" => Some(Self::r()),
            "L" | "l" => Some(Self::l()),
            _ => None,
        }
    }

    /// Letter of the cardinal state this equals up to global phase, if any.
    pub fn cardinal_label(&self) -> Option<&'static str> {
        ["H", "V", "D", "A", "R", "L"].into_iter().find(|l| {
            let c = Self::from_label(l).unwrap();
            (inner(&c, self).norm_sqr() - 1.0).abs() < 1e-9
        })
    }

    pub fn norm_sqr(&self) -> f64 {
        self.h.norm_sqr() + self.v.norm_sqr()
    }

    pub fn check_normalized(&self) -> Result<()> {
        let n = self.norm_sqr();
        if !n.is_finite() || (n - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::validation(format!(
                "polarization state not normalized (|c_h|^2 + |c_v|^2 = {n})"
            )));
        }
        Ok(())
    }

    fn renormalized(self) -> Self {
        let n = self.norm_sqr().sqrt();
        Self {
            h: self.h / n,
            v: self.v / n,
        }
    }

    /// The state orthogonal to this one.
    pub fn orthogonal(&self) -> Self {
        Self {
            h: -self.v.conj(),
            v: self.h.conj(),
        }
    }

    pub fn with_phase(&self, phase_rad: f64) -> Self {
        let u = Complex64::from_polar(1.0, phase_rad);
        Self {
            h: self.h * u,
            v: self.v * u,
        }
    }

    /// Applies a 2x2 Jones matrix and renormalizes.
    pub fn transformed(&self, jones: &Matrix2<Complex64>) -> Result<Self> {
        let h = jones[(0, 0)] * self.h + jones[(0, 1)] * self.v;
        let v = jones[(1, 0)] * self.h + jones[(1, 1)] * self.v;
        Self::from_unnormalized(h, v)
    }

    /// `|s><s|` as a 2x2 matrix.
    pub fn projector(&self) -> Matrix2<Complex64> {
        let k = [self.h, self.v];
        Matrix2::from_fn(|i, j| k[i] * k[j].conj())
    }

    pub fn to_poincare(&self) -> PoincareVector {
        let x = self.h.conj() * self.v;
        PoincareVector {
            s1: self.h.norm_sqr() - self.v.norm_sqr(),
            s2: 2.0 * x.re,
            s3: 2.0 * x.im,
        }
    }

    /// Inverse of [`to_poincare`](Self::to_poincare), choosing a real,
    /// non-negative horizontal amplitude.
    pub fn from_poincare(p: &PoincareVector) -> Result<Self> {
        let n = p.norm();
        if !n.is_finite() || n == 0.0 {
            return Err(Error::validation("Poincare vector has zero length"));
        }
        let s1 = (p.s1 / n).clamp(-1.0, 1.0);
        let half_polar = 0.5 * s1.acos();
        let azimuth = p.s3.atan2(p.s2);
        Ok(Self {
            h: Complex64::new(half_polar.cos(), 0.0),
            v: Complex64::from_polar(half_polar.sin(), azimuth),
        })
    }
}

impl fmt::Display for PolarizationState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.cardinal_label() {
            Some(l) => f.write_str(l),
            None => write!(
                f,
                "({}{:+}i, {}{:+}i)",
                self.h.re, self.h.im, self.v.re, self.v.im
            ),
        }
    }
}

fn inner(a: &PolarizationState, b: &PolarizationState) -> Complex64 {
    a.h.conj() * b.h + a.v.conj() * b.v
}

/// `|<a|b>|^2` for two normalized states.
pub fn overlap(a: &PolarizationState, b: &PolarizationState) -> Result<f64> {
    a.check_normalized()?;
    b.check_normalized()?;
    Ok(inner(a, b).norm_sqr().min(1.0))
}

/// Stokes vector on the Poincare sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoincareVector {
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
}

impl PoincareVector {
    pub fn dot(&self, other: &Self) -> f64 {
        self.s1 * other.s1 + self.s2 * other.s2 + self.s3 * other.s3
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BasisLabel {
    RL,
    HV,
    DA,
}

impl BasisLabel {
    pub const ALL: [BasisLabel; 3] = [BasisLabel::RL, BasisLabel::HV, BasisLabel::DA];

    pub fn as_str(&self) -> &'static str {
        match self {
            BasisLabel::RL => "R-L",
            BasisLabel::HV => "H-V",
            BasisLabel::DA => "D-A",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_uppercase().replace(['-', '_'], "").as_str() {
            "RL" => Some(BasisLabel::RL),
            "HV" => Some(BasisLabel::HV),
            "DA" => Some(BasisLabel::DA),
            _ => None,
        }
    }
}

impl fmt::Display for BasisLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An orthonormal pair of polarization states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarizationBasis {
    pub label: BasisLabel,
    pub plus: PolarizationState,
    pub minus: PolarizationState,
}

impl PolarizationBasis {
    pub fn new(label: BasisLabel) -> Self {
        let (plus, minus) = match label {
            BasisLabel::RL => (PolarizationState::r(), PolarizationState::l()),
            BasisLabel::HV => (PolarizationState::h(), PolarizationState::v()),
            BasisLabel::DA => (PolarizationState::d(), PolarizationState::a()),
        };
        Self { label, plus, minus }
    }

    pub fn all() -> [Self; 3] {
        BasisLabel::ALL.map(Self::new)
    }

    /// Whether `s` equals one of the two basis states up to global phase.
    pub fn contains(&self, s: &PolarizationState) -> bool {
        [self.plus, self.minus]
            .iter()
            .any(|b| (inner(b, s).norm_sqr() - 1.0).abs() < 1e-9)
    }
}

/// Tensor product `a (x) b` in the `HH, HV, VH, VV` ordering.
pub fn product_ket(a: &PolarizationState, b: &PolarizationState) -> Vector4<Complex64> {
    Vector4::new(a.h * b.h, a.h * b.v, a.v * b.h, a.v * b.v)
}

/// Kronecker product of two 2x2 matrices with the first factor as the outer index.
pub fn kron(a: &Matrix2<Complex64>, b: &Matrix2<Complex64>) -> Matrix4<Complex64> {
    Matrix4::from_fn(|i, j| a[(i / 2, j / 2)] * b[(i % 2, j % 2)])
}

/// Hermitian, trace-one, positive-semidefinite two-photon operator.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoQubitDensityMatrix {
    m: Matrix4<Complex64>,
}

impl TwoQubitDensityMatrix {
    /// Validates `m` against the density-matrix invariants.
    pub fn new(m: Matrix4<Complex64>) -> Result<Self> {
        let rho = Self { m };
        rho.validate()?;
        Ok(rho)
    }

    /// Wraps `m` without checking; used for intermediate estimates such as
    /// the linear-inversion candidate, which may fail positivity.
    pub fn from_matrix_unchecked(m: Matrix4<Complex64>) -> Self {
        Self { m }
    }

    pub fn from_pure(psi: &Vector4<Complex64>) -> Result<Self> {
        let n = psi.norm_squared();
        if !n.is_finite() || n == 0.0 {
            return Err(Error::validation("zero state vector"));
        }
        Ok(Self {
            m: psi * psi.adjoint() / Complex64::new(n, 0.0),
        })
    }

    /// `|Psi-><Psi-|` with `|Psi-> = (|HV> - |VH>)/sqrt(2)`.
    pub fn singlet() -> Self {
        let h = Complex64::new(0.5, 0.0);
        let mut m = Matrix4::zeros();
        m[(1, 1)] = h;
        m[(2, 2)] = h;
        m[(1, 2)] = -h;
        m[(2, 1)] = -h;
        Self { m }
    }

    pub fn singlet_ket() -> Vector4<Complex64> {
        let s = Complex64::new(FRAC_1_SQRT_2, 0.0);
        Vector4::new(ZERO, s, -s, ZERO)
    }

    pub fn maximally_mixed() -> Self {
        Self {
            m: Matrix4::identity() * Complex64::new(0.25, 0.0),
        }
    }

    /// `p |Psi-><Psi-| + (1 - p) I/4`.
    pub fn werner(p: f64) -> Result<Self> {
        Self::singlet().mixed_with_noise(p)
    }

    /// Mixes this state with white noise, keeping weight `w` on `self`.
    pub fn mixed_with_noise(&self, w: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::validation(format!("mixing weight {w} outside [0, 1]")));
        }
        let noise = Matrix4::<Complex64>::identity() * Complex64::new(0.25 * (1.0 - w), 0.0);
        Ok(Self {
            m: self.m * Complex64::new(w, 0.0) + noise,
        })
    }

    pub fn matrix(&self) -> &Matrix4<Complex64> {
        &self.m
    }

    pub fn into_matrix(self) -> Matrix4<Complex64> {
        self.m
    }

    pub fn trace(&self) -> Complex64 {
        self.m.trace()
    }

    pub fn max_hermitian_deviation(&self) -> f64 {
        let d = self.m - self.m.adjoint();
        d.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn eigenvalues(&self) -> [f64; 4] {
        let herm = (self.m + self.m.adjoint()) * Complex64::new(0.5, 0.0);
        let mut ev: Vec<f64> = SymmetricEigen::new(herm).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        [ev[0], ev[1], ev[2], ev[3]]
    }

    pub fn validate(&self) -> Result<()> {
        if self.m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::validation("density matrix has non-finite entries"));
        }
        let dev = self.max_hermitian_deviation();
        if dev > HERMITIAN_TOLERANCE {
            return Err(Error::validation(format!(
                "density matrix not Hermitian (max deviation {dev:e})"
            )));
        }
        let tr = self.trace();
        if (tr.re - 1.0).abs() > TRACE_TOLERANCE || tr.im.abs() > TRACE_TOLERANCE {
            return Err(Error::validation(format!("density matrix trace {tr} != 1")));
        }
        let min = self.eigenvalues()[0];
        if min < PSD_FLOOR {
            return Err(Error::validation(format!(
                "density matrix not positive semidefinite (min eigenvalue {min:e})"
            )));
        }
        Ok(())
    }

    /// `Tr[rho O]` for a Hermitian observable.
    pub fn expectation(&self, op: &Matrix4<Complex64>) -> f64 {
        (self.m * op).trace().re
    }

    /// `<psi|rho|psi>` for a (normalized) ket.
    pub fn ket_expectation(&self, psi: &Vector4<Complex64>) -> f64 {
        (psi.adjoint() * self.m * psi)[(0, 0)].re
    }

    /// `(U_a (x) U_b) rho (U_a (x) U_b)^dagger`.
    pub fn local_rotation(&self, ua: &Matrix2<Complex64>, ub: &Matrix2<Complex64>) -> Self {
        let u = kron(ua, ub);
        Self {
            m: u * self.m * u.adjoint(),
        }
    }

    /// Half the trace norm of the difference.
    pub fn trace_distance(&self, other: &Self) -> f64 {
        let d = self.m - other.m;
        let herm = (d + d.adjoint()) * Complex64::new(0.5, 0.0);
        0.5 * SymmetricEigen::new(herm)
            .eigenvalues
            .iter()
            .map(|e| e.abs())
            .sum::<f64>()
    }

    /// Closest density matrix in the eigenvalue sense: negative eigenvalues
    /// are clipped to zero and the result renormalized to unit trace.
    pub fn project_to_physical(&self) -> Result<Self> {
        let herm = (self.m + self.m.adjoint()) * Complex64::new(0.5, 0.0);
        let eig = SymmetricEigen::new(herm);
        let clipped: Vec<f64> = eig.eigenvalues.iter().map(|e| e.max(0.0)).collect();
        let total: f64 = clipped.iter().sum();
        if !(total > 0.0) {
            return Err(Error::validation("no positive spectral weight to project"));
        }
        let mut m = Matrix4::zeros();
        for (k, w) in clipped.iter().enumerate() {
            if *w == 0.0 {
                continue;
            }
            let col = eig.eigenvectors.column(k);
            m += col * col.adjoint() * Complex64::new(w / total, 0.0);
        }
        Ok(Self { m })
    }
}

/// `Tr[rho (|a><a| (x) |b><b|)]`.
pub fn joint_projection_probability(
    rho: &TwoQubitDensityMatrix,
    a: &PolarizationState,
    b: &PolarizationState,
) -> Result<f64> {
    rho.validate()?;
    a.check_normalized()?;
    b.check_normalized()?;
    Ok(joint_probability_unchecked(rho, a, b))
}

/// [`joint_projection_probability`] without input validation.
pub(crate) fn joint_probability_unchecked(
    rho: &TwoQubitDensityMatrix,
    a: &PolarizationState,
    b: &PolarizationState,
) -> f64 {
    rho.ket_expectation(&product_ket(a, b)).clamp(0.0, 1.0)
}

/// Convenience alias matching the named operation.
pub fn singlet() -> TwoQubitDensityMatrix {
    TwoQubitDensityMatrix::singlet()
}

impl Serialize for TwoQubitDensityMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<Vec<[f64; 2]>> = (0..4)
            .map(|i| (0..4).map(|j| [self.m[(i, j)].re, self.m[(i, j)].im]).collect())
            .collect();
        rows.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TwoQubitDensityMatrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows: Vec<Vec<[f64; 2]>> = Vec::deserialize(deserializer)?;
        if rows.len() != 4 || rows.iter().any(|r| r.len() != 4) {
            return Err(serde::de::Error::custom("density matrix must be 4x4"));
        }
        let m = Matrix4::from_fn(|i, j| Complex64::new(rows[i][j][0], rows[i][j][1]));
        TwoQubitDensityMatrix::new(m).map_err(serde::de::Error::custom)
    }
}
