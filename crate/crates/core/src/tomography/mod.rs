//! Two-photon state reconstruction from 16 projective coincidence settings.
//!
//! Qubit A is the photon absorbed by the ion (setting = the polarization the
//! ion is prepared to absorb); qubit B is the trigger photon (setting = the
//! analyzer projection).

mod bootstrap;
mod metrics;
mod mle;

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector, Matrix2, Matrix4};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::polarization::{kron, overlap, PolarizationState, TwoQubitDensityMatrix};

pub use bootstrap::{bootstrap_errors, BootstrapConfig};
pub use metrics::{concurrence, metrics, singlet_fidelity, EntanglementMetrics, MetricErrors};
pub use mle::{mle_reconstruct, negative_log_likelihood, MleConfig, MleResult};

#[derive(Debug, Clone, PartialEq)]
pub struct TomographySetting {
    /// Polarization the ion is prepared to absorb.
    pub absorber_state: PolarizationState,
    pub analyzer_state: PolarizationState,
    pub label: String,
}

impl TomographySetting {
    pub fn new(absorber_state: PolarizationState, analyzer_state: PolarizationState) -> Self {
        let name = |s: &PolarizationState| s.cardinal_label().map_or_else(|| s.to_string(), str::to_string);
        let label = format!("{}{}", name(&absorber_state), name(&analyzer_state));
        Self {
            absorber_state,
            analyzer_state,
            label,
        }
    }

    /// The product ket `|a> (x) |b>` this setting projects onto.
    pub fn ket(&self) -> nalgebra::Vector4<Complex64> {
        crate::polarization::product_ket(&self.absorber_state, &self.analyzer_state)
    }

    pub fn probability(&self, rho: &TwoQubitDensityMatrix) -> f64 {
        rho.ket_expectation(&self.ket())
    }
}

/// `{H, V, D, R} x {H, V, D, R}`, absorber state varying slowest.
pub fn design_16() -> Vec<TomographySetting> {
    let states = [
        PolarizationState::h(),
        PolarizationState::v(),
        PolarizationState::d(),
        PolarizationState::r(),
    ];
    states
        .iter()
        .flat_map(|a| states.iter().map(move |b| TomographySetting::new(*a, *b)))
        .collect()
}

/// Gram matrix `Tr[P_i P_j]` of the setting projectors.
pub fn gram_matrix(settings: &[TomographySetting]) -> DMatrix<f64> {
    let n = settings.len();
    DMatrix::from_fn(n, n, |i, j| {
        let (a, b) = (&settings[i], &settings[j]);
        (b.ket().adjoint() * a.ket())[(0, 0)].norm_sqr()
    })
}

/// Numerical rank with a relative singular-value cutoff.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().copied().fold(0.0, f64::max);
    sv.iter().filter(|&&s| s > rel_tol * max).count()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CountsRow {
    pub setting: TomographySetting,
    /// Background-subtracted coincidences, clamped at zero.
    pub coincidences: f64,
    pub raw: u64,
    pub background: f64,
    pub duration_s: f64,
}

impl CountsRow {
    pub fn from_raw(setting: TomographySetting, raw: u64, background: f64, duration_s: f64) -> Self {
        Self {
            setting,
            coincidences: (raw as f64 - background).max(0.0),
            raw,
            background,
            duration_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CountsTable {
    pub rows: Vec<CountsRow>,
}

impl CountsTable {
    /// Noiseless expected counts `scale * Tr[rho P]` on `settings`.
    pub fn expected(rho: &TwoQubitDensityMatrix, settings: &[TomographySetting], scale: f64) -> Self {
        Self {
            rows: settings
                .iter()
                .map(|s| CountsRow {
                    setting: s.clone(),
                    coincidences: scale * s.probability(rho).max(0.0),
                    raw: 0,
                    background: 0.0,
                    duration_s: 1.0,
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows.len() != 16 {
            return Err(Error::validation(format!(
                "counts table needs 16 rows, got {}",
                self.rows.len()
            )));
        }
        for r in &self.rows {
            r.setting.absorber_state.check_normalized()?;
            r.setting.analyzer_state.check_normalized()?;
            if !(r.coincidences.is_finite() && r.coincidences >= 0.0) {
                return Err(Error::validation(format!("row {}: coincidences must be >= 0", r.setting.label)));
            }
            if !(r.duration_s.is_finite() && r.duration_s > 0.0) {
                return Err(Error::validation(format!("row {}: duration must be > 0", r.setting.label)));
            }
        }
        Ok(())
    }

    pub fn settings(&self) -> Vec<TomographySetting> {
        self.rows.iter().map(|r| r.setting.clone()).collect()
    }

    pub fn total(&self) -> f64 {
        self.rows.iter().map(|r| r.coincidences).sum()
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "label\tabsorber\tanalyzer\traw\tbackground\tcorrected\tduration_s")?;
        for r in &self.rows {
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.setting.label,
                state_field(&r.setting.absorber_state),
                state_field(&r.setting.analyzer_state),
                r.raw,
                r.background,
                r.coincidences,
                r.duration_s
            )?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut rows = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') || t.starts_with("label") {
                continue;
            }
            let f: Vec<&str> = t.split('\t').collect();
            if f.len() != 7 {
                return Err(Error::parse(lineno, format!("expected 7 fields, got {}", f.len())));
            }
            let st = |s: &str| parse_state(s).ok_or_else(|| Error::parse(lineno, format!("bad state '{s}'")));
            let num = |s: &str, name: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::parse(lineno, format!("bad {name}: {e}")))
            };
            let mut setting = TomographySetting::new(st(f[1])?, st(f[2])?);
            setting.label = f[0].to_string();
            rows.push(CountsRow {
                setting,
                raw: f[3]
                    .parse::<u64>()
                    .map_err(|e| Error::parse(lineno, format!("bad raw: {e}")))?,
                background: num(f[4], "background")?,
                coincidences: num(f[5], "corrected")?,
                duration_s: num(f[6], "duration_s")?,
            });
        }
        let table = Self { rows };
        table.validate()?;
        Ok(table)
    }
}

fn state_field(s: &PolarizationState) -> String {
    match s.cardinal_label() {
        Some(l) => l.to_string(),
        None => format!("{}:{}:{}:{}", s.h.re, s.h.im, s.v.re, s.v.im),
    }
}

fn parse_state(s: &str) -> Option<PolarizationState> {
    if let Some(st) = PolarizationState::from_label(s) {
        return Some(st);
    }
    let v: Vec<f64> = s.split(':').map(|x| x.parse().ok()).collect::<Option<_>>()?;
    if v.len() != 4 {
        return None;
    }
    PolarizationState::new(Complex64::new(v[0], v[1]), Complex64::new(v[2], v[3])).ok()
}

fn same_state(a: &PolarizationState, b: &PolarizationState) -> bool {
    overlap(a, b).is_ok_and(|o| (o - 1.0).abs() < 1e-9)
}

fn orthogonal_states(a: &PolarizationState, b: &PolarizationState) -> bool {
    overlap(a, b).is_ok_and(|o| o < 1e-9)
}

/// Total-flux normalization from every complete-basis subset of the design:
/// four rows `{a, a_perp} x {b, b_perp}` whose projectors sum to identity.
/// Returns the mean subset sum.
pub fn normalization(table: &CountsTable) -> Result<f64> {
    let rows = &table.rows;
    let find = |a: &PolarizationState, b: &PolarizationState| {
        rows.iter()
            .find(|r| same_state(&r.setting.absorber_state, a) && same_state(&r.setting.analyzer_state, b))
            .map(|r| r.coincidences)
    };
    let mut distinct_a: Vec<PolarizationState> = Vec::new();
    let mut distinct_b: Vec<PolarizationState> = Vec::new();
    for r in rows {
        if !distinct_a.iter().any(|s| same_state(s, &r.setting.absorber_state)) {
            distinct_a.push(r.setting.absorber_state);
        }
        if !distinct_b.iter().any(|s| same_state(s, &r.setting.analyzer_state)) {
            distinct_b.push(r.setting.analyzer_state);
        }
    }
    let pairs = |v: &[PolarizationState]| -> Vec<(PolarizationState, PolarizationState)> {
        let mut out = Vec::new();
        for (i, x) in v.iter().enumerate() {
            for y in &v[i + 1..] {
                if orthogonal_states(x, y) {
                    out.push((*x, *y));
                }
            }
        }
        out
    };
    let mut sums = Vec::new();
    for (a1, a2) in pairs(&distinct_a) {
        for (b1, b2) in pairs(&distinct_b) {
            let quad = [find(&a1, &b1), find(&a1, &b2), find(&a2, &b1), find(&a2, &b2)];
            if quad.iter().all(Option::is_some) {
                sums.push(quad.iter().map(|q| q.unwrap()).sum::<f64>());
            }
        }
    }
    if sums.is_empty() {
        return Err(Error::Inversion(
            "design has no complete-basis subset to fix the normalization".into(),
        ));
    }
    let n = sums.iter().sum::<f64>() / sums.len() as f64;
    if !(n > 0.0) {
        return Err(Error::Inversion("complete-basis subsets hold no counts".into()));
    }
    Ok(n)
}

/// Pauli matrices in the order matching Stokes components `(I, s1, s2, s3)`:
/// `I, Z, X, Y` in the H/V basis.
pub(crate) fn stokes_paulis() -> [Matrix2<Complex64>; 4] {
    let o = Complex64::new(0.0, 0.0);
    let l = Complex64::new(1.0, 0.0);
    let i = Complex64::new(0.0, 1.0);
    [
        Matrix2::new(l, o, o, l),
        Matrix2::new(l, o, o, -l),
        Matrix2::new(o, l, l, o),
        Matrix2::new(o, -i, i, o),
    ]
}

fn stokes4(s: &PolarizationState) -> [f64; 4] {
    let p = s.to_poincare();
    [1.0, p.s1, p.s2, p.s3]
}

/// Design matrix mapping the 16 Pauli coefficients `r_ij` of
/// `rho = 1/4 sum r_ij sigma_i (x) sigma_j` to setting probabilities.
fn design_matrix(settings: &[TomographySetting]) -> DMatrix<f64> {
    DMatrix::from_fn(settings.len(), 16, |nu, k| {
        let a = stokes4(&settings[nu].absorber_state);
        let b = stokes4(&settings[nu].analyzer_state);
        0.25 * a[k / 4] * b[k % 4]
    })
}

/// Solves `n / N = Tr[rho P]` for a Hermitian, unit-trace `rho`.
/// The result may have negative eigenvalues on noisy data.
pub fn linear_inversion(table: &CountsTable) -> Result<TwoQubitDensityMatrix> {
    table.validate()?;
    let settings = table.settings();
    let a = design_matrix(&settings);
    let sv = a.clone().svd(false, false).singular_values;
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min > 1e-10 * max) {
        return Err(Error::Inversion(format!(
            "tomography design is rank deficient (singular values {min:e}..{max:e})"
        )));
    }
    let norm = normalization(table)?;
    let y = DVector::from_iterator(16, table.rows.iter().map(|r| r.coincidences / norm));
    // The SVD only screens the rank; pivoted LU gives the accurate solve.
    let r = a
        .full_piv_lu()
        .solve(&y)
        .ok_or_else(|| Error::Inversion("tomography design is singular".into()))?;
    let paulis = stokes_paulis();
    let mut m = Matrix4::<Complex64>::zeros();
    for k in 0..16 {
        m += kron(&paulis[k / 4], &paulis[k % 4]) * Complex64::new(0.25 * r[k], 0.0);
    }
    // Pin Hermiticity and unit trace exactly against rounding.
    m = (m + m.adjoint()) * Complex64::new(0.5, 0.0);
    let tr = m.trace().re;
    if tr.abs() < 1e-12 {
        return Err(Error::Inversion("reconstructed trace vanishes".into()));
    }
    Ok(TwoQubitDensityMatrix::from_matrix_unchecked(m / Complex64::new(tr, 0.0)))
}

/// Writes real and imaginary 4x4 grids, ordering declared in the header.
pub fn write_density_matrix<W: Write>(w: &mut W, rho: &TwoQubitDensityMatrix) -> Result<()> {
    writeln!(w, "# ordering: HH HV VH VV (absorbed photon first, trigger photon second)")?;
    for (name, part) in [("real", 0usize), ("imag", 1)] {
        writeln!(w, "# {name} part")?;
        for i in 0..4 {
            let row: Vec<String> = (0..4)
                .map(|j| {
                    let z = rho.matrix()[(i, j)];
                    format!("{:.6}", if part == 0 { z.re } else { z.im })
                })
                .collect();
            writeln!(w, "{}", row.join("\t"))?;
        }
    }
    Ok(())
}
