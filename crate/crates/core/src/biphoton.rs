//! Source and measurement-arm model: joint outcome probabilities for one
//! photon pair, and the analytic coincidence fringe they imply.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polarization::{
    joint_probability_unchecked, BasisLabel, PolarizationBasis, PolarizationState,
    TwoQubitDensityMatrix,
};
use crate::sim::{RateConfig, SequenceConfig};

/// Period of a coincidence fringe in half-wave-plate dial angle.
pub const FRINGE_PERIOD_DEG: f64 = 90.0;

/// Photon-pair source: an ideal state degraded by white noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceModel {
    pub ideal_state: TwoQubitDensityMatrix,
    /// Weight kept on `ideal_state`; the remainder is `I/4`.
    pub singlet_weight: f64,
    /// Pairs per second reaching the beam-splitter outputs.
    pub pair_rate: f64,
}

impl SourceModel {
    pub fn singlet(singlet_weight: f64, pair_rate: f64) -> Result<Self> {
        let s = Self {
            ideal_state: TwoQubitDensityMatrix::singlet(),
            singlet_weight,
            pair_rate,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pair_rate.is_finite() && self.pair_rate > 0.0) {
            return Err(Error::validation(format!(
                "pair_rate must be > 0, got {}",
                self.pair_rate
            )));
        }
        self.effective_state()?.validate()
    }

    /// `w * ideal + (1 - w) * I/4`.
    pub fn effective_state(&self) -> Result<TwoQubitDensityMatrix> {
        self.ideal_state.mixed_with_noise(self.singlet_weight)
    }
}

/// A prepared ion: it absorbs `allowed` and is transparent to `blocked`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsorberSetting {
    pub basis: PolarizationBasis,
    pub blocked: PolarizationState,
    pub allowed: PolarizationState,
    /// Field, pump and propagation geometry this setting stands for.
    pub geometry_note: String,
}

impl AbsorberSetting {
    pub fn new(basis: BasisLabel, allowed: PolarizationState, note: impl Into<String>) -> Result<Self> {
        let basis = PolarizationBasis::new(basis);
        if !basis.contains(&allowed) {
            return Err(Error::validation(format!(
                "absorber polarization {allowed} is not a {} basis state",
                basis.label
            )));
        }
        let s = Self {
            basis,
            blocked: allowed.orthogonal(),
            allowed,
            geometry_note: note.into(),
        };
        s.validate()?;
        Ok(s)
    }

    /// Absorber allowing a cardinal state, with the basis inferred.
    pub fn allowing(allowed: PolarizationState) -> Result<Self> {
        let basis = PolarizationBasis::all()
            .into_iter()
            .find(|b| b.contains(&allowed))
            .ok_or_else(|| Error::validation(format!("{allowed} is not a cardinal state")))?;
        Self::new(basis.label, allowed, "")
    }

    /// The preparation used for each of the three fringe measurements:
    /// the ion absorbs the basis' first state and blocks the second.
    pub fn for_basis(label: BasisLabel) -> Self {
        let note = match label {
            BasisLabel::RL => "sigma-polarized 854 nm pumping with k || B into m = {+3/2,+5/2}",
            BasisLabel::HV => "pi-polarized 854 nm pumping with k perp B || E into m = {-5/2,+5/2}",
            BasisLabel::DA => "H-V preparation with the photon state rotated by 45 deg in the fiber",
        };
        let b = PolarizationBasis::new(label);
        Self::new(label, b.plus, note).expect("basis state belongs to its basis")
    }

    pub fn validate(&self) -> Result<()> {
        self.allowed.check_normalized()?;
        self.blocked.check_normalized()?;
        let ip = self.blocked.h.conj() * self.allowed.h + self.blocked.v.conj() * self.allowed.v;
        if ip.norm() > 1e-12 {
            return Err(Error::validation("absorber blocked and allowed states are not orthogonal"));
        }
        if !self.basis.contains(&self.allowed) || !self.basis.contains(&self.blocked) {
            return Err(Error::validation("absorber states do not belong to the declared basis"));
        }
        Ok(())
    }
}

/// The trigger-arm polarization analyzer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyzerSetting {
    pub projector_state: PolarizationState,
    pub hwp_angle: f64,
}

impl AnalyzerSetting {
    /// Analyzer whose detected state rotates through `basis` as the HWP turns:
    /// `cos(2 theta)|plus> + sin(2 theta)|minus>`, so the projection onto
    /// `plus` goes as `cos^2(2 theta)` and repeats every 90 degrees.
    pub fn from_hwp(basis: BasisLabel, hwp_angle_deg: f64) -> Self {
        let b = PolarizationBasis::new(basis);
        let x = 2.0 * hwp_angle_deg.to_radians();
        let (c, s) = (x.cos(), x.sin());
        let projector_state = PolarizationState {
            h: b.plus.h * c + b.minus.h * s,
            v: b.plus.v * c + b.minus.v * s,
        };
        Self {
            projector_state,
            hwp_angle: hwp_angle_deg,
        }
    }

    /// A fixed analyzer not generated from a wave-plate scan.
    pub fn fixed(state: PolarizationState) -> Self {
        Self {
            projector_state: state,
            hwp_angle: f64::NAN,
        }
    }
}

fn check_efficiency(name: &str, eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::validation(format!("{name} = {eta} outside (0, 1]")));
    }
    Ok(())
}

/// `Tr[rho (I (x) |b><b|)]`: probability that the trigger photon passes the analyzer.
pub(crate) fn analyzer_marginal(rho: &TwoQubitDensityMatrix, b: &PolarizationState) -> f64 {
    joint_probability_unchecked(rho, &PolarizationState::h(), b)
        + joint_probability_unchecked(rho, &PolarizationState::v(), b)
}

/// Probability that a pair produces an APD click.
pub fn trigger_probability(src: &SourceModel, an: &AnalyzerSetting, eta_trigger: f64) -> Result<f64> {
    check_efficiency("eta_trigger", eta_trigger)?;
    an.projector_state.check_normalized()?;
    let rho = src.effective_state()?;
    Ok(eta_trigger * analyzer_marginal(&rho, &an.projector_state))
}

/// Probability that the ion absorbs the partner of a detected trigger photon.
pub fn heralded_absorption_probability(
    src: &SourceModel,
    ab: &AbsorberSetting,
    an: &AnalyzerSetting,
    eta_herald: f64,
) -> Result<f64> {
    check_efficiency("eta_herald", eta_herald)?;
    an.projector_state.check_normalized()?;
    let rho = src.effective_state()?;
    let marginal = analyzer_marginal(&rho, &an.projector_state);
    if marginal <= 1e-15 {
        return Err(Error::UndefinedConditional(format!(
            "trigger probability is zero for analyzer {}",
            an.projector_state
        )));
    }
    let joint = joint_probability_unchecked(&rho, &ab.allowed, &an.projector_state);
    Ok((eta_herald * joint / marginal).clamp(0.0, eta_herald))
}

/// Expected bin-0 coincidence and accidental rates for one analyzer setting,
/// per second of wall-clock measurement time.
///
/// Accidentals are the products of the independent background processes
/// (false onsets with every trigger click, heralded onsets with dark clicks).
/// Accidentals between a heralded onset and an unrelated true trigger are
/// second order in the pair flux and left out. Onset saturation within a
/// trial (at most one onset) is also left out, so the rate is exactly affine
/// in the joint projection probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoincidenceRate {
    pub heralded: f64,
    pub accidental: f64,
}

impl CoincidenceRate {
    pub fn total(&self) -> f64 {
        self.heralded + self.accidental
    }
}

pub fn coincidence_rate(
    src: &SourceModel,
    ab: &AbsorberSetting,
    an: &AnalyzerSetting,
    rates: &RateConfig,
    seq: &SequenceConfig,
    bin_width_us: f64,
) -> Result<CoincidenceRate> {
    let rho = src.effective_state()?;
    let joint = joint_probability_unchecked(&rho, &ab.allowed, &an.projector_state);
    let marginal = analyzer_marginal(&rho, &an.projector_state);
    let duty = seq.duty_cycle();
    let heralded = src.pair_rate * rates.eta_trigger * rates.eta_herald * rates.branching_s * joint;
    let apd = src.pair_rate * rates.eta_trigger * marginal + rates.dark_trigger_rate;
    let accidental =
        (rates.false_onset_rate * apd + heralded * rates.dark_trigger_rate) * bin_width_us * 1e-6;
    Ok(CoincidenceRate {
        heralded: duty * heralded,
        accidental: duty * accidental,
    })
}

/// Predicted coincidence fringe `offset + amplitude * sin^2(2 (theta - theta0))`.
#[derive(Debug, Clone, PartialEq)]
pub struct FringePrediction {
    /// `(hwp angle in degrees, expected bin-0 coincidences per second)`.
    pub points: Vec<(f64, f64)>,
    /// Rate at the fringe minimum, per second.
    pub offset: f64,
    pub amplitude: f64,
    /// Angle of the fringe minimum in `[0, 90)` degrees.
    pub theta0_deg: f64,
}

impl FringePrediction {
    pub fn visibility(&self) -> f64 {
        if self.amplitude + self.offset <= 0.0 {
            return 0.0;
        }
        self.amplitude / (self.amplitude + 2.0 * self.offset)
    }

    pub fn max_rate(&self) -> f64 {
        self.offset + self.amplitude
    }

    pub fn eval(&self, theta_deg: f64) -> f64 {
        let x = (2.0 * (theta_deg - self.theta0_deg)).to_radians().sin();
        self.offset + self.amplitude * x * x
    }

    /// Angle of maximum predicted coincidence in `[0, 90)` degrees.
    pub fn peak_angle_deg(&self) -> f64 {
        (self.theta0_deg + FRINGE_PERIOD_DEG / 2.0).rem_euclid(FRINGE_PERIOD_DEG)
    }
}

/// Coincidence rate against HWP angle with the analyzer scanned through
/// the absorber's own basis.
pub fn fringe_prediction(
    src: &SourceModel,
    ab: &AbsorberSetting,
    hwp_angles: &[f64],
    rates: &RateConfig,
    seq: &SequenceConfig,
    bin_width_us: f64,
) -> Result<FringePrediction> {
    rates.validate()?;
    seq.validate()?;
    src.validate()?;
    let rate_at = |theta: f64| -> Result<f64> {
        if !theta.is_finite() {
            return Err(Error::validation("non-finite HWP angle"));
        }
        let an = AnalyzerSetting::from_hwp(ab.basis.label, theta);
        Ok(coincidence_rate(src, ab, &an, rates, seq, bin_width_us)?.total())
    };
    let points = hwp_angles
        .iter()
        .map(|&t| rate_at(t).map(|r| (t, r)))
        .collect::<Result<Vec<_>>>()?;

    // The analyzer Stokes vector turns at 4 theta, so the rate is
    // c + b cos(4 theta) + s sin(4 theta); three samples fix it.
    let r0 = rate_at(0.0)?;
    let r_quarter = rate_at(FRINGE_PERIOD_DEG / 4.0)?;
    let r_half = rate_at(FRINGE_PERIOD_DEG / 2.0)?;
    let c = 0.5 * (r0 + r_half);
    let b = 0.5 * (r0 - r_half);
    let s = r_quarter - c;
    let radius = b.hypot(s);
    let phase = s.atan2(b);
    let theta0_deg = ((phase + PI) / 4.0).to_degrees().rem_euclid(FRINGE_PERIOD_DEG);
    Ok(FringePrediction {
        points,
        offset: c - radius,
        amplitude: 2.0 * radius,
        theta0_deg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polarization::{kron, product_ket};
    use nalgebra::Matrix2;
    use num_complex::Complex64;

    fn pure_singlet() -> SourceModel {
        SourceModel::singlet(1.0, 100.0).unwrap()
    }

    fn absorber_h() -> AbsorberSetting {
        AbsorberSetting::allowing(PolarizationState::h()).unwrap()
    }

    #[test]
    fn trigger_probability_examples() {
        for l in ["H", "V", "D", "R", "L", "A"] {
            let an = AnalyzerSetting::fixed(PolarizationState::from_label(l).unwrap());
            assert!((trigger_probability(&pure_singlet(), &an, 1.0).unwrap() - 0.5).abs() < 1e-15);
            assert!((trigger_probability(&pure_singlet(), &an, 0.1).unwrap() - 0.05).abs() < 1e-15);
        }
        assert!(trigger_probability(&pure_singlet(), &AnalyzerSetting::fixed(PolarizationState::h()), 0.0).is_err());
        assert!(trigger_probability(&pure_singlet(), &AnalyzerSetting::fixed(PolarizationState::h()), 1.5).is_err());
    }

    #[test]
    fn werner_marginal_is_maximally_mixed() {
        // Direct partial trace over the absorber photon.
        let src = SourceModel::singlet(0.8, 1.0).unwrap();
        let rho = src.effective_state().unwrap();
        let m = rho.matrix();
        let reduced_hh = m[(0, 0)] + m[(2, 2)];
        assert!((reduced_hh.re - 0.5).abs() < 1e-15);
        let an = AnalyzerSetting::fixed(PolarizationState::h());
        assert!((trigger_probability(&src, &an, 1.0).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn heralded_absorption_examples() {
        let v = AnalyzerSetting::fixed(PolarizationState::v());
        let h = AnalyzerSetting::fixed(PolarizationState::h());
        let d = AnalyzerSetting::fixed(PolarizationState::d());
        let p = heralded_absorption_probability(&pure_singlet(), &absorber_h(), &v, 0.07).unwrap();
        assert!((p - 0.07).abs() < 1e-15);
        let p = heralded_absorption_probability(&pure_singlet(), &absorber_h(), &h, 0.07).unwrap();
        assert!(p.abs() < 1e-15);
        // Partner of a D trigger is A; |<H|A>|^2 = 1/2.
        let p = heralded_absorption_probability(&pure_singlet(), &absorber_h(), &d, 1.0).unwrap();
        assert!((p - 0.5).abs() < 1e-15);
    }

    #[test]
    fn heralded_absorption_requires_nonzero_trigger() {
        // A product source |HH> never passes a V analyzer.
        let hh = product_ket(&PolarizationState::h(), &PolarizationState::h());
        let src = SourceModel {
            ideal_state: TwoQubitDensityMatrix::from_pure(&hh).unwrap(),
            singlet_weight: 1.0,
            pair_rate: 1.0,
        };
        let v = AnalyzerSetting::fixed(PolarizationState::v());
        assert!(matches!(
            heralded_absorption_probability(&src, &absorber_h(), &v, 0.5),
            Err(Error::UndefinedConditional(_))
        ));
    }

    #[test]
    fn complementary_absorbers_sum_to_eta() {
        let src = SourceModel::singlet(0.7, 1.0).unwrap();
        for label in BasisLabel::ALL {
            let ab = AbsorberSetting::for_basis(label);
            let swapped = AbsorberSetting::new(label, ab.blocked, "").unwrap();
            for k in 0..24 {
                let an = AnalyzerSetting::from_hwp(BasisLabel::ALL[k % 3], k as f64 * 7.3);
                let a = heralded_absorption_probability(&src, &ab, &an, 0.3).unwrap();
                let b = heralded_absorption_probability(&src, &swapped, &an, 0.3).unwrap();
                assert!((a + b - 0.3).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn absorber_must_be_in_basis() {
        assert!(AbsorberSetting::new(BasisLabel::HV, PolarizationState::d(), "").is_err());
        let ab = AbsorberSetting::for_basis(BasisLabel::RL);
        assert_eq!(ab.allowed.cardinal_label(), Some("R"));
        assert_eq!(ab.blocked.cardinal_label(), Some("L"));
    }

    #[test]
    fn hwp_analyzer_sweeps_basis_with_90_degree_period() {
        for label in BasisLabel::ALL {
            let b = PolarizationBasis::new(label);
            let at0 = AnalyzerSetting::from_hwp(label, 0.0).projector_state;
            let at45 = AnalyzerSetting::from_hwp(label, 45.0).projector_state;
            assert!((crate::polarization::overlap(&at0, &b.plus).unwrap() - 1.0).abs() < 1e-12);
            assert!((crate::polarization::overlap(&at45, &b.minus).unwrap() - 1.0).abs() < 1e-12);
            let a = AnalyzerSetting::from_hwp(label, 13.0).projector_state;
            let c = AnalyzerSetting::from_hwp(label, 103.0).projector_state;
            assert!((crate::polarization::overlap(&a, &c).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    fn rates(dark: f64, false_onset: f64) -> RateConfig {
        RateConfig {
            dark_trigger_rate: dark,
            false_onset_rate: false_onset,
            ..RateConfig::default()
        }
    }

    /// Brute-force joint probability from an explicit Kronecker product.
    fn brute_joint(rho: &TwoQubitDensityMatrix, a: &PolarizationState, b: &PolarizationState) -> f64 {
        let proj = kron(&a.projector(), &b.projector());
        (rho.matrix() * proj).trace().re
    }

    #[test]
    fn fringe_matches_brute_force_matrix_model() {
        let seq = SequenceConfig::default();
        let r = rates(300.0, 0.8);
        for w in [1.0, 0.8, 0.35] {
            let src = SourceModel::singlet(w, 25.0).unwrap();
            let rho = src.effective_state().unwrap();
            for label in BasisLabel::ALL {
                let ab = AbsorberSetting::for_basis(label);
                let angles: Vec<f64> = (0..=360).map(|k| k as f64 * 0.25).collect();
                let pred = fringe_prediction(&src, &ab, &angles, &r, &seq, 10.0).unwrap();
                for &(t, rate) in &pred.points {
                    let an = AnalyzerSetting::from_hwp(label, t).projector_state;
                    let joint = brute_joint(&rho, &ab.allowed, &an);
                    let marg = brute_joint(&rho, &PolarizationState::h(), &an)
                        + brute_joint(&rho, &PolarizationState::v(), &an);
                    let her = src.pair_rate * r.eta_trigger * r.eta_herald * r.branching_s * joint;
                    let apd = src.pair_rate * r.eta_trigger * marg + r.dark_trigger_rate;
                    let acc = (r.false_onset_rate * apd + her * r.dark_trigger_rate) * 10e-6;
                    let expect = seq.duty_cycle() * (her + acc);
                    assert!((rate - expect).abs() < 1e-9, "{label} {t}: {rate} vs {expect}");
                    assert!((pred.eval(t) - rate).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn ideal_fringe_has_zero_minimum_and_unit_visibility() {
        let seq = SequenceConfig::default();
        let src = pure_singlet();
        for label in BasisLabel::ALL {
            let ab = AbsorberSetting::for_basis(label);
            let pred = fringe_prediction(&src, &ab, &[0.0, 45.0], &rates(0.0, 0.0), &seq, 10.0).unwrap();
            assert!(pred.points[0].1.abs() < 1e-15);
            assert!(pred.offset.abs() < 1e-12);
            assert!((pred.visibility() - 1.0).abs() < 1e-9);
            assert!(pred.theta0_deg.abs() < 1e-9 || (pred.theta0_deg - 90.0).abs() < 1e-9);
            assert!((pred.peak_angle_deg() - 45.0).abs() < 1e-9);
        }
    }

    #[test]
    fn werner_fringe_visibility_equals_weight() {
        let seq = SequenceConfig::default();
        for p in [0.0, 0.2, 0.5, 0.81, 0.99] {
            let src = SourceModel::singlet(p, 40.0).unwrap();
            let ab = AbsorberSetting::for_basis(BasisLabel::DA);
            // Visibility from a dense brute-force grid rather than the fitted form.
            let angles: Vec<f64> = (0..=900).map(|k| k as f64 * 0.1).collect();
            let pred = fringe_prediction(&src, &ab, &angles, &rates(0.0, 0.0), &seq, 10.0).unwrap();
            let max = pred.points.iter().map(|p| p.1).fold(f64::MIN, f64::max);
            let min = pred.points.iter().map(|p| p.1).fold(f64::MAX, f64::min);
            assert!(((max - min) / (max + min) - p).abs() < 1e-9);
            assert!((pred.visibility() - p).abs() < 1e-9);
        }
    }

    #[test]
    fn rotated_source_shifts_fringe_phase() {
        // Rotating the ion photon by a half-wave plate moves the minimum.
        let seq = SequenceConfig::default();
        let t = 0.3f64;
        let rot = Matrix2::new(
            Complex64::new(t.cos(), 0.0),
            Complex64::new(-t.sin(), 0.0),
            Complex64::new(t.sin(), 0.0),
            Complex64::new(t.cos(), 0.0),
        );
        let ideal = TwoQubitDensityMatrix::singlet().local_rotation(&rot, &Matrix2::identity());
        let src = SourceModel {
            ideal_state: ideal,
            singlet_weight: 1.0,
            pair_rate: 10.0,
        };
        let ab = AbsorberSetting::for_basis(BasisLabel::HV);
        let pred = fringe_prediction(&src, &ab, &[], &rates(0.0, 0.0), &seq, 10.0).unwrap();
        let expected = (90.0 - t.to_degrees() / 2.0).rem_euclid(90.0);
        assert!((pred.theta0_deg - expected).abs() < 1e-9, "{}", pred.theta0_deg);
    }
}
