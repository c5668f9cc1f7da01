//! End-to-end stages: simulate a run straight into a lag histogram, build
//! fringe scans and tomography tables from presets, and compare an ensemble
//! of reproductions with the reference numbers.
//!
//! Every stage takes a master seed. Item seeds come from
//! [`derive_seed`](crate::exec::derive_seed) with a stage name, so results do
//! not depend on the execution mode or on the order items finish in.

use std::fmt::Write as _;
use std::io::Write;

use crate::correlate::{
    extract_with, histogram, BackgroundMode, CoincidenceHistogram, CoincidenceResult, DEFAULT_BIN_WIDTH_US,
    DEFAULT_WINDOW_BINS,
};
use crate::error::{Error, Result};
use crate::exec::{derive_seed, map_indexed, Execution};
use crate::fringes::{fit_fringe, FringeFit, FringePoint, FringeScan};
use crate::polarization::TwoQubitDensityMatrix;
use crate::presets::{BasisPreset, TomographyPreset};
use crate::sim::{Channel, RunManifest, RunSimulator};
use crate::tomography::{
    bootstrap_errors, linear_inversion, metrics, mle_reconstruct, BootstrapConfig, CountsRow, CountsTable,
    EntanglementMetrics, MleResult,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramParams {
    pub bin_width_us: f64,
    pub window_bins: u32,
    pub background: BackgroundMode,
}

impl Default for HistogramParams {
    fn default() -> Self {
        Self {
            bin_width_us: DEFAULT_BIN_WIDTH_US,
            window_bins: DEFAULT_WINDOW_BINS,
            background: BackgroundMode::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointResult {
    pub histogram: CoincidenceHistogram,
    pub result: CoincidenceResult,
    pub trials: u64,
}

/// Simulates one run and correlates it without keeping the event records.
pub fn run_point(m: &RunManifest, hp: &HistogramParams) -> Result<PointResult> {
    let mut sim = RunSimulator::new(m)?;
    let mut buf = Vec::new();
    let (mut apd, mut onsets) = (Vec::new(), Vec::new());
    loop {
        buf.clear();
        if !sim.next_trial(&mut buf) {
            break;
        }
        for e in &buf {
            match e.channel {
                Channel::Apd => apd.push(e.t_ns),
                Channel::PmtOnset => onsets.push(e.t_ns),
            }
        }
    }
    let mut h = histogram(&apd, &onsets, hp.bin_width_us, hp.window_bins)?;
    h.duration_s = m.duration_s;
    let result = extract_with(&h, hp.background)?;
    Ok(PointResult {
        histogram: h,
        result,
        trials: sim.trials(),
    })
}

/// One run per scan angle of `preset`.
pub fn simulate_scan(preset: &BasisPreset, seed: u64, hp: &HistogramParams, exec: Execution) -> Result<FringeScan> {
    let stage = format!("scan/{}", preset.target.basis.as_str());
    let points = map_indexed(exec, preset.angles_deg.len(), |i| {
        let angle = preset.angles_deg[i];
        let m = preset.manifest(derive_seed(seed, &stage, i as u64), angle, preset.point_duration_s);
        let r = run_point(&m, hp)?;
        Ok(FringePoint::raw(
            angle,
            r.result.coincidences,
            r.result.background_per_bin,
            preset.point_duration_s,
        ))
    });
    Ok(FringeScan {
        basis: preset.target.basis,
        points: points.into_iter().collect::<Result<_>>()?,
    })
}

/// One run per tomography setting, background subtracted.
pub fn simulate_tomography(
    preset: &TomographyPreset,
    seed: u64,
    hp: &HistogramParams,
    exec: Execution,
) -> Result<CountsTable> {
    let rows = map_indexed(exec, preset.settings.len(), |i| {
        let setting = &preset.settings[i];
        let m = preset.manifest(derive_seed(seed, "tomography", i as u64), setting)?;
        let r = run_point(&m, hp)?;
        Ok(CountsRow::from_raw(
            setting.clone(),
            r.result.coincidences,
            r.result.background_per_bin,
            preset.setting_duration_s,
        ))
    });
    Ok(CountsTable {
        rows: rows.into_iter().collect::<Result<_>>()?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TomographyAnalysis {
    pub linear: TwoQubitDensityMatrix,
    pub mle: MleResult,
    pub metrics: EntanglementMetrics,
}

/// Linear inversion, maximum likelihood and metrics, with bootstrap errors
/// when `bootstrap` is given.
pub fn analyze_tomography(table: &CountsTable, bootstrap: Option<&BootstrapConfig>) -> Result<TomographyAnalysis> {
    let linear = linear_inversion(table)?;
    let mle = mle_reconstruct(table)?;
    let mut m = metrics(&mle.rho);
    if let Some(cfg) = bootstrap {
        m.errors = Some(bootstrap_errors(table, &mle, cfg)?);
    }
    Ok(TomographyAnalysis { linear, mle, metrics: m })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReproduceConfig {
    pub master_seed: u64,
    /// Independent reproductions averaged per reported number.
    pub ensemble: usize,
    /// Bootstrap replicas for the error rows; zero skips them.
    pub bootstrap_replicas: usize,
    pub histogram: HistogramParams,
    pub execution: Execution,
    pub bases: Vec<BasisPreset>,
    pub tomography: TomographyPreset,
}

impl ReproduceConfig {
    pub fn paper(master_seed: u64) -> Result<Self> {
        Ok(Self {
            master_seed,
            ensemble: 20,
            bootstrap_replicas: 500,
            histogram: HistogramParams::default(),
            execution: Execution::default(),
            bases: crate::polarization::BasisLabel::ALL
                .iter()
                .map(|&b| BasisPreset::new(b))
                .collect::<Result<_>>()?,
            tomography: TomographyPreset::new()?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
        }
    }
}

/// How a reproduced value is compared with its reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tolerance {
    /// `|value - reference| <= tol`.
    Absolute(f64),
    /// `reference / k <= value <= reference * k`.
    Factor(f64),
}

impl Tolerance {
    fn admits(&self, value: f64, reference: f64) -> bool {
        match *self {
            Tolerance::Absolute(t) => (value - reference).abs() <= t,
            Tolerance::Factor(k) => value >= reference / k && value <= reference * k,
        }
    }

    fn describe(&self) -> String {
        match *self {
            Tolerance::Absolute(t) => format!("+-{t:.3e}"),
            Tolerance::Factor(k) => format!("x/{k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub key: String,
    pub reference: f64,
    /// Ensemble mean, or `None` when the stage failed.
    pub value: Option<f64>,
    /// Ensemble standard deviation where meaningful.
    pub spread: Option<f64>,
    pub tolerance: Tolerance,
    pub verdict: Verdict,
    pub note: String,
}

impl ReportRow {
    fn new(key: impl Into<String>, reference: f64, tolerance: Tolerance, values: &Result<Vec<f64>>) -> Self {
        let key = key.into();
        match values {
            Ok(v) if !v.is_empty() => {
                let (mean, sd) = mean_sd(v);
                let verdict = if mean.is_finite() && tolerance.admits(mean, reference) {
                    Verdict::Pass
                } else {
                    Verdict::Fail
                };
                Self {
                    key,
                    reference,
                    value: Some(mean),
                    spread: (v.len() > 1).then_some(sd),
                    tolerance,
                    verdict,
                    note: String::new(),
                }
            }
            Ok(_) => Self::failed(key, reference, tolerance, "no data".into()),
            Err(e) => Self::failed(key, reference, tolerance, e.to_string()),
        }
    }

    fn failed(key: String, reference: f64, tolerance: Tolerance, note: String) -> Self {
        Self {
            key,
            reference,
            value: None,
            spread: None,
            tolerance,
            verdict: Verdict::Fail,
            note,
        }
    }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    (mean, (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub master_seed: u64,
    pub ensemble: usize,
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.verdict == Verdict::Pass)
    }

    pub fn row(&self, key: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.key == key)
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "master_seed {}  ensemble {}", self.master_seed, self.ensemble);
        let _ = writeln!(
            s,
            "{:<24} {:>10} {:>12} {:>10} {:>12}  verdict",
            "quantity", "reference", "reproduced", "spread", "tolerance"
        );
        for r in &self.rows {
            let value = r.value.map_or("-".to_string(), |v| format!("{v:.4}"));
            let spread = r.spread.map_or("-".to_string(), |v| format!("{v:.4}"));
            let _ = write!(
                s,
                "{:<24} {:>10.4} {:>12} {:>10} {:>12}  {}",
                r.key,
                r.reference,
                value,
                spread,
                r.tolerance.describe(),
                r.verdict.as_str()
            );
            if !r.note.is_empty() {
                let _ = write!(s, "  ({})", r.note);
            }
            let _ = writeln!(s);
        }
        let _ = writeln!(s, "overall {}", if self.all_pass() { "PASS" } else { "FAIL" });
        s
    }

    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "master_seed={}", self.master_seed);
        let _ = writeln!(s, "ensemble={}", self.ensemble);
        for r in &self.rows {
            let _ = writeln!(s, "{}.reference={}", r.key, r.reference);
            if let Some(v) = r.value {
                let _ = writeln!(s, "{}.reproduced={v}", r.key);
            }
            if let Some(v) = r.spread {
                let _ = writeln!(s, "{}.spread={v}", r.key);
            }
            let _ = writeln!(s, "{}.verdict={}", r.key, r.verdict.as_str());
        }
        let _ = writeln!(s, "overall={}", if self.all_pass() { "PASS" } else { "FAIL" });
        s
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(self.to_table().as_bytes())?;
        writeln!(w)?;
        w.write_all(self.to_key_values().as_bytes())?;
        Ok(())
    }
}

/// Per-member fringe outcome.
struct ScanOutcome {
    peak: f64,
    background: f64,
    fit: FringeFit,
}

fn scan_member(preset: &BasisPreset, seed: u64, hp: &HistogramParams, exec: Execution) -> Result<ScanOutcome> {
    let scan = simulate_scan(preset, seed, hp, exec)?;
    let peak_angle = preset.orthogonal_angle_deg()?;
    let peak = scan
        .points
        .iter()
        .find(|p| {
            let d = (p.hwp_angle_deg - peak_angle).rem_euclid(90.0);
            d.min(90.0 - d) < 1e-6
        })
        .ok_or_else(|| Error::validation("scan has no point at the orthogonal setting"))?;
    Ok(ScanOutcome {
        peak: peak.coincidences,
        background: peak.background,
        fit: fit_fringe(&scan, preset.theta0_deg()?)?,
    })
}

fn column<T>(outcomes: &Result<Vec<T>>, f: impl Fn(&T) -> f64) -> Result<Vec<f64>> {
    match outcomes {
        Ok(v) => Ok(v.iter().map(f).collect()),
        Err(e) => Err(Error::validation(e.to_string())),
    }
}

/// Runs every preset over the ensemble and compares with the reference values.
/// Stage failures become failed rows rather than errors.
pub fn reproduce_paper(cfg: &ReproduceConfig) -> Report {
    let member_seed = |j: usize| derive_seed(cfg.master_seed, "ensemble", j as u64);
    let hp = &cfg.histogram;
    let mut rows = Vec::new();

    for preset in &cfg.bases {
        let outcomes: Result<Vec<ScanOutcome>> = map_indexed(cfg.execution, cfg.ensemble, |j| {
            scan_member(preset, member_seed(j), hp, cfg.execution)
        })
        .into_iter()
        .collect();
        let t = &preset.target;
        let b = t.basis.as_str();
        rows.push(ReportRow::new(
            format!("{b}.peak"),
            t.peak,
            Tolerance::Absolute(3.0 * t.peak.sqrt()),
            &column(&outcomes, |o| o.peak),
        ));
        rows.push(ReportRow::new(
            format!("{b}.background"),
            t.background,
            Tolerance::Absolute(3.0 * t.background.sqrt()),
            &column(&outcomes, |o| o.background),
        ));
        rows.push(ReportRow::new(
            format!("{b}.visibility"),
            t.visibility,
            Tolerance::Absolute(t.visibility_err),
            &column(&outcomes, |o| o.fit.visibility),
        ));
    }

    let tomo = &cfg.tomography;
    let outcomes: Result<Vec<(CountsTable, TomographyAnalysis)>> = map_indexed(cfg.execution, cfg.ensemble, |j| {
        let table = simulate_tomography(tomo, member_seed(j), hp, cfg.execution)?;
        let analysis = analyze_tomography(&table, None)?;
        Ok((table, analysis))
    })
    .into_iter()
    .collect();
    let t = &tomo.target;
    rows.push(ReportRow::new(
        "tomo.fidelity",
        t.fidelity,
        Tolerance::Absolute(0.05),
        &column(&outcomes, |o| o.1.metrics.fidelity_singlet),
    ));
    rows.push(ReportRow::new(
        "tomo.concurrence",
        t.concurrence,
        Tolerance::Absolute(0.07),
        &column(&outcomes, |o| o.1.metrics.concurrence),
    ));
    rows.push(ReportRow::new(
        "tomo.tangle",
        t.tangle,
        Tolerance::Absolute(0.12),
        &column(&outcomes, |o| o.1.metrics.tangle),
    ));
    let identity = column(&outcomes, |o| (o.1.metrics.tangle - o.1.metrics.concurrence.powi(2)).abs())
        .map(|v| vec![v.into_iter().fold(0.0, f64::max)]);
    rows.push(ReportRow::new("tomo.tangle_minus_c2", 0.0, Tolerance::Absolute(1e-10), &identity));

    if cfg.bootstrap_replicas > 0 {
        let errors = outcomes.as_ref().map_err(|e| Error::validation(e.to_string())).and_then(|v| {
            let (table, analysis) = v.first().ok_or_else(|| Error::validation("empty ensemble"))?;
            bootstrap_errors(
                table,
                &analysis.mle,
                &BootstrapConfig {
                    replicas: cfg.bootstrap_replicas,
                    seed: derive_seed(cfg.master_seed, "bootstrap", 0),
                    execution: cfg.execution,
                },
            )
        });
        let one = |f: fn(&crate::tomography::MetricErrors) -> f64| errors.as_ref().map(|e| vec![f(e)]).map_err(|e| Error::validation(e.to_string()));
        rows.push(ReportRow::new("tomo.fidelity_err", t.fidelity_err, Tolerance::Factor(3.0), &one(|e| e.fidelity)));
        rows.push(ReportRow::new(
            "tomo.concurrence_err",
            t.concurrence_err,
            Tolerance::Factor(3.0),
            &one(|e| e.concurrence),
        ));
        rows.push(ReportRow::new("tomo.tangle_err", t.tangle_err, Tolerance::Factor(3.0), &one(|e| e.tangle)));
    }

    Report {
        master_seed: cfg.master_seed,
        ensemble: cfg.ensemble,
        rows,
    }
}
