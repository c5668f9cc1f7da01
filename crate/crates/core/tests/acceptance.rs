//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use ionherald::correlate::histogram;
use ionherald::exec::{derive_seed, Execution};
use ionherald::fringes::{fit_fringe, FringePoint, FringeScan};
use ionherald::pipeline::{analyze_tomography, run_point, simulate_scan, simulate_tomography, HistogramParams};
use ionherald::polarization::{BasisLabel, TwoQubitDensityMatrix};
use ionherald::presets::{BasisPreset, TomographyPreset, BASIS_TARGETS};
use ionherald::sim::{validate_stream, Channel, RunSimulator};
use ionherald::tomography::{
    design_16, linear_inversion, metrics, mle_reconstruct, negative_log_likelihood, CountsTable,
};
use nalgebra::Vector4;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MASTER_SEED: u64 = 20_110_401;
const ENSEMBLE: usize = 20;

type Outcome = Result<String, String>;

fn check(ok: bool, msg: String) -> Outcome {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn count_table_reproduction() -> Outcome {
    let hp = HistogramParams::default();
    let mut lines = Vec::new();
    let mut ok = true;
    let mut sim_hours = 0.0;
    let start = Instant::now();
    for t in &BASIS_TARGETS {
        let preset = BasisPreset::new(t.basis).map_err(|e| e.to_string())?;
        let angle = preset.orthogonal_angle_deg().map_err(|e| e.to_string())?;
        let seed = derive_seed(MASTER_SEED, "orthogonal", t.basis as u64);
        let r = run_point(&preset.manifest(seed, angle, t.duration_s), &hp).map_err(|e| e.to_string())?;
        let n = r.result.coincidences as f64;
        let bg = r.result.background_per_bin;
        let pass = (n - t.peak).abs() <= 3.0 * t.peak.sqrt() && (bg - t.background).abs() <= 3.0 * t.background.sqrt();
        ok &= pass;
        sim_hours += t.duration_s / 3600.0;
        lines.push(format!("{} {n}/{bg:.1} vs {}/{}", t.basis.as_str(), t.peak, t.background));
    }
    let per_hour = start.elapsed().as_secs_f64() / sim_hours;
    ok &= per_hour <= 5.0;
    lines.push(format!("{per_hour:.3} s per simulated hour"));
    check(ok, lines.join(", "))
}

fn visibility_reproduction() -> Outcome {
    let hp = HistogramParams::default();
    let mut lines = Vec::new();
    let mut ok = true;
    for t in &BASIS_TARGETS {
        let preset = BasisPreset::new(t.basis).map_err(|e| e.to_string())?;
        let theta0 = preset.theta0_deg().map_err(|e| e.to_string())?;
        let mut sum = 0.0;
        for j in 0..ENSEMBLE {
            let seed = derive_seed(MASTER_SEED, "ensemble", j as u64);
            let scan = simulate_scan(&preset, seed, &hp, Execution::Parallel).map_err(|e| e.to_string())?;
            sum += fit_fringe(&scan, theta0).map_err(|e| e.to_string())?.visibility;
        }
        let mean = sum / ENSEMBLE as f64;
        ok &= (mean - t.visibility).abs() <= t.visibility_err;
        lines.push(format!("{} {mean:.3} vs {}({})", t.basis.as_str(), t.visibility, t.visibility_err));
    }
    check(ok, lines.join(", "))
}

fn tomography_reproduction() -> Outcome {
    let hp = HistogramParams::default();
    let preset = TomographyPreset::new().map_err(|e| e.to_string())?;
    let (mut f, mut c, mut t) = (0.0, 0.0, 0.0);
    let mut identity = 0.0f64;
    for j in 0..ENSEMBLE {
        let seed = derive_seed(MASTER_SEED, "ensemble", j as u64);
        let table = simulate_tomography(&preset, seed, &hp, Execution::Parallel).map_err(|e| e.to_string())?;
        let m = analyze_tomography(&table, None).map_err(|e| e.to_string())?.metrics;
        f += m.fidelity_singlet;
        c += m.concurrence;
        t += m.tangle;
        identity = identity.max((m.tangle - m.concurrence * m.concurrence).abs());
    }
    let n = ENSEMBLE as f64;
    let (f, c, t) = (f / n, c / n, t / n);
    let ok = (f - 0.93).abs() <= 0.05 && (c - 0.93).abs() <= 0.07 && (t - 0.86).abs() <= 0.12 && identity <= 1e-10;
    check(ok, format!("F {f:.3}, C {c:.3}, T {t:.3}, max |T - C^2| {identity:.1e}"))
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(MASTER_SEED, "oracle", 0));
    let (mut worst_li, mut worst_mle) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let rho = common::random_rho(&mut rng);
        let table = CountsTable::expected(&rho, &design_16(), 1e4);
        let li = linear_inversion(&table).map_err(|e| e.to_string())?;
        let mle = mle_reconstruct(&table).map_err(|e| e.to_string())?;
        worst_li = worst_li.max(li.trace_distance(&rho));
        worst_mle = worst_mle.max(mle.rho.trace_distance(&rho));
    }
    let mut violations = 0;
    let mut worst_gap = f64::NEG_INFINITY;
    for _ in 0..100 {
        let rho = common::random_rho(&mut rng);
        let flux = rng.random_range(50.0..5000.0);
        let table = common::poisson_table(&rho, flux, &mut rng);
        let projected = linear_inversion(&table)
            .and_then(|r| r.project_to_physical())
            .map_err(|e| e.to_string())?;
        let mle = mle_reconstruct(&table).map_err(|e| e.to_string())?;
        let (a, b) = (negative_log_likelihood(&table, &mle.rho), negative_log_likelihood(&table, &projected));
        // Rounding slack only: the projected point is a feasible start.
        if a > b + 1e-9 * b.abs().max(1.0) {
            violations += 1;
        }
        if b.is_finite() {
            worst_gap = worst_gap.max(a - b);
        }
    }
    check(
        worst_li < 1e-9 && worst_mle < 1e-6 && violations == 0,
        format!(
            "inversion {worst_li:.1e}, MLE {worst_mle:.1e}, likelihood violations {violations}/100 (max NLL gap {worst_gap:.1e})"
        ),
    )
}

fn closed_form_cross_checks() -> Outcome {
    let mut worst = 0.0f64;
    for p in [0.0, 0.25, 1.0 / 3.0, 0.5, 0.9067, 1.0] {
        let m = metrics(&TwoQubitDensityMatrix::werner(p).map_err(|e| e.to_string())?);
        worst = worst.max((m.fidelity_singlet - (1.0 + 3.0 * p) / 4.0).abs());
        worst = worst.max((m.concurrence - ((3.0 * p - 1.0) / 2.0).max(0.0)).abs());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(MASTER_SEED, "pure", 0));
    let mut worst_pure = 0.0f64;
    for _ in 0..100 {
        let a = rng.random_range(0.0..1.0f64).sqrt();
        let b = (1.0 - a * a).sqrt();
        let alpha = Complex64::from_polar(a, rng.random_range(0.0..std::f64::consts::TAU));
        let beta = Complex64::from_polar(b, rng.random_range(0.0..std::f64::consts::TAU));
        let zero = Complex64::new(0.0, 0.0);
        let psi = Vector4::new(zero, alpha, beta, zero);
        let rho = TwoQubitDensityMatrix::from_pure(&psi).map_err(|e| e.to_string())?;
        worst_pure = worst_pure.max((metrics(&rho).concurrence - 2.0 * a * b).abs());
    }
    check(
        worst < 1e-10 && worst_pure < 1e-10,
        format!("Werner max error {worst:.1e}, pure-state max error {worst_pure:.1e}"),
    )
}

fn correlator_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(MASTER_SEED, "flat", 0));
    let span_ns: u64 = 1_000_000_000_000;
    let uniform = |rng: &mut ChaCha8Rng, n: usize| {
        let mut v: Vec<u64> = (0..n).map(|_| rng.random_range(0..span_ns)).collect();
        v.sort_unstable();
        v
    };
    let (na, no) = (1_000_000usize, 10_000usize);
    let apd = uniform(&mut rng, na);
    let onsets = uniform(&mut rng, no);
    let h = histogram(&apd, &onsets, 10.0, 50).map_err(|e| e.to_string())?;
    let mut worst_sigma = 0.0f64;
    for (lag, &count) in h.lags.iter().zip(&h.counts) {
        let tau = (*lag as f64 * 10_000.0).abs();
        let mean = na as f64 * no as f64 * 10_000.0 * (span_ns as f64 - tau) / (span_ns as f64).powi(2);
        worst_sigma = worst_sigma.max((count as f64 - mean).abs() / mean.sqrt());
    }

    let shift = 987_654_321u64;
    let shifted = histogram(
        &apd.iter().map(|t| t + shift).collect::<Vec<_>>(),
        &onsets.iter().map(|t| t + shift).collect::<Vec<_>>(),
        10.0,
        50,
    )
    .map_err(|e| e.to_string())?;
    let translation = shifted.counts == h.counts;

    let preset = BasisPreset::new(BasisLabel::RL).map_err(|e| e.to_string())?;
    let m = preset.manifest(MASTER_SEED, 45.0, 600.0);
    let hp = HistogramParams::default();
    let a = run_point(&m, &hp).map_err(|e| e.to_string())?;
    let b = run_point(&m, &hp).map_err(|e| e.to_string())?;
    let reproducible = a.histogram == b.histogram;

    // Stress the first-onset rule with frequent spurious onsets.
    let mut m = preset.manifest(MASTER_SEED, 45.0, 100_000.0);
    m.rates.false_onset_rate = 60.0;
    m.rates.dark_trigger_rate = 20.0;
    let mut sim = RunSimulator::new(&m).map_err(|e| e.to_string())?;
    let mut buf = Vec::new();
    let (mut trials, mut bad) = (0u64, 0u64);
    while {
        buf.clear();
        sim.next_trial(&mut buf)
    } {
        trials += 1;
        let onsets = buf.iter().filter(|e| e.channel == Channel::PmtOnset).count();
        if onsets > 1 || validate_stream(&buf).is_err() {
            bad += 1;
        }
    }
    check(
        worst_sigma <= 4.0 && translation && reproducible && trials == 1_000_000 && bad == 0,
        format!(
            "flat max {worst_sigma:.2} sigma, translation {translation}, reproducible {reproducible}, \
             {bad} of {trials} trials with >1 onset"
        ),
    )
}

fn fringe_fitter() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(MASTER_SEED, "fringe", 0));
    let angles = [0.0, 11.25, 22.5, 33.75, 45.0, 56.25, 67.5, 78.75];
    let scan_of = |counts: &[f64]| FringeScan {
        basis: BasisLabel::HV,
        points: angles
            .iter()
            .zip(counts)
            .map(|(&a, &c)| FringePoint {
                hwp_angle_deg: a,
                coincidences: c,
                background: 0.0,
                duration_s: 1.0,
                variance: None,
            })
            .collect(),
    };
    let mut worst_resid = 0.0f64;
    let mut worst_scale = 0.0f64;
    for _ in 0..100 {
        let offset = rng.random_range(50.0..500.0);
        let amp = rng.random_range(1.0..500.0);
        let theta0 = rng.random_range(0.0..90.0);
        let model: Vec<f64> = angles
            .iter()
            .map(|a: &f64| offset + amp * (2.0 * (a - theta0)).to_radians().sin().powi(2))
            .collect();
        let fit = fit_fringe(&scan_of(&model), theta0).map_err(|e| e.to_string())?;
        worst_resid = worst_resid
            .max((fit.amplitude - amp).abs() / amp)
            .max((fit.offset - offset).abs() / offset);

        let noisy: Vec<f64> = model
            .iter()
            .map(|&m| rand_distr::Distribution::sample(&rand_distr::Poisson::new(m).unwrap(), &mut rng).max(20.0))
            .collect();
        let base = fit_fringe(&scan_of(&noisy), theta0).map_err(|e| e.to_string())?;
        for k in [0.1, 3.0, 1000.0] {
            let scaled: Vec<f64> = noisy.iter().map(|c| c * k).collect();
            let f = fit_fringe(&scan_of(&scaled), theta0).map_err(|e| e.to_string())?;
            worst_scale = worst_scale.max((f.visibility - base.visibility).abs());
        }
    }
    check(
        worst_resid < 1e-9 && worst_scale < 1e-6,
        format!("max relative residual {worst_resid:.1e}, max visibility change under rescaling {worst_scale:.1e}"),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("count-table reproduction", count_table_reproduction),
        ("visibility reproduction", visibility_reproduction),
        ("tomography reproduction", tomography_reproduction),
        ("oracle equivalence", oracle_equivalence),
        ("closed-form cross-checks", closed_form_cross_checks),
        ("correlator property suite", correlator_properties),
        ("fringe fitter", fringe_fitter),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("criterion {}: PASS  {name}: {msg} [{secs:.1}s]", i + 1),
            Err(msg) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {msg} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
