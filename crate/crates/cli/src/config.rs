//! Pipeline configuration file.
//!
//! Every key is optional and overrides the chosen preset. Unknown keys are
//! rejected so a typo never silently falls back to a default.

use std::path::Path;

use ionherald::biphoton::SourceModel;
use ionherald::correlate::BackgroundMode;
use ionherald::pipeline::HistogramParams;
use ionherald::presets::Calibration;
use ionherald::sim::{RateConfig, SequenceConfig};
use ionherald::Execution;
use serde::Deserialize;

use crate::CliError;

/// Shown at the end of `--help`.
pub const CONFIG_HELP: &str = "\
CONFIG FILE (TOML, every key optional, unknown keys are an error)
  master_seed = INT            master seed (overridden by --seed)
  preset = NAME                paper-rl | paper-hv | paper-da | paper-tomo
  execution = MODE             parallel | sequential

  [run]                        single run written by `simulate`
  duration_s = REAL            run length, default: the preset's point duration
  hwp_angle_deg = REAL         analyzer HWP angle, default: orthogonal setting

  [source]
  singlet_weight = REAL        Werner weight in [0, 1]
  pair_rate = REAL             pairs per second, > 0

  [sequence]
  rep_rate = REAL              trials per second
  cooling_ms, prep_ms, detect_ms = REAL

  [rates]
  eta_trigger, eta_herald, branching_s = REAL      probabilities
  dark_trigger_rate, false_onset_rate = REAL       per second of open window
  latency_mean_us, jitter_us = REAL

  [histogram]
  bin_width_us = REAL          default 10 (overridden by --bin-us)
  window_bins = INT            default 50 (overridden by --window-bins)
  background = MODE            whole-window | exclude-zero-lag

  [fringe]
  angles_deg = [REAL, ...]     scan angles
  point_duration_s = REAL      duration of each scan point
  theta0_deg = REAL            fit phase (overridden by --theta0)

  [tomography]
  setting_duration_s = REAL    duration of each of the 16 settings
  bootstrap_replicas = INT     replicas for the `tomo` error bars, 0 skips

  [reproduce]
  ensemble = INT               reproductions averaged per number
  bootstrap_replicas = INT     replicas for the error rows, 0 skips

EXIT CODES
  0 success, 2 configuration error, 3 data or validation error,
  4 optimizer did not converge";

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub master_seed: Option<u64>,
    pub preset: Option<String>,
    pub execution: Option<ExecutionMode>,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub source: SourceSection,
    #[serde(default)]
    pub sequence: SequenceSection,
    #[serde(default)]
    pub rates: RatesSection,
    #[serde(default)]
    pub histogram: HistogramSection,
    #[serde(default)]
    pub fringe: FringeSection,
    #[serde(default)]
    pub tomography: TomographySection,
    #[serde(default)]
    pub reproduce: ReproduceSection,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExecutionMode {
    Parallel,
    Sequential,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackgroundSetting {
    WholeWindow,
    ExcludeZeroLag,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub duration_s: Option<f64>,
    pub hwp_angle_deg: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSection {
    pub singlet_weight: Option<f64>,
    pub pair_rate: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceSection {
    pub rep_rate: Option<f64>,
    pub cooling_ms: Option<f64>,
    pub prep_ms: Option<f64>,
    pub detect_ms: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesSection {
    pub eta_trigger: Option<f64>,
    pub eta_herald: Option<f64>,
    pub branching_s: Option<f64>,
    pub dark_trigger_rate: Option<f64>,
    pub false_onset_rate: Option<f64>,
    pub latency_mean_us: Option<f64>,
    pub jitter_us: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramSection {
    pub bin_width_us: Option<f64>,
    pub window_bins: Option<u32>,
    pub background: Option<BackgroundSetting>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FringeSection {
    pub angles_deg: Option<Vec<f64>>,
    pub point_duration_s: Option<f64>,
    pub theta0_deg: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TomographySection {
    pub setting_duration_s: Option<f64>,
    pub bootstrap_replicas: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReproduceSection {
    pub ensemble: Option<usize>,
    pub bootstrap_replicas: Option<usize>,
}

fn set<T: Copy>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn positive(key: &str, v: Option<f64>) -> Result<(), CliError> {
    match v {
        Some(x) if !(x.is_finite() && x > 0.0) => Err(CliError::Config(format!("{key} must be > 0, got {x}"))),
        _ => Ok(()),
    }
}

fn non_negative(key: &str, v: Option<f64>) -> Result<(), CliError> {
    match v {
        Some(x) if !(x.is_finite() && x >= 0.0) => Err(CliError::Config(format!("{key} must be >= 0, got {x}"))),
        _ => Ok(()),
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string().trim_end().to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Range checks that need no preset.
    fn check(&self) -> Result<(), CliError> {
        non_negative("run.duration_s", self.run.duration_s)?;
        if let Some(a) = self.run.hwp_angle_deg {
            if !a.is_finite() {
                return Err(CliError::Config("run.hwp_angle_deg must be finite".into()));
            }
        }
        positive("histogram.bin_width_us", self.histogram.bin_width_us)?;
        if self.histogram.window_bins == Some(0) {
            return Err(CliError::Config("histogram.window_bins must be >= 1".into()));
        }
        if let Some(angles) = &self.fringe.angles_deg {
            if angles.len() < 3 || angles.iter().any(|a| !a.is_finite()) {
                return Err(CliError::Config(
                    "fringe.angles_deg needs at least three finite angles".into(),
                ));
            }
        }
        positive("fringe.point_duration_s", self.fringe.point_duration_s)?;
        if let Some(t) = self.fringe.theta0_deg {
            if !t.is_finite() {
                return Err(CliError::Config("fringe.theta0_deg must be finite".into()));
            }
        }
        positive("tomography.setting_duration_s", self.tomography.setting_duration_s)?;
        if self.tomography.bootstrap_replicas == Some(1) || self.reproduce.bootstrap_replicas == Some(1) {
            return Err(CliError::Config("bootstrap_replicas must be 0 or >= 2".into()));
        }
        if self.reproduce.ensemble == Some(0) {
            return Err(CliError::Config("reproduce.ensemble must be >= 1".into()));
        }
        Ok(())
    }

    pub fn execution(&self) -> Execution {
        match self.execution {
            Some(ExecutionMode::Sequential) => Execution::Sequential,
            _ => Execution::Parallel,
        }
    }

    pub fn histogram(&self) -> HistogramParams {
        let mut hp = HistogramParams::default();
        set(&mut hp.bin_width_us, self.histogram.bin_width_us);
        set(&mut hp.window_bins, self.histogram.window_bins);
        if let Some(b) = self.histogram.background {
            hp.background = match b {
                BackgroundSetting::WholeWindow => BackgroundMode::WholeWindow,
                BackgroundSetting::ExcludeZeroLag => BackgroundMode::ExcludeZeroLag,
            };
        }
        hp
    }

    /// Applies the [source], [sequence] and [rates] overrides.
    pub fn calibrate(&self, base: &Calibration) -> Result<Calibration, CliError> {
        let mut c = base.clone();
        let s = &self.source;
        set(&mut c.source.singlet_weight, s.singlet_weight);
        set(&mut c.source.pair_rate, s.pair_rate);
        apply_sequence(&mut c.sequence, &self.sequence);
        apply_rates(&mut c.rates, &self.rates);
        check_source(&c.source)?;
        c.sequence.validate().map_err(|e| CliError::Config(e.to_string()))?;
        c.rates.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(c)
    }
}

fn apply_sequence(seq: &mut SequenceConfig, s: &SequenceSection) {
    set(&mut seq.rep_rate, s.rep_rate);
    set(&mut seq.cooling_ms, s.cooling_ms);
    set(&mut seq.prep_ms, s.prep_ms);
    set(&mut seq.detect_ms, s.detect_ms);
}

fn apply_rates(r: &mut RateConfig, s: &RatesSection) {
    set(&mut r.eta_trigger, s.eta_trigger);
    set(&mut r.eta_herald, s.eta_herald);
    set(&mut r.branching_s, s.branching_s);
    set(&mut r.dark_trigger_rate, s.dark_trigger_rate);
    set(&mut r.false_onset_rate, s.false_onset_rate);
    set(&mut r.latency_mean_us, s.latency_mean_us);
    set(&mut r.jitter_us, s.jitter_us);
}

fn check_source(src: &SourceModel) -> Result<(), CliError> {
    if !(src.singlet_weight.is_finite() && (0.0..=1.0).contains(&src.singlet_weight)) {
        return Err(CliError::Config(format!(
            "source.singlet_weight must lie in [0, 1], got {}",
            src.singlet_weight
        )));
    }
    src.validate()
        .map_err(|e| CliError::Config(format!("source: {e}")))
}
