//! Seeded Monte Carlo generator of time-tagged detector events.
//!
//! Every trial runs cooling, preparation and detection phases back to back.
//! Detectors are gated on only during detection, so all records carry
//! [`Phase::Detect`]. Within a trial the ion can produce at most one
//! fluorescence onset: once it leaves the metastable manifold it stops
//! absorbing, while the trigger detector keeps counting until the window
//! closes.

mod eventfile;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::biphoton::{analyzer_marginal, AbsorberSetting, AnalyzerSetting, SourceModel};
use crate::error::{Error, Result};
use crate::polarization::joint_probability_unchecked;

pub use eventfile::{read_events, read_events_from, write_events, write_events_to, EventFile};

/// Timing of the three-phase excitation sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequenceConfig {
    pub rep_rate: f64,
    pub cooling_ms: f64,
    pub prep_ms: f64,
    pub detect_ms: f64,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        Self {
            rep_rate: 10.0,
            cooling_ms: 30.0,
            prep_ms: 20.0,
            detect_ms: 50.0,
        }
    }
}

impl SequenceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rep_rate.is_finite() && self.rep_rate > 0.0) {
            return Err(Error::validation("sequence.rep_rate must be > 0"));
        }
        for (k, v) in [
            ("sequence.cooling_ms", self.cooling_ms),
            ("sequence.prep_ms", self.prep_ms),
            ("sequence.detect_ms", self.detect_ms),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::validation(format!("{k} must be > 0, got {v}")));
            }
        }
        let total = self.cooling_ms + self.prep_ms + self.detect_ms;
        if total > 1000.0 / self.rep_rate + 1e-9 {
            return Err(Error::validation(format!(
                "sequence phases ({total} ms) exceed the repetition period ({} ms)",
                1000.0 / self.rep_rate
            )));
        }
        Ok(())
    }

    pub fn period_ns(&self) -> u64 {
        (1e9 / self.rep_rate).round() as u64
    }

    pub fn detect_offset_ns(&self) -> u64 {
        ((self.cooling_ms + self.prep_ms) * 1e6).round() as u64
    }

    pub fn detect_ns(&self) -> u64 {
        (self.detect_ms * 1e6).round() as u64
    }

    /// Fraction of wall-clock time the detectors are open.
    pub fn duty_cycle(&self) -> f64 {
        self.detect_ms * self.rep_rate / 1000.0
    }

    pub fn trials_in(&self, duration_s: f64) -> u64 {
        (duration_s * self.rep_rate + 1e-9).floor().max(0.0) as u64
    }
}

/// Detection efficiencies and background rates.
///
/// Rates are per second of open detection window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateConfig {
    /// Filter transmission, fiber loss and APD efficiency of the trigger arm.
    pub eta_trigger: f64,
    /// Probability that the partner of a trigger is absorbed when its
    /// polarization is fully allowed. Zero disables the absorption channel.
    pub eta_herald: f64,
    /// Fraction of absorptions that decay back to S1/2 and fluoresce.
    pub branching_s: f64,
    pub dark_trigger_rate: f64,
    /// Fluorescence onsets unrelated to any absorption (spontaneous decay).
    pub false_onset_rate: f64,
    /// Mean of the exponential absorption-to-onset latency.
    pub latency_mean_us: f64,
    /// Standard deviation of the Gaussian timing jitter added to each onset.
    pub jitter_us: f64,
}

impl Default for RateConfig {
    fn default() -> Self {
        Self {
            eta_trigger: 0.1,
            eta_herald: 0.07,
            branching_s: 0.94,
            dark_trigger_rate: 0.0,
            false_onset_rate: 0.0,
            latency_mean_us: 1.0,
            jitter_us: 0.1,
        }
    }
}

impl RateConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |k: &str, v: f64, allow_zero: bool| -> Result<()> {
            let ok = v.is_finite() && v <= 1.0 && (v > 0.0 || (allow_zero && v == 0.0));
            if !ok {
                return Err(Error::validation(format!("{k} = {v} outside its allowed range")));
            }
            Ok(())
        };
        unit("rates.eta_trigger", self.eta_trigger, false)?;
        unit("rates.eta_herald", self.eta_herald, true)?;
        unit("rates.branching_s", self.branching_s, false)?;
        for (k, v) in [
            ("rates.dark_trigger_rate", self.dark_trigger_rate),
            ("rates.false_onset_rate", self.false_onset_rate),
            ("rates.latency_mean_us", self.latency_mean_us),
            ("rates.jitter_us", self.jitter_us),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::validation(format!("{k} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Channel {
    Apd,
    PmtOnset,
}

impl Channel {
    pub fn as_str(&self) -> &'static str {
        match self {
            Channel::Apd => "APD",
            Channel::PmtOnset => "PMT_ONSET",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "APD" => Some(Channel::Apd),
            "PMT_ONSET" => Some(Channel::PmtOnset),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    Cooling,
    Prep,
    Detect,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Cooling => "COOLING",
            Phase::Prep => "PREP",
            Phase::Detect => "DETECT",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "COOLING" => Some(Phase::Cooling),
            "PREP" => Some(Phase::Prep),
            "DETECT" => Some(Phase::Detect),
            _ => None,
        }
    }
}

/// One detector click.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventRecord {
    pub trial: u64,
    pub channel: Channel,
    /// Nanoseconds since the start of the run.
    pub t_ns: u64,
    pub phase: Phase,
}

/// Everything needed to regenerate a run bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub seed: u64,
    pub duration_s: f64,
    pub absorber: AbsorberSetting,
    pub analyzer: AnalyzerSetting,
    pub source: SourceModel,
    pub sequence: SequenceConfig,
    pub rates: RateConfig,
}

impl RunManifest {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s.is_finite() && self.duration_s >= 0.0) {
            return Err(Error::validation(format!(
                "duration_s must be >= 0, got {}",
                self.duration_s
            )));
        }
        self.absorber.validate()?;
        self.analyzer.projector_state.check_normalized()?;
        self.source.validate()?;
        self.sequence.validate()?;
        self.rates.validate()
    }

    pub fn trials(&self) -> u64 {
        self.sequence.trials_in(self.duration_s)
    }
}

/// Per-pair probabilities fixed for a whole run.
#[derive(Debug, Clone, Copy)]
struct PairOutcome {
    trigger: f64,
    onset_given_trigger: f64,
}

impl PairOutcome {
    fn for_manifest(m: &RunManifest) -> Result<Self> {
        let rho = m.source.effective_state()?;
        let b = &m.analyzer.projector_state;
        let marginal = analyzer_marginal(&rho, b);
        let joint = joint_probability_unchecked(&rho, &m.absorber.allowed, b);
        let conditional = if marginal > 0.0 {
            (joint / marginal).clamp(0.0, 1.0)
        } else {
            0.0
        };
        Ok(Self {
            trigger: m.rates.eta_trigger * marginal,
            onset_given_trigger: m.rates.eta_herald * conditional * m.rates.branching_s,
        })
    }
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("finite positive mean").sample(rng) as u64
}

/// Generator for one run; trials are produced in order by [`next_trial`](Self::next_trial).
pub struct RunSimulator {
    rng: ChaCha8Rng,
    outcome: PairOutcome,
    trials: u64,
    next: u64,
    period_ns: u64,
    offset_ns: u64,
    window_ns: u64,
    pair_mean: f64,
    dark_mean: f64,
    false_mean: f64,
    latency: Option<Exp<f64>>,
    jitter: Option<Normal<f64>>,
    apd: Vec<u64>,
    onsets: Vec<u64>,
}

impl RunSimulator {
    pub fn new(m: &RunManifest) -> Result<Self> {
        m.validate()?;
        let window_s = m.sequence.detect_ms * 1e-3;
        let latency = (m.rates.latency_mean_us > 0.0)
            .then(|| Exp::new(1.0 / (m.rates.latency_mean_us * 1e3)).expect("positive rate"));
        let jitter = (m.rates.jitter_us > 0.0)
            .then(|| Normal::new(0.0, m.rates.jitter_us * 1e3).expect("positive sigma"));
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(m.seed),
            outcome: PairOutcome::for_manifest(m)?,
            trials: m.trials(),
            next: 0,
            period_ns: m.sequence.period_ns(),
            offset_ns: m.sequence.detect_offset_ns(),
            window_ns: m.sequence.detect_ns(),
            pair_mean: m.source.pair_rate * window_s,
            dark_mean: m.rates.dark_trigger_rate * window_s,
            false_mean: m.rates.false_onset_rate * window_s,
            latency,
            jitter,
            apd: Vec::new(),
            onsets: Vec::new(),
        })
    }

    pub fn trials(&self) -> u64 {
        self.trials
    }

    /// Simulates the next trial, appending its time-ordered records to `out`.
    /// Returns `false` once all trials are done.
    pub fn next_trial(&mut self, out: &mut Vec<EventRecord>) -> bool {
        if self.next >= self.trials {
            return false;
        }
        let trial = self.next;
        self.next += 1;
        let start = trial * self.period_ns + self.offset_ns;
        let end = start + self.window_ns;
        self.apd.clear();
        self.onsets.clear();

        let w = self.window_ns as f64;
        let n_pairs = poisson(&mut self.rng, self.pair_mean);
        for _ in 0..n_pairs {
            let t = start + (self.rng.random::<f64>() * w) as u64;
            if self.rng.random::<f64>() >= self.outcome.trigger {
                continue;
            }
            self.apd.push(t);
            if self.rng.random::<f64>() < self.outcome.onset_given_trigger {
                let mut delay = self.latency.map_or(0.0, |d| d.sample(&mut self.rng));
                if let Some(j) = self.jitter {
                    delay += j.sample(&mut self.rng);
                }
                let t_onset = t as f64 + delay.round();
                if t_onset >= start as f64 && t_onset < end as f64 {
                    self.onsets.push(t_onset as u64);
                }
            }
        }
        let n_dark = poisson(&mut self.rng, self.dark_mean);
        for _ in 0..n_dark {
            self.apd.push(start + (self.rng.random::<f64>() * w) as u64);
        }
        let n_false = poisson(&mut self.rng, self.false_mean);
        for _ in 0..n_false {
            self.onsets.push(start + (self.rng.random::<f64>() * w) as u64);
        }

        self.apd.sort_unstable();
        // Two clicks in the same nanosecond register once.
        self.apd.dedup();
        let first_onset = self.onsets.iter().copied().min();

        let mut onset_pending = first_onset;
        for &t in &self.apd {
            if let Some(o) = onset_pending {
                if o < t {
                    out.push(record(trial, Channel::PmtOnset, o));
                    onset_pending = None;
                }
            }
            out.push(record(trial, Channel::Apd, t));
        }
        if let Some(o) = onset_pending {
            out.push(record(trial, Channel::PmtOnset, o));
        }
        true
    }
}

fn record(trial: u64, channel: Channel, t_ns: u64) -> EventRecord {
    EventRecord {
        trial,
        channel,
        t_ns,
        phase: Phase::Detect,
    }
}

/// Runs every trial of `m` and returns the finalized, time-ordered stream.
pub fn simulate_run(m: &RunManifest) -> Result<Vec<EventRecord>> {
    let mut sim = RunSimulator::new(m)?;
    let mut out = Vec::new();
    while sim.next_trial(&mut out) {}
    Ok(out)
}

/// Checks ordering and the one-onset-per-trial rule on a finalized stream.
pub fn validate_stream(events: &[EventRecord]) -> Result<()> {
    let mut last_any: Option<u64> = None;
    let mut last_apd: Option<u64> = None;
    let mut last_onset: Option<(u64, u64)> = None;
    for (i, e) in events.iter().enumerate() {
        if last_any.is_some_and(|t| e.t_ns < t) {
            return Err(Error::validation(format!(
                "record {i}: timestamp {} precedes the previous record",
                e.t_ns
            )));
        }
        last_any = Some(e.t_ns);
        if e.phase != Phase::Detect {
            return Err(Error::validation(format!(
                "record {i}: detector event outside the detection phase"
            )));
        }
        match e.channel {
            Channel::Apd => {
                if last_apd.is_some_and(|t| e.t_ns <= t) {
                    return Err(Error::validation(format!(
                        "record {i}: APD timestamps not strictly increasing"
                    )));
                }
                last_apd = Some(e.t_ns);
            }
            Channel::PmtOnset => {
                if let Some((t, trial)) = last_onset {
                    if e.t_ns <= t {
                        return Err(Error::validation(format!(
                            "record {i}: onset timestamps not strictly increasing"
                        )));
                    }
                    if trial == e.trial {
                        return Err(Error::validation(format!(
                            "record {i}: second fluorescence onset in trial {trial}"
                        )));
                    }
                }
                last_onset = Some((e.t_ns, e.trial));
            }
        }
    }
    Ok(())
}

/// Splits a stream into APD and onset timestamp lists.
pub fn channel_times(events: &[EventRecord]) -> (Vec<u64>, Vec<u64>) {
    let mut apd = Vec::new();
    let mut onsets = Vec::new();
    for e in events {
        match e.channel {
            Channel::Apd => apd.push(e.t_ns),
            Channel::PmtOnset => onsets.push(e.t_ns),
        }
    }
    (apd, onsets)
}
