//! Trigger/onset lag histograms and coincidence extraction.
//!
//! Lags are `tau = t_onset - t_apd` in integer nanoseconds. Bin `k` covers the
//! half-open interval `[(k - 1/2) w, (k + 1/2) w)`, so bin 0 is centered on
//! zero lag.

use std::fmt::Write as _;
use std::io::Write;

use crate::error::{Error, Result};
use crate::sim::{channel_times, validate_stream, EventRecord};

pub const DEFAULT_BIN_WIDTH_US: f64 = 10.0;
pub const DEFAULT_WINDOW_BINS: u32 = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct CoincidenceHistogram {
    pub bin_width_us: f64,
    pub lags: Vec<i64>,
    pub counts: Vec<u64>,
    pub total_apd: u64,
    pub total_onsets: u64,
    pub duration_s: f64,
}

impl CoincidenceHistogram {
    pub fn window_bins(&self) -> u32 {
        (self.lags.len() / 2) as u32
    }

    pub fn count_at(&self, lag: i64) -> Option<u64> {
        let w = self.window_bins() as i64;
        (lag.abs() <= w).then(|| self.counts[(lag + w) as usize])
    }

    /// Elementwise sum of two histograms over disjoint data.
    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if self.lags != other.lags || self.bin_width_us != other.bin_width_us {
            return Err(Error::validation("histograms have different binning"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total_apd += other.total_apd;
        self.total_onsets += other.total_onsets;
        self.duration_s += other.duration_s;
        Ok(())
    }

    /// Tabular export: `lag_us_center counts poisson_err` after a metadata line.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(
            w,
            "# bin_width_us={} window_bins={} total_apd={} total_onsets={} duration_s={}",
            self.bin_width_us,
            self.window_bins(),
            self.total_apd,
            self.total_onsets,
            self.duration_s
        )?;
        writeln!(w, "lag_us_center\tcounts\tpoisson_err")?;
        for (lag, c) in self.lags.iter().zip(&self.counts) {
            writeln!(
                w,
                "{}\t{}\t{}",
                *lag as f64 * self.bin_width_us,
                c,
                (*c as f64).sqrt()
            )?;
        }
        Ok(())
    }
}

fn bin_width_ns(bin_width_us: f64) -> Result<i64> {
    let ns = bin_width_us * 1e3;
    let rounded = ns.round();
    if !(rounded >= 1.0) || (ns - rounded).abs() > 1e-6 {
        return Err(Error::validation(format!(
            "bin width {bin_width_us} us is not a positive whole number of nanoseconds"
        )));
    }
    Ok(rounded as i64)
}

fn check_sorted(name: &str, t: &[u64]) -> Result<()> {
    match t.windows(2).position(|w| w[1] < w[0]) {
        Some(i) => Err(Error::validation(format!(
            "{name} timestamps out of order at index {}",
            i + 1
        ))),
        None => Ok(()),
    }
}

/// Histogram of onset-minus-trigger lags within `+-window_bins` bins.
pub fn histogram(
    apd: &[u64],
    onsets: &[u64],
    bin_width_us: f64,
    window_bins: u32,
) -> Result<CoincidenceHistogram> {
    check_sorted("APD", apd)?;
    check_sorted("onset", onsets)?;
    let bw = bin_width_ns(bin_width_us)?;
    let win = window_bins as i64;
    let mut counts = vec![0u64; (2 * win + 1) as usize];
    // |tau| beyond this can never land in a window bin.
    let reach = (win + 1) * bw;

    let mut lo = 0usize;
    for &o in onsets {
        let o = o as i64;
        while lo < apd.len() && o - apd[lo] as i64 > reach {
            lo += 1;
        }
        for &a in &apd[lo..] {
            let tau = o - a as i64;
            if tau < -reach {
                break;
            }
            let k = (2 * tau + bw).div_euclid(2 * bw);
            if k.abs() <= win {
                counts[(k + win) as usize] += 1;
            }
        }
    }
    Ok(CoincidenceHistogram {
        bin_width_us,
        lags: (-win..=win).collect(),
        counts,
        total_apd: apd.len() as u64,
        total_onsets: onsets.len() as u64,
        duration_s: 0.0,
    })
}

/// [`histogram`] over a finalized event stream.
pub fn histogram_stream(
    events: &[EventRecord],
    bin_width_us: f64,
    window_bins: u32,
    duration_s: f64,
) -> Result<CoincidenceHistogram> {
    validate_stream(events)?;
    let (apd, onsets) = channel_times(events);
    let mut h = histogram(&apd, &onsets, bin_width_us, window_bins)?;
    h.duration_s = duration_s;
    Ok(h)
}

/// Which bins enter the background average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BackgroundMode {
    /// Every bin of the window, zero lag included.
    #[default]
    WholeWindow,
    ExcludeZeroLag,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoincidenceResult {
    pub coincidences: u64,
    pub coincidence_err: f64,
    pub background_per_bin: f64,
    pub background_err: f64,
    pub signal_is_peak: bool,
}

impl CoincidenceResult {
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "coincidences={}", self.coincidences);
        let _ = writeln!(s, "coincidence_err={}", self.coincidence_err);
        let _ = writeln!(s, "background_per_bin={}", self.background_per_bin);
        let _ = writeln!(s, "background_err={}", self.background_err);
        let _ = writeln!(s, "signal_is_peak={}", self.signal_is_peak);
        s
    }
}

pub fn extract(hist: &CoincidenceHistogram) -> Result<CoincidenceResult> {
    extract_with(hist, BackgroundMode::WholeWindow)
}

/// Zero-lag count and the mean background level with Poisson errors.
pub fn extract_with(hist: &CoincidenceHistogram, mode: BackgroundMode) -> Result<CoincidenceResult> {
    let coincidences = hist
        .count_at(0)
        .ok_or_else(|| Error::validation("histogram has no zero-lag bin"))?;
    let (sum, n) = hist
        .lags
        .iter()
        .zip(&hist.counts)
        .filter(|(lag, _)| mode == BackgroundMode::WholeWindow || **lag != 0)
        .fold((0u64, 0u64), |(s, n), (_, c)| (s + c, n + 1));
    if n == 0 {
        return Err(Error::validation("no bins available for the background average"));
    }
    let background_per_bin = sum as f64 / n as f64;
    let background_err = (sum as f64).sqrt() / n as f64;
    Ok(CoincidenceResult {
        coincidences,
        coincidence_err: (coincidences as f64).sqrt(),
        background_per_bin,
        background_err,
        signal_is_peak: coincidences as f64 > background_per_bin + 3.0 * background_err,
    })
}
