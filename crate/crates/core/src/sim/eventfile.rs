//! Line-oriented event files.
//!
//! ```text
//! #manifest<TAB>{"seed":42,...}
//! 0<TAB>APD<TAB>50001234<TAB>DETECT
//! 0<TAB>PMT_ONSET<TAB>50002311<TAB>DETECT
//! ```
//!
//! The first line embeds the full [`RunManifest`] as JSON. Timestamps are
//! integer nanoseconds.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{validate_stream, Channel, EventRecord, Phase, RunManifest};
use crate::error::{Error, Result};

const MANIFEST_TAG: &str = "#manifest";

/// A parsed event file.
#[derive(Debug, Clone, PartialEq)]
pub struct EventFile {
    pub manifest: RunManifest,
    pub events: Vec<EventRecord>,
}

pub fn write_events(path: impl AsRef<Path>, manifest: &RunManifest, events: &[EventRecord]) -> Result<()> {
    validate_stream(events)?;
    let mut w = BufWriter::new(File::create(path)?);
    write_events_to(&mut w, manifest, events)?;
    w.flush()?;
    Ok(())
}

pub fn write_events_to<W: Write>(w: &mut W, manifest: &RunManifest, events: &[EventRecord]) -> Result<()> {
    let json = serde_json::to_string(manifest).map_err(|e| Error::validation(e.to_string()))?;
    writeln!(w, "{MANIFEST_TAG}\t{json}")?;
    for e in events {
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            e.trial,
            e.channel.as_str(),
            e.t_ns,
            e.phase.as_str()
        )?;
    }
    Ok(())
}

pub fn read_events(path: impl AsRef<Path>) -> Result<EventFile> {
    read_events_from(BufReader::new(File::open(path)?))
}

pub fn read_events_from<R: BufRead>(r: R) -> Result<EventFile> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(1, "missing manifest line"))??;
    let json = header
        .strip_prefix(MANIFEST_TAG)
        .and_then(|s| s.strip_prefix('\t'))
        .ok_or_else(|| Error::parse(1, "first line must start with '#manifest<TAB>'"))?;
    let manifest: RunManifest =
        serde_json::from_str(json).map_err(|e| Error::parse(1, format!("bad manifest: {e}")))?;

    let mut events = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let lineno = i + 2;
        if line.is_empty() {
            continue;
        }
        events.push(parse_record(&line).map_err(|m| Error::parse(lineno, m))?);
    }
    validate_stream(&events)?;
    Ok(EventFile { manifest, events })
}

fn parse_record(line: &str) -> std::result::Result<EventRecord, String> {
    let mut f = line.split('\t');
    let mut next = |name: &str| f.next().ok_or_else(|| format!("missing field '{name}'"));
    let trial = next("trial")?
        .parse::<u64>()
        .map_err(|e| format!("bad trial: {e}"))?;
    let ch = next("channel")?;
    let channel = Channel::parse(ch).ok_or_else(|| format!("unknown channel '{ch}'"))?;
    let t_ns = next("t_ns")?
        .parse::<u64>()
        .map_err(|e| format!("bad t_ns: {e}"))?;
    let ph = next("phase")?;
    let phase = Phase::parse(ph).ok_or_else(|| format!("unknown phase '{ph}'"))?;
    if f.next().is_some() {
        return Err("too many fields".into());
    }
    Ok(EventRecord {
        trial,
        channel,
        t_ns,
        phase,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::biphoton::{AbsorberSetting, AnalyzerSetting, SourceModel};
    use crate::polarization::BasisLabel;
    use crate::sim::{RateConfig, SequenceConfig};

    fn manifest() -> RunManifest {
        RunManifest {
            seed: 7,
            duration_s: 1.0,
            absorber: AbsorberSetting::for_basis(BasisLabel::RL),
            analyzer: AnalyzerSetting::from_hwp(BasisLabel::RL, 45.0),
            source: SourceModel::singlet(0.83, 11.5).unwrap(),
            sequence: SequenceConfig::default(),
            rates: RateConfig::default(),
        }
    }

    fn round_trip(events: &[EventRecord]) -> EventFile {
        let mut buf = Vec::new();
        write_events_to(&mut buf, &manifest(), events).unwrap();
        read_events_from(buf.as_slice()).unwrap()
    }

    #[test]
    fn empty_stream_is_header_only() {
        let mut buf = Vec::new();
        write_events_to(&mut buf, &manifest(), &[]).unwrap();
        assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), 1);
        let back = read_events_from(buf.as_slice()).unwrap();
        assert!(back.events.is_empty());
        assert_eq!(back.manifest, manifest());
    }

    #[test]
    fn single_record_round_trips() {
        let ev = [EventRecord {
            trial: 3,
            channel: Channel::Apd,
            t_ns: 350_000_123,
            phase: Phase::Detect,
        }];
        let back = round_trip(&ev);
        assert_eq!(back.events, ev);
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let mut buf = Vec::new();
        write_events_to(&mut buf, &manifest(), &[]).unwrap();
        buf.extend_from_slice(b"0\tAPD\t10\tDETECT\n1\tAPD\tten\tDETECT\n");
        match read_events_from(buf.as_slice()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        let bad = b"0\tAPD\t10\tDETECT\n";
        assert!(matches!(read_events_from(&bad[..]), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn non_monotone_timestamps_rejected() {
        let mut buf = Vec::new();
        write_events_to(&mut buf, &manifest(), &[]).unwrap();
        buf.extend_from_slice(b"0\tAPD\t10\tDETECT\n0\tAPD\t9\tDETECT\n");
        assert!(matches!(read_events_from(buf.as_slice()), Err(Error::Validation(_))));
    }
}
