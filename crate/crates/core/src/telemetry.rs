//! Append-only time-series log with long-format CSV persistence.
//!
//! A run is an ordered list of `(t_min, channel, value, quality)` records.
//! Time must not go backwards within a channel; different channels may
//! interleave freely. Values are written with 17 significant digits, which
//! is enough for every finite `f64` to parse back to the same bits.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const CSV_HEADER: &str = "t_min,channel,value,quality";
pub const DEFAULT_SAMPLE_PERIOD_MIN: f64 = 1.0;

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("ordering error: {channel} at t={t} min precedes last t={last} min")]
    Ordering { channel: Channel, t: f64, last: f64 },
    #[error("invalid window: t_from={from} > t_to={to}")]
    InvalidWindow { from: f64, to: f64 },
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },
    #[error("{path}: line {line}: unknown {field} '{value}'")]
    Schema {
        path: String,
        line: u64,
        field: &'static str,
        value: String,
    },
    #[error("unknown run '{0}'")]
    UnknownRun(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TelemetryError + '_ {
    move |source| TelemetryError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Temperature,
    Ph,
    Pressure,
    GasRate,
    GasCumulative,
    Level,
    Rpm,
    HeaterPower,
}

impl Channel {
    pub const ALL: [Channel; 8] = [
        Channel::Temperature,
        Channel::Ph,
        Channel::Pressure,
        Channel::GasRate,
        Channel::GasCumulative,
        Channel::Level,
        Channel::Rpm,
        Channel::HeaterPower,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Channel::Temperature => "temperature",
            Channel::Ph => "ph",
            Channel::Pressure => "pressure",
            Channel::GasRate => "gas_rate",
            Channel::GasCumulative => "gas_cumulative",
            Channel::Level => "level",
            Channel::Rpm => "rpm",
            Channel::HeaterPower => "heater_power",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Channel {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        Channel::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Quality {
    #[default]
    Ok,
    SensorFault,
}

impl Quality {
    pub fn as_str(&self) -> &'static str {
        match self {
            Quality::Ok => "ok",
            Quality::SensorFault => "sensor_fault",
        }
    }
}

impl FromStr for Quality {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "ok" => Ok(Quality::Ok),
            "sensor_fault" => Ok(Quality::SensorFault),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    pub t: f64,
    pub channel: Channel,
    pub value: f64,
    pub quality: Quality,
}

impl TelemetryRecord {
    pub fn ok(t: f64, channel: Channel, value: f64) -> Self {
        Self {
            t,
            channel,
            value,
            quality: Quality::Ok,
        }
    }

    /// Bitwise equality, so NaN payloads and signed zeros compare exactly.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.t.to_bits() == other.t.to_bits()
            && self.value.to_bits() == other.value.to_bits()
            && self.channel == other.channel
            && self.quality == other.quality
    }
}

/// Formats like C's `%.17g`.
pub fn format_g17(x: f64) -> String {
    const P: i32 = 17;
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{:.*e}", (P - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= P {
        let m = trim_fraction(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (P - 1 - exp).max(0) as usize;
        trim_fraction(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn parse_value(s: &str) -> Option<f64> {
    match s {
        "nan" => Some(f64::NAN),
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        _ => s.parse().ok(),
    }
}

/// One run's records, in append order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TelemetryRun {
    records: Vec<TelemetryRecord>,
    last_t: BTreeMap<Channel, f64>,
}

impl TelemetryRun {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            records: Vec::with_capacity(n),
            last_t: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[TelemetryRecord] {
        &self.records
    }

    pub fn append(&mut self, record: TelemetryRecord) -> Result<(), TelemetryError> {
        if let Some(&last) = self.last_t.get(&record.channel) {
            if record.t < last {
                return Err(TelemetryError::Ordering {
                    channel: record.channel,
                    t: record.t,
                    last,
                });
            }
        }
        self.last_t.insert(record.channel, record.t);
        self.records.push(record);
        Ok(())
    }

    /// Records with `t` in the closed interval `[t_from, t_to]`, time-ordered.
    /// An empty `channels` slice selects every channel.
    pub fn read_window(
        &self,
        channels: &[Channel],
        t_from: f64,
        t_to: f64,
    ) -> Result<Vec<TelemetryRecord>, TelemetryError> {
        if t_from > t_to || t_from.is_nan() || t_to.is_nan() {
            return Err(TelemetryError::InvalidWindow {
                from: t_from,
                to: t_to,
            });
        }
        let mut out: Vec<_> = self
            .records
            .iter()
            .filter(|r| r.t >= t_from && r.t <= t_to)
            .filter(|r| channels.is_empty() || channels.contains(&r.channel))
            .copied()
            .collect();
        // Stable, so same-time records keep append order.
        out.sort_by(|a, b| a.t.total_cmp(&b.t));
        Ok(out)
    }

    /// Values of one channel as `(t, value)` pairs in append order.
    pub fn series(&self, channel: Channel) -> Vec<(f64, f64)> {
        self.records
            .iter()
            .filter(|r| r.channel == channel)
            .map(|r| (r.t, r.value))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut out = BufWriter::new(out);
        writeln!(out, "{CSV_HEADER}")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{}",
                format_g17(r.t),
                r.channel.as_str(),
                format_g17(r.value),
                r.quality.as_str()
            )?;
        }
        out.flush()
    }

    pub fn export_csv(&self, path: &Path) -> Result<(), TelemetryError> {
        let file = File::create(path).map_err(io_err(path))?;
        self.write_csv(file).map_err(io_err(path))
    }

    /// Parses a run from CSV. `origin` names the source in error messages.
    pub fn read_csv<R: BufRead>(reader: R, origin: &str) -> Result<Self, TelemetryError> {
        let parse = |line: u64, message: String| TelemetryError::Parse {
            path: origin.to_string(),
            line,
            message,
        };
        let mut run = TelemetryRun::new();
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx as u64 + 1;
            let line = line.map_err(|e| parse(line_no, e.to_string()))?;
            let line = line.trim_end_matches('\r');
            if line_no == 1 {
                if line != CSV_HEADER {
                    return Err(parse(1, format!("expected header '{CSV_HEADER}'")));
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(parse(
                    line_no,
                    format!("expected 4 fields, found {}", fields.len()),
                ));
            }
            let t = parse_value(fields[0])
                .ok_or_else(|| parse(line_no, format!("invalid t_min '{}'", fields[0])))?;
            let channel = fields[1].parse().map_err(|_| TelemetryError::Schema {
                path: origin.to_string(),
                line: line_no,
                field: "channel",
                value: fields[1].to_string(),
            })?;
            let value = parse_value(fields[2])
                .ok_or_else(|| parse(line_no, format!("invalid value '{}'", fields[2])))?;
            let quality = fields[3].parse().map_err(|_| TelemetryError::Schema {
                path: origin.to_string(),
                line: line_no,
                field: "quality",
                value: fields[3].to_string(),
            })?;
            run.append(TelemetryRecord {
                t,
                channel,
                value,
                quality,
            })
            .map_err(|e| parse(line_no, e.to_string()))?;
        }
        Ok(run)
    }

    pub fn import_csv(path: &Path) -> Result<Self, TelemetryError> {
        let file = File::open(path).map_err(io_err(path))?;
        Self::read_csv(BufReader::new(file), &path.display().to_string())
    }
}

/// Named runs. Single writer per run.
#[derive(Debug, Clone, Default)]
pub struct TelemetryStore {
    runs: BTreeMap<String, TelemetryRun>,
}

impl TelemetryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn open_run(&mut self, run_id: &str) -> &mut TelemetryRun {
        self.runs.entry(run_id.to_string()).or_default()
    }

    pub fn run(&self, run_id: &str) -> Option<&TelemetryRun> {
        self.runs.get(run_id)
    }

    pub fn append(&mut self, run_id: &str, record: TelemetryRecord) -> Result<(), TelemetryError> {
        self.runs
            .get_mut(run_id)
            .ok_or_else(|| TelemetryError::UnknownRun(run_id.to_string()))?
            .append(record)
    }

    pub fn export_csv(&self, run_id: &str, path: &Path) -> Result<(), TelemetryError> {
        self.runs
            .get(run_id)
            .ok_or_else(|| TelemetryError::UnknownRun(run_id.to_string()))?
            .export_csv(path)
    }

    pub fn import_csv(&mut self, run_id: &str, path: &Path) -> Result<&TelemetryRun, TelemetryError> {
        let run = TelemetryRun::import_csv(path)?;
        self.runs.insert(run_id.to_string(), run);
        Ok(&self.runs[run_id])
    }
}

/// SHA-256 of the compact JSON form. `serde_json::Value` keeps object keys
/// sorted, so the digest ignores key order in the source.
pub fn config_digest<T: Serialize>(config: &T) -> Result<String, serde_json::Error> {
    let canonical = serde_json::to_value(config)?;
    let bytes = serde_json::to_vec(&canonical)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub seeds: BTreeMap<String, u64>,
    pub config_digest: String,
    pub start_min: f64,
    pub end_min: f64,
    pub artifact_version: String,
}

impl RunManifest {
    /// The run id is derived from the digest and seeds, never the wall clock.
    pub fn new(
        seeds: BTreeMap<String, u64>,
        config_digest: String,
        start_min: f64,
        end_min: f64,
    ) -> Self {
        let mut h = Sha256::new();
        h.update(config_digest.as_bytes());
        for (k, v) in &seeds {
            h.update(k.as_bytes());
            h.update(v.to_le_bytes());
        }
        let run_id = format!("run-{}", &hex::encode(h.finalize())[..16]);
        Self {
            run_id,
            seeds,
            config_digest,
            start_min,
            end_min,
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<(), TelemetryError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(io_err(path))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(t: f64, c: Channel, v: f64) -> TelemetryRecord {
        TelemetryRecord::ok(t, c, v)
    }

    #[test]
    fn g17_matches_c_printf() {
        // Reference strings from C printf("%.17g").
        let cases = [
            (0.1, "0.10000000000000001"),
            (1.0, "1"),
            (100.0, "100"),
            (1.0 / 3.0, "0.33333333333333331"),
            (1e-5, "1.0000000000000001e-05"),
            (1e17, "1e+17"),
            (123456789012345678.0, "1.2345678901234568e+17"),
            (-2.5, "-2.5"),
            (0.0001, "0.0001"),
            (37.0, "37"),
        ];
        for (x, want) in cases {
            assert_eq!(format_g17(x), want, "{x:e}");
        }
    }

    #[test]
    fn append_then_window_round_trip() {
        let mut run = TelemetryRun::new();
        let r = rec(1.0, Channel::Temperature, 37.0);
        run.append(r).unwrap();
        assert_eq!(run.read_window(&[], 0.0, 10.0).unwrap(), vec![r]);
    }

    #[test]
    fn time_regression_is_an_ordering_error() {
        let mut run = TelemetryRun::new();
        run.append(rec(5.0, Channel::Ph, 7.0)).unwrap();
        run.append(rec(1.0, Channel::Pressure, 3.0)).unwrap();
        let err = run.append(rec(4.0, Channel::Ph, 7.0)).unwrap_err();
        assert!(matches!(err, TelemetryError::Ordering { .. }));
        assert_eq!(run.len(), 2);
    }

    #[test]
    fn equal_timestamps_are_allowed() {
        let mut run = TelemetryRun::new();
        run.append(rec(5.0, Channel::Ph, 7.0)).unwrap();
        run.append(rec(5.0, Channel::Ph, 7.1)).unwrap();
    }

    #[test]
    fn window_is_closed_and_filters_channels() {
        let mut run = TelemetryRun::new();
        for i in 0..10 {
            run.append(rec(i as f64, Channel::Temperature, i as f64)).unwrap();
            run.append(rec(i as f64, Channel::Ph, 7.0)).unwrap();
        }
        let w = run.read_window(&[Channel::Temperature], 2.0, 5.0).unwrap();
        assert_eq!(w.len(), 4);
        assert_eq!(w.last().unwrap().t, 5.0);
        assert!(w.iter().all(|r| r.channel == Channel::Temperature));
        assert_eq!(run.read_window(&[], 0.0, 9.0).unwrap().len(), 20);
    }

    #[test]
    fn empty_store_and_inverted_window() {
        let run = TelemetryRun::new();
        assert!(run.read_window(&[], 0.0, 1.0).unwrap().is_empty());
        assert!(matches!(
            run.read_window(&[], 2.0, 1.0),
            Err(TelemetryError::InvalidWindow { .. })
        ));
    }

    #[test]
    fn window_is_time_ordered_across_channels() {
        let mut run = TelemetryRun::new();
        run.append(rec(3.0, Channel::Ph, 1.0)).unwrap();
        run.append(rec(1.0, Channel::Temperature, 2.0)).unwrap();
        let w = run.read_window(&[], 0.0, 5.0).unwrap();
        assert_eq!(w[0].t, 1.0);
        assert_eq!(w[1].t, 3.0);
    }

    #[test]
    fn header_only_file_is_an_empty_run() {
        let run = TelemetryRun::read_csv(format!("{CSV_HEADER}\n").as_bytes(), "mem").unwrap();
        assert!(run.is_empty());
    }

    #[test]
    fn bad_value_names_line_two() {
        let text = format!("{CSV_HEADER}\n60,temperature,abc,ok\n");
        let err = TelemetryRun::read_csv(text.as_bytes(), "mem").unwrap_err();
        match &err {
            TelemetryError::Parse { line, .. } => assert_eq!(*line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("line 2"));
    }

    #[test]
    fn unknown_channel_is_a_schema_error() {
        let text = format!("{CSV_HEADER}\n0,temperature,1,ok\n1,flux,2,ok\n");
        let err = TelemetryRun::read_csv(text.as_bytes(), "mem").unwrap_err();
        assert!(matches!(err, TelemetryError::Schema { line: 3, field: "channel", .. }));
    }

    #[test]
    fn wrong_header_is_rejected() {
        let err = TelemetryRun::read_csv("t,channel,value\n".as_bytes(), "mem").unwrap_err();
        assert!(matches!(err, TelemetryError::Parse { line: 1, .. }));
    }

    #[test]
    fn store_routes_by_run_id() {
        let mut store = TelemetryStore::new();
        store.open_run("a");
        store.append("a", rec(0.0, Channel::Level, 1.4)).unwrap();
        assert!(matches!(
            store.append("b", rec(0.0, Channel::Level, 1.4)),
            Err(TelemetryError::UnknownRun(_))
        ));
        assert_eq!(store.run("a").unwrap().len(), 1);
    }

    #[test]
    fn digest_ignores_key_order() {
        let a: serde_json::Value = serde_json::from_str(r#"{"b":1,"a":{"y":2,"x":[1,2]}}"#).unwrap();
        let b: serde_json::Value = serde_json::from_str(r#"{"a":{"x":[1,2],"y":2},"b":1}"#).unwrap();
        assert_eq!(config_digest(&a).unwrap(), config_digest(&b).unwrap());
        let c: serde_json::Value = serde_json::from_str(r#"{"a":{"x":[2,1],"y":2},"b":1}"#).unwrap();
        assert_ne!(config_digest(&a).unwrap(), config_digest(&c).unwrap());
    }

    #[test]
    fn manifest_id_is_deterministic() {
        let seeds: BTreeMap<_, _> = [("plant".to_string(), 1u64)].into();
        let a = RunManifest::new(seeds.clone(), "abc".into(), 0.0, 10.0);
        let b = RunManifest::new(seeds, "abc".into(), 0.0, 10.0);
        assert_eq!(a, b);
        assert!(a.run_id.starts_with("run-"));
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_bit_exact(
            rows in proptest::collection::vec(
                (0.0f64..1e6, 0usize..8, proptest::num::f64::ANY, any::<bool>()),
                0..60,
            )
        ) {
            let mut run = TelemetryRun::new();
            let mut t = 0.0;
            for (dt, c, v, fault) in rows {
                t += dt;
                run.append(TelemetryRecord {
                    t,
                    channel: Channel::ALL[c],
                    value: v,
                    quality: if fault { Quality::SensorFault } else { Quality::Ok },
                }).unwrap();
            }
            let mut buf = Vec::new();
            run.write_csv(&mut buf).unwrap();
            let back = TelemetryRun::read_csv(buf.as_slice(), "mem").unwrap();
            prop_assert_eq!(back.len(), run.len());
            for (a, b) in run.records().iter().zip(back.records()) {
                if a.value.is_nan() {
                    prop_assert!(b.value.is_nan());
                    prop_assert_eq!(a.t.to_bits(), b.t.to_bits());
                } else {
                    prop_assert!(a.bit_eq(b), "{:?} != {:?}", a, b);
                }
            }
        }

        #[test]
        fn g17_parses_back_to_same_bits(x in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            let back: f64 = format_g17(x).parse().unwrap();
            prop_assert_eq!(back.to_bits(), x.to_bits());
        }
    }
}
