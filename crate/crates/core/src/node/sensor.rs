//! Virtual sensors, the drivers the interface manager binds, and the
//! serialized reading record.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum SensorKind {
    SoilTemperature = 0x01,
    SoilWaterContent = 0x02,
    WeatherStation = 0x03,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bus {
    OneWire,
    Sdi12,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelDesc {
    pub name: &'static str,
    pub unit: &'static str,
    /// Encoded integer units per engineering unit.
    pub scale: i32,
}

const fn milli(name: &'static str, unit: &'static str) -> ChannelDesc {
    ChannelDesc {
        name,
        unit,
        scale: 1000,
    }
}

const SOIL_TEMPERATURE_CHANNELS: [ChannelDesc; 1] = [milli("t_soil", "°C")];
const WATER_CONTENT_CHANNELS: [ChannelDesc; 2] = [milli("vwc", "%"), milli("t_soil", "°C")];
const WEATHER_CHANNELS: [ChannelDesc; 4] = [
    milli("t_air", "°C"),
    milli("rh", "%"),
    milli("wind", "m/s"),
    milli("pressure", "hPa"),
];

/// Largest channel count of any sensor kind.
pub const MAX_CHANNELS: usize = 4;

impl SensorKind {
    pub const ALL: [SensorKind; 3] = [
        SensorKind::SoilTemperature,
        SensorKind::SoilWaterContent,
        SensorKind::WeatherStation,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<SensorKind> {
        SensorKind::ALL.into_iter().find(|k| k.code() == code)
    }

    pub fn bus(self) -> Bus {
        match self {
            SensorKind::SoilTemperature => Bus::OneWire,
            SensorKind::SoilWaterContent | SensorKind::WeatherStation => Bus::Sdi12,
        }
    }

    pub fn channels(self) -> &'static [ChannelDesc] {
        match self {
            SensorKind::SoilTemperature => &SOIL_TEMPERATURE_CHANNELS,
            SensorKind::SoilWaterContent => &WATER_CONTENT_CHANNELS,
            SensorKind::WeatherStation => &WEATHER_CHANNELS,
        }
    }
}

impl fmt::Display for SensorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SensorKind::SoilTemperature => "soil-temperature",
            SensorKind::SoilWaterContent => "soil-water-content",
            SensorKind::WeatherStation => "weather-station",
        })
    }
}

/// A deterministic source of physical channel values over Unix time.
pub trait SignalSource: Send + Sync {
    fn value(&self, channel: &str, t_unix: i64) -> Option<f64>;
}

/// Piecewise-linear interpolation over recorded samples. Outside the
/// recorded span a channel has no value.
#[derive(Debug, Clone, Default)]
pub struct TraceSignal {
    channels: BTreeMap<String, Vec<(i64, f64)>>,
}

impl TraceSignal {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds samples for `channel`. Points are sorted by time; duplicates keep the last value.
    pub fn with_channel(mut self, channel: &str, mut points: Vec<(i64, f64)>) -> Self {
        points.sort_by_key(|p| p.0);
        points.dedup_by(|later, earlier| {
            if later.0 == earlier.0 {
                earlier.1 = later.1;
                true
            } else {
                false
            }
        });
        self.channels.insert(channel.to_string(), points);
        self
    }

    pub fn span(&self) -> Option<(i64, i64)> {
        let starts = self
            .channels
            .values()
            .filter_map(|p| p.first().map(|x| x.0));
        let ends = self.channels.values().filter_map(|p| p.last().map(|x| x.0));
        Some((starts.min()?, ends.max()?))
    }
}

impl SignalSource for TraceSignal {
    fn value(&self, channel: &str, t: i64) -> Option<f64> {
        let pts = self.channels.get(channel)?;
        let idx = pts.partition_point(|p| p.0 < t);
        let &(t1, v1) = pts.get(idx)?;
        if t1 == t {
            return Some(v1);
        }
        let &(t0, v0) = pts.get(idx.checked_sub(1)?)?;
        Some(v0 + (v1 - v0) * (t - t0) as f64 / (t1 - t0) as f64)
    }
}

/// Triangle-wave diurnal generator: `base + amplitude * tri(t / period)` with
/// `tri` spanning [-1, 1]. Uses only exact-rounded arithmetic so values are
/// bit-identical across platforms.
#[derive(Debug, Clone)]
pub struct SyntheticSignal {
    pub period_s: i64,
    channels: BTreeMap<String, (f64, f64)>,
}

impl SyntheticSignal {
    pub fn new(period_s: i64) -> Self {
        assert!(period_s > 0);
        SyntheticSignal {
            period_s,
            channels: BTreeMap::new(),
        }
    }

    pub fn with_channel(mut self, channel: &str, base: f64, amplitude: f64) -> Self {
        self.channels.insert(channel.to_string(), (base, amplitude));
        self
    }

    pub fn constant(channel: &str, value: f64) -> Self {
        SyntheticSignal::new(86_400).with_channel(channel, value, 0.0)
    }

    /// Default daily cycle for a transect label ending in `A`..`F`; warmer
    /// transects get a higher soil baseline.
    pub fn for_transect(label: &str) -> Self {
        let warming = match label.chars().last().map(|c| c.to_ascii_uppercase()) {
            Some('B') => 1.0,
            Some('C') => 3.0,
            Some('D') => 5.0,
            Some('E') => 7.5,
            Some('F') => 10.0,
            _ => 0.0,
        };
        SyntheticSignal::new(86_400)
            .with_channel("t_soil", 4.0 + warming, 1.5)
            .with_channel("t_air", 3.0, 5.0)
            .with_channel("vwc", 32.0, 2.0)
            .with_channel("rh", 80.0, 12.0)
            .with_channel("wind", 4.5, 3.0)
            .with_channel("pressure", 1005.0, 4.0)
    }
}

impl SignalSource for SyntheticSignal {
    fn value(&self, channel: &str, t: i64) -> Option<f64> {
        let &(base, amplitude) = self.channels.get(channel)?;
        let phase = t.rem_euclid(self.period_s) as f64 / self.period_s as f64;
        let tri = 4.0 * (phase - 0.5).abs() - 1.0;
        Some(base + amplitude * tri)
    }
}

/// Looks channels up in `primary` first, then in `fallback`.
pub struct Layered {
    pub primary: Arc<dyn SignalSource>,
    pub fallback: Arc<dyn SignalSource>,
}

impl SignalSource for Layered {
    fn value(&self, channel: &str, t: i64) -> Option<f64> {
        self.primary
            .value(channel, t)
            .or_else(|| self.fallback.value(channel, t))
    }
}

pub trait SensorDriver: Send {
    fn kind(&self) -> SensorKind;

    fn channels(&self) -> &'static [ChannelDesc] {
        self.kind().channels()
    }

    /// One value per channel in encoded units, or an empty vector when the
    /// sensor did not answer.
    fn measure(&mut self, address: u16, t_unix: i64) -> Vec<i32>;
}

/// Driver that reads every channel of its kind from a signal source.
pub struct VirtualDriver {
    kind: SensorKind,
    source: Arc<dyn SignalSource>,
}

impl VirtualDriver {
    pub fn new(kind: SensorKind, source: Arc<dyn SignalSource>) -> Self {
        VirtualDriver { kind, source }
    }
}

impl SensorDriver for VirtualDriver {
    fn kind(&self) -> SensorKind {
        self.kind
    }

    fn measure(&mut self, _address: u16, t_unix: i64) -> Vec<i32> {
        self.kind
            .channels()
            .iter()
            .map(|c| {
                let v = self.source.value(c.name, t_unix)?;
                let scaled = (v * c.scale as f64).round();
                (scaled >= i32::MIN as f64 && scaled <= i32::MAX as f64).then_some(scaled as i32)
            })
            .collect::<Option<Vec<_>>>()
            .unwrap_or_default()
    }
}

/// Drivers available to the interface manager, keyed by sensor-type code.
#[derive(Default)]
pub struct DriverRegistry {
    drivers: BTreeMap<u8, Box<dyn SensorDriver>>,
}

impl DriverRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// One virtual driver per sensor kind, all reading from `source`.
    pub fn standard(source: Arc<dyn SignalSource>) -> Self {
        let mut reg = DriverRegistry::new();
        for kind in SensorKind::ALL {
            reg.register(Box::new(VirtualDriver::new(kind, source.clone())));
        }
        reg
    }

    /// Registers a driver under its kind's code, replacing any previous one.
    pub fn register(&mut self, driver: Box<dyn SensorDriver>) {
        self.drivers.insert(driver.kind().code(), driver);
    }

    pub fn contains(&self, code: u8) -> bool {
        self.drivers.contains_key(&code)
    }

    pub fn get_mut(&mut self, code: u8) -> Option<&mut (dyn SensorDriver + 'static)> {
        self.drivers.get_mut(&code).map(|d| d.as_mut())
    }
}

/// Bytes before the channel values: timestamp (4), kind (1), channel count (1).
pub const RECORD_HEADER_LEN: usize = 6;
pub const MAX_RECORD_LEN: usize = RECORD_HEADER_LEN + 4 * MAX_CHANNELS;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SensorReading {
    pub timestamp: u32,
    pub node_uid: u64,
    pub kind: SensorKind,
    /// Channel name and value in milli-units.
    pub channels: Vec<(&'static str, i32)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RecordError {
    #[error("record shorter than its header")]
    Truncated,
    #[error("unknown sensor kind 0x{0:02X}")]
    UnknownKind(u8),
    #[error("{kind} records carry {expected} channels, got {got}")]
    ChannelCount {
        kind: SensorKind,
        expected: usize,
        got: usize,
    },
    #[error("record length {got} does not match {expected} implied by its header")]
    Length { expected: usize, got: usize },
}

impl SensorReading {
    pub fn record_len(&self) -> usize {
        RECORD_HEADER_LEN + 4 * self.channels.len()
    }

    /// `timestamp u32 LE | kind u8 | count u8 | count x i32 LE`.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.record_len());
        out.extend_from_slice(&self.timestamp.to_le_bytes());
        out.push(self.kind.code());
        out.push(self.channels.len() as u8);
        for (_, v) in &self.channels {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses one record occupying exactly `bytes`.
    pub fn decode(bytes: &[u8], node_uid: u64) -> Result<SensorReading, RecordError> {
        if bytes.len() < RECORD_HEADER_LEN {
            return Err(RecordError::Truncated);
        }
        let timestamp = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
        let kind = SensorKind::from_code(bytes[4]).ok_or(RecordError::UnknownKind(bytes[4]))?;
        let count = bytes[5] as usize;
        let descs = kind.channels();
        if count != descs.len() {
            return Err(RecordError::ChannelCount {
                kind,
                expected: descs.len(),
                got: count,
            });
        }
        let expected = RECORD_HEADER_LEN + 4 * count;
        if bytes.len() != expected {
            return Err(RecordError::Length {
                expected,
                got: bytes.len(),
            });
        }
        let channels = descs
            .iter()
            .zip(bytes[RECORD_HEADER_LEN..].chunks_exact(4))
            .map(|(d, c)| (d.name, i32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        Ok(SensorReading {
            timestamp,
            node_uid,
            kind,
            channels,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_soil_trace_reads_milli_degrees() {
        let src = Arc::new(SyntheticSignal::constant("t_soil", 5.0));
        let mut drv = VirtualDriver::new(SensorKind::SoilTemperature, src);
        assert_eq!(drv.measure(0, 1_700_000_000), vec![5000]);
    }

    #[test]
    fn trace_interpolates_linearly() {
        let trace = TraceSignal::new().with_channel("t_soil", vec![(0, 1.0), (100, 3.0)]);
        assert_eq!(trace.value("t_soil", 0), Some(1.0));
        assert_eq!(trace.value("t_soil", 25), Some(1.5));
        assert_eq!(trace.value("t_soil", 100), Some(3.0));
        assert_eq!(trace.value("t_soil", 101), None);
        assert_eq!(trace.value("t_soil", -1), None);
        assert_eq!(trace.value("t_air", 50), None);
    }

    #[test]
    fn missing_channel_is_empty_measurement() {
        let src = Arc::new(SyntheticSignal::constant("t_soil", 5.0));
        let mut drv = VirtualDriver::new(SensorKind::WeatherStation, src);
        assert!(drv.measure(0, 0).is_empty());
    }

    #[test]
    fn layered_falls_back() {
        let src = Layered {
            primary: Arc::new(SyntheticSignal::constant("t_soil", 9.0)),
            fallback: Arc::new(SyntheticSignal::for_transect("3F")),
        };
        assert_eq!(src.value("t_soil", 0), Some(9.0));
        assert!(src.value("vwc", 0).is_some());
    }

    #[test]
    fn triangle_wave_extremes() {
        let s = SyntheticSignal::new(100).with_channel("x", 10.0, 2.0);
        assert_eq!(s.value("x", 0), Some(12.0));
        assert_eq!(s.value("x", 50), Some(8.0));
        assert_eq!(s.value("x", 25), Some(10.0));
        assert_eq!(s.value("x", -50), Some(8.0));
    }

    #[test]
    fn record_layout() {
        let r = SensorReading {
            timestamp: 0x01020304,
            node_uid: 7,
            kind: SensorKind::SoilTemperature,
            channels: vec![("t_soil", 5000)],
        };
        assert_eq!(
            r.encode(),
            vec![0x04, 0x03, 0x02, 0x01, 0x01, 0x01, 0x88, 0x13, 0x00, 0x00]
        );
        assert_eq!(SensorReading::decode(&r.encode(), 7).unwrap(), r);
    }

    #[test]
    fn record_rejects_padding_and_bad_counts() {
        let r = SensorReading {
            timestamp: 1,
            node_uid: 1,
            kind: SensorKind::SoilTemperature,
            channels: vec![("t_soil", -250)],
        };
        let mut padded = r.encode();
        padded.push(0);
        assert!(matches!(
            SensorReading::decode(&padded, 1),
            Err(RecordError::Length { .. })
        ));
        assert_eq!(
            SensorReading::decode(&[0; 3], 1),
            Err(RecordError::Truncated)
        );
        assert_eq!(
            SensorReading::decode(&[0, 0, 0, 0, 9, 0], 1),
            Err(RecordError::UnknownKind(9))
        );
        assert!(matches!(
            SensorReading::decode(&[0, 0, 0, 0, 1, 2], 1),
            Err(RecordError::ChannelCount { .. })
        ));
    }

    #[test]
    fn codes_are_unique() {
        for kind in SensorKind::ALL {
            assert_eq!(SensorKind::from_code(kind.code()), Some(kind));
        }
        assert_eq!(SensorKind::from_code(0xEE), None);
    }
}
