//! Temperature traces and the per-transect feasibility report.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::{DateTime, NaiveDate};
use serde::Deserialize;
use thiserror::Error;

use super::teg::{teg_power, TegParams};
use super::thermal::{delta_t_teg, ThermalStack};

pub const TRACE_HEADER: [&str; 4] = ["timestamp_unix", "transect", "t_soil_c", "t_air_c"];

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct TemperatureSample {
    #[serde(rename = "timestamp_unix")]
    pub timestamp: i64,
    pub transect: String,
    #[serde(rename = "t_soil_c")]
    pub t_soil: f64,
    #[serde(rename = "t_air_c")]
    pub t_air: f64,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("line {line}: timestamp {timestamp} for transect {transect} is not after the previous sample")]
    NotIncreasing {
        line: u64,
        transect: String,
        timestamp: i64,
    },
    #[error("no samples")]
    EmptyTrace,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl TraceError {
    pub fn line(&self) -> Option<u64> {
        match self {
            TraceError::Malformed { line, .. } | TraceError::NotIncreasing { line, .. } => {
                Some(*line)
            }
            _ => None,
        }
    }
}

/// Parses a trace CSV. Timestamps must strictly increase within each transect.
pub fn read_trace_csv<R: Read>(input: R) -> Result<Vec<TemperatureSample>, TraceError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = reader.headers().map_err(|e| csv_error(e, 1))?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(TraceError::EmptyTrace);
    }
    if headers.iter().ne(TRACE_HEADER) {
        return Err(TraceError::Malformed {
            line: 1,
            message: format!("expected header {}", TRACE_HEADER.join(",")),
        });
    }
    let mut samples = Vec::new();
    let mut last: BTreeMap<String, i64> = BTreeMap::new();
    for row in reader.deserialize::<TemperatureSample>() {
        let sample: TemperatureSample = row.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            csv_error(e, line)
        })?;
        let line = samples.len() as u64 + 2;
        if !sample.t_soil.is_finite() || !sample.t_air.is_finite() {
            return Err(TraceError::Malformed {
                line,
                message: "non-finite temperature".into(),
            });
        }
        if let Some(&prev) = last.get(&sample.transect) {
            if sample.timestamp <= prev {
                return Err(TraceError::NotIncreasing {
                    line,
                    transect: sample.transect,
                    timestamp: sample.timestamp,
                });
            }
        }
        last.insert(sample.transect.clone(), sample.timestamp);
        samples.push(sample);
    }
    if samples.is_empty() {
        return Err(TraceError::EmptyTrace);
    }
    Ok(samples)
}

fn csv_error(e: csv::Error, line: u64) -> TraceError {
    let message = match e.kind() {
        csv::ErrorKind::Deserialize { err, .. } => err.to_string(),
        _ => e.to_string(),
    };
    TraceError::Malformed { line, message }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AnalysisOptions {
    /// Zero the power of samples where the air is warmer than the soil.
    pub clamp_positive: bool,
    /// Mean node power draw to compare harvested power against, W.
    pub node_power_w: Option<f64>,
    /// Converter efficiency applied to harvested power in verdicts.
    pub efficiency: f64,
}

impl AnalysisOptions {
    pub fn new() -> Self {
        AnalysisOptions {
            clamp_positive: false,
            node_power_w: None,
            efficiency: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DailyRow {
    pub date: NaiveDate,
    pub transect: String,
    pub samples: usize,
    pub mean_dt_c: f64,
    pub mean_dt_teg_k: f64,
    pub mean_power_w: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransectSummary {
    pub transect: String,
    pub samples: usize,
    /// Means over every sample in the window.
    pub mean_dt_c: f64,
    pub mean_dt_teg_k: f64,
    pub mean_power_w: f64,
    /// Power evaluated at the mean gradient; never above `mean_power_w`.
    pub power_at_mean_dt_w: f64,
    /// Harvest covers the node's mean draw.
    pub feasible: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    pub daily: Vec<DailyRow>,
    pub transects: Vec<TransectSummary>,
    pub options: AnalysisOptions,
}

#[derive(Default)]
struct Acc {
    n: usize,
    dt: f64,
    dt_teg: f64,
    power: f64,
}

impl Acc {
    fn add(&mut self, dt: f64, dt_teg: f64, power: f64) {
        self.n += 1;
        self.dt += dt;
        self.dt_teg += dt_teg;
        self.power += power;
    }

    fn means(&self) -> (f64, f64, f64) {
        let n = self.n as f64;
        (self.dt / n, self.dt_teg / n, self.power / n)
    }
}

fn utc_date(ts: i64) -> NaiveDate {
    DateTime::from_timestamp(ts.div_euclid(86_400) * 86_400, 0)
        .expect("timestamp in chrono range")
        .date_naive()
}

/// Per-sample TEG drop and power, grouped into UTC-day means and
/// whole-window means per transect (sorted by label).
pub fn analyze_trace(
    samples: &[TemperatureSample],
    stack: &ThermalStack,
    teg: &TegParams,
    options: AnalysisOptions,
) -> Result<FeasibilityReport, TraceError> {
    if samples.is_empty() {
        return Err(TraceError::EmptyTrace);
    }
    let mut daily: BTreeMap<(String, NaiveDate), Acc> = BTreeMap::new();
    let mut whole: BTreeMap<String, Acc> = BTreeMap::new();
    for s in samples {
        let dt = s.t_soil - s.t_air;
        let dt_teg = delta_t_teg(s.t_soil, s.t_air, stack);
        let power = if options.clamp_positive && dt < 0.0 {
            0.0
        } else {
            teg_power(dt_teg, teg)
        };
        daily
            .entry((s.transect.clone(), utc_date(s.timestamp)))
            .or_default()
            .add(dt, dt_teg, power);
        whole
            .entry(s.transect.clone())
            .or_default()
            .add(dt, dt_teg, power);
    }
    let daily = daily
        .into_iter()
        .map(|((transect, date), acc)| {
            let (mean_dt_c, mean_dt_teg_k, mean_power_w) = acc.means();
            DailyRow {
                date,
                transect,
                samples: acc.n,
                mean_dt_c,
                mean_dt_teg_k,
                mean_power_w,
            }
        })
        .collect();
    let transects = whole
        .into_iter()
        .map(|(transect, acc)| {
            let (mean_dt_c, mean_dt_teg_k, mean_power_w) = acc.means();
            let power_at_mean_dt_w = if options.clamp_positive && mean_dt_c < 0.0 {
                0.0
            } else {
                teg_power(mean_dt_teg_k, teg)
            };
            let feasible = options
                .node_power_w
                .map(|p| options.efficiency * mean_power_w >= p);
            TransectSummary {
                transect,
                samples: acc.n,
                mean_dt_c,
                mean_dt_teg_k,
                mean_power_w,
                power_at_mean_dt_w,
                feasible,
            }
        })
        .collect();
    Ok(FeasibilityReport {
        daily,
        transects,
        options,
    })
}

impl FeasibilityReport {
    /// Daily rows, then a blank line and the whole-window summary block.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "# window means average per-sample values; daily means are presentation aggregates"
        )?;
        writeln!(out, "date,transect,mean_dt_c,mean_dt_teg_k,mean_power_mw")?;
        for r in &self.daily {
            writeln!(
                out,
                "{},{},{:.4},{:.4},{:.6}",
                r.date,
                r.transect,
                r.mean_dt_c,
                r.mean_dt_teg_k,
                r.mean_power_w * 1e3
            )?;
        }
        writeln!(out)?;
        writeln!(out, "# yearly summary")?;
        writeln!(
            out,
            "transect,samples,mean_dt_c,mean_dt_teg_k,mean_power_mw,power_at_mean_dt_mw,feasible"
        )?;
        for t in &self.transects {
            writeln!(
                out,
                "{},{},{:.4},{:.4},{:.6},{:.6},{}",
                t.transect,
                t.samples,
                t.mean_dt_c,
                t.mean_dt_teg_k,
                t.mean_power_w * 1e3,
                t.power_at_mean_dt_w * 1e3,
                t.feasible.map_or("", |f| if f { "yes" } else { "no" })
            )?;
        }
        Ok(())
    }
}
