//! Append-only time-series sink.

use std::io::Write;

use serde::Serialize;

pub const SINK_HEADER: &str = "timestamp,site,node_uid,transect,channel,value,unit";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeSeriesRecord {
    /// Node RTC time of the reading, Unix seconds.
    pub timestamp: i64,
    pub site: String,
    pub node_uid: u64,
    pub transect: String,
    pub channel: String,
    /// Engineering units: the transmitted milli-units divided by 1000.
    pub value: f64,
    pub unit: String,
}

/// Writes records as CSV, header first. Values print with the shortest
/// representation that round-trips.
pub fn write_sink_csv<W: Write>(records: &[TimeSeriesRecord], out: W) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record(SINK_HEADER.split(','))?;
    for r in records {
        w.write_record([
            r.timestamp.to_string(),
            r.site.clone(),
            r.node_uid.to_string(),
            r.transect.clone(),
            r.channel.clone(),
            r.value.to_string(),
            r.unit.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
