//! Run logs and end-of-run summaries.

use std::fmt::Write as _;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::energy::{PowerProfile, HOURS_PER_YEAR};
use crate::node::Mode;

use super::power::meter_energy;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LinkCounters {
    pub uplinks_attempted: u64,
    pub uplinks_delivered: u64,
    pub uplinks_dropped: u64,
    /// Attempts of freshly sampled readings, excluding flushes and responses.
    pub reading_uplinks: u64,
    pub downlinks_queued: u64,
    pub downlinks_delivered: u64,
    pub downlinks_dropped: u64,
    pub downlinks_expired: u64,
    /// Listen windows in which a pending downlink was lost on the air.
    pub downlink_misses: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeSummary {
    pub uid: u64,
    pub site: String,
    pub transect: String,
    pub sensor: String,
    pub readings_produced: u64,
    pub readings_delivered: u64,
    pub readings_buffered: u64,
    pub readings_overwritten: u64,
    pub resets: u64,
    pub link: LinkCounters,
    /// Milliseconds in sleep, sampling, transmit, listen.
    pub mode_ms: [u64; 4],
    pub charge_c: f64,
    pub mean_current_ua: f64,
    pub lifetime_years: f64,
}

impl NodeSummary {
    /// Broken conservation or ledger rules, empty when all hold.
    pub fn violations(&self, duration_ms: u64, profile: &PowerProfile) -> Vec<String> {
        let mut out = Vec::new();
        let l = &self.link;
        if l.uplinks_attempted != l.uplinks_delivered + l.uplinks_dropped {
            out.push(format!(
                "node {}: uplinks attempted != delivered + dropped",
                self.uid
            ));
        }
        if l.downlinks_queued != l.downlinks_delivered + l.downlinks_dropped + l.downlinks_expired {
            out.push(format!(
                "node {}: downlinks queued != delivered + dropped + expired",
                self.uid
            ));
        }
        if self.readings_produced
            != self.readings_delivered + self.readings_buffered + self.readings_overwritten
        {
            out.push(format!(
                "node {}: readings produced != delivered + buffered + overwritten",
                self.uid
            ));
        }
        if self.mode_ms.iter().sum::<u64>() != duration_ms {
            out.push(format!(
                "node {}: mode times do not add up to the run duration",
                self.uid
            ));
        }
        let by_mode: f64 = Mode::ALL
            .iter()
            .map(|m| meter_energy(profile, *m, self.mode_ms[m.index()]))
            .sum();
        if (by_mode - self.charge_c).abs() > 1e-12 * by_mode.max(1.0) {
            out.push(format!(
                "node {}: charge does not match the per-mode ledger",
                self.uid
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub duration_ms: u64,
    pub events_processed: u64,
    pub sink_records: usize,
    pub quarantined: usize,
    pub nodes: Vec<NodeSummary>,
}

impl RunSummary {
    pub fn totals(&self) -> LinkCounters {
        let mut t = LinkCounters::default();
        for n in &self.nodes {
            let l = &n.link;
            t.uplinks_attempted += l.uplinks_attempted;
            t.uplinks_delivered += l.uplinks_delivered;
            t.uplinks_dropped += l.uplinks_dropped;
            t.reading_uplinks += l.reading_uplinks;
            t.downlinks_queued += l.downlinks_queued;
            t.downlinks_delivered += l.downlinks_delivered;
            t.downlinks_dropped += l.downlinks_dropped;
            t.downlinks_expired += l.downlinks_expired;
            t.downlink_misses += l.downlink_misses;
        }
        t
    }

    pub fn readings_produced(&self) -> u64 {
        self.nodes.iter().map(|n| n.readings_produced).sum()
    }

    pub fn readings_delivered(&self) -> u64 {
        self.nodes.iter().map(|n| n.readings_delivered).sum()
    }

    /// Delivered over attempted uplinks.
    pub fn delivery_ratio(&self) -> f64 {
        let t = self.totals();
        if t.uplinks_attempted == 0 {
            return 1.0;
        }
        t.uplinks_delivered as f64 / t.uplinks_attempted as f64
    }

    pub fn min_lifetime_years(&self) -> f64 {
        self.nodes
            .iter()
            .map(|n| n.lifetime_years)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn violations(&self, profile: &PowerProfile) -> Vec<String> {
        self.nodes
            .iter()
            .flat_map(|n| n.violations(self.duration_ms, profile))
            .collect()
    }

    /// Comment lines appended after the event records.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let t = self.totals();
        let _ = writeln!(
            s,
            "# summary seed={} duration_ms={} events={}",
            self.seed, self.duration_ms, self.events_processed
        );
        let _ = writeln!(
            s,
            "# uplinks attempted={} delivered={} dropped={} delivery_ratio={:.4}",
            t.uplinks_attempted,
            t.uplinks_delivered,
            t.uplinks_dropped,
            self.delivery_ratio()
        );
        let _ = writeln!(
            s,
            "# downlinks queued={} delivered={} dropped={} expired={}",
            t.downlinks_queued, t.downlinks_delivered, t.downlinks_dropped, t.downlinks_expired
        );
        let _ = writeln!(
            s,
            "# readings produced={} delivered={} sink_records={} quarantined={}",
            self.readings_produced(),
            self.readings_delivered(),
            self.sink_records,
            self.quarantined
        );
        let _ = writeln!(
            s,
            "# node,site,transect,sensor,produced,delivered,buffered,overwritten,resets,up_attempted,up_delivered,up_dropped,\
             down_queued,down_delivered,down_dropped,down_expired,sleep_ms,sampling_ms,transmit_ms,listen_ms,charge_c,\
             mean_current_ua,lifetime_years"
        );
        for n in &self.nodes {
            let l = &n.link;
            let _ = writeln!(
                s,
                "# {},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{:.6},{:.3},{:.2}",
                n.uid,
                n.site,
                n.transect,
                n.sensor,
                n.readings_produced,
                n.readings_delivered,
                n.readings_buffered,
                n.readings_overwritten,
                n.resets,
                l.uplinks_attempted,
                l.uplinks_delivered,
                l.uplinks_dropped,
                l.downlinks_queued,
                l.downlinks_delivered,
                l.downlinks_dropped,
                l.downlinks_expired,
                n.mode_ms[0],
                n.mode_ms[1],
                n.mode_ms[2],
                n.mode_ms[3],
                n.charge_c,
                n.mean_current_ua,
                n.lifetime_years
            );
        }
        s
    }
}

pub(crate) fn lifetime_years(profile: &PowerProfile, mean_current_a: f64) -> f64 {
    profile.battery_capacity_ah / mean_current_a / HOURS_PER_YEAR
}

/// Newline-delimited `time_ms,event_kind,node_uid,detail` records followed
/// by a `#`-prefixed summary block.
#[derive(Debug, Clone)]
pub struct RunLog {
    pub lines: Vec<String>,
    pub summary: RunSummary,
}

impl RunLog {
    pub const HEADER: &'static str = "time_ms,event_kind,node_uid,detail";

    pub fn text(&self) -> String {
        let mut s = String::with_capacity(self.lines.len() * 48);
        s.push_str(Self::HEADER);
        s.push('\n');
        for l in &self.lines {
            s.push_str(l);
            s.push('\n');
        }
        s.push_str(&self.summary.render());
        s
    }

    /// SHA-256 of [`text`](Self::text), lowercase hex.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.text().as_bytes()))
    }

    pub fn count(&self, event_kind: &str) -> usize {
        self.lines
            .iter()
            .filter(|l| l.split(',').nth(1) == Some(event_kind))
            .count()
    }
}
