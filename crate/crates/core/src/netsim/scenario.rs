//! Scenario files: sites, links, nodes and run parameters.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::{PowerProfile, TraceError};
use crate::node::sensor::{SensorKind, MAX_RECORD_LEN};

/// Smallest payload limit that still fits one reading in one return action.
pub const MIN_MAX_PAYLOAD: usize = 10 + MAX_RECORD_LEN;

/// 2022-07-01T00:00:00Z.
pub const DEFAULT_EPOCH_UNIX: u32 = 1_656_633_600;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("invalid scenario: {0}")]
    Json(#[from] serde_json::Error),
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid scenario: trace {}: {source}", path.display())]
    Trace { path: PathBuf, source: TraceError },
}

fn invalid(msg: String) -> ScenarioError {
    ScenarioError::Invalid(msg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkModel {
    pub loss_probability: f64,
    pub latency_ms: u64,
    #[serde(default = "default_max_payload")]
    pub max_payload: usize,
}

fn default_max_payload() -> usize {
    256
}

impl LinkModel {
    pub fn lossless() -> LinkModel {
        LinkModel {
            loss_probability: 0.0,
            latency_ms: 40,
            max_payload: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub uid: u64,
    pub transect: String,
    /// Sensor type code: 1 soil temperature, 2 soil water content, 3 weather station.
    pub sensor_type: u8,
    pub sampling_rate_s: u32,
    #[serde(default)]
    pub sensor_address: u16,
    /// Temperature trace CSV, relative to the scenario file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<String>,
    /// Time of the first sample. Defaults to a per-node phase within the
    /// first sampling interval.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_sample_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteSpec {
    pub site_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gateway_id: Option<String>,
    pub link: LinkModel,
    pub nodes: Vec<NodeSpec>,
}

impl SiteSpec {
    pub fn gateway(&self) -> String {
        self.gateway_id
            .clone()
            .unwrap_or_else(|| format!("gw-{}", self.site_id))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HangSpec {
    pub uid: u64,
    pub at_s: f64,
}

fn one() -> f64 {
    1.0
}
fn sixty() -> f64 {
    60.0
}
fn default_watchdog() -> u64 {
    120
}
fn default_epoch() -> u32 {
    DEFAULT_EPOCH_UNIX
}
fn default_capacity() -> usize {
    256
}
fn default_flush() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub duration_s: u64,
    #[serde(default = "one")]
    pub listen_interval_s: f64,
    #[serde(default = "default_epoch")]
    pub epoch_unix: u32,
    #[serde(default = "sixty")]
    pub downlink_ttl_s: f64,
    #[serde(default = "default_watchdog")]
    pub watchdog_period_s: u64,
    #[serde(default = "default_capacity")]
    pub buffer_capacity: usize,
    #[serde(default = "default_flush")]
    pub flush_batch: usize,
    #[serde(default)]
    pub power_profile: PowerProfile,
    pub sites: Vec<SiteSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub hangs: Vec<HangSpec>,
}

fn to_ms(seconds: f64) -> u64 {
    (seconds * 1000.0).round() as u64
}

impl ScenarioConfig {
    /// The bundled three-site, 58-node deployment.
    pub fn forhot() -> ScenarioConfig {
        serde_json::from_str(include_str!("../../scenarios/forhot.json"))
            .expect("bundled scenario parses")
    }

    pub fn from_json(text: &str) -> Result<ScenarioConfig, ScenarioError> {
        let s: ScenarioConfig = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<ScenarioConfig, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.into(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// A single site with one soil-temperature node; handy for experiments.
    pub fn single_node(
        seed: u64,
        duration_s: u64,
        link: LinkModel,
        sampling_rate_s: u32,
    ) -> ScenarioConfig {
        ScenarioConfig {
            seed,
            duration_s,
            listen_interval_s: 1.0,
            epoch_unix: DEFAULT_EPOCH_UNIX,
            downlink_ttl_s: 60.0,
            watchdog_period_s: 120,
            buffer_capacity: 256,
            flush_batch: 8,
            power_profile: PowerProfile::default(),
            sites: vec![SiteSpec {
                site_id: "GO".into(),
                gateway_id: None,
                link,
                nodes: vec![NodeSpec {
                    uid: 1,
                    transect: "GO-E".into(),
                    sensor_type: 1,
                    sampling_rate_s,
                    sensor_address: 0,
                    trace: None,
                    first_sample_s: None,
                }],
            }],
            hangs: Vec::new(),
        }
    }

    pub fn duration_ms(&self) -> u64 {
        self.duration_s * 1000
    }

    pub fn listen_interval_ms(&self) -> u64 {
        to_ms(self.listen_interval_s)
    }

    pub fn downlink_ttl_ms(&self) -> u64 {
        to_ms(self.downlink_ttl_s)
    }

    pub fn node_count(&self) -> usize {
        self.sites.iter().map(|s| s.nodes.len()).sum()
    }

    pub fn nodes(&self) -> impl Iterator<Item = (&SiteSpec, &NodeSpec)> {
        self.sites
            .iter()
            .flat_map(|s| s.nodes.iter().map(move |n| (s, n)))
    }

    /// Checks the rules in a fixed order and reports the first one violated.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.duration_s == 0 {
            return Err(invalid("duration_s must be positive".into()));
        }
        if !(self.listen_interval_s.is_finite() && self.listen_interval_ms() >= 1) {
            return Err(invalid(format!(
                "listen_interval_s must be at least 0.001, got {}",
                self.listen_interval_s
            )));
        }
        if !(self.downlink_ttl_s.is_finite() && self.downlink_ttl_s > 0.0) {
            return Err(invalid(format!(
                "downlink_ttl_s must be positive, got {}",
                self.downlink_ttl_s
            )));
        }
        if self.watchdog_period_s == 0 {
            return Err(invalid("watchdog_period_s must be positive".into()));
        }
        if self.buffer_capacity == 0 {
            return Err(invalid("buffer_capacity must be positive".into()));
        }
        if self.flush_batch == 0 {
            return Err(invalid("flush_batch must be positive".into()));
        }
        self.power_profile
            .validate()
            .map_err(|e| invalid(format!("power_profile: {e}")))?;
        if self.sites.is_empty() {
            return Err(invalid("at least one site is required".into()));
        }
        let mut site_ids = BTreeSet::new();
        let mut uids = BTreeSet::new();
        for site in &self.sites {
            if site.site_id.is_empty()
                || site.site_id.contains('/')
                || site.site_id.contains(['+', '#'])
            {
                return Err(invalid(format!(
                    "site_id {:?} is not a valid topic level",
                    site.site_id
                )));
            }
            if !site_ids.insert(site.site_id.as_str()) {
                return Err(invalid(format!("duplicate site_id {}", site.site_id)));
            }
            let gw = site.gateway();
            if gw.is_empty() || gw.contains('/') || gw.contains(['+', '#']) {
                return Err(invalid(format!(
                    "gateway_id {gw:?} is not a valid topic level"
                )));
            }
            let link = &site.link;
            if !(0.0..=1.0).contains(&link.loss_probability) {
                return Err(invalid(format!(
                    "site {}: loss_probability must be in [0, 1], got {}",
                    site.site_id, link.loss_probability
                )));
            }
            if link.max_payload < MIN_MAX_PAYLOAD {
                return Err(invalid(format!(
                    "site {}: max_payload must be at least {MIN_MAX_PAYLOAD}, got {}",
                    site.site_id, link.max_payload
                )));
            }
            for node in &site.nodes {
                if !uids.insert(node.uid) {
                    return Err(invalid(format!("duplicate node uid {}", node.uid)));
                }
                if SensorKind::from_code(node.sensor_type).is_none() {
                    return Err(invalid(format!(
                        "node {}: unknown sensor_type {}",
                        node.uid, node.sensor_type
                    )));
                }
                if let Some(f) = node.first_sample_s {
                    if !(f.is_finite() && f >= 0.0) {
                        return Err(invalid(format!(
                            "node {}: first_sample_s must be non-negative",
                            node.uid
                        )));
                    }
                }
            }
        }
        for hang in &self.hangs {
            if !uids.contains(&hang.uid) {
                return Err(invalid(format!(
                    "hang refers to unknown node uid {}",
                    hang.uid
                )));
            }
            if !(hang.at_s.is_finite() && hang.at_s >= 0.0) {
                return Err(invalid(format!(
                    "hang for node {}: at_s must be non-negative",
                    hang.uid
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn first_sample_ms(node: &NodeSpec) -> Option<u64> {
        node.first_sample_s.map(to_ms)
    }

    pub(crate) fn hang_ms(hang: &HangSpec) -> u64 {
        to_ms(hang.at_s)
    }
}
