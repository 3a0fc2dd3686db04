use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::alp::FileId;
use crate::backend::{
    gateway_forward, Backend, Envelope, InProcessBus, MessageBus, RemoteError, RemoteNodeHandle,
    RemoteReply, ALL_DOWN,
};
use crate::energy::read_trace_csv;
use crate::node::sensor::{Layered, SignalSource};
use crate::node::{
    Activity, DriverRegistry, Mode, Node, NodeConfig, NodeSettings, SensorKind, SyntheticSignal,
    TraceSignal, UplinkKind, WatchdogOutcome,
};

use super::event::{EventKind, EventQueue};
use super::log::{lifetime_years, LinkCounters, NodeSummary, RunLog, RunSummary};
use super::power::{meter_energy, EnergyMeter};
use super::scenario::{LinkModel, NodeSpec, ScenarioConfig, ScenarioError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("payload of {len} bytes exceeds the link limit of {max}")]
    PayloadTooLarge { len: usize, max: usize },
    #[error("no node {uid} at site {site}")]
    NoSuchNode { site: String, uid: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkOutcome {
    Delivered,
    Dropped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DownlinkTicket(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TicketState {
    Pending,
    Delivered {
        at: u64,
    },
    /// The node was not listening when its window came.
    Dropped {
        at: u64,
    },
    /// No window succeeded before the time-to-live ran out.
    Expired {
        at: u64,
    },
}

#[derive(Debug)]
struct PendingDownlink {
    ticket: u64,
    bytes: Vec<u8>,
    expires_at: u64,
}

struct SimNode {
    node: Node,
    site: usize,
    spec: NodeSpec,
    rng: ChaCha8Rng,
    meter: EnergyMeter,
    timer_at: Option<u64>,
    tx_pending: bool,
    radio_free_at: u64,
    downlinks: VecDeque<PendingDownlink>,
    window_at: Option<u64>,
    hung_since: Option<u64>,
    skipped_windows: u64,
    counters: LinkCounters,
}

struct SiteState {
    site_id: String,
    gateway_id: String,
    link: LinkModel,
}

/// Deterministic split-stack simulation: nodes, per-site links and
/// gateways, the message bus and the backend.
pub struct Simulation {
    scenario: ScenarioConfig,
    now: u64,
    queue: EventQueue,
    sites: Vec<SiteState>,
    nodes: BTreeMap<u64, SimNode>,
    bus: Arc<dyn MessageBus>,
    backend: Backend,
    tickets: BTreeMap<u64, TicketState>,
    next_ticket: u64,
    lines: Vec<String>,
    events_processed: u64,
}

impl std::fmt::Debug for Simulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Simulation")
            .field("now", &self.now)
            .field("nodes", &self.nodes.len())
            .field("queued_events", &self.queue.len())
            .finish_non_exhaustive()
    }
}

/// Independent generator per node: the scenario seed, site and uid hashed
/// together, so adding a node leaves the others' draws unchanged.
fn node_rng(seed: u64, site_id: &str, uid: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(site_id.as_bytes());
    h.update([0]);
    h.update(uid.to_le_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn load_traces(
    scenario: &ScenarioConfig,
    base_dir: Option<&Path>,
) -> Result<BTreeMap<String, Vec<crate::energy::TemperatureSample>>, ScenarioError> {
    let mut out = BTreeMap::new();
    for (_, node) in scenario.nodes() {
        let Some(rel) = &node.trace else { continue };
        if out.contains_key(rel) {
            continue;
        }
        let path: PathBuf = base_dir.map_or_else(|| PathBuf::from(rel), |d| d.join(rel));
        let file = std::fs::File::open(&path).map_err(|source| ScenarioError::Io {
            path: path.clone(),
            source,
        })?;
        let samples = read_trace_csv(std::io::BufReader::new(file)).map_err(|source| {
            ScenarioError::Trace {
                path: path.clone(),
                source,
            }
        })?;
        out.insert(rel.clone(), samples);
    }
    Ok(out)
}

/// Trace rows for the node's transect, or the whole file when it holds a
/// single transect.
fn trace_signal(
    samples: &[crate::energy::TemperatureSample],
    node: &NodeSpec,
) -> Option<TraceSignal> {
    let mut rows: Vec<_> = samples
        .iter()
        .filter(|s| s.transect == node.transect)
        .collect();
    if rows.is_empty() && samples.iter().all(|s| s.transect == samples[0].transect) {
        rows = samples.iter().collect();
    }
    if rows.is_empty() {
        return None;
    }
    Some(
        TraceSignal::new()
            .with_channel(
                "t_soil",
                rows.iter().map(|s| (s.timestamp, s.t_soil)).collect(),
            )
            .with_channel(
                "t_air",
                rows.iter().map(|s| (s.timestamp, s.t_air)).collect(),
            ),
    )
}

impl Simulation {
    /// Builds the nodes and schedules their first events. Trace paths are
    /// resolved against `base_dir` when given.
    pub fn new(
        scenario: ScenarioConfig,
        base_dir: Option<&Path>,
    ) -> Result<Simulation, ScenarioError> {
        Self::with_bus(scenario, base_dir, Arc::new(InProcessBus::new()))
    }

    pub fn with_bus(
        scenario: ScenarioConfig,
        base_dir: Option<&Path>,
        bus: Arc<dyn MessageBus>,
    ) -> Result<Simulation, ScenarioError> {
        scenario.validate()?;
        let traces = load_traces(&scenario, base_dir)?;
        let mut backend = Backend::new(bus.clone());
        let mut sites = Vec::new();
        let mut nodes = BTreeMap::new();
        for (si, site) in scenario.sites.iter().enumerate() {
            let gateway_id = site.gateway();
            for spec in &site.nodes {
                let fallback: Arc<dyn SignalSource> =
                    Arc::new(SyntheticSignal::for_transect(&spec.transect));
                let source: Arc<dyn SignalSource> = match &spec.trace {
                    Some(rel) => {
                        let signal = trace_signal(&traces[rel], spec).ok_or_else(|| {
                            ScenarioError::Invalid(format!(
                                "node {}: trace {rel} has no samples for transect {}",
                                spec.uid, spec.transect
                            ))
                        })?;
                        Arc::new(Layered {
                            primary: Arc::new(signal),
                            fallback,
                        })
                    }
                    None => fallback,
                };
                let config = NodeConfig {
                    sensor_type: spec.sensor_type,
                    sensor_address: spec.sensor_address,
                    sensor_action: 0,
                    sampling_rate: spec.sampling_rate_s,
                    rtc_time: scenario.epoch_unix,
                };
                let settings = NodeSettings {
                    buffer_capacity: scenario.buffer_capacity,
                    flush_batch: scenario.flush_batch,
                    max_payload: site.link.max_payload,
                    watchdog_period_ms: scenario.watchdog_period_s * 1000,
                };
                let node = Node::new(spec.uid, config, DriverRegistry::standard(source), settings)
                    .map_err(|e| ScenarioError::Invalid(format!("node {}: {e}", spec.uid)))?;
                backend.register_node(RemoteNodeHandle {
                    node_uid: spec.uid,
                    site_id: site.site_id.clone(),
                    gateway_id: gateway_id.clone(),
                    transect: spec.transect.clone(),
                });
                nodes.insert(
                    spec.uid,
                    SimNode {
                        node,
                        site: si,
                        spec: spec.clone(),
                        rng: node_rng(scenario.seed, &site.site_id, spec.uid),
                        meter: EnergyMeter::default(),
                        timer_at: None,
                        tx_pending: false,
                        radio_free_at: 0,
                        downlinks: VecDeque::new(),
                        window_at: None,
                        hung_since: None,
                        skipped_windows: 0,
                        counters: LinkCounters::default(),
                    },
                );
            }
            sites.push(SiteState {
                site_id: site.site_id.clone(),
                gateway_id,
                link: site.link,
            });
        }

        let mut sim = Simulation {
            scenario,
            now: 0,
            queue: EventQueue::default(),
            sites,
            nodes,
            bus,
            backend,
            tickets: BTreeMap::new(),
            next_ticket: 1,
            lines: Vec::new(),
            events_processed: 0,
        };
        let watchdog_ms = sim.scenario.watchdog_period_s * 1000;
        let uids: Vec<u64> = sim.nodes.keys().copied().collect();
        for uid in uids {
            let n = sim.nodes.get_mut(&uid).unwrap();
            let first = ScenarioConfig::first_sample_ms(&n.spec).unwrap_or_else(|| {
                match n.spec.sampling_rate_s {
                    0 => 0,
                    rate => splitmix64(uid) % (rate as u64 * 1000),
                }
            });
            n.node.start(0, first);
            sim.queue
                .push(watchdog_ms, EventKind::WatchdogCheck { uid });
            sim.sync(uid);
        }
        for hang in sim.scenario.hangs.clone() {
            sim.queue.push(
                ScenarioConfig::hang_ms(&hang),
                EventKind::HangInjection { uid: hang.uid },
            );
        }
        Ok(sim)
    }

    pub fn scenario(&self) -> &ScenarioConfig {
        &self.scenario
    }

    /// Virtual time of the last processed event, ms.
    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn duration_ms(&self) -> u64 {
        self.scenario.duration_ms()
    }

    pub fn node(&self, uid: u64) -> Option<&Node> {
        self.nodes.get(&uid).map(|n| &n.node)
    }

    pub fn counters(&self, uid: u64) -> Option<LinkCounters> {
        self.nodes.get(&uid).map(|n| n.counters)
    }

    pub fn meter(&self, uid: u64) -> Option<EnergyMeter> {
        self.nodes.get(&uid).map(|n| n.meter)
    }

    pub fn node_uids(&self) -> impl Iterator<Item = u64> + '_ {
        self.nodes.keys().copied()
    }

    pub fn backend(&self) -> &Backend {
        &self.backend
    }

    pub fn backend_mut(&mut self) -> &mut Backend {
        &mut self.backend
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn ticket_state(&self, ticket: DownlinkTicket) -> Option<TicketState> {
        self.tickets.get(&ticket.0).copied()
    }

    /// Epoch-relative Unix time at virtual time `ms`.
    pub fn unix_at(&self, ms: u64) -> i64 {
        self.scenario.epoch_unix as i64 + (ms / 1000) as i64
    }

    fn log(&mut self, kind: &str, uid: u64, detail: std::fmt::Arguments) {
        let mut line = String::with_capacity(64);
        let _ = write!(line, "{},{},{},{}", self.now, kind, uid, detail);
        self.lines.push(line);
    }

    /// One loss draw for a packet from `uid`; a delivered packet reaches the
    /// gateway after the link latency.
    pub fn deliver_uplink(&mut self, uid: u64, payload: &[u8]) -> Result<LinkOutcome, SimError> {
        let n = self
            .nodes
            .get_mut(&uid)
            .ok_or_else(|| SimError::NoSuchNode {
                site: "*".into(),
                uid,
            })?;
        let link = self.sites[n.site].link;
        if payload.len() > link.max_payload {
            return Err(SimError::PayloadTooLarge {
                len: payload.len(),
                max: link.max_payload,
            });
        }
        n.counters.uplinks_attempted += 1;
        let lost = n.rng.gen::<f64>() < link.loss_probability;
        if lost {
            n.counters.uplinks_dropped += 1;
            Ok(LinkOutcome::Dropped)
        } else {
            n.counters.uplinks_delivered += 1;
            self.queue.push(
                self.now + link.latency_ms,
                EventKind::UplinkArrival {
                    uid,
                    payload: payload.to_vec(),
                },
            );
            Ok(LinkOutcome::Delivered)
        }
    }

    /// Holds `bytes` at the site's gateway until the node's next listen window.
    pub fn queue_downlink(
        &mut self,
        site_id: &str,
        uid: u64,
        bytes: Vec<u8>,
    ) -> Result<DownlinkTicket, SimError> {
        let at_site = self
            .nodes
            .get(&uid)
            .is_some_and(|n| self.sites[n.site].site_id == site_id);
        if !at_site {
            return Err(SimError::NoSuchNode {
                site: site_id.to_string(),
                uid,
            });
        }
        let ticket = self.next_ticket;
        self.next_ticket += 1;
        self.tickets.insert(ticket, TicketState::Pending);
        self.queue
            .push(self.now, EventKind::DownlinkQueue { uid, ticket, bytes });
        Ok(DownlinkTicket(ticket))
    }

    /// Schedules a firmware hang at the current time.
    pub fn inject_hang(&mut self, uid: u64) -> Result<(), SimError> {
        if !self.nodes.contains_key(&uid) {
            return Err(SimError::NoSuchNode {
                site: "*".into(),
                uid,
            });
        }
        self.queue.push(self.now, EventKind::HangInjection { uid });
        Ok(())
    }

    /// Processes the next event if it falls before the end of the run.
    pub fn step(&mut self) -> bool {
        match self.queue.peek_at() {
            Some(at) if at < self.duration_ms() => {}
            _ => return false,
        }
        let ev = self.queue.pop().expect("peeked");
        debug_assert!(ev.at >= self.now);
        self.now = ev.at;
        self.events_processed += 1;
        self.process(ev.kind);
        self.pump();
        true
    }

    /// Processes every event before `t_ms` (capped at the run duration).
    pub fn run_until(&mut self, t_ms: u64) {
        while self.queue.peek_at().is_some_and(|at| at < t_ms) && self.step() {}
    }

    pub fn run(mut self) -> RunLog {
        while self.step() {}
        self.finish()
    }

    /// Like [`run`](Self::run), also returning the backend's sink records.
    pub fn run_with_sink(mut self) -> (RunLog, Vec<crate::backend::TimeSeriesRecord>) {
        while self.step() {}
        self.finish_with_sink()
    }

    fn pump(&mut self) {
        self.backend.pump();
        for msg in self.bus.drain(ALL_DOWN) {
            let uid = msg.envelope.node_uid;
            match self.queue_downlink(&msg.envelope.site_id.clone(), uid, msg.payload) {
                Ok(_) => {}
                Err(e) => self.log("downlink_rejected", uid, format_args!("{e}")),
            }
        }
    }

    fn remote_wait(&mut self, key: crate::backend::RequestKey) -> Result<RemoteReply, RemoteError> {
        loop {
            if let Some(r) = self.backend.poll(key, self.now) {
                return r;
            }
            if !self.step() {
                return self
                    .backend
                    .poll(key, u64::MAX)
                    .unwrap_or(Err(RemoteError::Timeout));
            }
        }
    }

    /// Reads a file on a node through the backend, advancing the simulation
    /// until the reply arrives or `timeout_ms` passes.
    pub fn remote_read_file(
        &mut self,
        uid: u64,
        file_id: FileId,
        offset: u32,
        length: u32,
        timeout_ms: u64,
    ) -> Result<Vec<u8>, RemoteError> {
        let key = self
            .backend
            .remote_read_file(uid, file_id, offset, length, self.now, timeout_ms)?;
        self.pump();
        match self.remote_wait(key)? {
            RemoteReply::Data(d) => Ok(d),
            RemoteReply::Ack => unreachable!("reads resolve with data"),
        }
    }

    pub fn remote_write_file(
        &mut self,
        uid: u64,
        file_id: FileId,
        offset: u32,
        data: &[u8],
        timeout_ms: u64,
    ) -> Result<(), RemoteError> {
        let key = self
            .backend
            .remote_write_file(uid, file_id, offset, data, self.now, timeout_ms)?;
        self.pump();
        self.remote_wait(key).map(|_| ())
    }

    fn listen_boundary_after(&self, t: u64) -> u64 {
        let l = self.scenario.listen_interval_ms();
        (t / l + 1) * l
    }

    /// Listen windows at `k * interval`, `k >= 1`, strictly before `t`.
    fn windows_before(&self, t: u64) -> u64 {
        let l = self.scenario.listen_interval_ms();
        if t == 0 {
            0
        } else {
            (t - 1) / l
        }
    }

    fn sync(&mut self, uid: u64) {
        let now = self.now;
        let profile = self.scenario.power_profile;
        let n = self.nodes.get_mut(&uid).expect("known node");
        for a in n.node.take_activity() {
            match a {
                Activity::Sampled(kind) => n
                    .meter
                    .add(Mode::Sampling, profile.sample_duration_ms(kind)),
            }
        }
        let notes = n.node.take_notes();
        let mut push_timer = None;
        if !n.node.is_hung() {
            if let Some(t) = n.node.next_sample_at() {
                if t >= now && n.timer_at != Some(t) {
                    n.timer_at = Some(t);
                    push_timer = Some(t);
                }
            }
        }
        let mut push_tx = None;
        if n.node.has_pending_uplink() && !n.tx_pending {
            n.tx_pending = true;
            push_tx = Some(now.max(n.radio_free_at));
        }
        for note in notes {
            self.log(note.kind, uid, format_args!("{}", note.detail));
        }
        if let Some(t) = push_timer {
            self.queue.push(t, EventKind::SampleTimer { uid });
        }
        if let Some(t) = push_tx {
            self.queue.push(t, EventKind::UplinkTx { uid });
        }
        self.schedule_window(uid);
    }

    fn schedule_window(&mut self, uid: u64) {
        let boundary = self.listen_boundary_after(self.now);
        let n = self.nodes.get_mut(&uid).expect("known node");
        if n.window_at.is_some() {
            return;
        }
        let Some(front) = n.downlinks.front() else {
            return;
        };
        let at = boundary.min(front.expires_at);
        n.window_at = Some(at);
        self.queue.push(at, EventKind::ListenWindow { uid });
    }

    fn resolve_ticket(&mut self, ticket: u64, state: TicketState) {
        self.tickets.insert(ticket, state);
    }

    fn process(&mut self, kind: EventKind) {
        let now = self.now;
        match kind {
            EventKind::SampleTimer { uid } => {
                let n = self.nodes.get_mut(&uid).expect("known node");
                if n.timer_at == Some(now) {
                    n.timer_at = None;
                }
                if n.node.on_sample_timer(now) {
                    let next = n.node.next_sample_at().unwrap_or(0);
                    let ms = n.node.binding().map_or(0, |b| {
                        self.scenario.power_profile.sample_duration_ms(b.kind)
                    });
                    let q = meter_energy(&self.scenario.power_profile, Mode::Sampling, ms) * 1e6;
                    self.log(
                        "sample_timer",
                        uid,
                        format_args!("next_ms={next} charge_uc={q:.1}"),
                    );
                }
                self.sync(uid);
            }
            EventKind::UplinkTx { uid } => {
                let tx_ms = self.scenario.power_profile.tx_duration_ms;
                let n = self.nodes.get_mut(&uid).expect("known node");
                n.tx_pending = false;
                let Some(uplink) = n.node.pop_uplink() else {
                    self.sync(uid);
                    return;
                };
                n.meter.add(Mode::Transmitting, tx_ms);
                n.radio_free_at = now + tx_ms;
                if uplink.kind == UplinkKind::Reading {
                    n.counters.reading_uplinks += 1;
                }
                let outcome = match self.deliver_uplink(uid, &uplink.bytes) {
                    Ok(o) => o,
                    Err(e) => {
                        // The node sizes its packets to the link; count as a drop.
                        let n = self.nodes.get_mut(&uid).expect("known node");
                        n.counters.uplinks_attempted += 1;
                        n.counters.uplinks_dropped += 1;
                        self.log("uplink_rejected", uid, format_args!("{e}"));
                        LinkOutcome::Dropped
                    }
                };
                let kind = match uplink.kind {
                    UplinkKind::Reading => "reading",
                    UplinkKind::Flush => "flush",
                    UplinkKind::Response => "response",
                };
                let result = if outcome == LinkOutcome::Delivered {
                    "delivered"
                } else {
                    "dropped"
                };
                let (bytes, records) = (uplink.bytes.len(), uplink.records.len());
                let q = meter_energy(&self.scenario.power_profile, Mode::Transmitting, tx_ms) * 1e6;
                self.log(
                    "uplink_tx",
                    uid,
                    format_args!("kind={kind} bytes={bytes} records={records} result={result} charge_uc={q:.1}"),
                );
                let n = self.nodes.get_mut(&uid).expect("known node");
                n.node
                    .on_uplink_result(uplink, outcome == LinkOutcome::Delivered);
                self.sync(uid);
            }
            EventKind::UplinkArrival { uid, payload } => {
                let site = &self.sites[self.nodes[&uid].site];
                let envelope = Envelope {
                    node_uid: uid,
                    gateway_id: site.gateway_id.clone(),
                    site_id: site.site_id.clone(),
                    rx_timestamp_ms: now,
                };
                let gw = site.gateway_id.clone();
                self.bus.publish(gateway_forward(&payload, envelope));
                self.log(
                    "gateway_rx",
                    uid,
                    format_args!("gateway={gw} bytes={}", payload.len()),
                );
            }
            EventKind::DownlinkQueue { uid, ticket, bytes } => {
                let expires_at = now + self.scenario.downlink_ttl_ms();
                let n = self.nodes.get_mut(&uid).expect("known node");
                n.counters.downlinks_queued += 1;
                let len = bytes.len();
                n.downlinks.push_back(PendingDownlink {
                    ticket,
                    bytes,
                    expires_at,
                });
                self.log(
                    "downlink_queued",
                    uid,
                    format_args!("ticket={ticket} bytes={len} expires_ms={expires_at}"),
                );
                self.schedule_window(uid);
            }
            EventKind::ListenWindow { uid } => self.listen_window(uid),
            EventKind::WatchdogCheck { uid } => {
                let n = self.nodes.get_mut(&uid).expect("known node");
                let outcome = n.node.watchdog_step(now);
                if outcome == WatchdogOutcome::Reset {
                    let since = n.hung_since.take().unwrap_or(now);
                    let skipped = self.windows_before(now) - self.windows_before(since);
                    let n = self.nodes.get_mut(&uid).expect("known node");
                    n.skipped_windows += skipped;
                    n.timer_at = None;
                    self.log(
                        "watchdog_reset",
                        uid,
                        format_args!("hung_ms={}", now - since),
                    );
                    self.queue.push(now, EventKind::ResetDone { uid });
                }
                let period = self.scenario.watchdog_period_s * 1000;
                self.queue
                    .push(now + period, EventKind::WatchdogCheck { uid });
            }
            EventKind::HangInjection { uid } => {
                let n = self.nodes.get_mut(&uid).expect("known node");
                if n.node.is_hung() {
                    return;
                }
                n.node.inject_hang();
                n.hung_since = Some(now);
                self.log("hang", uid, format_args!("injected"));
            }
            EventKind::ResetDone { uid } => {
                let buffered = self.nodes[&uid].node.buffer().len();
                self.log("reset_done", uid, format_args!("buffered={buffered}"));
                self.sync(uid);
            }
        }
    }

    fn listen_window(&mut self, uid: u64) {
        let now = self.now;
        let profile = self.scenario.power_profile;
        let n = self.nodes.get_mut(&uid).expect("known node");
        n.window_at = None;
        let Some(front) = n.downlinks.front() else {
            return;
        };
        let ticket = front.ticket;
        if now >= front.expires_at {
            n.downlinks.pop_front();
            n.counters.downlinks_expired += 1;
            self.resolve_ticket(ticket, TicketState::Expired { at: now });
            self.log("downlink_expired", uid, format_args!("ticket={ticket}"));
        } else if n.node.is_hung() {
            n.downlinks.pop_front();
            n.counters.downlinks_dropped += 1;
            self.resolve_ticket(ticket, TicketState::Dropped { at: now });
            self.log(
                "downlink_dropped",
                uid,
                format_args!("ticket={ticket} reason=not_listening"),
            );
        } else {
            let loss = self.sites[n.site].link.loss_probability;
            if n.rng.gen::<f64>() < loss {
                n.counters.downlink_misses += 1;
                self.log("downlink_miss", uid, format_args!("ticket={ticket}"));
            } else {
                let d = n.downlinks.pop_front().expect("front exists");
                n.counters.downlinks_delivered += 1;
                n.meter.add(Mode::Listening, profile.rx_duration_ms);
                n.node.handle_downlink(now, &d.bytes);
                self.resolve_ticket(ticket, TicketState::Delivered { at: now });
                self.log(
                    "downlink_delivered",
                    uid,
                    format_args!("ticket={ticket} bytes={}", d.bytes.len()),
                );
                self.sync(uid);
            }
        }
        self.schedule_window(uid);
    }

    /// Ends the run: in-flight packets reach their gateway, downlinks still
    /// held expire, outboxes move to flash and the energy ledger closes.
    pub fn finish(mut self) -> RunLog {
        self.close()
    }

    fn close(&mut self) -> RunLog {
        let end = self.duration_ms();
        for ev in self.queue.drain_sorted() {
            if let EventKind::UplinkArrival { .. } = ev.kind {
                self.now = ev.at;
                self.events_processed += 1;
                self.process(ev.kind);
            }
        }
        self.backend.pump();
        self.now = self.now.max(end);
        let profile = self.scenario.power_profile;
        let total_windows = self.windows_before(end);
        let uids: Vec<u64> = self.nodes.keys().copied().collect();
        for uid in &uids {
            let pending: Vec<u64> = {
                let n = self.nodes.get_mut(uid).unwrap();
                n.downlinks.drain(..).map(|d| d.ticket).collect()
            };
            for ticket in pending {
                self.nodes.get_mut(uid).unwrap().counters.downlinks_expired += 1;
                self.resolve_ticket(ticket, TicketState::Expired { at: end });
                self.log(
                    "downlink_expired",
                    *uid,
                    format_args!("ticket={ticket} reason=run_end"),
                );
            }
            let hung_skip = self.nodes[uid]
                .hung_since
                .map_or(0, |s| total_windows - self.windows_before(s));
            let n = self.nodes.get_mut(uid).unwrap();
            n.node.finalize();
            let windows = total_windows - n.skipped_windows - hung_skip;
            n.meter
                .add(Mode::Listening, windows * profile.listen_duration_ms);
            n.meter.close(end);
        }
        let mut summaries = Vec::new();
        for uid in uids {
            let n = &self.nodes[&uid];
            let stats = n.node.stats();
            let charge_c = n.meter.total_charge_c(&profile);
            let mean_current_a = charge_c / (end as f64 / 1000.0);
            summaries.push(NodeSummary {
                uid,
                site: self.sites[n.site].site_id.clone(),
                transect: n.spec.transect.clone(),
                sensor: SensorKind::from_code(n.spec.sensor_type)
                    .map_or("unknown".into(), |k| k.to_string()),
                readings_produced: stats.readings_produced,
                readings_delivered: stats.readings_delivered,
                readings_buffered: n.node.buffer().len() as u64,
                readings_overwritten: n.node.buffer().overwritten(),
                resets: stats.resets,
                link: n.counters,
                mode_ms: n.meter.all_ms(),
                charge_c,
                mean_current_ua: mean_current_a * 1e6,
                lifetime_years: lifetime_years(&profile, mean_current_a),
            });
        }
        let summary = RunSummary {
            seed: self.scenario.seed,
            duration_ms: end,
            events_processed: self.events_processed,
            sink_records: self.backend.records().len(),
            quarantined: self.backend.quarantine().len(),
            nodes: summaries,
        };
        RunLog {
            lines: std::mem::take(&mut self.lines),
            summary,
        }
    }

    /// Finishes the run and also returns the backend's sink records.
    pub fn finish_with_sink(mut self) -> (RunLog, Vec<crate::backend::TimeSeriesRecord>) {
        let log = self.close();
        let records = self.backend.records().to_vec();
        (log, records)
    }
}
