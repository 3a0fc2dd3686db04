//! The simulated sensor node.
//!
//! A node owns a [`FileStore`] with three files: a read-only uid file, the
//! volatile sensor-data file and the persistent configuration file. File
//! hooks tie the pieces together: writing the data file queues an uplink,
//! reading it triggers a fresh sample, and writing the configuration
//! reloads the sensor interface manager.
//!
//! The node never sees wall-clock time. Every entry point takes the current
//! virtual time in milliseconds from the simulator that drives it.

pub mod buffer;
pub mod config;
pub mod sensor;

use std::collections::VecDeque;

use thiserror::Error;

use crate::alp::{
    decode_command, encode_command, ActionHook, AlpAction, AlpCommand, FileError, FileHeader,
    FileId, FileStore, Permissions, StatusCode, Storage, Trigger,
};

pub use buffer::FlashBuffer;
pub use config::{NodeConfig, WrongLength, ACTION_MEASURE_NOW, NODE_CONFIG_FILE_SIZE};
pub use sensor::{
    DriverRegistry, SensorDriver, SensorKind, SensorReading, SignalSource, SyntheticSignal,
    TraceSignal, VirtualDriver,
};

use config::{covers, OFFSET_RTC_TIME, OFFSET_SENSOR_ACTION};
use sensor::MAX_RECORD_LEN;

pub const HOOK_TRANSMIT: &str = "transmit-reading";
pub const HOOK_SAMPLE: &str = "sample-now";
pub const HOOK_RELOAD: &str = "reload-interface";

/// Encoded size of a return action's fixed header.
const ACTION_OVERHEAD: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeSettings {
    pub buffer_capacity: usize,
    pub flush_batch: usize,
    pub max_payload: usize,
    pub watchdog_period_ms: u64,
}

impl Default for NodeSettings {
    fn default() -> Self {
        NodeSettings {
            buffer_capacity: 256,
            flush_batch: 8,
            max_payload: 256,
            watchdog_period_ms: 120_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    Sleep,
    Sampling,
    Transmitting,
    Listening,
}

impl Mode {
    pub const ALL: [Mode; 4] = [
        Mode::Sleep,
        Mode::Sampling,
        Mode::Transmitting,
        Mode::Listening,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Sleep => "sleep",
            Mode::Sampling => "sampling",
            Mode::Transmitting => "transmit",
            Mode::Listening => "listen",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeState {
    pub mode: Mode,
    pub next_sample_at: Option<u64>,
    pub watchdog_deadline: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Binding {
    pub kind: SensorKind,
    pub address: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UplinkKind {
    /// A freshly sampled reading.
    Reading,
    /// Buffered readings re-sent after a successful uplink.
    Flush,
    /// Acknowledgments, file returns and error reports.
    Response,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Uplink {
    pub kind: UplinkKind,
    pub bytes: Vec<u8>,
    /// Serialized readings carried by this packet (empty for responses).
    pub records: Vec<Vec<u8>>,
}

impl Uplink {
    fn response(actions: Vec<AlpAction>) -> Uplink {
        Uplink {
            kind: UplinkKind::Response,
            bytes: encode_command(&AlpCommand::new(actions)),
            records: Vec::new(),
        }
    }

    fn readings(kind: UplinkKind, records: Vec<Vec<u8>>) -> Uplink {
        let actions = records
            .iter()
            .map(|r| AlpAction::ReturnFileData {
                file_id: FileId::SENSOR_DATA,
                offset: 0,
                data: r.clone(),
            })
            .collect();
        Uplink {
            kind,
            bytes: encode_command(&AlpCommand::new(actions)),
            records,
        }
    }
}

/// Work the node did that the simulator must meter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activity {
    Sampled(SensorKind),
}

/// Human-readable node-side event for the run log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Note {
    pub kind: &'static str,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WatchdogOutcome {
    /// Node was responsive; deadline re-armed.
    Healthy,
    /// Node is hung but the deadline has not passed yet.
    Waiting,
    Reset,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NodeError {
    #[error("no driver registered for sensor type 0x{0:02X}")]
    UnknownSensorType(u8),
    #[error("no sensor driver bound")]
    NoDriverBound,
    #[error("{0} driver returned no data")]
    DriverFault(SensorKind),
    #[error(transparent)]
    File(#[from] FileError),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NodeStats {
    pub readings_produced: u64,
    pub readings_delivered: u64,
    pub driver_faults: u64,
    pub status_uplinks: u64,
    pub responses_lost: u64,
    pub downlinks_received: u64,
    pub resets: u64,
}

pub struct Node {
    uid: u64,
    settings: NodeSettings,
    store: FileStore,
    drivers: DriverRegistry,
    binding: Option<Binding>,
    state: NodeState,
    rtc_base: u32,
    rtc_set_at_ms: u64,
    hung: bool,
    buffer: FlashBuffer,
    outbox: VecDeque<Uplink>,
    pending_reading: Option<Vec<u8>>,
    activity: Vec<Activity>,
    notes: Vec<Note>,
    stats: NodeStats,
}

impl std::fmt::Debug for Node {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Node")
            .field("uid", &self.uid)
            .field("binding", &self.binding)
            .field("state", &self.state)
            .field("hung", &self.hung)
            .finish_non_exhaustive()
    }
}

impl Node {
    /// Provisions the file system with `config` and binds the configured driver.
    pub fn new(
        uid: u64,
        config: NodeConfig,
        drivers: DriverRegistry,
        settings: NodeSettings,
    ) -> Result<Node, NodeError> {
        let mut store = FileStore::new();
        let files = [
            (FileId::UID, 8, Permissions::READ_ONLY, Storage::Persistent),
            (
                FileId::SENSOR_DATA,
                MAX_RECORD_LEN as u32,
                Permissions::READ_WRITE,
                Storage::Volatile,
            ),
            (
                FileId::NODE_CONFIG,
                NODE_CONFIG_FILE_SIZE as u32,
                Permissions::READ_WRITE,
                Storage::Persistent,
            ),
        ];
        for (id, length, permissions, storage) in files {
            store.create(FileHeader {
                id,
                length,
                permissions,
                storage,
            })?;
        }
        store.provision(FileId::UID, 0, &uid.to_le_bytes())?;
        store.provision(FileId::NODE_CONFIG, 0, &config.to_bytes())?;
        for (file_id, trigger, action) in [
            (FileId::SENSOR_DATA, Trigger::OnWrite, HOOK_TRANSMIT),
            (FileId::SENSOR_DATA, Trigger::OnRead, HOOK_SAMPLE),
            (FileId::NODE_CONFIG, Trigger::OnWrite, HOOK_RELOAD),
        ] {
            store.register_hook(ActionHook {
                file_id,
                trigger,
                action: action.into(),
            })?;
        }
        if !drivers.contains(config.sensor_type) {
            return Err(NodeError::UnknownSensorType(config.sensor_type));
        }

        let mut node = Node {
            uid,
            settings,
            store,
            drivers,
            binding: None,
            state: NodeState {
                mode: Mode::Sleep,
                next_sample_at: None,
                watchdog_deadline: settings.watchdog_period_ms,
            },
            rtc_base: config.rtc_time,
            rtc_set_at_ms: 0,
            hung: false,
            buffer: FlashBuffer::new(settings.buffer_capacity),
            outbox: VecDeque::new(),
            pending_reading: None,
            activity: Vec::new(),
            notes: Vec::new(),
            stats: NodeStats::default(),
        };
        node.sim_reload(0)?;
        node.notes.clear();
        Ok(node)
    }

    pub fn uid(&self) -> u64 {
        self.uid
    }

    pub fn settings(&self) -> &NodeSettings {
        &self.settings
    }

    pub fn config(&self) -> NodeConfig {
        NodeConfig::parse(
            self.store
                .content(FileId::NODE_CONFIG)
                .expect("config file exists"),
        )
        .expect("config file is 12 bytes")
    }

    pub fn store(&self) -> &FileStore {
        &self.store
    }

    pub fn binding(&self) -> Option<Binding> {
        self.binding
    }

    pub fn state(&self) -> &NodeState {
        &self.state
    }

    pub fn stats(&self) -> &NodeStats {
        &self.stats
    }

    pub fn buffer(&self) -> &FlashBuffer {
        &self.buffer
    }

    pub fn is_hung(&self) -> bool {
        self.hung
    }

    /// Whether the radio is listening for downlinks.
    pub fn is_listening(&self) -> bool {
        !self.hung
    }

    pub fn next_sample_at(&self) -> Option<u64> {
        self.state.next_sample_at
    }

    pub fn sampling_interval_ms(&self) -> Option<u64> {
        match self.config().sampling_rate {
            0 => None,
            s => Some(s as u64 * 1000),
        }
    }

    /// Node RTC in Unix seconds at virtual time `now_ms`.
    pub fn rtc_unix(&self, now_ms: u64) -> i64 {
        self.rtc_base as i64 + (now_ms.saturating_sub(self.rtc_set_at_ms) / 1000) as i64
    }

    /// Readings sitting in the outbox waiting for the radio.
    pub fn readings_in_outbox(&self) -> u64 {
        self.outbox.iter().map(|u| u.records.len() as u64).sum()
    }

    pub fn has_pending_uplink(&self) -> bool {
        !self.hung && !self.outbox.is_empty()
    }

    pub fn outbox(&self) -> impl Iterator<Item = &Uplink> {
        self.outbox.iter()
    }

    pub fn take_activity(&mut self) -> Vec<Activity> {
        std::mem::take(&mut self.activity)
    }

    pub fn take_notes(&mut self) -> Vec<Note> {
        std::mem::take(&mut self.notes)
    }

    fn note(&mut self, kind: &'static str, detail: String) {
        self.notes.push(Note { kind, detail });
    }

    fn kick(&mut self, now: u64) {
        if !self.hung {
            self.state.watchdog_deadline = now + self.settings.watchdog_period_ms;
        }
    }

    /// Arms the periodic sampling timer and the watchdog.
    pub fn start(&mut self, now: u64, first_sample_at: u64) {
        self.state.next_sample_at = self.sampling_interval_ms().map(|_| first_sample_at);
        self.kick(now);
    }

    fn push_status(&mut self, file_id: FileId, offset: u32, length: u32, code: StatusCode) {
        self.stats.status_uplinks += 1;
        self.outbox
            .push_back(Uplink::response(vec![AlpAction::Status {
                file_id,
                offset,
                length,
                code,
            }]));
    }

    fn dispatch_hooks(&mut self, now: u64) {
        loop {
            let fired = self.store.drain_fired();
            if fired.is_empty() {
                break;
            }
            for hook in fired {
                match hook.action.as_str() {
                    HOOK_TRANSMIT => self.transmit_data_file(),
                    HOOK_SAMPLE => {
                        let _ = self.sample_and_store(now);
                    }
                    HOOK_RELOAD => {
                        let _ = self.sim_reload(now);
                    }
                    _ => {}
                }
            }
        }
    }

    fn transmit_data_file(&mut self) {
        match self.pending_reading.take() {
            Some(record) => self
                .outbox
                .push_back(Uplink::readings(UplinkKind::Reading, vec![record])),
            None => {
                let data = self
                    .store
                    .content(FileId::SENSOR_DATA)
                    .unwrap_or_default()
                    .to_vec();
                self.outbox
                    .push_back(Uplink::response(vec![AlpAction::ReturnFileData {
                        file_id: FileId::SENSOR_DATA,
                        offset: 0,
                        data,
                    }]));
            }
        }
    }

    /// Sensor interface manager reload: binds the driver registered for the
    /// configured sensor type. On failure the previous binding stays and an
    /// error status is queued for uplink.
    pub fn sim_reload(&mut self, _now: u64) -> Result<(), NodeError> {
        let cfg = self.config();
        let Some(driver) = self.drivers.get_mut(cfg.sensor_type) else {
            self.push_status(FileId::NODE_CONFIG, 0, 1, StatusCode::UNKNOWN_SENSOR_TYPE);
            self.note(
                "reload_failed",
                format!("sensor_type=0x{:02X}", cfg.sensor_type),
            );
            return Err(NodeError::UnknownSensorType(cfg.sensor_type));
        };
        let binding = Binding {
            kind: driver.kind(),
            address: cfg.sensor_address,
        };
        self.binding = Some(binding);
        self.note(
            "reload",
            format!("driver={} address={}", binding.kind, binding.address),
        );
        Ok(())
    }

    /// Samples the bound driver and writes the record to the data file, which
    /// queues it for uplink through the data-file write hook.
    ///
    /// Does not touch the periodic schedule; the sampling timer does that.
    pub fn sample_and_store(&mut self, now: u64) -> Result<SensorReading, NodeError> {
        let binding = self.binding.ok_or(NodeError::NoDriverBound)?;
        self.state.mode = Mode::Sampling;
        self.activity.push(Activity::Sampled(binding.kind));
        let t = self.rtc_unix(now);
        let driver = self
            .drivers
            .get_mut(binding.kind.code())
            .expect("bound driver is registered");
        let values = driver.measure(binding.address, t);
        let channels = driver.channels();
        if values.is_empty() || values.len() != channels.len() {
            self.state.mode = Mode::Sleep;
            self.stats.driver_faults += 1;
            self.push_status(FileId::SENSOR_DATA, 0, 0, StatusCode::DRIVER_FAULT);
            self.note("driver_fault", format!("driver={}", binding.kind));
            return Err(NodeError::DriverFault(binding.kind));
        }
        let reading = SensorReading {
            timestamp: t as u32,
            node_uid: self.uid,
            kind: binding.kind,
            channels: channels.iter().map(|c| c.name).zip(values).collect(),
        };
        let record = reading.encode();
        let mut image = record.clone();
        image.resize(MAX_RECORD_LEN, 0);
        self.stats.readings_produced += 1;
        self.pending_reading = Some(record);
        self.store.file_write(FileId::SENSOR_DATA, 0, &image)?;
        self.dispatch_hooks(now);
        self.state.mode = Mode::Sleep;
        Ok(reading)
    }

    /// Periodic sampling timer. Returns false for stale timers and while hung.
    pub fn on_sample_timer(&mut self, now: u64) -> bool {
        if self.hung || self.state.next_sample_at != Some(now) {
            return false;
        }
        self.kick(now);
        self.state.next_sample_at = self.sampling_interval_ms().map(|iv| now + iv);
        let _ = self.sample_and_store(now);
        true
    }

    /// Applies a write to the configuration file and reacts to the fields it
    /// touched: RTC set, sampling reschedule, interface reload, sensor action.
    pub fn apply_config_write(
        &mut self,
        now: u64,
        offset: u32,
        payload: &[u8],
    ) -> Result<(), NodeError> {
        let before = self.config();
        self.store
            .file_write(FileId::NODE_CONFIG, offset, payload)?;
        let after = self.config();
        if (OFFSET_RTC_TIME..NODE_CONFIG_FILE_SIZE).any(|b| covers(offset, payload.len(), b)) {
            self.rtc_base = after.rtc_time;
            self.rtc_set_at_ms = now;
            self.note("rtc_set", format!("unix={}", after.rtc_time));
        }
        if after.sampling_rate != before.sampling_rate {
            self.state.next_sample_at = self.sampling_interval_ms().map(|iv| now + iv);
            self.note(
                "rate_changed",
                format!("sampling_rate_s={}", after.sampling_rate),
            );
        }
        self.dispatch_hooks(now);
        if covers(offset, payload.len(), OFFSET_SENSOR_ACTION) {
            self.handle_sensor_action(now, after.sensor_action);
        }
        Ok(())
    }

    pub fn handle_sensor_action(&mut self, now: u64, code: u8) {
        match code {
            config::ACTION_NONE => {}
            ACTION_MEASURE_NOW => {
                self.note("sensor_action", "measure-now".into());
                let _ = self.sample_and_store(now);
            }
            other => {
                self.note("sensor_action", format!("reserved=0x{other:02X}"));
                self.push_status(
                    FileId::NODE_CONFIG,
                    OFFSET_SENSOR_ACTION as u32,
                    1,
                    StatusCode::RESERVED_ACTION,
                );
            }
        }
    }

    /// Executes a downlink command received from the gateway.
    pub fn handle_downlink(&mut self, now: u64, bytes: &[u8]) {
        self.kick(now);
        self.stats.downlinks_received += 1;
        let cmd = match decode_command(bytes) {
            Ok(cmd) => cmd,
            Err(e) => {
                self.note("downlink_malformed", e.to_string());
                self.push_status(
                    FileId(0),
                    e.offset() as u32,
                    0,
                    StatusCode::MALFORMED_COMMAND,
                );
                return;
            }
        };
        let mut responses = Vec::new();
        for action in cmd.actions {
            match action {
                AlpAction::ReadFileData {
                    file_id,
                    offset,
                    length,
                } => {
                    if let Some(r) = self.remote_read(now, file_id, offset, length) {
                        responses.push(r);
                    }
                }
                AlpAction::WriteFileData {
                    file_id,
                    offset,
                    data,
                } => {
                    let result = if file_id == FileId::NODE_CONFIG {
                        self.apply_config_write(now, offset, &data)
                    } else {
                        let r = self
                            .store
                            .file_write(file_id, offset, &data)
                            .map_err(NodeError::from);
                        self.dispatch_hooks(now);
                        r
                    };
                    let code = match result {
                        Ok(()) => StatusCode::OK,
                        Err(NodeError::File(e)) => e.status_code(),
                        Err(_) => StatusCode::MALFORMED_COMMAND,
                    };
                    responses.push(AlpAction::Status {
                        file_id,
                        offset,
                        length: data.len() as u32,
                        code,
                    });
                }
                other => responses.push(AlpAction::Status {
                    file_id: other.file_id(),
                    offset: other.offset(),
                    length: other.length(),
                    code: StatusCode::UNSUPPORTED_ACTION,
                }),
            }
        }
        self.queue_responses(responses);
    }

    /// A remote read. Reading the data file triggers a fresh sample; when the
    /// request covers exactly the fresh record, the spontaneous transmission
    /// is the answer and no separate response is queued.
    fn remote_read(
        &mut self,
        now: u64,
        file_id: FileId,
        offset: u32,
        length: u32,
    ) -> Option<AlpAction> {
        let at_access = match self.store.file_read(file_id, offset, length) {
            Ok(bytes) => bytes,
            Err(e) => {
                return Some(AlpAction::Status {
                    file_id,
                    offset,
                    length,
                    code: e.status_code(),
                })
            }
        };
        let produced = self.stats.readings_produced;
        self.dispatch_hooks(now);
        if self.stats.readings_produced == produced {
            return Some(AlpAction::ReturnFileData {
                file_id,
                offset,
                data: at_access,
            });
        }
        let fresh = self.outbox.back().filter(|u| u.kind == UplinkKind::Reading);
        if offset == 0 && fresh.map(|u| u.records[0].len()) == Some(length as usize) {
            return None;
        }
        let content = self.store.content(file_id).expect("file was just read");
        let start = offset as usize;
        Some(AlpAction::ReturnFileData {
            file_id,
            offset,
            data: content[start..start + length as usize].to_vec(),
        })
    }

    fn queue_responses(&mut self, responses: Vec<AlpAction>) {
        let mut batch: Vec<AlpAction> = Vec::new();
        let mut size = 0;
        for action in responses {
            let len = action.encoded_len();
            if !batch.is_empty() && size + len > self.settings.max_payload {
                self.outbox
                    .push_back(Uplink::response(std::mem::take(&mut batch)));
                size = 0;
            }
            size += len;
            batch.push(action);
        }
        if !batch.is_empty() {
            self.outbox.push_back(Uplink::response(batch));
        }
    }

    /// Next packet for the radio, if the node is responsive.
    pub fn pop_uplink(&mut self) -> Option<Uplink> {
        if self.hung {
            return None;
        }
        self.outbox.pop_front()
    }

    /// Feedback from the link for a packet returned by [`pop_uplink`](Self::pop_uplink).
    ///
    /// Undelivered readings go to the flash ring; a delivered packet flushes
    /// up to `flush_batch` buffered readings, oldest first, as the next uplink.
    pub fn on_uplink_result(&mut self, uplink: Uplink, delivered: bool) {
        match (uplink.kind, delivered) {
            (UplinkKind::Reading | UplinkKind::Flush, true) => {
                self.stats.readings_delivered += uplink.records.len() as u64
            }
            (UplinkKind::Reading, false) => {
                for r in uplink.records {
                    self.buffer.push(r);
                }
            }
            (UplinkKind::Flush, false) => self.buffer.restore_front(uplink.records),
            (UplinkKind::Response, false) => self.stats.responses_lost += 1,
            (UplinkKind::Response, true) => {}
        }
        let flush_queued = self.outbox.iter().any(|u| u.kind == UplinkKind::Flush);
        if delivered && !self.buffer.is_empty() && !flush_queued {
            let batch = self.buffer.take_batch(
                self.settings.flush_batch,
                self.settings.max_payload,
                ACTION_OVERHEAD,
            );
            if !batch.is_empty() {
                self.outbox
                    .push_front(Uplink::readings(UplinkKind::Flush, batch));
            }
        }
    }

    /// Simulated firmware hang: the node stops sampling, listening and
    /// kicking the watchdog until it is reset.
    pub fn inject_hang(&mut self) {
        self.hung = true;
    }

    pub fn watchdog_step(&mut self, now: u64) -> WatchdogOutcome {
        if !self.hung {
            self.kick(now);
            WatchdogOutcome::Healthy
        } else if now >= self.state.watchdog_deadline {
            self.reset(now);
            WatchdogOutcome::Reset
        } else {
            WatchdogOutcome::Waiting
        }
    }

    fn stash_outbox(&mut self) {
        let mut flushes = Vec::new();
        for uplink in std::mem::take(&mut self.outbox) {
            match uplink.kind {
                UplinkKind::Flush => flushes.extend(uplink.records),
                UplinkKind::Reading => {
                    for r in uplink.records {
                        self.buffer.push(r);
                    }
                }
                UplinkKind::Response => self.stats.responses_lost += 1,
            }
        }
        self.buffer.restore_front(flushes);
    }

    fn reset(&mut self, now: u64) {
        self.store.reset();
        self.hung = false;
        self.stats.resets += 1;
        self.pending_reading = None;
        // Readings waiting in RAM were already committed to flash.
        self.stash_outbox();
        self.binding = None;
        let _ = self.sim_reload(now);
        self.state = NodeState {
            mode: Mode::Sleep,
            next_sample_at: self.sampling_interval_ms().map(|iv| now + iv),
            watchdog_deadline: now + self.settings.watchdog_period_ms,
        };
        self.note("reset", format!("buffered={}", self.buffer.len()));
    }

    /// End of run: readings still queued for the radio move to flash.
    pub fn finalize(&mut self) {
        self.stash_outbox();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    const EPOCH: u32 = 1_700_000_000;

    fn soil_node(rate: u32) -> Node {
        let cfg = NodeConfig {
            sensor_type: 1,
            sensor_address: 0,
            sensor_action: 0,
            sampling_rate: rate,
            rtc_time: EPOCH,
        };
        let src = Arc::new(SyntheticSignal::constant("t_soil", 5.0).with_channel("vwc", 30.0, 0.0));
        Node::new(
            42,
            cfg,
            DriverRegistry::standard(src),
            NodeSettings::default(),
        )
        .unwrap()
    }

    fn write_cmd(offset: u32, data: &[u8]) -> Vec<u8> {
        encode_command(&AlpCommand::single(AlpAction::WriteFileData {
            file_id: FileId::NODE_CONFIG,
            offset,
            data: data.to_vec(),
        }))
    }

    fn drain(node: &mut Node) -> Vec<Uplink> {
        std::iter::from_fn(|| node.pop_uplink()).collect()
    }

    struct SilentDriver;
    impl SensorDriver for SilentDriver {
        fn kind(&self) -> SensorKind {
            SensorKind::SoilTemperature
        }
        fn measure(&mut self, _: u16, _: i64) -> Vec<i32> {
            Vec::new()
        }
    }

    #[test]
    fn binds_configured_driver() {
        let node = soil_node(600);
        assert_eq!(node.binding().unwrap().kind, SensorKind::SoilTemperature);
        assert!(drain(&mut soil_node(600)).is_empty());
    }

    #[test]
    fn reload_switches_driver() {
        let mut node = soil_node(600);
        node.apply_config_write(0, 0, &[0x02]).unwrap();
        assert_eq!(node.binding().unwrap().kind, SensorKind::SoilWaterContent);
    }

    #[test]
    fn reload_unknown_type_keeps_binding() {
        let mut node = soil_node(600);
        node.apply_config_write(0, 0, &[0xEE]).unwrap();
        assert_eq!(node.binding().unwrap().kind, SensorKind::SoilTemperature);
        let ups = drain(&mut node);
        assert_eq!(ups.len(), 1);
        let cmd = decode_command(&ups[0].bytes).unwrap();
        assert!(matches!(
            cmd.actions[0],
            AlpAction::Status {
                code: StatusCode::UNKNOWN_SENSOR_TYPE,
                ..
            }
        ));
    }

    #[test]
    fn reload_is_idempotent() {
        let mut node = soil_node(600);
        node.sim_reload(0).unwrap();
        let first = node.binding();
        node.sim_reload(0).unwrap();
        assert_eq!(node.binding(), first);
    }

    #[test]
    fn measure_now_action_samples_and_transmits() {
        let mut node = soil_node(600);
        node.apply_config_write(5_000, 3, &[0xAA]).unwrap();
        assert_eq!(node.config().sensor_action, 0xAA);
        let ups = drain(&mut node);
        assert_eq!(ups.len(), 1);
        assert_eq!(ups[0].kind, UplinkKind::Reading);
        let reading = SensorReading::decode(&ups[0].records[0], 42).unwrap();
        assert_eq!(reading.timestamp, EPOCH + 5);
        assert_eq!(reading.channels, vec![("t_soil", 5000)]);
    }

    #[test]
    fn zero_action_is_noop() {
        let mut node = soil_node(600);
        node.handle_sensor_action(0, 0x00);
        assert!(drain(&mut node).is_empty());
        assert_eq!(node.stats().readings_produced, 0);
    }

    #[test]
    fn reserved_action_reports_status() {
        let mut node = soil_node(600);
        node.handle_sensor_action(0, 0x55);
        let ups = drain(&mut node);
        assert_eq!(ups.len(), 1);
        let cmd = decode_command(&ups[0].bytes).unwrap();
        assert!(matches!(
            cmd.actions[0],
            AlpAction::Status {
                offset: 3,
                code: StatusCode::RESERVED_ACTION,
                ..
            }
        ));
    }

    #[test]
    fn rate_write_reschedules_and_keeps_other_fields() {
        let mut node = soil_node(600);
        node.start(0, 1_000);
        node.apply_config_write(10_000, 4, &300u32.to_le_bytes())
            .unwrap();
        let cfg = node.config();
        assert_eq!(cfg.sampling_rate, 300);
        assert_eq!((cfg.sensor_type, cfg.sensor_address), (1, 0));
        assert_eq!(node.next_sample_at(), Some(310_000));
    }

    #[test]
    fn rtc_write_sets_clock() {
        let mut node = soil_node(600);
        node.apply_config_write(20_000, 8, &1_700_000_000u32.to_le_bytes())
            .unwrap();
        assert_eq!(node.rtc_unix(20_000), 1_700_000_000);
        assert_eq!(node.rtc_unix(25_500), 1_700_000_005);
    }

    #[test]
    fn periodic_timer_advances_schedule() {
        let mut node = soil_node(600);
        node.start(0, 0);
        assert!(node.on_sample_timer(0));
        assert_eq!(node.next_sample_at(), Some(600_000));
        assert!(!node.on_sample_timer(300_000), "stale timer ignored");
    }

    #[test]
    fn driver_fault_reports_status_and_stores_nothing() {
        let cfg = NodeConfig {
            sensor_type: 1,
            sampling_rate: 60,
            rtc_time: EPOCH,
            ..Default::default()
        };
        let mut reg = DriverRegistry::new();
        reg.register(Box::new(SilentDriver));
        let mut node = Node::new(1, cfg, reg, NodeSettings::default()).unwrap();
        assert_eq!(
            node.sample_and_store(0),
            Err(NodeError::DriverFault(SensorKind::SoilTemperature))
        );
        assert_eq!(node.stats().readings_produced, 0);
        assert_eq!(
            node.store().content(FileId::SENSOR_DATA).unwrap(),
            &[0; MAX_RECORD_LEN]
        );
        let ups = drain(&mut node);
        assert_eq!(ups.len(), 1);
        assert_eq!(ups[0].kind, UplinkKind::Response);
    }

    #[test]
    fn remote_config_read_returns_bytes() {
        let mut node = soil_node(600);
        let read = encode_command(&AlpCommand::single(AlpAction::ReadFileData {
            file_id: FileId::NODE_CONFIG,
            offset: 0,
            length: 12,
        }));
        node.handle_downlink(0, &read);
        let ups = drain(&mut node);
        let cmd = decode_command(&ups[0].bytes).unwrap();
        assert_eq!(
            cmd.actions,
            vec![AlpAction::ReturnFileData {
                file_id: FileId::NODE_CONFIG,
                offset: 0,
                data: node.config().to_bytes().to_vec()
            }]
        );
    }

    #[test]
    fn data_read_answered_by_fresh_sample() {
        let mut node = soil_node(600);
        let read = encode_command(&AlpCommand::single(AlpAction::ReadFileData {
            file_id: FileId::SENSOR_DATA,
            offset: 0,
            length: 10,
        }));
        node.handle_downlink(7_000, &read);
        let ups = drain(&mut node);
        assert_eq!(ups.len(), 1);
        assert_eq!(ups[0].kind, UplinkKind::Reading);
        assert_eq!(node.stats().readings_produced, 1);
    }

    #[test]
    fn partial_data_read_gets_separate_response() {
        let mut node = soil_node(600);
        let read = encode_command(&AlpCommand::single(AlpAction::ReadFileData {
            file_id: FileId::SENSOR_DATA,
            offset: 6,
            length: 4,
        }));
        node.handle_downlink(0, &read);
        let ups = drain(&mut node);
        assert_eq!(ups.len(), 2);
        assert_eq!(ups[0].kind, UplinkKind::Reading);
        let cmd = decode_command(&ups[1].bytes).unwrap();
        assert_eq!(
            cmd.actions[0],
            AlpAction::ReturnFileData {
                file_id: FileId::SENSOR_DATA,
                offset: 6,
                data: 5000i32.to_le_bytes().to_vec()
            }
        );
    }

    #[test]
    fn write_is_acknowledged() {
        let mut node = soil_node(600);
        node.handle_downlink(0, &write_cmd(4, &300u32.to_le_bytes()));
        let ups = drain(&mut node);
        let cmd = decode_command(&ups[0].bytes).unwrap();
        assert_eq!(
            cmd.actions[0],
            AlpAction::Status {
                file_id: FileId::NODE_CONFIG,
                offset: 4,
                length: 4,
                code: StatusCode::OK
            }
        );
    }

    #[test]
    fn out_of_bounds_write_reports_status() {
        let mut node = soil_node(600);
        node.handle_downlink(0, &write_cmd(11, &[1, 2]));
        let cmd = decode_command(&drain(&mut node)[0].bytes).unwrap();
        assert!(matches!(
            cmd.actions[0],
            AlpAction::Status {
                code: StatusCode::OUT_OF_BOUNDS,
                ..
            }
        ));
    }

    #[test]
    fn uid_file_is_read_only() {
        let mut node = soil_node(600);
        let cmd = encode_command(&AlpCommand::single(AlpAction::WriteFileData {
            file_id: FileId::UID,
            offset: 0,
            data: vec![0],
        }));
        node.handle_downlink(0, &cmd);
        let cmd = decode_command(&drain(&mut node)[0].bytes).unwrap();
        assert!(matches!(
            cmd.actions[0],
            AlpAction::Status {
                code: StatusCode::PERMISSION_DENIED,
                ..
            }
        ));
    }

    #[test]
    fn malformed_downlink_reports_offset() {
        let mut node = soil_node(600);
        node.handle_downlink(0, &[0x99]);
        let cmd = decode_command(&drain(&mut node)[0].bytes).unwrap();
        assert!(matches!(
            cmd.actions[0],
            AlpAction::Status {
                code: StatusCode::MALFORMED_COMMAND,
                ..
            }
        ));
    }

    fn produce_failed(node: &mut Node, n: usize) {
        for i in 0..n {
            node.sample_and_store(i as u64 * 1000).unwrap();
            let up = node.pop_uplink().unwrap();
            node.on_uplink_result(up, false);
        }
    }

    #[test]
    fn delivery_flushes_buffer_oldest_first() {
        let mut node = soil_node(600);
        produce_failed(&mut node, 3);
        assert_eq!(node.buffer().len(), 3);
        node.sample_and_store(10_000).unwrap();
        let up = node.pop_uplink().unwrap();
        node.on_uplink_result(up, true);
        let flush = node.pop_uplink().unwrap();
        assert_eq!(flush.kind, UplinkKind::Flush);
        let stamps: Vec<u32> = flush
            .records
            .iter()
            .map(|r| SensorReading::decode(r, 42).unwrap().timestamp)
            .collect();
        assert_eq!(stamps, vec![EPOCH, EPOCH + 1, EPOCH + 2]);
        node.on_uplink_result(flush, true);
        assert_eq!(node.stats().readings_delivered, 4);
        assert!(node.pop_uplink().is_none());
    }

    #[test]
    fn empty_buffer_delivery_emits_one() {
        let mut node = soil_node(600);
        node.sample_and_store(0).unwrap();
        let up = node.pop_uplink().unwrap();
        node.on_uplink_result(up, true);
        assert!(node.pop_uplink().is_none());
        assert_eq!(node.stats().readings_delivered, 1);
    }

    #[test]
    fn buffer_overflow_overwrites_oldest() {
        let mut node = soil_node(600);
        produce_failed(&mut node, 257);
        assert_eq!(node.buffer().len(), 256);
        assert_eq!(node.buffer().overwritten(), 1);
        let oldest = SensorReading::decode(node.buffer().iter().next().unwrap(), 42).unwrap();
        assert_eq!(oldest.timestamp, EPOCH + 1);
    }

    #[test]
    fn hang_then_watchdog_reset() {
        let mut node = soil_node(600);
        node.start(0, 600_000);
        node.sample_and_store(0).unwrap();
        node.apply_config_write(0, 4, &60u32.to_le_bytes()).unwrap();
        let _ = drain(&mut node);
        assert_eq!(node.watchdog_step(10_000), WatchdogOutcome::Healthy);
        node.inject_hang();
        assert!(!node.on_sample_timer(60_000));
        assert!(!node.is_listening());
        assert_eq!(node.watchdog_step(100_000), WatchdogOutcome::Waiting);
        assert_eq!(node.watchdog_step(130_000), WatchdogOutcome::Reset);
        assert_eq!(node.stats().resets, 1);
        assert_eq!(
            node.config().sampling_rate,
            60,
            "persistent config retained"
        );
        assert_eq!(
            node.store().content(FileId::SENSOR_DATA).unwrap(),
            &[0; MAX_RECORD_LEN]
        );
        assert_eq!(node.next_sample_at(), Some(190_000));
        assert!(node.on_sample_timer(190_000));
    }

    #[test]
    fn healthy_node_never_resets() {
        let mut node = soil_node(60);
        node.start(0, 60_000);
        for t in (0..10).map(|i| i * 120_000) {
            assert_eq!(node.watchdog_step(t), WatchdogOutcome::Healthy);
        }
        assert_eq!(node.stats().resets, 0);
    }

    #[test]
    fn unknown_initial_type_rejected() {
        let cfg = NodeConfig {
            sensor_type: 0xEE,
            ..Default::default()
        };
        let src = Arc::new(SyntheticSignal::constant("t_soil", 1.0));
        assert_eq!(
            Node::new(
                1,
                cfg,
                DriverRegistry::standard(src),
                NodeSettings::default()
            )
            .unwrap_err(),
            NodeError::UnknownSensorType(0xEE)
        );
    }
}
