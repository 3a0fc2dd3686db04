//! The backend half of the split stack. Gateways forward raw node packets
//! over the bus; the backend decodes them, stores readings and offers
//! remote file access to any node by uid.

pub mod bus;
pub mod sink;

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::alp::{decode_command, encode_command, AlpAction, AlpCommand, FileId, StatusCode};
use crate::node::sensor::{SensorReading, MAX_RECORD_LEN, RECORD_HEADER_LEN};

pub use bus::{
    down_topic, gateway_forward, topic_matches, up_topic, BusMessage, Envelope, InProcessBus,
    MessageBus, ALL_DOWN, ALL_UP,
};
pub use sink::{write_sink_csv, TimeSeriesRecord, SINK_HEADER};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemoteNodeHandle {
    pub node_uid: u64,
    pub site_id: String,
    pub gateway_id: String,
    pub transect: String,
}

/// Requests are matched to replies by node, file and offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RequestKey {
    pub node_uid: u64,
    pub file_id: FileId,
    pub offset: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Expect {
    Read { length: u32 },
    Write,
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    expect: Expect,
    deadline_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RemoteReply {
    Data(Vec<u8>),
    Ack,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RemoteError {
    #[error("request timed out")]
    Timeout,
    #[error("unknown node {0}")]
    NodeUnknown(u64),
    #[error("a request for this node, file and offset is already outstanding")]
    AlreadyPending,
    #[error("node answered with status {} (0x{:02X})", .0.name(), .0.0)]
    NodeStatus(StatusCode),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Quarantined {
    pub message: BusMessage,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatusEntry {
    pub at_ms: u64,
    pub node_uid: u64,
    pub file_id: FileId,
    pub offset: u32,
    pub length: u32,
    pub code: StatusCode,
}

pub struct Backend {
    bus: Arc<dyn MessageBus>,
    nodes: BTreeMap<u64, RemoteNodeHandle>,
    pending: BTreeMap<RequestKey, Pending>,
    resolved: BTreeMap<RequestKey, Result<RemoteReply, RemoteError>>,
    records: Vec<TimeSeriesRecord>,
    quarantine: Vec<Quarantined>,
    statuses: Vec<StatusEntry>,
    ingested: u64,
}

impl std::fmt::Debug for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Backend")
            .field("nodes", &self.nodes.len())
            .field("pending", &self.pending.len())
            .field("records", &self.records.len())
            .finish_non_exhaustive()
    }
}

/// A data-file image may be padded past the record; trims it back to the
/// length implied by the record header when the padding is all zeros.
fn record_bytes(data: &[u8]) -> &[u8] {
    if data.len() == MAX_RECORD_LEN {
        let implied = RECORD_HEADER_LEN + 4 * data[5] as usize;
        if implied < data.len() && data[implied..].iter().all(|&b| b == 0) {
            return &data[..implied];
        }
    }
    data
}

impl Backend {
    pub fn new(bus: Arc<dyn MessageBus>) -> Backend {
        Backend {
            bus,
            nodes: BTreeMap::new(),
            pending: BTreeMap::new(),
            resolved: BTreeMap::new(),
            records: Vec::new(),
            quarantine: Vec::new(),
            statuses: Vec::new(),
            ingested: 0,
        }
    }

    pub fn register_node(&mut self, handle: RemoteNodeHandle) {
        self.nodes.insert(handle.node_uid, handle);
    }

    pub fn node(&self, uid: u64) -> Option<&RemoteNodeHandle> {
        self.nodes.get(&uid)
    }

    pub fn records(&self) -> &[TimeSeriesRecord] {
        &self.records
    }

    pub fn quarantine(&self) -> &[Quarantined] {
        &self.quarantine
    }

    pub fn statuses(&self) -> &[StatusEntry] {
        &self.statuses
    }

    pub fn messages_ingested(&self) -> u64 {
        self.ingested
    }

    pub fn outstanding(&self) -> usize {
        self.pending.len()
    }

    fn send(
        &mut self,
        uid: u64,
        action: AlpAction,
        expect: Expect,
        now_ms: u64,
        timeout_ms: u64,
    ) -> Result<RequestKey, RemoteError> {
        let handle = self.nodes.get(&uid).ok_or(RemoteError::NodeUnknown(uid))?;
        let key = RequestKey {
            node_uid: uid,
            file_id: action.file_id(),
            offset: action.offset(),
        };
        if self.pending.contains_key(&key) || self.resolved.contains_key(&key) {
            return Err(RemoteError::AlreadyPending);
        }
        let msg = BusMessage {
            topic: down_topic(&handle.site_id, &handle.gateway_id),
            payload: encode_command(&AlpCommand::single(action)),
            envelope: Envelope {
                node_uid: uid,
                gateway_id: handle.gateway_id.clone(),
                site_id: handle.site_id.clone(),
                rx_timestamp_ms: now_ms,
            },
        };
        self.bus.publish(msg);
        self.pending.insert(
            key,
            Pending {
                expect,
                deadline_ms: now_ms + timeout_ms,
            },
        );
        Ok(key)
    }

    /// Publishes a read request for the node's gateway. The reply is
    /// collected with [`poll`](Self::poll).
    pub fn remote_read_file(
        &mut self,
        uid: u64,
        file_id: FileId,
        offset: u32,
        length: u32,
        now_ms: u64,
        timeout_ms: u64,
    ) -> Result<RequestKey, RemoteError> {
        let action = AlpAction::ReadFileData {
            file_id,
            offset,
            length,
        };
        self.send(uid, action, Expect::Read { length }, now_ms, timeout_ms)
    }

    pub fn remote_write_file(
        &mut self,
        uid: u64,
        file_id: FileId,
        offset: u32,
        data: &[u8],
        now_ms: u64,
        timeout_ms: u64,
    ) -> Result<RequestKey, RemoteError> {
        let action = AlpAction::WriteFileData {
            file_id,
            offset,
            data: data.to_vec(),
        };
        self.send(uid, action, Expect::Write, now_ms, timeout_ms)
    }

    /// Outcome of a request once it has a reply or its deadline has passed.
    pub fn poll(
        &mut self,
        key: RequestKey,
        now_ms: u64,
    ) -> Option<Result<RemoteReply, RemoteError>> {
        if let Some(r) = self.resolved.remove(&key) {
            return Some(r);
        }
        let pending = self.pending.get(&key)?;
        if now_ms >= pending.deadline_ms {
            self.pending.remove(&key);
            return Some(Err(RemoteError::Timeout));
        }
        None
    }

    fn resolve(&mut self, key: RequestKey, outcome: Result<RemoteReply, RemoteError>) {
        self.pending.remove(&key);
        self.resolved.insert(key, outcome);
    }

    /// Ingests every queued uplink message. Returns the number of messages.
    pub fn pump(&mut self) -> usize {
        let msgs = self.bus.drain(ALL_UP);
        let n = msgs.len();
        for m in msgs {
            self.ingest(m);
        }
        n
    }

    /// Decodes one uplink message: readings go to the sink, replies resolve
    /// outstanding requests, statuses are logged and anything that does not
    /// decode is quarantined.
    pub fn ingest(&mut self, msg: BusMessage) -> Vec<TimeSeriesRecord> {
        self.ingested += 1;
        let cmd = match decode_command(&msg.payload) {
            Ok(cmd) => cmd,
            Err(e) => {
                self.quarantine.push(Quarantined {
                    message: msg,
                    reason: e.to_string(),
                });
                return Vec::new();
            }
        };
        let uid = msg.envelope.node_uid;
        let mut out = Vec::new();
        for action in cmd.actions {
            match action {
                AlpAction::ReturnFileData {
                    file_id,
                    offset,
                    data,
                } => {
                    if file_id == FileId::SENSOR_DATA && offset == 0 {
                        match SensorReading::decode(record_bytes(&data), uid) {
                            Ok(reading) => out.extend(self.to_records(&reading, &msg.envelope)),
                            Err(e) => self.quarantine.push(Quarantined {
                                message: msg.clone(),
                                reason: e.to_string(),
                            }),
                        }
                    }
                    let key = RequestKey {
                        node_uid: uid,
                        file_id,
                        offset,
                    };
                    if let Some(Pending {
                        expect: Expect::Read { length },
                        ..
                    }) = self.pending.get(&key)
                    {
                        if data.len() == *length as usize {
                            self.resolve(key, Ok(RemoteReply::Data(data)));
                        }
                    }
                }
                AlpAction::Status {
                    file_id,
                    offset,
                    length,
                    code,
                } => {
                    self.statuses.push(StatusEntry {
                        at_ms: msg.envelope.rx_timestamp_ms,
                        node_uid: uid,
                        file_id,
                        offset,
                        length,
                        code,
                    });
                    let key = RequestKey {
                        node_uid: uid,
                        file_id,
                        offset,
                    };
                    let outcome = match self.pending.get(&key) {
                        Some(p) if code.is_ok() && p.expect == Expect::Write => {
                            Some(Ok(RemoteReply::Ack))
                        }
                        Some(_) if !code.is_ok() => Some(Err(RemoteError::NodeStatus(code))),
                        _ => None,
                    };
                    if let Some(o) = outcome {
                        self.resolve(key, o);
                    }
                }
                other => self.quarantine.push(Quarantined {
                    message: msg.clone(),
                    reason: format!(
                        "unexpected {} action on an uplink topic",
                        other.opcode().name()
                    ),
                }),
            }
        }
        self.records.extend(out.iter().cloned());
        out
    }

    fn to_records(&self, reading: &SensorReading, envelope: &Envelope) -> Vec<TimeSeriesRecord> {
        let handle = self.nodes.get(&reading.node_uid);
        let site = handle.map_or(envelope.site_id.clone(), |h| h.site_id.clone());
        let transect = handle.map_or(String::new(), |h| h.transect.clone());
        reading
            .channels
            .iter()
            .zip(reading.kind.channels())
            .map(|((name, milli), desc)| TimeSeriesRecord {
                timestamp: reading.timestamp as i64,
                site: site.clone(),
                node_uid: reading.node_uid,
                transect: transect.clone(),
                channel: name.to_string(),
                value: *milli as f64 / desc.scale as f64,
                unit: desc.unit.to_string(),
            })
            .collect()
    }
}
