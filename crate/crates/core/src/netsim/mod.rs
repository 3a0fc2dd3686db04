//! Deterministic discrete-event simulation of per-site star networks.
//!
//! Virtual time is in milliseconds. Each node draws link losses from its
//! own seeded generator, downlinks wait at the gateway for the node's next
//! listen window, and every node keeps a per-mode energy ledger.

pub mod event;
pub mod log;
pub mod power;
pub mod scenario;
pub mod sim;

pub use event::{Event, EventKind, EventQueue};
pub use log::{LinkCounters, NodeSummary, RunLog, RunSummary};
pub use power::{meter_energy, mode_current_a, EnergyMeter};
pub use scenario::{
    HangSpec, LinkModel, NodeSpec, ScenarioConfig, ScenarioError, SiteSpec, DEFAULT_EPOCH_UNIX,
};
pub use sim::{DownlinkTicket, LinkOutcome, SimError, Simulation, TicketState};
