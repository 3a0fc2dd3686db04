//! Split-stack low-power sensor network toolkit.
//!
//! * [`alp`]: file-operation command codec and the permissioned file store.
//! * [`node`]: the simulated sensor node and its virtual sensor drivers.
//! * [`netsim`]: deterministic discrete-event simulation of star networks.
//! * [`backend`]: message bus, raw-forwarding gateway and the backend that
//!   decodes node traffic and offers remote file access.
//! * [`energy`]: thermoelectric harvesting feasibility and battery budgets.
//! * [`cli`]: command-line entry points.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alp;
pub mod backend;
pub mod cli;
pub mod energy;
pub mod netsim;
pub mod node;
