//! File-operation application layer.
//!
//! Every transaction between a node and the backend is expressed as an
//! operation on a numbered, fixed-size file. [`codec`] holds the byte-exact
//! wire format for command sequences and [`store`] the permissioned file
//! registry with action hooks that fire on file access.

pub mod codec;
pub mod store;

pub use codec::{
    decode_command, encode_command, AlpAction, AlpCommand, CodecError, Opcode, ParseActionError,
    StatusCode,
};
pub use store::{
    ActionHook, FileError, FileHeader, FileStore, FiredHook, Permissions, Storage, Trigger,
};

use std::fmt;

use serde::{Deserialize, Serialize};

/// Identifier of a file in a node's file system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FileId(pub u8);

impl FileId {
    /// Read-only file holding the node's 64-bit uid.
    pub const UID: FileId = FileId(0x00);
    /// Latest serialized sensor reading.
    pub const SENSOR_DATA: FileId = FileId(0x40);
    /// The 12-byte node configuration file.
    pub const NODE_CONFIG: FileId = FileId(0x41);
}

impl fmt::Display for FileId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{:02X}", self.0)
    }
}

impl From<u8> for FileId {
    fn from(v: u8) -> Self {
        FileId(v)
    }
}
