//! Fixed-size file registry with permission checks and access hooks.

use std::collections::BTreeMap;

use thiserror::Error;

use super::{FileId, StatusCode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Permissions {
    pub readable: bool,
    pub writable: bool,
}

impl Permissions {
    pub const READ_ONLY: Permissions = Permissions {
        readable: true,
        writable: false,
    };
    pub const READ_WRITE: Permissions = Permissions {
        readable: true,
        writable: true,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Storage {
    /// Zeroed on reset.
    Volatile,
    /// Survives reset.
    Persistent,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileHeader {
    pub id: FileId,
    pub length: u32,
    pub permissions: Permissions,
    pub storage: Storage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trigger {
    OnWrite,
    OnRead,
}

/// A named action to run after a matching, successful file access.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionHook {
    pub file_id: FileId,
    pub trigger: Trigger,
    pub action: String,
}

/// Record of a hook that fired, queued until the store owner drains it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FiredHook {
    pub file_id: FileId,
    pub trigger: Trigger,
    pub action: String,
    pub offset: u32,
    pub length: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FileError {
    #[error("no such file {0}")]
    NoSuchFile(FileId),
    #[error("permission denied on file {0}")]
    PermissionDenied(FileId),
    #[error("access [{offset}, {offset}+{length}) exceeds file {id} of {file_length} bytes")]
    OutOfBounds {
        id: FileId,
        offset: u64,
        length: u64,
        file_length: u32,
    },
    #[error("file {0} already exists")]
    AlreadyExists(FileId),
    #[error("file {0} must have a non-zero length")]
    ZeroLength(FileId),
}

impl FileError {
    pub fn status_code(&self) -> StatusCode {
        match self {
            FileError::NoSuchFile(_) => StatusCode::NO_SUCH_FILE,
            FileError::PermissionDenied(_) => StatusCode::PERMISSION_DENIED,
            FileError::OutOfBounds { .. } => StatusCode::OUT_OF_BOUNDS,
            FileError::AlreadyExists(_) | FileError::ZeroLength(_) => StatusCode::MALFORMED_COMMAND,
        }
    }
}

#[derive(Debug, Clone)]
struct FileEntry {
    header: FileHeader,
    content: Vec<u8>,
}

#[derive(Debug, Clone, Default)]
pub struct FileStore {
    files: BTreeMap<FileId, FileEntry>,
    hooks: Vec<ActionHook>,
    fired: Vec<FiredHook>,
}

impl FileStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Creates a zero-filled file.
    pub fn create(&mut self, header: FileHeader) -> Result<(), FileError> {
        if header.length == 0 {
            return Err(FileError::ZeroLength(header.id));
        }
        if self.files.contains_key(&header.id) {
            return Err(FileError::AlreadyExists(header.id));
        }
        let content = vec![0; header.length as usize];
        self.files.insert(header.id, FileEntry { header, content });
        Ok(())
    }

    pub fn header(&self, id: FileId) -> Option<&FileHeader> {
        self.files.get(&id).map(|e| &e.header)
    }

    /// Full file content, bypassing permissions and hooks.
    pub fn content(&self, id: FileId) -> Option<&[u8]> {
        self.files.get(&id).map(|e| e.content.as_slice())
    }

    pub fn file_ids(&self) -> impl Iterator<Item = FileId> + '_ {
        self.files.keys().copied()
    }

    pub fn hooks(&self) -> &[ActionHook] {
        &self.hooks
    }

    pub fn register_hook(&mut self, hook: ActionHook) -> Result<(), FileError> {
        if !self.files.contains_key(&hook.file_id) {
            return Err(FileError::NoSuchFile(hook.file_id));
        }
        self.hooks.push(hook);
        Ok(())
    }

    fn checked_entry(
        &self,
        id: FileId,
        offset: u32,
        length: usize,
        trigger: Trigger,
    ) -> Result<&FileEntry, FileError> {
        let entry = self.files.get(&id).ok_or(FileError::NoSuchFile(id))?;
        let allowed = match trigger {
            Trigger::OnRead => entry.header.permissions.readable,
            Trigger::OnWrite => entry.header.permissions.writable,
        };
        if !allowed {
            return Err(FileError::PermissionDenied(id));
        }
        let end = offset as u64 + length as u64;
        if end > entry.header.length as u64 {
            return Err(FileError::OutOfBounds {
                id,
                offset: offset as u64,
                length: length as u64,
                file_length: entry.header.length,
            });
        }
        Ok(entry)
    }

    fn fire(&mut self, id: FileId, trigger: Trigger, offset: u32, length: u32) {
        let fired = self
            .hooks
            .iter()
            .filter(|h| h.file_id == id && h.trigger == trigger)
            .map(|h| FiredHook {
                file_id: id,
                trigger,
                action: h.action.clone(),
                offset,
                length,
            });
        self.fired.extend(fired);
    }

    /// Owner-side write that bypasses permissions and hooks (factory
    /// provisioning, firmware-internal state).
    pub fn provision(&mut self, id: FileId, offset: u32, payload: &[u8]) -> Result<(), FileError> {
        let entry = self.files.get_mut(&id).ok_or(FileError::NoSuchFile(id))?;
        let end = offset as u64 + payload.len() as u64;
        if end > entry.header.length as u64 {
            return Err(FileError::OutOfBounds {
                id,
                offset: offset as u64,
                length: payload.len() as u64,
                file_length: entry.header.length,
            });
        }
        let start = offset as usize;
        entry.content[start..start + payload.len()].copy_from_slice(payload);
        Ok(())
    }

    pub fn file_read(
        &mut self,
        id: FileId,
        offset: u32,
        length: u32,
    ) -> Result<Vec<u8>, FileError> {
        let entry = self.checked_entry(id, offset, length as usize, Trigger::OnRead)?;
        let start = offset as usize;
        let out = entry.content[start..start + length as usize].to_vec();
        self.fire(id, Trigger::OnRead, offset, length);
        Ok(out)
    }

    pub fn file_write(&mut self, id: FileId, offset: u32, payload: &[u8]) -> Result<(), FileError> {
        self.checked_entry(id, offset, payload.len(), Trigger::OnWrite)?;
        let entry = self.files.get_mut(&id).expect("checked above");
        let start = offset as usize;
        entry.content[start..start + payload.len()].copy_from_slice(payload);
        self.fire(id, Trigger::OnWrite, offset, payload.len() as u32);
        Ok(())
    }

    /// Hooks fired since the last drain, in firing order.
    pub fn drain_fired(&mut self) -> Vec<FiredHook> {
        std::mem::take(&mut self.fired)
    }

    /// Simulated power cycle: volatile files return to zero; pending hook
    /// firings are discarded.
    pub fn reset(&mut self) {
        for entry in self.files.values_mut() {
            if entry.header.storage == Storage::Volatile {
                entry.content.fill(0);
            }
        }
        self.fired.clear();
    }
}
