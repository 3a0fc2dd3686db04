//! Wire codec for file-operation commands.
//!
//! Layout per action: opcode (1), file id (1), offset (u32 LE), length (u32 LE),
//! followed by `length` payload bytes for write/return actions or a single
//! status byte for status actions. A command is a concatenation of actions.

use std::fmt;

use thiserror::Error;

use super::FileId;

const HEADER_LEN: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Opcode {
    ReadFileData = 0x01,
    WriteFileData = 0x04,
    ReturnFileData = 0x20,
    Status = 0x7F,
}

impl Opcode {
    pub fn from_u8(v: u8) -> Option<Opcode> {
        match v {
            0x01 => Some(Opcode::ReadFileData),
            0x04 => Some(Opcode::WriteFileData),
            0x20 => Some(Opcode::ReturnFileData),
            0x7F => Some(Opcode::Status),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Opcode::ReadFileData => "ReadFileData",
            Opcode::WriteFileData => "WriteFileData",
            Opcode::ReturnFileData => "ReturnFileData",
            Opcode::Status => "Status",
        }
    }
}

/// Result code carried by a status action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StatusCode(pub u8);

impl StatusCode {
    pub const OK: StatusCode = StatusCode(0x00);
    pub const NO_SUCH_FILE: StatusCode = StatusCode(0x01);
    pub const PERMISSION_DENIED: StatusCode = StatusCode(0x02);
    pub const OUT_OF_BOUNDS: StatusCode = StatusCode(0x03);
    pub const UNKNOWN_SENSOR_TYPE: StatusCode = StatusCode(0x10);
    pub const RESERVED_ACTION: StatusCode = StatusCode(0x11);
    pub const DRIVER_FAULT: StatusCode = StatusCode(0x12);
    pub const MALFORMED_COMMAND: StatusCode = StatusCode(0x20);
    pub const UNSUPPORTED_ACTION: StatusCode = StatusCode(0x21);

    pub fn is_ok(self) -> bool {
        self == StatusCode::OK
    }

    pub fn name(self) -> &'static str {
        match self {
            StatusCode::OK => "ok",
            StatusCode::NO_SUCH_FILE => "no-such-file",
            StatusCode::PERMISSION_DENIED => "permission-denied",
            StatusCode::OUT_OF_BOUNDS => "out-of-bounds",
            StatusCode::UNKNOWN_SENSOR_TYPE => "unknown-sensor-type",
            StatusCode::RESERVED_ACTION => "reserved-action",
            StatusCode::DRIVER_FAULT => "driver-fault",
            StatusCode::MALFORMED_COMMAND => "malformed-command",
            StatusCode::UNSUPPORTED_ACTION => "unsupported-action",
            _ => "unknown",
        }
    }
}

/// One file operation.
///
/// Write and return actions carry their payload; the encoded length field is
/// always the payload length, so the length invariant holds by construction.
/// Status actions echo the (file, offset, length) of the operation they report on.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum AlpAction {
    ReadFileData {
        file_id: FileId,
        offset: u32,
        length: u32,
    },
    WriteFileData {
        file_id: FileId,
        offset: u32,
        data: Vec<u8>,
    },
    ReturnFileData {
        file_id: FileId,
        offset: u32,
        data: Vec<u8>,
    },
    Status {
        file_id: FileId,
        offset: u32,
        length: u32,
        code: StatusCode,
    },
}

impl AlpAction {
    pub fn opcode(&self) -> Opcode {
        match self {
            AlpAction::ReadFileData { .. } => Opcode::ReadFileData,
            AlpAction::WriteFileData { .. } => Opcode::WriteFileData,
            AlpAction::ReturnFileData { .. } => Opcode::ReturnFileData,
            AlpAction::Status { .. } => Opcode::Status,
        }
    }

    pub fn file_id(&self) -> FileId {
        match self {
            AlpAction::ReadFileData { file_id, .. }
            | AlpAction::WriteFileData { file_id, .. }
            | AlpAction::ReturnFileData { file_id, .. }
            | AlpAction::Status { file_id, .. } => *file_id,
        }
    }

    pub fn offset(&self) -> u32 {
        match self {
            AlpAction::ReadFileData { offset, .. }
            | AlpAction::WriteFileData { offset, .. }
            | AlpAction::ReturnFileData { offset, .. }
            | AlpAction::Status { offset, .. } => *offset,
        }
    }

    /// Value of the encoded length field.
    pub fn length(&self) -> u32 {
        match self {
            AlpAction::ReadFileData { length, .. } | AlpAction::Status { length, .. } => *length,
            AlpAction::WriteFileData { data, .. } | AlpAction::ReturnFileData { data, .. } => {
                data.len() as u32
            }
        }
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN
            + match self {
                AlpAction::ReadFileData { .. } => 0,
                AlpAction::WriteFileData { data, .. } | AlpAction::ReturnFileData { data, .. } => {
                    data.len()
                }
                AlpAction::Status { .. } => 1,
            }
    }

    fn encode_into(&self, out: &mut Vec<u8>) {
        out.push(self.opcode() as u8);
        out.push(self.file_id().0);
        out.extend_from_slice(&self.offset().to_le_bytes());
        out.extend_from_slice(&self.length().to_le_bytes());
        match self {
            AlpAction::ReadFileData { .. } => {}
            AlpAction::WriteFileData { data, .. } | AlpAction::ReturnFileData { data, .. } => {
                out.extend_from_slice(data)
            }
            AlpAction::Status { code, .. } => out.push(code.0),
        }
    }
}

impl fmt::Display for AlpAction {
    /// One-line listing, e.g. `WriteFileData file=0x41 offset=3 len=1 payload=AA`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} file={} offset={} len={}",
            self.opcode().name(),
            self.file_id(),
            self.offset(),
            self.length()
        )?;
        match self {
            AlpAction::ReadFileData { .. } => Ok(()),
            AlpAction::WriteFileData { data, .. } | AlpAction::ReturnFileData { data, .. } => {
                write!(f, " payload={}", hex::encode_upper(data))
            }
            AlpAction::Status { code, .. } => write!(f, " status=0x{:02X}", code.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cannot parse action: {0}")]
pub struct ParseActionError(pub String);

fn parse_number(key: &str, text: &str) -> Result<u64, ParseActionError> {
    let parsed = match text.strip_prefix("0x").or_else(|| text.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => text.parse(),
    };
    parsed.map_err(|_| ParseActionError(format!("{key}={text} is not a number")))
}

fn narrow<T: TryFrom<u64>>(key: &str, v: u64) -> Result<T, ParseActionError> {
    T::try_from(v).map_err(|_| ParseActionError(format!("{key}={v} out of range")))
}

impl std::str::FromStr for AlpAction {
    type Err = ParseActionError;

    /// Inverse of the [`Display`](fmt::Display) listing. `len` may be
    /// omitted for actions that carry a payload.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut tokens = s.split_whitespace();
        let name = tokens
            .next()
            .ok_or_else(|| ParseActionError("empty action".into()))?;
        let (mut file, mut offset, mut len, mut payload, mut status) =
            (None, None, None, None, None);
        for tok in tokens {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| ParseActionError(format!("expected key=value, got {tok}")))?;
            match k {
                "file" => file = Some(narrow::<u8>(k, parse_number(k, v)?)?),
                "offset" => offset = Some(narrow::<u32>(k, parse_number(k, v)?)?),
                "len" => len = Some(narrow::<u32>(k, parse_number(k, v)?)?),
                "status" => status = Some(narrow::<u8>(k, parse_number(k, v)?)?),
                "payload" => {
                    payload = Some(
                        hex::decode(v).map_err(|e| ParseActionError(format!("payload: {e}")))?,
                    )
                }
                _ => return Err(ParseActionError(format!("unknown key {k}"))),
            }
        }
        fn need<T>(v: Option<T>, name: &str, key: &str) -> Result<T, ParseActionError> {
            v.ok_or_else(|| ParseActionError(format!("{name} needs {key}=")))
        }
        let file_id = FileId(need(file, name, "file")?);
        let offset = need(offset, name, "offset")?;
        let with_data = |data: Vec<u8>| match len {
            Some(l) if l as usize != data.len() => Err(ParseActionError(format!(
                "len={l} but payload has {} bytes",
                data.len()
            ))),
            _ => Ok(data),
        };
        let has_payload = payload.is_some();
        let action = match name {
            "ReadFileData" => AlpAction::ReadFileData {
                file_id,
                offset,
                length: need(len, name, "len")?,
            },
            "WriteFileData" => AlpAction::WriteFileData {
                file_id,
                offset,
                data: with_data(need(payload, name, "payload")?)?,
            },
            "ReturnFileData" => AlpAction::ReturnFileData {
                file_id,
                offset,
                data: with_data(need(payload, name, "payload")?)?,
            },
            "Status" => AlpAction::Status {
                file_id,
                offset,
                length: need(len, name, "len")?,
                code: StatusCode(need(status, name, "status")?),
            },
            other => return Err(ParseActionError(format!("unknown action {other}"))),
        };
        if matches!(
            action,
            AlpAction::ReadFileData { .. } | AlpAction::Status { .. }
        ) && has_payload
        {
            return Err(ParseActionError(format!("{name} takes no payload")));
        }
        Ok(action)
    }
}

/// An ordered, non-empty sequence of actions.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AlpCommand {
    pub actions: Vec<AlpAction>,
}

impl AlpCommand {
    pub fn new(actions: Vec<AlpAction>) -> Self {
        debug_assert!(!actions.is_empty(), "a command holds at least one action");
        AlpCommand { actions }
    }

    pub fn single(action: AlpAction) -> Self {
        AlpCommand {
            actions: vec![action],
        }
    }

    pub fn encoded_len(&self) -> usize {
        self.actions.iter().map(AlpAction::encoded_len).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("empty input")]
    EmptyInput,
    #[error("input truncated in action starting at byte offset {offset}")]
    TruncatedInput { offset: usize },
    #[error("unknown opcode 0x{opcode:02X} at byte offset {offset}")]
    UnknownOpcode { offset: usize, opcode: u8 },
}

impl CodecError {
    /// Byte offset of the action that failed to decode.
    pub fn offset(&self) -> usize {
        match self {
            CodecError::EmptyInput => 0,
            CodecError::TruncatedInput { offset } | CodecError::UnknownOpcode { offset, .. } => {
                *offset
            }
        }
    }
}

pub fn encode_command(cmd: &AlpCommand) -> Vec<u8> {
    let mut out = Vec::with_capacity(cmd.encoded_len());
    for action in &cmd.actions {
        action.encode_into(&mut out);
    }
    out
}

pub fn decode_command(bytes: &[u8]) -> Result<AlpCommand, CodecError> {
    if bytes.is_empty() {
        return Err(CodecError::EmptyInput);
    }
    let mut actions = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let start = pos;
        let opcode = Opcode::from_u8(bytes[pos]).ok_or(CodecError::UnknownOpcode {
            offset: start,
            opcode: bytes[pos],
        })?;
        let header = bytes
            .get(pos..pos + HEADER_LEN)
            .ok_or(CodecError::TruncatedInput { offset: start })?;
        let file_id = FileId(header[1]);
        let offset = u32::from_le_bytes(header[2..6].try_into().unwrap());
        let length = u32::from_le_bytes(header[6..10].try_into().unwrap());
        pos += HEADER_LEN;

        let action = match opcode {
            Opcode::ReadFileData => AlpAction::ReadFileData {
                file_id,
                offset,
                length,
            },
            Opcode::WriteFileData | Opcode::ReturnFileData => {
                let end = pos
                    .checked_add(length as usize)
                    .filter(|&end| end <= bytes.len())
                    .ok_or(CodecError::TruncatedInput { offset: start })?;
                let data = bytes[pos..end].to_vec();
                pos = end;
                if opcode == Opcode::WriteFileData {
                    AlpAction::WriteFileData {
                        file_id,
                        offset,
                        data,
                    }
                } else {
                    AlpAction::ReturnFileData {
                        file_id,
                        offset,
                        data,
                    }
                }
            }
            Opcode::Status => {
                let code = *bytes
                    .get(pos)
                    .ok_or(CodecError::TruncatedInput { offset: start })?;
                pos += 1;
                AlpAction::Status {
                    file_id,
                    offset,
                    length,
                    code: StatusCode(code),
                }
            }
        };
        actions.push(action);
    }
    Ok(AlpCommand { actions })
}
