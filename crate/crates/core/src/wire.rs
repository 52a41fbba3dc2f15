//! Length-prefixed message framing and encoding for all traffic between
//! providers/consumers and the central authority.
//!
//! A frame is a little-endian `u32` payload length followed by that many
//! bytes of UTF-8 JSON. Encoding is deterministic: the same message always
//! produces the same bytes (fields serialize in fixed schema order) and
//! energy values travel as decimal strings that round-trip `f64` bit-exactly.

use serde::{Deserialize, Serialize};

use crate::model::{CheckpointId, Device, ErrorCode, ProbeId, ProcessSpec};

/// Frames larger than this are a protocol error.
pub const MAX_FRAME_LEN: usize = 1024 * 1024; // 1 MiB

/// Version carried in HELLO; mismatches are rejected outright.
pub const PROTO_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error("frame of {0} bytes exceeds {MAX_FRAME_LEN} byte cap")]
    TooLarge(usize),
    #[error("malformed frame: {0}")]
    Malformed(String),
}

impl WireError {
    pub fn code(&self) -> ErrorCode {
        ErrorCode::Protocol
    }
}

/// Serialize energy as its shortest exact decimal rendering (`"0.5"`,
/// `"4"`, ...). Parsing is IEEE 754 correctly rounded, so every finite
/// double survives the trip bit-exactly; non-finite values are rejected.
mod joules_str {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(v)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        let text = String::deserialize(d)?;
        let v: f64 = text
            .parse()
            .map_err(|_| D::Error::custom(format!("bad energy value `{text}`")))?;
        if !v.is_finite() {
            return Err(D::Error::custom(format!("non-finite energy value `{text}`")));
        }
        Ok(v)
    }
}

mod opt_joules_str {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(v) => s.collect_str(v),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        let text = Option::<String>::deserialize(d)?;
        match text {
            None => Ok(None),
            Some(text) => {
                let v: f64 = text
                    .parse()
                    .map_err(|_| D::Error::custom(format!("bad energy value `{text}`")))?;
                if !v.is_finite() {
                    return Err(D::Error::custom(format!("non-finite energy value `{text}`")));
                }
                Ok(Some(v))
            }
        }
    }
}

/// One probe row in a STATUS reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeStatus {
    pub id: ProbeId,
    pub devices: Vec<Device>,
    pub active: bool,
    #[serde(with = "joules_str")]
    pub cumulative: f64,
}

/// One checkpoint row in a STATUS reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointStatus {
    pub id: CheckpointId,
    pub devices: Vec<Device>,
    pub pspec: ProcessSpec,
    pub continuous: bool,
}

/// The assembled result of a STATUS request.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StatusSnapshot {
    pub probes: Vec<ProbeStatus>,
    pub checkpoints: Vec<CheckpointStatus>,
    pub connections: u64,
}

/// Every message exchanged with the central authority. `req_id` correlates
/// replies with requests; 0 marks unsolicited pushes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum WireMessage {
    #[serde(rename = "HELLO")]
    Hello { req_id: u64, proto_version: u32 },
    #[serde(rename = "PROBE_CREATE")]
    ProbeCreate { req_id: u64, devices: Vec<Device> },
    #[serde(rename = "PROBE_DELETE")]
    ProbeDelete { req_id: u64, probe_id: ProbeId },
    #[serde(rename = "PROBE_ACTIVATE")]
    ProbeActivate { req_id: u64, probe_id: ProbeId },
    #[serde(rename = "PROBE_DEACTIVATE")]
    ProbeDeactivate { req_id: u64, probe_id: ProbeId },
    #[serde(rename = "SAMPLE_ADD")]
    SampleAdd {
        req_id: u64,
        probe_id: ProbeId,
        #[serde(with = "joules_str")]
        joules: f64,
    },
    #[serde(rename = "CKPT_SET")]
    CheckpointSet {
        req_id: u64,
        pspec: ProcessSpec,
        devices: Vec<Device>,
    },
    #[serde(rename = "CKPT_SAMPLE")]
    CheckpointSample { req_id: u64, checkpoint_id: CheckpointId },
    #[serde(rename = "CKPT_DELETE")]
    CheckpointDelete { req_id: u64, checkpoint_id: CheckpointId },
    #[serde(rename = "STATUS")]
    Status { req_id: u64 },
    #[serde(rename = "REPLY")]
    Reply(Reply),
    #[serde(rename = "EVENT")]
    Event { req_id: u64, name: String },
}

impl WireMessage {
    pub fn req_id(&self) -> u64 {
        match self {
            WireMessage::Hello { req_id, .. }
            | WireMessage::ProbeCreate { req_id, .. }
            | WireMessage::ProbeDelete { req_id, .. }
            | WireMessage::ProbeActivate { req_id, .. }
            | WireMessage::ProbeDeactivate { req_id, .. }
            | WireMessage::SampleAdd { req_id, .. }
            | WireMessage::CheckpointSet { req_id, .. }
            | WireMessage::CheckpointSample { req_id, .. }
            | WireMessage::CheckpointDelete { req_id, .. }
            | WireMessage::Status { req_id }
            | WireMessage::Event { req_id, .. } => *req_id,
            WireMessage::Reply(r) => r.req_id,
        }
    }
}

/// Response body. `code` is always present; the optional fields depend on
/// the request that is being answered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reply {
    pub req_id: u64,
    pub code: ErrorCode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_id: Option<ProbeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_id: Option<CheckpointId>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "opt_joules_str")]
    pub joules: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub continuous: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probes: Option<Vec<ProbeStatus>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoints: Option<Vec<CheckpointStatus>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub connections: Option<u64>,
}

impl Reply {
    pub fn code_only(req_id: u64, code: ErrorCode) -> Reply {
        Reply {
            req_id,
            code,
            probe_id: None,
            checkpoint_id: None,
            joules: None,
            continuous: None,
            probes: None,
            checkpoints: None,
            connections: None,
        }
    }
}

/// Encode one message as a length-prefixed frame.
pub fn encode(msg: &WireMessage) -> Result<Vec<u8>, WireError> {
    let payload = serde_json::to_vec(msg).map_err(|e| WireError::Malformed(e.to_string()))?;
    if payload.len() > MAX_FRAME_LEN {
        return Err(WireError::TooLarge(payload.len()));
    }
    let mut out = Vec::with_capacity(4 + payload.len());
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Decode one frame from the front of `bytes`.
///
/// Returns `Ok(None)` (zero bytes consumed) while the frame is incomplete,
/// or the message and the number of bytes consumed. Unknown trailing JSON
/// fields are tolerated; unknown message types are not.
pub fn decode(bytes: &[u8]) -> Result<Option<(WireMessage, usize)>, WireError> {
    if bytes.len() < 4 {
        return Ok(None);
    }
    let len = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
    if len > MAX_FRAME_LEN {
        return Err(WireError::TooLarge(len));
    }
    if bytes.len() < 4 + len {
        return Ok(None);
    }
    let msg: WireMessage = serde_json::from_slice(&bytes[4..4 + len])
        .map_err(|e| WireError::Malformed(e.to_string()))?;
    Ok(Some((msg, 4 + len)))
}

/// Per-connection reassembly buffer for a byte stream of frames.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
}

impl FrameDecoder {
    pub fn new() -> FrameDecoder {
        FrameDecoder::default()
    }

    pub fn feed(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Pop the next complete message, if any.
    pub fn next(&mut self) -> Result<Option<WireMessage>, WireError> {
        match decode(&self.buf)? {
            Some((msg, consumed)) => {
                self.buf.drain(..consumed);
                Ok(Some(msg))
            }
            None => Ok(None),
        }
    }
}
