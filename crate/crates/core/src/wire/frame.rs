// SPDX-License-Identifier: Apache-2.0

use std::fmt;
use std::io::{self, Read, Write};

use super::WireError;
use crate::codec::{Canonical, DecodeError, Decoder, Encoder};

/// Payload format version carried as the first payload byte.
pub const PROTOCOL_VERSION: u8 = 1;

/// Largest accepted `length` field (type byte plus payload).
pub const DEFAULT_MAX_FRAME: u32 = 16 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MessageType {
    Attest,
    PassiveDiscover,
    DiscoveryData,
    LazyQuotes,
    AttestOk,
    PassiveOk,
    DiscoveryDataOk,
    LazyQuotesOk,
    Error,
}

impl MessageType {
    pub const ALL: [MessageType; 9] = [
        MessageType::Attest,
        MessageType::PassiveDiscover,
        MessageType::DiscoveryData,
        MessageType::LazyQuotes,
        MessageType::AttestOk,
        MessageType::PassiveOk,
        MessageType::DiscoveryDataOk,
        MessageType::LazyQuotesOk,
        MessageType::Error,
    ];

    pub fn byte(self) -> u8 {
        match self {
            MessageType::Attest => 0x01,
            MessageType::PassiveDiscover => 0x02,
            MessageType::DiscoveryData => 0x03,
            MessageType::LazyQuotes => 0x04,
            MessageType::AttestOk => 0x81,
            MessageType::PassiveOk => 0x82,
            MessageType::DiscoveryDataOk => 0x83,
            MessageType::LazyQuotesOk => 0x84,
            MessageType::Error => 0xFF,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.byte() == b)
    }

    /// The success reply to a request type.
    pub fn reply(self) -> Option<Self> {
        match self {
            MessageType::Attest => Some(MessageType::AttestOk),
            MessageType::PassiveDiscover => Some(MessageType::PassiveOk),
            MessageType::DiscoveryData => Some(MessageType::DiscoveryDataOk),
            MessageType::LazyQuotes => Some(MessageType::LazyQuotesOk),
            _ => None,
        }
    }
}

impl fmt::Display for MessageType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}(0x{:02x})", self, self.byte())
    }
}

/// `length (u32 BE) | type (u8) | payload`, with `length = payload + 1`.
/// The type byte is kept raw so unknown types survive until dispatch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub kind: u8,
    pub payload: Vec<u8>,
}

impl Frame {
    /// A protocol message: version byte followed by the canonical encoding.
    pub fn message<T: Canonical>(kind: MessageType, body: &T) -> Self {
        let mut payload = vec![PROTOCOL_VERSION];
        payload.extend(body.to_canonical_bytes());
        Frame {
            kind: kind.byte(),
            payload,
        }
    }

    pub fn error(code: u8, message: &str) -> Self {
        Frame::message(
            MessageType::Error,
            &ErrorBody {
                code,
                message: message.to_string(),
            },
        )
    }

    pub fn message_type(&self) -> Option<MessageType> {
        MessageType::from_byte(self.kind)
    }

    /// Checks the version byte and decodes the rest.
    pub fn body<T: Canonical>(&self) -> Result<T, WireError> {
        match self.payload.split_first() {
            Some((&PROTOCOL_VERSION, rest)) => Ok(T::from_canonical_bytes(rest)?),
            Some((&v, _)) => Err(WireError::Version(v)),
            None => Err(WireError::Version(0)),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let len = u32::try_from(self.payload.len() + 1).expect("frame fits u32");
        let mut out = Vec::with_capacity(self.payload.len() + 5);
        out.extend(len.to_be_bytes());
        out.push(self.kind);
        out.extend(&self.payload);
        out
    }
}

/// Reads one frame. `Ok(None)` means the peer closed cleanly between frames.
pub fn read_frame<R: Read + ?Sized>(r: &mut R, max: u32) -> Result<Option<Frame>, WireError> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(WireError::Truncated),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_be_bytes(len);
    if len == 0 {
        return Err(WireError::EmptyFrame);
    }
    if len > max {
        return Err(WireError::TooLarge(len));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => WireError::Truncated,
        _ => e.into(),
    })?;
    let payload = buf.split_off(1);
    Ok(Some(Frame {
        kind: buf[0],
        payload,
    }))
}

pub fn write_frame<W: Write + ?Sized>(w: &mut W, frame: &Frame) -> Result<(), WireError> {
    w.write_all(&frame.to_bytes())?;
    w.flush()?;
    Ok(())
}

/// Body of an error frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ErrorBody {
    pub code: u8,
    pub message: String,
}

impl Canonical for ErrorBody {
    fn encode(&self, enc: &mut Encoder) {
        enc.u8(self.code).str(&self.message);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(ErrorBody {
            code: dec.u8()?,
            message: dec.str()?.to_string(),
        })
    }
}

/// Empty request body.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Empty;

impl Canonical for Empty {
    fn encode(&self, _: &mut Encoder) {}

    fn decode(_: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Empty)
    }
}

/// A list of protocol objects.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct List<T>(pub Vec<T>);

impl<T: Canonical> Canonical for List<T> {
    fn encode(&self, enc: &mut Encoder) {
        enc.seq(&self.0, |e, x| {
            e.encode(x);
        });
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(List(dec.seq(|d| d.decode())?))
    }
}
