// SPDX-License-Identifier: Apache-2.0

//! Framed binary protocol between platforms, validators and the SCA.
//!
//! Frames travel in plaintext. Confidentiality and integrity of the channel
//! are left to the deployment; a [`ChannelWrapper`] can layer them over
//! each accepted or opened TCP stream.

mod client;
mod frame;
mod server;

use std::io::{self, Read, Write};
use std::net::TcpStream;

use thiserror::Error;

use crate::codec::{Canonical, DecodeError, Decoder, Encoder};
use crate::crypto::HashAlg;
use crate::discovery::DiscoveryData;

pub use client::Client;
pub use frame::{
    read_frame, write_frame, Empty, ErrorBody, Frame, List, MessageType, DEFAULT_MAX_FRAME,
    PROTOCOL_VERSION,
};
pub use server::{serve, spawn_local, ScaService};

/// Error codes for protocol-level failures. SCA refusals use the codes of
/// [`crate::cert::ScaError`], all below these.
pub mod codes {
    pub const MALFORMED: u8 = 0x40;
    pub const UNKNOWN_TYPE: u8 = 0x41;
    pub const VERSION: u8 = 0x42;
    pub const DECODE: u8 = 0x43;
    pub const TOO_LARGE: u8 = 0x44;
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("connection closed mid-frame")]
    Truncated,
    #[error("zero-length frame")]
    EmptyFrame,
    #[error("frame of {0} bytes exceeds the limit")]
    TooLarge(u32),
    #[error("unknown message type 0x{0:02x}")]
    UnknownType(u8),
    #[error("unsupported payload version {0}")]
    Version(u8),
    #[error("payload: {0}")]
    Decode(#[from] DecodeError),
    #[error("peer closed the connection")]
    Closed,
    #[error("unexpected reply type 0x{0:02x}")]
    UnexpectedReply(u8),
    #[error("remote error {code}: {message}")]
    Remote { code: u8, message: String },
}

impl WireError {
    /// Code sent back when this error is reported to the peer.
    pub fn code(&self) -> u8 {
        match self {
            WireError::UnknownType(_) => codes::UNKNOWN_TYPE,
            WireError::Version(_) => codes::VERSION,
            WireError::Decode(_) => codes::DECODE,
            WireError::TooLarge(_) => codes::TOO_LARGE,
            _ => codes::MALFORMED,
        }
    }
}

/// A byte stream carrying frames.
pub trait Channel: Read + Write + Send {}

impl<T: Read + Write + Send> Channel for T {}

/// Hook for transport security: turns a raw TCP stream into the channel
/// frames are exchanged over.
pub trait ChannelWrapper: Send + Sync {
    fn wrap(&self, stream: TcpStream) -> io::Result<Box<dyn Channel>>;
}

/// No protection; frames go over the stream as is.
#[derive(Clone, Copy, Debug, Default)]
pub struct Plaintext;

impl ChannelWrapper for Plaintext {
    fn wrap(&self, stream: TcpStream) -> io::Result<Box<dyn Channel>> {
        Ok(Box::new(stream))
    }
}

/// Discovery data as served, with the hash algorithm it refers to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Published {
    pub alg: HashAlg,
    pub data: DiscoveryData,
}

impl Canonical for Published {
    fn encode(&self, enc: &mut Encoder) {
        enc.u8(self.alg.id()).encode(&self.data);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let id = dec.u8()?;
        let alg =
            HashAlg::from_id(id).ok_or_else(|| dec.invalid(format!("unknown hash id {id}")))?;
        Ok(Published {
            alg,
            data: dec.decode()?,
        })
    }
}
