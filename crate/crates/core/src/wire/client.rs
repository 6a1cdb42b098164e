// SPDX-License-Identifier: Apache-2.0

use std::net::{TcpStream, ToSocketAddrs};

use super::{
    read_frame, write_frame, Channel, ChannelWrapper, Empty, ErrorBody, Frame, List, MessageType,
    Plaintext, Published, WireError, DEFAULT_MAX_FRAME,
};
use crate::cert::{AttestationPackage, ScaResponse};
use crate::codec::Canonical;
use crate::discovery::{PassiveRequest, PassiveResponse};

/// One session with an SCA service. Requests are answered in order.
pub struct Client {
    ch: Box<dyn Channel>,
    max_frame: u32,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, WireError> {
        Self::connect_with(addr, &Plaintext)
    }

    pub fn connect_with(
        addr: impl ToSocketAddrs,
        wrapper: &dyn ChannelWrapper,
    ) -> Result<Self, WireError> {
        let stream = TcpStream::connect(addr)?;
        Ok(Self::from_channel(wrapper.wrap(stream)?))
    }

    pub fn from_channel(ch: Box<dyn Channel>) -> Self {
        Client {
            ch,
            max_frame: DEFAULT_MAX_FRAME,
        }
    }

    pub fn request<Req: Canonical, Resp: Canonical>(
        &mut self,
        kind: MessageType,
        body: &Req,
    ) -> Result<Resp, WireError> {
        write_frame(&mut self.ch, &Frame::message(kind, body))?;
        let reply = read_frame(&mut self.ch, self.max_frame)?.ok_or(WireError::Closed)?;
        match reply.message_type() {
            Some(t) if Some(t) == kind.reply() => reply.body(),
            Some(MessageType::Error) => {
                let ErrorBody { code, message } = reply.body()?;
                Err(WireError::Remote { code, message })
            }
            _ => Err(WireError::UnexpectedReply(reply.kind)),
        }
    }

    pub fn attest(&mut self, q: &AttestationPackage) -> Result<ScaResponse, WireError> {
        self.request(MessageType::Attest, q)
    }

    pub fn passive_discover(&mut self, req: &PassiveRequest) -> Result<PassiveResponse, WireError> {
        self.request(MessageType::PassiveDiscover, req)
    }

    pub fn discovery_data(&mut self) -> Result<Published, WireError> {
        self.request(MessageType::DiscoveryData, &Empty)
    }

    pub fn lazy_quotes(
        &mut self,
        pkgs: &[AttestationPackage],
    ) -> Result<Vec<ScaResponse>, WireError> {
        let List(rs) = self.request(MessageType::LazyQuotes, &List(pkgs.to_vec()))?;
        Ok(rs)
    }
}
