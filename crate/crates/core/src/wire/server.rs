// SPDX-License-Identifier: Apache-2.0

use std::io::{self, Write};
use std::net::{SocketAddr, TcpListener};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use log::{debug, info, warn};

use super::{
    codes, read_frame, write_frame, Channel, ChannelWrapper, Empty, Frame, List, MessageType,
    Plaintext, Published, WireError, DEFAULT_MAX_FRAME,
};
use crate::cert::{AttestationPackage, Sca, ScaError, ScaResponse};
use crate::discovery::{
    passive_certify_lazy, passive_discover, DiscoveryData, PassiveRequest, PassiveResponse,
};

const READ_TIMEOUT: Duration = Duration::from_secs(60);

/// The SCA behind the wire protocol. Each connection is served on its own
/// thread; the SCA and its policy are shared read-only.
pub struct ScaService {
    sca: Sca,
    published: Published,
    max_frame: u32,
    log: Option<Mutex<Box<dyn Write + Send>>>,
}

impl ScaService {
    pub fn new(sca: Sca) -> Self {
        let published = Published {
            alg: sca.alg(),
            data: DiscoveryData::from_policy(sca.policy()),
        };
        ScaService {
            sca,
            published,
            max_frame: DEFAULT_MAX_FRAME,
            log: None,
        }
    }

    pub fn with_max_frame(mut self, max: u32) -> Self {
        self.max_frame = max;
        self
    }

    /// Appends one line per issued certificate to `w`.
    pub fn with_issuance_log(mut self, w: impl Write + Send + 'static) -> Self {
        self.log = Some(Mutex::new(Box::new(w)));
        self
    }

    pub fn sca(&self) -> &Sca {
        &self.sca
    }

    fn record(&self, issued: &[&ScaResponse]) {
        let Some(log) = &self.log else { return };
        let mut w = log.lock().unwrap_or_else(|p| p.into_inner());
        for r in issued {
            let m = r.manifest();
            let subject = m
                .subject
                .as_ref()
                .map_or("concealed".to_string(), |s| s.to_string());
            let line = format!(
                "issued timestamp={} mode={} subject={} aik={} properties={}\n",
                m.timestamp,
                r.certificate.mode(),
                subject,
                r.certificate.aik_id(),
                m.properties.len()
            );
            if let Err(e) = w.write_all(line.as_bytes()).and_then(|_| w.flush()) {
                warn!("issuance log write failed: {e}");
            }
        }
    }

    fn refused(e: ScaError) -> Frame {
        Frame::error(e.code(), &e.to_string())
    }

    /// Answers one request. An `Err` means the frame was malformed and the
    /// connection should be closed after reporting it.
    pub fn handle(&self, frame: &Frame) -> Result<Frame, WireError> {
        let Some(kind) = frame.message_type() else {
            return Ok(Frame::error(
                codes::UNKNOWN_TYPE,
                &WireError::UnknownType(frame.kind).to_string(),
            ));
        };
        let Some(reply) = kind.reply() else {
            return Ok(Frame::error(
                codes::UNKNOWN_TYPE,
                &format!("{kind} is not a request"),
            ));
        };
        let out = match kind {
            MessageType::Attest => {
                let q: AttestationPackage = frame.body()?;
                match self.sca.verify_and_issue(&q) {
                    Ok(r) => {
                        self.record(&[&r]);
                        Frame::message(reply, &r)
                    }
                    Err(e) => Self::refused(e),
                }
            }
            MessageType::PassiveDiscover => {
                let req: PassiveRequest = frame.body()?;
                match passive_discover(&self.sca, &req) {
                    Ok(resp) => {
                        if let PassiveResponse::Certified(v) = &resp {
                            self.record(&v.iter().map(|(_, r)| r).collect::<Vec<_>>());
                        }
                        Frame::message(reply, &resp)
                    }
                    Err(e) => Self::refused(e),
                }
            }
            MessageType::DiscoveryData => {
                frame.body::<Empty>()?;
                Frame::message(reply, &self.published)
            }
            MessageType::LazyQuotes => {
                let List(pkgs) = frame.body::<List<AttestationPackage>>()?;
                match passive_certify_lazy(&self.sca, &pkgs) {
                    Ok(rs) => {
                        self.record(&rs.iter().collect::<Vec<_>>());
                        Frame::message(reply, &List(rs))
                    }
                    Err(e) => Self::refused(e),
                }
            }
            _ => unreachable!("only requests have replies"),
        };
        Ok(out)
    }

    /// Serves frames until the peer closes or sends a malformed frame.
    pub fn serve_channel(&self, ch: &mut dyn Channel) {
        loop {
            let frame = match read_frame(ch, self.max_frame) {
                Ok(Some(f)) => f,
                Ok(None) => return,
                Err(WireError::Io(e)) => {
                    debug!("connection error: {e}");
                    return;
                }
                Err(e) => {
                    debug!("malformed frame: {e}");
                    let _ = write_frame(ch, &Frame::error(e.code(), &e.to_string()));
                    return;
                }
            };
            let (reply, close) = match self.handle(&frame) {
                Ok(f) => (f, false),
                Err(e) => (Frame::error(e.code(), &e.to_string()), true),
            };
            if let Err(e) = write_frame(ch, &reply) {
                debug!("reply failed: {e}");
                return;
            }
            if close {
                return;
            }
        }
    }
}

/// Accepts connections until the listener fails.
pub fn serve(
    listener: TcpListener,
    service: Arc<ScaService>,
    wrapper: Arc<dyn ChannelWrapper>,
) -> io::Result<()> {
    info!("serving on {}", listener.local_addr()?);
    for stream in listener.incoming() {
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                warn!("accept failed: {e}");
                continue;
            }
        };
        let service = Arc::clone(&service);
        let wrapper = Arc::clone(&wrapper);
        thread::spawn(move || {
            let peer = stream.peer_addr().ok();
            if let Err(e) = stream.set_read_timeout(Some(READ_TIMEOUT)) {
                warn!("set timeout: {e}");
            }
            match wrapper.wrap(stream) {
                Ok(mut ch) => {
                    debug!("session from {peer:?}");
                    service.serve_channel(ch.as_mut());
                }
                Err(e) => warn!("channel setup for {peer:?} failed: {e}"),
            }
        });
    }
    Ok(())
}

/// Binds an ephemeral loopback port and serves plaintext frames from a
/// background thread.
pub fn spawn_local(service: Arc<ScaService>) -> io::Result<SocketAddr> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    thread::spawn(move || serve(listener, service, Arc::new(Plaintext)));
    Ok(addr)
}
