//! QSC request/response over OSC, plus in-process sources for headless runs.
//!
//! The engine sends `/sc/query <id:int32>`; the service answers
//! `/sc/value <id:int32> <level:string>` with level one of `High`, `Med`, `Low`.

use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use super::signal::Baseline;
use super::stream::ScStream;
use super::{BiometricError, QscLevel};
use crate::netio::{osc_decode, osc_encode, OscArg, OscMessage};

pub const QUERY_ADDRESS: &str = "/sc/query";
pub const VALUE_ADDRESS: &str = "/sc/value";
/// The engine never waits longer than this for a biometric answer.
pub const DEFAULT_QUERY_TIMEOUT: Duration = Duration::from_millis(20);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QscReply {
    pub request_id: i32,
    pub level: QscLevel,
    /// True when the level is the `Med` fallback rather than a real answer.
    pub fallback: bool,
}

/// Anything that can answer "what is the QSC level at the start of this measure".
pub trait QscSource: Send {
    fn query(&mut self, request_id: i32, t_session_s: f64) -> QscReply;
}

/// Always answers the same level.
#[derive(Debug, Clone, Copy)]
pub struct FixedQsc(pub QscLevel);

impl QscSource for FixedQsc {
    fn query(&mut self, request_id: i32, _t: f64) -> QscReply {
        QscReply { request_id, level: self.0, fallback: false }
    }
}

/// Replays a per-measure script, cycling when it runs out.
#[derive(Debug, Clone)]
pub struct ScriptedQsc {
    levels: Vec<QscLevel>,
    next: usize,
}

impl ScriptedQsc {
    pub fn new(levels: Vec<QscLevel>) -> Self {
        ScriptedQsc { levels, next: 0 }
    }
}

impl QscSource for ScriptedQsc {
    fn query(&mut self, request_id: i32, _t: f64) -> QscReply {
        if self.levels.is_empty() {
            return QscReply { request_id, level: QscLevel::Med, fallback: true };
        }
        let level = self.levels[self.next % self.levels.len()];
        self.next += 1;
        QscReply { request_id, level, fallback: false }
    }
}

/// In-process source reading a sensor stream directly (no sockets).
pub struct LoopbackQsc {
    pub stream: Arc<ScStream>,
    pub baseline: Baseline,
}

impl QscSource for LoopbackQsc {
    fn query(&mut self, request_id: i32, t_session_s: f64) -> QscReply {
        QscReply { request_id, level: self.stream.level_at(&self.baseline, t_session_s), fallback: false }
    }
}

/// UDP client for a remote biometric service.
pub struct OscQscClient {
    socket: UdpSocket,
    server: SocketAddr,
    timeout: Duration,
}

impl OscQscClient {
    pub fn connect<A: ToSocketAddrs>(server: A, timeout: Duration) -> Result<Self, BiometricError> {
        let server = server.to_socket_addrs()?.next().ok_or_else(|| BiometricError::Service("no address for biometric service".into()))?;
        let bind: SocketAddr = if server.is_ipv4() { "0.0.0.0:0" } else { "[::]:0" }.parse().expect("literal address");
        let socket = UdpSocket::bind(bind)?;
        Ok(OscQscClient { socket, server, timeout })
    }

    fn try_query(&self, request_id: i32) -> Result<QscLevel, BiometricError> {
        let packet = osc_encode(&OscMessage::new(QUERY_ADDRESS, vec![OscArg::Int(request_id)]))?;
        self.socket.send_to(&packet, self.server)?;
        let deadline = Instant::now() + self.timeout;
        let mut buf = [0u8; 512];
        loop {
            let remaining = deadline.saturating_duration_since(Instant::now());
            if remaining.is_zero() {
                return Err(BiometricError::Timeout);
            }
            self.socket.set_read_timeout(Some(remaining))?;
            let n = match self.socket.recv_from(&mut buf) {
                Ok((n, _)) => n,
                Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {
                    return Err(BiometricError::Timeout)
                }
                Err(e) => return Err(e.into()),
            };
            let Ok(msg) = osc_decode(&buf[..n]) else { continue };
            match parse_value(&msg) {
                Some((id, level)) if id == request_id => return Ok(level),
                // A late answer to an earlier query.
                _ => continue,
            }
        }
    }
}

impl QscSource for OscQscClient {
    fn query(&mut self, request_id: i32, _t: f64) -> QscReply {
        match self.try_query(request_id) {
            Ok(level) => QscReply { request_id, level, fallback: false },
            Err(e) => {
                warn!("QSC query {request_id}: {e}; using Med");
                QscReply { request_id, level: QscLevel::Med, fallback: true }
            }
        }
    }
}

fn parse_value(msg: &OscMessage) -> Option<(i32, QscLevel)> {
    if msg.address != VALUE_ADDRESS {
        return None;
    }
    match msg.args.as_slice() {
        [OscArg::Int(id), OscArg::Str(level)] => Some((*id, level.parse().ok()?)),
        _ => None,
    }
}

/// UDP biometric service answering `/sc/query` with the current level.
pub struct QscServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl QscServer {
    pub fn spawn<A, F>(bind: A, current_level: F) -> Result<Self, BiometricError>
    where
        A: ToSocketAddrs,
        F: Fn() -> QscLevel + Send + 'static,
    {
        let socket = UdpSocket::bind(bind)?;
        socket.set_read_timeout(Some(Duration::from_millis(50)))?;
        let addr = socket.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let stop_flag = stop.clone();
        let handle = thread::Builder::new().name("qsc-server".into()).spawn(move || {
            let mut buf = [0u8; 512];
            while !stop_flag.load(Ordering::Relaxed) {
                let (n, peer) = match socket.recv_from(&mut buf) {
                    Ok(x) => x,
                    Err(_) => continue,
                };
                let msg = match osc_decode(&buf[..n]) {
                    Ok(m) => m,
                    Err(e) => {
                        debug!("ignoring malformed OSC packet from {peer}: {e}");
                        continue;
                    }
                };
                let id = match (msg.address.as_str(), msg.args.as_slice()) {
                    (QUERY_ADDRESS, [OscArg::Int(id)]) => *id,
                    _ => continue,
                };
                let reply = OscMessage::new(VALUE_ADDRESS, vec![OscArg::Int(id), OscArg::Str(current_level().to_string())]);
                if let Ok(bytes) = osc_encode(&reply) {
                    let _ = socket.send_to(&bytes, peer);
                }
            }
        })?;
        Ok(QscServer { addr, stop, handle: Some(handle) })
    }

    /// Serves the level of a live sensor stream at its latest sample.
    pub fn spawn_for_stream<A: ToSocketAddrs>(bind: A, stream: Arc<ScStream>, baseline: Baseline) -> Result<Self, BiometricError> {
        Self::spawn(bind, move || match stream.latest() {
            Some(s) => stream.level_at(&baseline, s.t_s),
            None => QscLevel::Med,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }
}

impl Drop for QscServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}
