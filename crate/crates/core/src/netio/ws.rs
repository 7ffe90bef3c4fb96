//! WebSocket broadcast of confidence frames to visualizer clients.

use std::collections::VecDeque;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::Duration;

use log::{debug, info};
use tungstenite::Message;

use super::NetError;

/// Frames buffered per client before the oldest is discarded.
pub const CLIENT_BUFFER_FRAMES: usize = 16;

/// Destination for serialized confidence frames. Must never block the caller.
pub trait FrameSink: Send + Sync {
    fn publish(&self, frame_json: &str);
}

/// Keeps every published frame in memory.
#[derive(Debug, Clone, Default)]
pub struct MemoryFrameSink {
    frames: Arc<Mutex<Vec<String>>>,
}

impl MemoryFrameSink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn frames(&self) -> Vec<String> {
        self.frames.lock().expect("frame sink poisoned").clone()
    }
}

impl FrameSink for MemoryFrameSink {
    fn publish(&self, frame_json: &str) {
        self.frames.lock().expect("frame sink poisoned").push(frame_json.to_string());
    }
}

/// Discards frames.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullFrameSink;

impl FrameSink for NullFrameSink {
    fn publish(&self, _frame_json: &str) {}
}

#[derive(Default)]
struct ClientQueue {
    frames: Mutex<VecDeque<Arc<str>>>,
    ready: Condvar,
    closed: AtomicBool,
    dropped: AtomicU64,
}

impl ClientQueue {
    fn push(&self, frame: Arc<str>) {
        let mut q = self.frames.lock().expect("client queue poisoned");
        q.push_back(frame);
        if q.len() > CLIENT_BUFFER_FRAMES {
            q.pop_front();
            self.dropped.fetch_add(1, Ordering::Relaxed);
        }
        drop(q);
        self.ready.notify_one();
    }

    fn pop(&self) -> Option<Arc<str>> {
        let mut q = self.frames.lock().expect("client queue poisoned");
        loop {
            if self.closed.load(Ordering::Relaxed) {
                return None;
            }
            if let Some(f) = q.pop_front() {
                return Some(f);
            }
            q = self.ready.wait_timeout(q, Duration::from_millis(200)).expect("client queue poisoned").0;
        }
    }
}

#[derive(Default)]
struct Shared {
    clients: Mutex<Vec<Arc<ClientQueue>>>,
    stop: AtomicBool,
}

/// Accepts WebSocket clients and fans every published frame out to them.
///
/// Each client has its own writer thread and a bounded drop-oldest queue, so
/// a slow or stalled client only loses its own stale frames.
pub struct VisualizerServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
}

impl VisualizerServer {
    pub fn bind<A: ToSocketAddrs>(addr: A) -> Result<Self, NetError> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let shared = Arc::new(Shared::default());
        let acceptor = shared.clone();
        thread::Builder::new().name("ws-accept".into()).spawn(move || {
            for stream in listener.incoming() {
                if acceptor.stop.load(Ordering::Relaxed) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let shared = acceptor.clone();
                let _ = thread::Builder::new().name("ws-client".into()).spawn(move || serve_client(stream, shared));
            }
        })?;
        info!("visualizer WebSocket listening on ws://{addr}");
        Ok(VisualizerServer { addr, shared })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn client_count(&self) -> usize {
        self.shared.clients.lock().expect("client list poisoned").len()
    }
}

fn serve_client(stream: TcpStream, shared: Arc<Shared>) {
    let peer = stream.peer_addr().ok();
    let _ = stream.set_nodelay(true);
    let mut ws = match tungstenite::accept(stream) {
        Ok(ws) => ws,
        Err(e) => {
            debug!("WebSocket handshake with {peer:?} failed: {e}");
            return;
        }
    };
    let queue = Arc::new(ClientQueue::default());
    shared.clients.lock().expect("client list poisoned").push(queue.clone());
    info!("visualizer client {peer:?} connected");
    while let Some(frame) = queue.pop() {
        if ws.send(Message::text(frame.as_ref())).is_err() {
            break;
        }
    }
    queue.closed.store(true, Ordering::Relaxed);
    shared.clients.lock().expect("client list poisoned").retain(|c| !Arc::ptr_eq(c, &queue));
    info!("visualizer client {peer:?} disconnected");
}

impl FrameSink for VisualizerServer {
    fn publish(&self, frame_json: &str) {
        let frame: Arc<str> = Arc::from(frame_json);
        let clients = self.shared.clients.lock().expect("client list poisoned");
        for c in clients.iter() {
            c.push(frame.clone());
        }
    }
}

impl Drop for VisualizerServer {
    fn drop(&mut self) {
        self.shared.stop.store(true, Ordering::Relaxed);
        for c in self.shared.clients.lock().expect("client list poisoned").iter() {
            c.closed.store(true, Ordering::Relaxed);
            c.ready.notify_all();
        }
        // Wake the acceptor so it sees the stop flag.
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_millis(100));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drop_oldest_queue() {
        let q = ClientQueue::default();
        for i in 0..20 {
            q.push(Arc::from(i.to_string().as_str()));
        }
        assert_eq!(q.frames.lock().unwrap().len(), CLIENT_BUFFER_FRAMES);
        assert_eq!(q.dropped.load(Ordering::Relaxed), 4);
        assert_eq!(q.pop().as_deref(), Some("4"));
    }

    #[test]
    fn busy_port_is_an_error() {
        let a = VisualizerServer::bind("127.0.0.1:0").unwrap();
        assert!(VisualizerServer::bind(a.local_addr()).is_err());
    }

    #[test]
    fn zero_clients_is_fine() {
        let s = VisualizerServer::bind("127.0.0.1:0").unwrap();
        for i in 0..100 {
            s.publish(&format!("{{\"n\":{i}}}"));
        }
        assert_eq!(s.client_count(), 0);
    }
}
