use std::net::TcpStream;
use std::thread;
use std::time::{Duration, Instant};

use duet_core::improviser::RealtimeGuard;
use duet_core::netio::{FrameSink, VisualizerServer, CLIENT_BUFFER_FRAMES};
use tungstenite::stream::MaybeTlsStream;
use tungstenite::{Message, WebSocket};

fn connect(server: &VisualizerServer) -> WebSocket<MaybeTlsStream<TcpStream>> {
    let (ws, _) = tungstenite::connect(format!("ws://{}", server.local_addr())).unwrap();
    ws
}

fn wait_for_clients(server: &VisualizerServer, n: usize) {
    let until = Instant::now() + Duration::from_secs(5);
    while server.client_count() < n {
        assert!(Instant::now() < until, "clients never registered");
        thread::sleep(Duration::from_millis(5));
    }
}

fn frame(i: usize) -> String {
    format!(r#"{{"t_ms":{},"c":0.5,"mode":"truthful","tempo":120.0,"beat_phase":0.0}}"#, i * 500)
}

fn read_text(ws: &mut WebSocket<MaybeTlsStream<TcpStream>>) -> String {
    loop {
        match ws.read().unwrap() {
            Message::Text(t) => return t.to_string(),
            Message::Ping(_) | Message::Pong(_) => continue,
            other => panic!("unexpected message {other:?}"),
        }
    }
}

#[test]
fn every_client_sees_the_same_stream() {
    let server = VisualizerServer::bind("127.0.0.1:0").unwrap();
    let mut a = connect(&server);
    let mut b = connect(&server);
    wait_for_clients(&server, 2);
    // Fewer frames than the buffer cap, so nothing is dropped.
    let sent: Vec<String> = (0..CLIENT_BUFFER_FRAMES).map(frame).collect();
    for f in &sent {
        server.publish(f);
    }
    let got_a: Vec<String> = (0..sent.len()).map(|_| read_text(&mut a)).collect();
    let got_b: Vec<String> = (0..sent.len()).map(|_| read_text(&mut b)).collect();
    assert_eq!(got_a, sent);
    assert_eq!(got_b, sent);
}

#[test]
fn no_clients_is_harmless() {
    let server = VisualizerServer::bind("127.0.0.1:0").unwrap();
    let t = Instant::now();
    for i in 0..100 {
        server.publish(&frame(i));
    }
    assert!(t.elapsed() < Duration::from_millis(50));
}

#[test]
fn disconnecting_client_is_forgotten() {
    let server = VisualizerServer::bind("127.0.0.1:0").unwrap();
    let mut a = connect(&server);
    wait_for_clients(&server, 1);
    a.close(None).unwrap();
    drop(a);
    let until = Instant::now() + Duration::from_secs(5);
    while server.client_count() > 0 {
        server.publish(&frame(0));
        assert!(Instant::now() < until, "closed client still registered");
        thread::sleep(Duration::from_millis(10));
    }
}

#[test]
fn stalled_client_never_slows_publishing() {
    let server = VisualizerServer::bind("127.0.0.1:0").unwrap();
    let _stalled = connect(&server);
    let mut live = connect(&server);
    wait_for_clients(&server, 2);
    // Large frames fill the stalled client's socket buffers quickly.
    let pad = "x".repeat(64 * 1024);
    let mut worst = Duration::ZERO;
    // On a single core the woken writer threads would otherwise preempt the
    // publisher; what is measured here is blocking, not scheduling.
    let rt = RealtimeGuard::acquire();
    for i in 0..400 {
        let f = format!(r#"{{"t_ms":{i},"pad":"{pad}"}}"#);
        let t = Instant::now();
        server.publish(&f);
        worst = worst.max(t.elapsed());
    }
    drop(rt);
    assert!(worst < Duration::from_millis(1), "publish took {worst:?}");
    // The other client still receives frames, minus the stale ones.
    assert!(read_text(&mut live).contains("t_ms"));
}
