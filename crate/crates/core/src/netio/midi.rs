//! MIDI events, sinks and sources.
//!
//! Hardware ports are reached through raw MIDI bytes over UDP (one or more
//! 3-byte channel messages per datagram), which any rtpMIDI/virtual-port
//! bridge can relay. Everything also has an in-process variant.

use std::fs::File;
use std::io::BufWriter;
use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::path::Path;
use std::sync::{mpsc, Arc, Mutex};

use midly::num::{u15, u24, u28, u4, u7};
use midly::{Format, Header, MetaMessage, MidiMessage, Smf, Timing, TrackEvent, TrackEventKind};
use serde::{Deserialize, Serialize};

use super::NetError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MidiStatus {
    NoteOn,
    NoteOff,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MidiEvent {
    pub t_ms: f64,
    pub status: MidiStatus,
    pub channel: u8,
    pub pitch: u8,
    pub velocity: u8,
}

impl MidiEvent {
    pub fn note_on(t_ms: f64, channel: u8, pitch: u8, velocity: u8) -> Result<Self, NetError> {
        Self::checked(t_ms, MidiStatus::NoteOn, channel, pitch, velocity)
    }

    pub fn checked(t_ms: f64, status: MidiStatus, channel: u8, pitch: u8, velocity: u8) -> Result<Self, NetError> {
        if channel > 15 || pitch > 127 || velocity > 127 {
            return Err(NetError::Midi(format!("out of range: channel {channel}, pitch {pitch}, velocity {velocity}")));
        }
        Ok(MidiEvent { t_ms, status, channel, pitch, velocity })
    }

    pub fn to_bytes(&self) -> [u8; 3] {
        let status = match self.status {
            MidiStatus::NoteOn => 0x90,
            MidiStatus::NoteOff => 0x80,
        };
        [status | self.channel, self.pitch, self.velocity]
    }

    /// Parses a run of 3-byte note messages; other messages are skipped.
    /// A note-on with velocity 0 is reported as note-off.
    pub fn parse_bytes(bytes: &[u8], t_ms: f64) -> Vec<MidiEvent> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < bytes.len() {
            let b = bytes[i];
            if b & 0x80 == 0 {
                i += 1;
                continue;
            }
            let len = match b & 0xF0 {
                0x80 | 0x90 | 0xA0 | 0xB0 | 0xE0 => 3,
                0xC0 | 0xD0 => 2,
                _ => 1,
            };
            if i + len > bytes.len() {
                break;
            }
            if len == 3 && (b & 0xF0 == 0x80 || b & 0xF0 == 0x90) {
                let (pitch, vel) = (bytes[i + 1] & 0x7F, bytes[i + 2] & 0x7F);
                let status = if b & 0xF0 == 0x90 && vel > 0 { MidiStatus::NoteOn } else { MidiStatus::NoteOff };
                out.push(MidiEvent { t_ms, status, channel: b & 0x0F, pitch, velocity: vel });
            }
            i += len;
        }
        out
    }
}

pub trait MidiSink: Send {
    fn send(&mut self, event: &MidiEvent) -> Result<(), NetError>;

    fn finish(&mut self) -> Result<(), NetError> {
        Ok(())
    }
}

/// Records events in memory; clones share the same buffer.
#[derive(Debug, Clone, Default)]
pub struct MemoryMidiSink {
    events: Arc<Mutex<Vec<MidiEvent>>>,
}

impl MemoryMidiSink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn events(&self) -> Vec<MidiEvent> {
        self.events.lock().expect("midi sink poisoned").clone()
    }
}

impl MidiSink for MemoryMidiSink {
    fn send(&mut self, event: &MidiEvent) -> Result<(), NetError> {
        self.events.lock().expect("midi sink poisoned").push(*event);
        Ok(())
    }
}

/// Sends raw MIDI bytes in UDP datagrams.
pub struct UdpMidiSink {
    socket: UdpSocket,
    target: SocketAddr,
}

impl UdpMidiSink {
    pub fn connect<A: ToSocketAddrs>(target: A) -> Result<Self, NetError> {
        let target = target.to_socket_addrs()?.next().ok_or_else(|| NetError::Midi("no address for MIDI target".into()))?;
        let socket = UdpSocket::bind(if target.is_ipv4() { "0.0.0.0:0" } else { "[::]:0" })?;
        Ok(UdpMidiSink { socket, target })
    }
}

impl MidiSink for UdpMidiSink {
    fn send(&mut self, event: &MidiEvent) -> Result<(), NetError> {
        self.socket.send_to(&event.to_bytes(), self.target)?;
        Ok(())
    }
}

/// Collects events and writes a format-0 Standard MIDI File on `finish`.
pub struct SmfRecorder {
    path: std::path::PathBuf,
    tempo_bpm: f64,
    events: Vec<MidiEvent>,
}

const SMF_PPQ: u16 = 480;

impl SmfRecorder {
    pub fn new(path: impl AsRef<Path>, tempo_bpm: f64) -> Self {
        SmfRecorder { path: path.as_ref().to_path_buf(), tempo_bpm, events: Vec::new() }
    }
}

/// Encodes timed events as a format-0 SMF.
pub fn events_to_smf(events: &[MidiEvent], tempo_bpm: f64) -> Result<Vec<u8>, NetError> {
    let mut sorted = events.to_vec();
    sorted.sort_by(|a, b| a.t_ms.total_cmp(&b.t_ms));
    let ticks_per_ms = tempo_bpm / 60_000.0 * SMF_PPQ as f64;
    let us_per_beat = (60_000_000.0 / tempo_bpm).round() as u32;
    let mut track = vec![TrackEvent { delta: u28::new(0), kind: TrackEventKind::Meta(MetaMessage::Tempo(u24::new(us_per_beat))) }];
    let mut last_tick = 0u64;
    for e in &sorted {
        let tick = (e.t_ms.max(0.0) * ticks_per_ms).round() as u64;
        let delta = u28::try_from((tick - last_tick.min(tick)) as u32).ok_or_else(|| NetError::Midi("delta time too large".into()))?;
        last_tick = tick.max(last_tick);
        let (key, vel) = (u7::new(e.pitch), u7::new(e.velocity));
        let message = match e.status {
            MidiStatus::NoteOn => MidiMessage::NoteOn { key, vel },
            MidiStatus::NoteOff => MidiMessage::NoteOff { key, vel },
        };
        track.push(TrackEvent { delta, kind: TrackEventKind::Midi { channel: u4::new(e.channel), message } });
    }
    track.push(TrackEvent { delta: u28::new(0), kind: TrackEventKind::Meta(MetaMessage::EndOfTrack) });
    let smf = Smf { header: Header::new(Format::SingleTrack, Timing::Metrical(u15::new(SMF_PPQ))), tracks: vec![track] };
    let mut out = Vec::new();
    smf.write_std(&mut out)?;
    Ok(out)
}

impl MidiSink for SmfRecorder {
    fn send(&mut self, event: &MidiEvent) -> Result<(), NetError> {
        self.events.push(*event);
        Ok(())
    }

    fn finish(&mut self) -> Result<(), NetError> {
        let bytes = events_to_smf(&self.events, self.tempo_bpm)?;
        let mut w = BufWriter::new(File::create(&self.path)?);
        std::io::Write::write_all(&mut w, &bytes)?;
        Ok(())
    }
}

/// Sends every event to each inner sink.
pub struct TeeMidiSink(pub Vec<Box<dyn MidiSink>>);

impl MidiSink for TeeMidiSink {
    fn send(&mut self, event: &MidiEvent) -> Result<(), NetError> {
        for s in &mut self.0 {
            s.send(event)?;
        }
        Ok(())
    }

    fn finish(&mut self) -> Result<(), NetError> {
        for s in &mut self.0 {
            s.finish()?;
        }
        Ok(())
    }
}

/// Non-blocking source of live MIDI input. Events are stamped by the caller
/// with their arrival time.
pub trait MidiSource: Send {
    fn poll(&mut self, now_ms: f64) -> Vec<MidiEvent>;
}

/// In-process source fed through a channel.
pub struct ChannelMidiSource {
    rx: mpsc::Receiver<MidiEvent>,
}

impl ChannelMidiSource {
    pub fn new() -> (mpsc::Sender<MidiEvent>, Self) {
        let (tx, rx) = mpsc::channel();
        (tx, ChannelMidiSource { rx })
    }
}

impl MidiSource for ChannelMidiSource {
    fn poll(&mut self, now_ms: f64) -> Vec<MidiEvent> {
        self.rx.try_iter().map(|e| MidiEvent { t_ms: now_ms, ..e }).collect()
    }
}

/// Receives raw MIDI bytes over UDP.
pub struct UdpMidiSource {
    socket: UdpSocket,
}

impl UdpMidiSource {
    pub fn bind<A: ToSocketAddrs>(addr: A) -> Result<Self, NetError> {
        let socket = UdpSocket::bind(addr)?;
        socket.set_nonblocking(true)?;
        Ok(UdpMidiSource { socket })
    }

    pub fn local_addr(&self) -> Result<SocketAddr, NetError> {
        Ok(self.socket.local_addr()?)
    }
}

impl MidiSource for UdpMidiSource {
    fn poll(&mut self, now_ms: f64) -> Vec<MidiEvent> {
        let mut out = Vec::new();
        let mut buf = [0u8; 1024];
        while let Ok((n, _)) = self.socket.recv_from(&mut buf) {
            out.extend(MidiEvent::parse_bytes(&buf[..n], now_ms));
        }
        out
    }
}
