//! Transports: OSC codec, MIDI in/out, and the visualizer WebSocket server.
//! Every transport has an in-process variant so engine tests need no sockets.

mod midi;
mod osc;
mod ws;

pub use midi::{
    events_to_smf, ChannelMidiSource, MemoryMidiSink, MidiEvent, MidiSink, MidiSource, MidiStatus, SmfRecorder, TeeMidiSink, UdpMidiSink,
    UdpMidiSource,
};
pub use osc::{osc_decode, osc_encode, OscArg, OscMessage};
pub use ws::{FrameSink, MemoryFrameSink, NullFrameSink, VisualizerServer, CLIENT_BUFFER_FRAMES};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("OSC: {0}")]
    Osc(String),
    #[error("MIDI: {0}")]
    Midi(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
