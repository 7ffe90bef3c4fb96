//! Standard MIDI File ingestion.
//!
//! Channel 10 (index 9) carries drum hits; every other channel is treated as
//! the monophonic melody line. Ticks are converted beat-relative, so the file
//! is read against the click-track tempo rather than its own tempo map.

use std::collections::HashMap;

use midly::{MidiMessage, Smf, Timing, TrackEventKind};

use super::quantize::NoteEvent;
use super::CorpusError;

pub const DRUM_CHANNEL: u8 = 9;

pub fn events_from_smf(bytes: &[u8], tempo_bpm: f64) -> Result<Vec<NoteEvent>, CorpusError> {
    let smf = Smf::parse(bytes).map_err(|e| CorpusError::Midi(e.to_string()))?;
    let ppq = match smf.header.timing {
        Timing::Metrical(t) => t.as_int() as f64,
        Timing::Timecode(..) => return Err(CorpusError::Midi("SMPTE timecode timing is not supported".into())),
    };
    let seconds_per_tick = 60.0 / tempo_bpm / ppq;
    let mut events = Vec::new();
    for track in &smf.tracks {
        let mut tick: u64 = 0;
        // (channel, key) -> (onset tick, velocity)
        let mut open: HashMap<(u8, u8), (u64, u8)> = HashMap::new();
        for ev in track {
            tick += ev.delta.as_int() as u64;
            let TrackEventKind::Midi { channel, message } = ev.kind else { continue };
            let channel = channel.as_int();
            let (key, vel, on) = match message {
                MidiMessage::NoteOn { key, vel } => (key.as_int(), vel.as_int(), vel.as_int() > 0),
                MidiMessage::NoteOff { key, vel } => (key.as_int(), vel.as_int(), false),
                _ => continue,
            };
            let t = tick as f64 * seconds_per_tick;
            if channel == DRUM_CHANNEL {
                if on {
                    events.push(NoteEvent::drum(t, key, vel));
                }
            } else if on {
                if let Some((start, v)) = open.insert((channel, key), (tick, vel)) {
                    // Retriggered without a note-off.
                    let dur = (tick - start) as f64 * seconds_per_tick;
                    events.push(NoteEvent::melody(start as f64 * seconds_per_tick, dur, v));
                }
            } else if let Some((start, v)) = open.remove(&(channel, key)) {
                let dur = (tick - start) as f64 * seconds_per_tick;
                events.push(NoteEvent::melody(start as f64 * seconds_per_tick, dur, v));
            }
        }
        for ((_, _), (start, v)) in open {
            let dur = (tick - start) as f64 * seconds_per_tick;
            events.push(NoteEvent::melody(start as f64 * seconds_per_tick, dur, v));
        }
    }
    events.sort_by(|a, b| a.onset_s.total_cmp(&b.onset_s));
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::quantize::EventKind;
    use midly::num::{u15, u28, u4, u7};
    use midly::{Format, Header, TrackEvent};

    fn ev(delta: u32, channel: u8, message: MidiMessage) -> TrackEvent<'static> {
        TrackEvent { delta: u28::new(delta), kind: TrackEventKind::Midi { channel: u4::new(channel), message } }
    }

    #[test]
    fn drums_and_melody_split_by_channel() {
        let track = vec![
            ev(0, 9, MidiMessage::NoteOn { key: u7::new(36), vel: u7::new(80) }),
            ev(0, 0, MidiMessage::NoteOn { key: u7::new(60), vel: u7::new(50) }),
            ev(240, 0, MidiMessage::NoteOff { key: u7::new(60), vel: u7::new(0) }),
            ev(240, 9, MidiMessage::NoteOn { key: u7::new(38), vel: u7::new(100) }),
        ];
        let smf = Smf { header: Header::new(Format::SingleTrack, Timing::Metrical(u15::new(480))), tracks: vec![track] };
        let mut bytes = Vec::new();
        smf.write_std(&mut bytes).unwrap();
        let events = events_from_smf(&bytes, 120.0).unwrap();
        assert_eq!(events.len(), 3);
        assert_eq!(events[0].kind, EventKind::Drum { pitch: 36 });
        match events[1].kind {
            EventKind::Melody { duration_s } => assert!((duration_s - 0.25).abs() < 1e-12),
            _ => panic!("expected melody"),
        }
        assert!((events[2].onset_s - 0.5).abs() < 1e-12);
    }

    #[test]
    fn garbage_is_an_error() {
        assert!(matches!(events_from_smf(b"not a midi file", 120.0), Err(CorpusError::Midi(_))));
    }
}
