//! The performer's side of the duet: a scripted line, or live MIDI notes
//! quantized onto the grid as they arrive.

use crate::corpus::{quantize_events, GridCell, MeasureGrid, NoteEvent, STEPS_PER_MEASURE};
use crate::netio::{MidiEvent, MidiStatus};

/// Tracks live notes and renders the melody cells of recent measures.
#[derive(Debug, Clone)]
pub struct LiveMelody {
    tempo_bpm: f64,
    /// `(onset_s, off_s, velocity)`; `off_s` is `None` while held.
    notes: Vec<(f64, Option<f64>, u8)>,
}

impl LiveMelody {
    pub fn new(tempo_bpm: f64) -> Self {
        LiveMelody { tempo_bpm, notes: Vec::new() }
    }

    fn measure_s(&self) -> f64 {
        240.0 / self.tempo_bpm
    }

    /// Note-ons open a note (closing any held one); note-offs close it.
    pub fn push(&mut self, e: &MidiEvent) {
        let t = e.t_ms / 1000.0;
        if e.status == MidiStatus::NoteOn && e.velocity > 0 {
            self.close_held(t);
            self.notes.push((t, None, e.velocity));
        } else {
            self.close_held(t);
        }
    }

    fn close_held(&mut self, t: f64) {
        if let Some(last) = self.notes.last_mut() {
            if last.1.is_none() {
                last.1 = Some(t.max(last.0));
            }
        }
    }

    /// Melody cells of `measure` as heard by `now_s`; held notes sustain up
    /// to `now_s`. Notes are quantized from the start of the previous
    /// measure, so sustains carried over a barline are kept.
    pub fn measure_grid(&self, measure: usize, now_s: f64) -> MeasureGrid {
        let origin_measure = measure.saturating_sub(1);
        let origin = origin_measure as f64 * self.measure_s();
        let events: Vec<NoteEvent> = self
            .notes
            .iter()
            .filter(|(on, off, _)| *on <= now_s && off.unwrap_or(now_s) > origin)
            .map(|&(on, off, vel)| {
                let start = (on - origin).max(0.0);
                let end = off.unwrap_or(now_s).min(now_s) - origin;
                NoteEvent::melody(start, (end - start).max(0.0), vel)
            })
            .collect();
        let grids = quantize_events(&events, self.tempo_bpm, 2).expect("tempo checked by the engine");
        grids.into_iter().nth(measure - origin_measure).map(|g| g.melody_only()).unwrap_or_else(MeasureGrid::silent)
    }

    /// Drops notes that ended before `measure` began.
    pub fn forget_before(&mut self, measure: usize) {
        let cutoff = measure as f64 * self.measure_s();
        self.notes.retain(|(_, off, _)| off.is_none_or(|o| o >= cutoff));
    }
}

/// Melody cells of a scripted performance, cycling.
pub fn scripted_measure(script: &[MeasureGrid], measure: usize) -> MeasureGrid {
    if script.is_empty() {
        return MeasureGrid::silent();
    }
    script[measure % script.len()].melody_only()
}

/// `grid` with its last step blanked: the state one step before the barline.
pub fn without_last_step(grid: &MeasureGrid) -> MeasureGrid {
    let mut g = grid.clone();
    *g.cell_mut(STEPS_PER_MEASURE - 1) = GridCell::default();
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{MelodyState, VelocityBand};

    fn on(t_ms: f64) -> MidiEvent {
        MidiEvent::note_on(t_ms, 0, 60, 70).unwrap()
    }

    fn off(t_ms: f64) -> MidiEvent {
        MidiEvent::checked(t_ms, MidiStatus::NoteOff, 0, 60, 0).unwrap()
    }

    #[test]
    fn live_note_lands_on_grid() {
        // 120 bpm: step = 41.67 ms, measure = 2 s
        let mut m = LiveMelody::new(120.0);
        m.push(&on(2000.0 + 250.0));
        m.push(&off(2000.0 + 500.0));
        let g = m.measure_grid(1, 4.0);
        assert_eq!(g.cell(6).melody, MelodyState::Onset(VelocityBand::Mf));
        assert!((7..12).all(|k| g.cell(k).melody == MelodyState::Sustain));
        assert_eq!(g.cell(12).melody, MelodyState::None);
    }

    #[test]
    fn held_note_sustains_until_now_and_across_barline() {
        let mut m = LiveMelody::new(120.0);
        m.push(&on(1900.0));
        let g0 = m.measure_grid(0, 2.5);
        assert!(matches!(g0.cell(46).melody, MelodyState::Onset(_)));
        let g1 = m.measure_grid(1, 2.5);
        // held through 2.5 s: steps 0..=11 of measure 1 sustained
        assert!((0..12).all(|k| g1.cell(k).melody == MelodyState::Sustain));
        assert_eq!(g1.cell(12).melody, MelodyState::None);
    }

    #[test]
    fn forgetting_keeps_held_notes() {
        let mut m = LiveMelody::new(120.0);
        m.push(&on(100.0));
        m.push(&off(200.0));
        m.push(&on(4100.0));
        m.forget_before(1);
        assert_eq!(m.notes.len(), 1);
    }

    #[test]
    fn blank_last_step() {
        let mut g = MeasureGrid::silent();
        g.cell_mut(47).add_drum(36, VelocityBand::F);
        assert!(without_last_step(&g).is_silent());
    }
}
