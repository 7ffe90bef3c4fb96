//! Snapping timed performance events onto the 12-steps-per-beat grid.

use serde::{Deserialize, Serialize};

use super::token::{GridCell, MeasureGrid, MelodyState, VelocityBand, STEPS_PER_BEAT, STEPS_PER_MEASURE};
use super::CorpusError;

/// Drum hits carry a MIDI pitch and no duration; melody notes carry a duration
/// and no pitch (the token grammar does not encode melody pitch).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum EventKind {
    Drum { pitch: u8 },
    Melody { duration_s: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Source {
    Drum,
    Melody,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoteEvent {
    pub onset_s: f64,
    pub velocity: u8,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl NoteEvent {
    pub fn drum(onset_s: f64, pitch: u8, velocity: u8) -> Self {
        NoteEvent { onset_s, velocity, kind: EventKind::Drum { pitch } }
    }

    pub fn melody(onset_s: f64, duration_s: f64, velocity: u8) -> Self {
        NoteEvent { onset_s, velocity, kind: EventKind::Melody { duration_s } }
    }

    pub fn source(&self) -> Source {
        match self.kind {
            EventKind::Drum { .. } => Source::Drum,
            EventKind::Melody { .. } => Source::Melody,
        }
    }

    fn validate(&self) -> Result<(), CorpusError> {
        if !self.onset_s.is_finite() || self.onset_s < 0.0 {
            return Err(CorpusError::InvalidEvent(format!("onset {} s is negative or not finite", self.onset_s)));
        }
        if !(1..=127).contains(&self.velocity) {
            return Err(CorpusError::InvalidEvent(format!("velocity {} outside 1..=127", self.velocity)));
        }
        match self.kind {
            EventKind::Drum { pitch } if pitch > 127 => Err(CorpusError::InvalidEvent(format!("drum pitch {pitch} outside 0..=127"))),
            EventKind::Melody { duration_s } if !duration_s.is_finite() || duration_s < 0.0 => {
                Err(CorpusError::InvalidEvent(format!("duration {duration_s} s is negative or not finite")))
            }
            _ => Ok(()),
        }
    }
}

/// Fixed-tempo grid arithmetic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridTiming {
    pub tempo_bpm: f64,
}

impl GridTiming {
    pub fn new(tempo_bpm: f64) -> Result<Self, CorpusError> {
        if !(tempo_bpm.is_finite() && tempo_bpm > 0.0) {
            return Err(CorpusError::InvalidTempo(tempo_bpm));
        }
        Ok(GridTiming { tempo_bpm })
    }

    pub fn beat_s(&self) -> f64 {
        60.0 / self.tempo_bpm
    }

    pub fn step_s(&self) -> f64 {
        self.beat_s() / STEPS_PER_BEAT as f64
    }

    pub fn measure_s(&self) -> f64 {
        self.step_s() * STEPS_PER_MEASURE as f64
    }

    /// Nearest global step index; exact midpoints go to the earlier step.
    pub fn snap(&self, t_s: f64) -> usize {
        let x = t_s / self.step_s();
        (x - 0.5).ceil().max(0.0) as usize
    }

    /// Start time of a global step index.
    pub fn step_start_s(&self, step: usize) -> f64 {
        step as f64 * self.step_s()
    }
}

const COVER_EPS_S: f64 = 1e-9;

/// Quantizes events onto consecutive measures starting at t = 0.
///
/// Produces at least `min_measures` measures (and at least one), extended to
/// cover every event and every sustained melody step.
pub fn quantize_events(events: &[NoteEvent], tempo_bpm: f64, min_measures: usize) -> Result<Vec<MeasureGrid>, CorpusError> {
    let timing = GridTiming::new(tempo_bpm)?;
    for e in events {
        e.validate()?;
    }
    let mut sorted: Vec<&NoteEvent> = events.iter().collect();
    sorted.sort_by(|a, b| a.onset_s.total_cmp(&b.onset_s));

    // Global step index -> cell, grown on demand.
    let mut cells: Vec<GridCell> = vec![GridCell::default(); min_measures.max(1) * STEPS_PER_MEASURE];
    let ensure = |cells: &mut Vec<GridCell>, step: usize| {
        if step >= cells.len() {
            let measures = step / STEPS_PER_MEASURE + 1;
            cells.resize(measures * STEPS_PER_MEASURE, GridCell::default());
        }
    };

    for e in sorted {
        let step = timing.snap(e.onset_s);
        ensure(&mut cells, step);
        let band = VelocityBand::from_velocity(e.velocity);
        match e.kind {
            EventKind::Drum { pitch } => cells[step].add_drum(pitch, band),
            EventKind::Melody { duration_s } => {
                match cells[step].melody {
                    MelodyState::Onset(existing) if existing >= band => {}
                    _ => cells[step].melody = MelodyState::Onset(band),
                }
                // Monophonic line: a new onset cuts off the previous note's tail.
                let mut k = step + 1;
                while k < cells.len() && cells[k].melody == MelodyState::Sustain {
                    cells[k].melody = MelodyState::None;
                    k += 1;
                }
                let end_s = e.onset_s + duration_s;
                let mut k = step + 1;
                while timing.step_start_s(k) < end_s - COVER_EPS_S {
                    ensure(&mut cells, k);
                    if cells[k].melody == MelodyState::None {
                        cells[k].melody = MelodyState::Sustain;
                    }
                    k += 1;
                }
            }
        }
    }

    Ok(cells.chunks(STEPS_PER_MEASURE).map(|chunk| MeasureGrid::from_cells(chunk.to_vec()).expect("chunks are whole measures")).collect())
}
