//! Grid cells and the composite token grammar.
//!
//! A token describes one grid step: `o` for silence, otherwise `|`-joined
//! components. The melody component (`H<band>` onset or `s` sustain) comes
//! first, then drum hits `<pitch><band>` in ascending pitch order, e.g.
//! `s|38mp` or `36mf|38mf|44mf`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::CorpusError;

pub const BEATS_PER_MEASURE: usize = 4;
pub const STEPS_PER_BEAT: usize = 12;
pub const STEPS_PER_MEASURE: usize = BEATS_PER_MEASURE * STEPS_PER_BEAT;

/// Text of the silent token.
pub const SILENT: &str = "o";

/// Four-level loudness quantization of MIDI velocity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VelocityBand {
    P,
    Mp,
    Mf,
    F,
}

impl VelocityBand {
    pub const ALL: [VelocityBand; 4] = [VelocityBand::P, VelocityBand::Mp, VelocityBand::Mf, VelocityBand::F];

    /// Equal 32-wide bins: p=[1,31], mp=[32,63], mf=[64,95], f=[96,127].
    /// Velocity 0 is treated as the softest band.
    pub fn from_velocity(velocity: u8) -> Self {
        match velocity {
            0..=31 => VelocityBand::P,
            32..=63 => VelocityBand::Mp,
            64..=95 => VelocityBand::Mf,
            _ => VelocityBand::F,
        }
    }

    /// MIDI velocity used when a band is turned back into a note.
    pub fn representative_velocity(self) -> u8 {
        match self {
            VelocityBand::P => 24,
            VelocityBand::Mp => 51,
            VelocityBand::Mf => 80,
            VelocityBand::F => 110,
        }
    }

    pub fn suffix(self) -> &'static str {
        match self {
            VelocityBand::P => "p",
            VelocityBand::Mp => "mp",
            VelocityBand::Mf => "mf",
            VelocityBand::F => "f",
        }
    }

    pub fn from_suffix(s: &str) -> Option<Self> {
        match s {
            "p" => Some(VelocityBand::P),
            "mp" => Some(VelocityBand::Mp),
            "mf" => Some(VelocityBand::Mf),
            "f" => Some(VelocityBand::F),
            _ => None,
        }
    }
}

impl fmt::Display for VelocityBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.suffix())
    }
}

/// What the melodic instrument is doing at one grid step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum MelodyState {
    #[default]
    None,
    Onset(VelocityBand),
    Sustain,
}

/// One grid step: melody state plus the drum hits, unique by pitch.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct GridCell {
    pub melody: MelodyState,
    pub drums: BTreeMap<u8, VelocityBand>,
}

impl GridCell {
    pub fn is_empty(&self) -> bool {
        self.melody == MelodyState::None && self.drums.is_empty()
    }

    /// Adds a drum hit; on a pitch collision the louder band wins.
    pub fn add_drum(&mut self, pitch: u8, band: VelocityBand) {
        let slot = self.drums.entry(pitch).or_insert(band);
        if band > *slot {
            *slot = band;
        }
    }

    /// Same cell with the melody component removed.
    pub fn drums_only(&self) -> GridCell {
        GridCell { melody: MelodyState::None, drums: self.drums.clone() }
    }

    pub fn render(&self) -> Token {
        if self.is_empty() {
            return Token(SILENT.to_string());
        }
        let mut parts: Vec<String> = Vec::with_capacity(1 + self.drums.len());
        match self.melody {
            MelodyState::None => {}
            MelodyState::Onset(band) => parts.push(format!("H{band}")),
            MelodyState::Sustain => parts.push("s".to_string()),
        }
        // BTreeMap iteration is ascending by pitch.
        parts.extend(self.drums.iter().map(|(pitch, band)| format!("{pitch}{band}")));
        Token(parts.join("|"))
    }

    /// Parses token text. Components may appear in any order.
    pub fn parse(text: &str) -> Result<GridCell, CorpusError> {
        let bad = |reason: &str| CorpusError::Token { token: text.to_string(), position: None, reason: reason.to_string() };
        if text == SILENT {
            return Ok(GridCell::default());
        }
        if text.is_empty() {
            return Err(bad("empty token"));
        }
        let mut cell = GridCell::default();
        for comp in text.split('|') {
            if comp == "s" || comp.starts_with('H') {
                if cell.melody != MelodyState::None {
                    return Err(bad("more than one melody component"));
                }
                cell.melody = if comp == "s" {
                    MelodyState::Sustain
                } else {
                    let band = VelocityBand::from_suffix(&comp[1..]).ok_or_else(|| bad("unknown onset velocity band"))?;
                    MelodyState::Onset(band)
                };
                continue;
            }
            let digits = comp.bytes().take_while(u8::is_ascii_digit).count();
            if digits == 0 {
                return Err(bad(&format!("unrecognised component '{comp}'")));
            }
            let pitch: u8 = comp[..digits].parse().ok().filter(|p| *p <= 127).ok_or_else(|| bad("drum pitch outside 0..=127"))?;
            let band = VelocityBand::from_suffix(&comp[digits..]).ok_or_else(|| bad("unknown drum velocity band"))?;
            if cell.drums.insert(pitch, band).is_some() {
                return Err(bad("duplicate drum pitch"));
            }
        }
        Ok(cell)
    }
}

/// Canonical token text for one grid step.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Token(String);

impl Token {
    pub fn silent() -> Self {
        Token(SILENT.to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_silent(&self) -> bool {
        self.0 == SILENT
    }

    pub fn cell(&self) -> GridCell {
        GridCell::parse(&self.0).expect("Token always holds canonical, parseable text")
    }
}

impl FromStr for Token {
    type Err = CorpusError;

    /// Parses and canonicalizes, so `"38mp|Hf"` becomes `"Hf|38mp"`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(GridCell::parse(s)?.render())
    }
}

impl TryFrom<String> for Token {
    type Error = CorpusError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<Token> for String {
    fn from(t: Token) -> String {
        t.0
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One 4/4 measure: exactly 48 grid cells.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MeasureGrid {
    cells: [GridCell; STEPS_PER_MEASURE],
}

impl Default for MeasureGrid {
    fn default() -> Self {
        MeasureGrid { cells: std::array::from_fn(|_| GridCell::default()) }
    }
}

impl MeasureGrid {
    pub fn silent() -> Self {
        Self::default()
    }

    pub fn from_cells(cells: Vec<GridCell>) -> Result<Self, CorpusError> {
        let n = cells.len();
        let cells: [GridCell; STEPS_PER_MEASURE] = cells.try_into().map_err(|_| CorpusError::MeasureLength(n))?;
        Ok(MeasureGrid { cells })
    }

    pub fn cells(&self) -> &[GridCell; STEPS_PER_MEASURE] {
        &self.cells
    }

    pub fn cell(&self, step: usize) -> &GridCell {
        &self.cells[step]
    }

    pub fn cell_mut(&mut self, step: usize) -> &mut GridCell {
        &mut self.cells[step]
    }

    pub fn cells_mut(&mut self) -> &mut [GridCell; STEPS_PER_MEASURE] {
        &mut self.cells
    }

    pub fn is_silent(&self) -> bool {
        self.cells.iter().all(GridCell::is_empty)
    }

    /// Same measure with every drum hit removed.
    pub fn melody_only(&self) -> MeasureGrid {
        let mut out = self.clone();
        for c in out.cells.iter_mut() {
            c.drums.clear();
        }
        out
    }

    /// Drum hits of `drums` combined with the melody line of `self`.
    pub fn with_drums_from(&self, drums: &MeasureGrid) -> MeasureGrid {
        let mut out = self.clone();
        for (cell, other) in out.cells.iter_mut().zip(drums.cells.iter()) {
            cell.drums = other.drums.clone();
        }
        out
    }
}

pub fn encode_measure(grid: &MeasureGrid) -> Vec<Token> {
    grid.cells.iter().map(GridCell::render).collect()
}

pub fn decode_measure<S: AsRef<str>>(tokens: &[S]) -> Result<MeasureGrid, CorpusError> {
    if tokens.len() != STEPS_PER_MEASURE {
        return Err(CorpusError::MeasureLength(tokens.len()));
    }
    let cells = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| {
            GridCell::parse(t.as_ref()).map_err(|e| match e {
                CorpusError::Token { token, reason, .. } => CorpusError::Token { token, position: Some(i), reason },
                other => other,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    MeasureGrid::from_cells(cells)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(text: &str) -> GridCell {
        GridCell::parse(text).unwrap()
    }

    #[test]
    fn velocity_band_edges() {
        assert_eq!(VelocityBand::from_velocity(1), VelocityBand::P);
        assert_eq!(VelocityBand::from_velocity(31), VelocityBand::P);
        assert_eq!(VelocityBand::from_velocity(32), VelocityBand::Mp);
        assert_eq!(VelocityBand::from_velocity(63), VelocityBand::Mp);
        assert_eq!(VelocityBand::from_velocity(64), VelocityBand::Mf);
        assert_eq!(VelocityBand::from_velocity(95), VelocityBand::Mf);
        assert_eq!(VelocityBand::from_velocity(96), VelocityBand::F);
        assert_eq!(VelocityBand::from_velocity(127), VelocityBand::F);
        for band in VelocityBand::ALL {
            assert_eq!(VelocityBand::from_velocity(band.representative_velocity()), band);
        }
        assert!(VelocityBand::P < VelocityBand::Mp && VelocityBand::Mf < VelocityBand::F);
    }

    #[test]
    fn renders_drum_chord_ascending() {
        let mut c = GridCell::default();
        c.add_drum(44, VelocityBand::Mf);
        c.add_drum(36, VelocityBand::Mf);
        c.add_drum(38, VelocityBand::Mf);
        assert_eq!(c.render().as_str(), "36mf|38mf|44mf");
    }

    #[test]
    fn renders_melody_first() {
        let mut c = GridCell { melody: MelodyState::Sustain, ..Default::default() };
        c.add_drum(38, VelocityBand::Mp);
        assert_eq!(c.render().as_str(), "s|38mp");
        let onset = GridCell { melody: MelodyState::Onset(VelocityBand::Mp), ..Default::default() };
        assert_eq!(onset.render().as_str(), "Hmp");
    }

    #[test]
    fn parser_accepts_any_order() {
        let t: Token = "44f|Hp|36mp".parse().unwrap();
        assert_eq!(t.as_str(), "Hp|36mp|44f");
    }

    #[test]
    fn louder_drum_wins_collision() {
        let mut c = GridCell::default();
        c.add_drum(38, VelocityBand::Mp);
        c.add_drum(38, VelocityBand::F);
        c.add_drum(38, VelocityBand::P);
        assert_eq!(c.drums[&38], VelocityBand::F);
    }

    #[test]
    fn rejects_malformed() {
        for bad in ["", "x", "38", "38ff", "H", "Hq", "s|s", "Hp|s", "38p|38f", "200mf", "o|38mp", "|38mp"] {
            assert!(GridCell::parse(bad).is_err(), "{bad:?} should not parse");
        }
    }

    #[test]
    fn silent_measure_round_trip() {
        let g = MeasureGrid::silent();
        let toks = encode_measure(&g);
        assert_eq!(toks.len(), 48);
        assert!(toks.iter().all(Token::is_silent));
        assert_eq!(decode_measure(&toks.iter().map(Token::as_str).collect::<Vec<_>>()).unwrap(), g);
    }

    #[test]
    fn decode_reports_position() {
        let mut toks = vec!["o"; 48];
        toks[0] = "38mp";
        toks[17] = "zz";
        match decode_measure(&toks) {
            Err(CorpusError::Token { token, position, .. }) => {
                assert_eq!(token, "zz");
                assert_eq!(position, Some(17));
            }
            other => panic!("unexpected {other:?}"),
        }
        toks[17] = "o";
        let g = decode_measure(&toks).unwrap();
        assert_eq!(g.cell(0), &cell("38mp"));
        assert!(g.cells()[1..].iter().all(GridCell::is_empty));
    }

    #[test]
    fn wrong_length_rejected() {
        assert!(matches!(decode_measure(&["o"; 47]), Err(CorpusError::MeasureLength(47))));
    }
}
