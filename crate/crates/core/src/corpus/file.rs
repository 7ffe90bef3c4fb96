//! Line-oriented corpus files.
//!
//! ```text
//! #session id=duo1-swing-lead style=Swing technique=lead tempo=120
//! Med	38mp o 36mf|38mf|44mf o ... (48 tokens)
//! High	o o ...
//! ```

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::token::{decode_measure, encode_measure, MeasureGrid};
use super::CorpusError;
use crate::biometric::QscLevel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Style {
    Swing,
    Funk,
    Rock,
}

impl FromStr for Style {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Swing" => Ok(Style::Swing),
            "Funk" => Ok(Style::Funk),
            "Rock" => Ok(Style::Rock),
            other => Err(format!("unknown style '{other}'")),
        }
    }
}

impl fmt::Display for Style {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Performance technique of a training exercise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Technique {
    /// Melodic lead with percussive accompaniment.
    Lead,
    /// Trading four-measure groups.
    Trade4,
    /// Trading two-measure groups.
    Trade2,
}

impl FromStr for Technique {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lead" => Ok(Technique::Lead),
            "trade4" => Ok(Technique::Trade4),
            "trade2" => Ok(Technique::Trade2),
            other => Err(format!("unknown technique '{other}'")),
        }
    }
}

impl fmt::Display for Technique {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Technique::Lead => "lead",
            Technique::Trade4 => "trade4",
            Technique::Trade2 => "trade2",
        })
    }
}

/// One recorded duet: quantized measures with the QSC level per measure.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub id: String,
    pub style: Option<Style>,
    pub technique: Option<Technique>,
    pub tempo_bpm: f64,
    pub measures: Vec<MeasureGrid>,
    pub qsc: Vec<QscLevel>,
}

impl Session {
    pub fn new(id: impl Into<String>, tempo_bpm: f64, measures: Vec<MeasureGrid>, qsc: Vec<QscLevel>) -> Self {
        Session { id: id.into(), style: None, technique: None, tempo_bpm, measures, qsc }
    }
}

pub fn write_corpus<W: Write>(mut w: W, sessions: &[Session]) -> std::io::Result<()> {
    for s in sessions {
        write!(w, "#session id={}", s.id)?;
        if let Some(style) = s.style {
            write!(w, " style={style}")?;
        }
        if let Some(t) = s.technique {
            write!(w, " technique={t}")?;
        }
        writeln!(w, " tempo={}", s.tempo_bpm)?;
        for (m, q) in s.measures.iter().zip(&s.qsc) {
            let tokens: Vec<String> = encode_measure(m).into_iter().map(String::from).collect();
            writeln!(w, "{q}\t{}", tokens.join(" "))?;
        }
    }
    Ok(())
}

pub fn read_corpus<R: BufRead>(r: R) -> Result<Vec<Session>, CorpusError> {
    let mut sessions: Vec<Session> = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let bad = |message: String| CorpusError::Format { line: lineno, message };
        if line.trim().is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix("#session") {
            let mut s = Session::new("", 120.0, Vec::new(), Vec::new());
            let mut has_id = false;
            for kv in header.split_whitespace() {
                let (k, v) = kv.split_once('=').ok_or_else(|| bad(format!("expected key=value, got '{kv}'")))?;
                match k {
                    "id" => {
                        s.id = v.to_string();
                        has_id = true;
                    }
                    "style" => s.style = Some(v.parse().map_err(bad)?),
                    "technique" => s.technique = Some(v.parse().map_err(bad)?),
                    "tempo" => {
                        s.tempo_bpm =
                            v.parse().ok().filter(|t: &f64| t.is_finite() && *t > 0.0).ok_or_else(|| bad(format!("invalid tempo '{v}'")))?
                    }
                    other => return Err(bad(format!("unknown header key '{other}'"))),
                }
            }
            if !has_id {
                return Err(bad("session header without id".into()));
            }
            sessions.push(s);
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let session = sessions.last_mut().ok_or_else(|| bad("measure line before any #session header".into()))?;
        let (level, tokens) = line.split_once('\t').ok_or_else(|| bad("expected '<QscLevel>\\t<tokens>'".into()))?;
        let level: QscLevel = level.parse().map_err(|e: crate::biometric::BiometricError| bad(e.to_string()))?;
        let tokens: Vec<&str> = tokens.split(' ').collect();
        let grid = decode_measure(&tokens).map_err(|e| bad(e.to_string()))?;
        session.measures.push(grid);
        session.qsc.push(level);
    }
    Ok(sessions)
}
