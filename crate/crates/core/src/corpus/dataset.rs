//! Four-measure training windows and the train/validation/test split.

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::file::Session;
use super::token::STEPS_PER_MEASURE;
use super::vocab::{TokenId, Vocabulary};
use super::CorpusError;
use crate::biometric::QscLevel;

pub const CONTEXT_MEASURES: usize = 3;
pub const WINDOW_MEASURES: usize = CONTEXT_MEASURES + 1;
pub const CONTEXT_LEN: usize = CONTEXT_MEASURES * STEPS_PER_MEASURE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// Three context measures, the target fourth measure, and the QSC level
/// sampled at the start of the fourth measure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    pub session: String,
    pub start_measure: usize,
    pub context: Vec<TokenId>,
    pub target: Vec<TokenId>,
    pub qsc: QscLevel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions { train: 0.76, validation: 0.12, test: 0.12 }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|f| !f.is_finite() || *f < 0.0) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(CorpusError::Fractions(*self));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WindowedDataset {
    pub train: Vec<Window>,
    pub validation: Vec<Window>,
    pub test: Vec<Window>,
}

impl WindowedDataset {
    pub fn split(&self, split: Split) -> &[Window] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowReport {
    pub windows: usize,
    pub skipped_sessions: Vec<String>,
}

/// Slices every session into 4-measure windows (`stride` measures apart),
/// encodes them with `vocab`, shuffles with `seed` and splits.
pub fn window_dataset(
    sessions: &[Session],
    vocab: &Vocabulary,
    fractions: SplitFractions,
    stride: usize,
    seed: u64,
) -> Result<(WindowedDataset, WindowReport), CorpusError> {
    fractions.validate()?;
    if stride == 0 {
        return Err(CorpusError::Stride);
    }
    let mut windows = Vec::new();
    let mut report = WindowReport::default();
    for s in sessions {
        if s.qsc.len() != s.measures.len() {
            return Err(CorpusError::QscAlignment { session: s.id.clone(), measures: s.measures.len(), levels: s.qsc.len() });
        }
        if s.measures.len() < WINDOW_MEASURES {
            warn!("session '{}' has {} measures, fewer than {WINDOW_MEASURES}; skipped", s.id, s.measures.len());
            report.skipped_sessions.push(s.id.clone());
            continue;
        }
        let encoded: Vec<[TokenId; STEPS_PER_MEASURE]> = s.measures.iter().map(|m| vocab.measure_ids(m)).collect();
        let mut start = 0;
        while start + WINDOW_MEASURES <= encoded.len() {
            let context = encoded[start..start + CONTEXT_MEASURES].iter().flatten().copied().collect();
            let target = encoded[start + CONTEXT_MEASURES].to_vec();
            windows.push(Window { session: s.id.clone(), start_measure: start, context, target, qsc: s.qsc[start + CONTEXT_MEASURES] });
            start += stride;
        }
    }
    report.windows = windows.len();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    windows.shuffle(&mut rng);
    let n = windows.len();
    let n_train = ((fractions.train * n as f64).round() as usize).min(n);
    let n_val = ((fractions.validation * n as f64).round() as usize).min(n - n_train);
    let test = windows.split_off(n_train + n_val);
    let validation = windows.split_off(n_train);
    Ok((WindowedDataset { train: windows, validation, test }, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::token::{GridCell, MeasureGrid};
    use crate::corpus::vocab::build_vocabulary;

    fn session(id: &str, n: usize) -> Session {
        let measures: Vec<MeasureGrid> = (0..n)
            .map(|i| {
                let mut g = MeasureGrid::silent();
                *g.cell_mut(i % 48) = GridCell::parse("36mf").unwrap();
                g
            })
            .collect();
        let qsc = (0..n).map(|i| [QscLevel::Low, QscLevel::Med, QscLevel::High][i % 3]).collect();
        Session::new(id, 120.0, measures, qsc)
    }

    fn vocab(sessions: &[Session]) -> Vocabulary {
        build_vocabulary(sessions.iter().flat_map(|s| &s.measures), 1).0
    }

    #[test]
    fn eight_measures_two_windows() {
        let s = vec![session("a", 8)];
        let (ds, report) = window_dataset(&s, &vocab(&s), SplitFractions { train: 1.0, validation: 0.0, test: 0.0 }, 4, 1).unwrap();
        assert_eq!(report.windows, 2);
        assert_eq!(ds.train.len(), 2);
        assert!(ds.validation.is_empty() && ds.test.is_empty());
    }

    #[test]
    fn incomplete_tail_dropped() {
        let s = vec![session("a", 7)];
        let (ds, _) = window_dataset(&s, &vocab(&s), SplitFractions::default(), 4, 1).unwrap();
        assert_eq!(ds.len(), 1);
    }

    #[test]
    fn short_session_skipped() {
        let s = vec![session("short", 3), session("ok", 4)];
        let (ds, report) = window_dataset(&s, &vocab(&s), SplitFractions::default(), 4, 1).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(report.skipped_sessions, vec!["short".to_string()]);
    }

    #[test]
    fn window_contents_and_qsc() {
        let s = vec![session("a", 4)];
        let v = vocab(&s);
        let (ds, _) = window_dataset(&s, &v, SplitFractions { train: 1.0, validation: 0.0, test: 0.0 }, 4, 1).unwrap();
        let w = &ds.train[0];
        assert_eq!(w.context.len(), CONTEXT_LEN);
        assert_eq!(w.target.len(), 48);
        assert_eq!(w.qsc, s[0].qsc[3]);
        assert_eq!(w.target[3], v.id(&"36mf".parse().unwrap()).unwrap());
        assert_eq!(w.context[48 + 1], v.id(&"36mf".parse().unwrap()).unwrap());
    }

    #[test]
    fn split_is_deterministic_and_sized() {
        let s: Vec<Session> = (0..25).map(|i| session(&format!("s{i}"), 16)).collect();
        let v = vocab(&s);
        let (a, _) = window_dataset(&s, &v, SplitFractions::default(), 4, 9).unwrap();
        let (b, _) = window_dataset(&s, &v, SplitFractions::default(), 4, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 100);
        assert_eq!((a.train.len(), a.validation.len(), a.test.len()), (76, 12, 12));
        let (c, _) = window_dataset(&s, &v, SplitFractions::default(), 4, 10).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn overlapping_stride() {
        let s = vec![session("a", 8)];
        let (ds, _) = window_dataset(&s, &vocab(&s), SplitFractions { train: 1.0, validation: 0.0, test: 0.0 }, 1, 1).unwrap();
        assert_eq!(ds.len(), 5);
    }

    #[test]
    fn bad_fractions() {
        let s = vec![session("a", 8)];
        let v = vocab(&s);
        assert!(window_dataset(&s, &v, SplitFractions { train: 0.5, validation: 0.2, test: 0.2 }, 4, 1).is_err());
        assert!(window_dataset(&s, &v, SplitFractions { train: 1.2, validation: -0.2, test: 0.0 }, 4, 1).is_err());
        assert!(window_dataset(&s, &v, SplitFractions::default(), 0, 1).is_err());
    }
}
