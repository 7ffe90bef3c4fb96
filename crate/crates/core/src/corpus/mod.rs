//! Performance data: grid quantization, the token grammar, vocabulary
//! pruning, corpus files and windowed datasets.

mod dataset;
mod file;
mod midi_import;
mod quantize;
mod token;
mod vocab;

pub use dataset::{
    window_dataset, Split, SplitFractions, Window, WindowReport, WindowedDataset, CONTEXT_LEN, CONTEXT_MEASURES, WINDOW_MEASURES,
};
pub use file::{read_corpus, write_corpus, Session, Style, Technique};
pub use midi_import::{events_from_smf, DRUM_CHANNEL};
pub use quantize::{quantize_events, EventKind, GridTiming, NoteEvent, Source};
pub use token::{
    decode_measure, encode_measure, GridCell, MeasureGrid, MelodyState, Token, VelocityBand, BEATS_PER_MEASURE, SILENT, STEPS_PER_BEAT,
    STEPS_PER_MEASURE,
};
pub use vocab::{
    build_vocabulary, count_tokens, qsc_token_text, PruneReport, SpecialIds, TokenId, Vocabulary, DEFAULT_MIN_COUNT, MASK, SPECIAL_COUNT,
    START,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid token '{token}'{}: {reason}", position.map(|p| format!(" at position {p}")).unwrap_or_default())]
    Token { token: String, position: Option<usize>, reason: String },
    #[error("a measure needs exactly {STEPS_PER_MEASURE} cells, got {0}")]
    MeasureLength(usize),
    #[error("invalid event: {0}")]
    InvalidEvent(String),
    #[error("tempo must be positive and finite, got {0}")]
    InvalidTempo(f64),
    #[error("token id {0} is not an emittable vocabulary entry")]
    UnknownTokenId(u32),
    #[error("split fractions must be non-negative and sum to 1: {0:?}")]
    Fractions(SplitFractions),
    #[error("window stride must be at least 1")]
    Stride,
    #[error("session '{session}' has {measures} measures but {levels} QSC levels")]
    QscAlignment { session: String, measures: usize, levels: usize },
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("MIDI file: {0}")]
    Midi(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const PHRASE: &str = "38mp o 36mf|38mf|44mf o 38mp o o 36mp|38mp Hmp s s|38mp Hmp s|38mp s s s";

    #[test]
    fn example_phrase_segment() {
        let cells: Vec<GridCell> = PHRASE.split(' ').map(|t| GridCell::parse(t).unwrap()).collect();
        assert_eq!(cells.len(), 16);
        let drum_hits: usize = cells.iter().map(|c| c.drums.len()).sum();
        let onsets = cells.iter().filter(|c| matches!(c.melody, MelodyState::Onset(VelocityBand::Mp))).count();
        let sustains = cells.iter().filter(|c| c.melody == MelodyState::Sustain).count();
        assert_eq!((drum_hits, onsets, sustains), (9, 2, 6));
        let rendered: Vec<String> = cells.iter().map(|c| c.render().to_string()).collect();
        assert_eq!(rendered.join(" "), PHRASE);
    }

    pub(crate) fn arb_cell() -> impl Strategy<Value = GridCell> {
        let band = prop::sample::select(VelocityBand::ALL.to_vec());
        let melody = prop_oneof![
            3 => Just(MelodyState::None),
            1 => band.clone().prop_map(MelodyState::Onset),
            1 => Just(MelodyState::Sustain),
        ];
        let drums = prop::collection::btree_map(0u8..=127, band, 0..4);
        (melody, drums).prop_map(|(melody, drums)| GridCell { melody, drums })
    }

    fn arb_grid() -> impl Strategy<Value = MeasureGrid> {
        prop::collection::vec(arb_cell(), STEPS_PER_MEASURE).prop_map(|c| MeasureGrid::from_cells(c).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn encode_decode_identity(g in arb_grid()) {
            let toks = encode_measure(&g);
            let texts: Vec<&str> = toks.iter().map(Token::as_str).collect();
            prop_assert_eq!(decode_measure(&texts).unwrap(), g);
        }
    }

    proptest! {
        #[test]
        fn canonical_order(c in arb_cell()) {
            let text = c.render().to_string();
            let parts: Vec<&str> = text.split('|').collect();
            let mut pitches = Vec::new();
            for (i, p) in parts.iter().enumerate() {
                if *p == "s" || p.starts_with('H') {
                    prop_assert_eq!(i, 0, "melody element must lead");
                } else if *p != SILENT {
                    let digits: String = p.chars().take_while(char::is_ascii_digit).collect();
                    pitches.push(digits.parse::<u8>().unwrap());
                }
            }
            prop_assert!(pitches.windows(2).all(|w| w[0] < w[1]));
        }

        #[test]
        fn raising_min_count_never_grows_vocab(
            cells in prop::collection::vec(arb_cell(), 48..400),
            lo in 1u64..10,
            extra in 0u64..10,
        ) {
            let grids: Vec<MeasureGrid> = cells
                .chunks_exact(STEPS_PER_MEASURE)
                .map(|c| MeasureGrid::from_cells(c.to_vec()).unwrap())
                .collect();
            let (a, _) = build_vocabulary(&grids, lo);
            let (b, _) = build_vocabulary(&grids, lo + extra);
            prop_assert!(b.len() <= a.len());
        }
    }
}
