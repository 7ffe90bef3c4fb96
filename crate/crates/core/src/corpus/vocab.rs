//! Corpus-derived token vocabulary with rare-token pruning.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::token::{GridCell, MeasureGrid, Token, SILENT, STEPS_PER_MEASURE};
use super::CorpusError;
use crate::biometric::QscLevel;

/// Index into a [`Vocabulary`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub const MASK: &str = "<mask>";
pub const START: &str = "<start>";

/// Start-token text for a QSC level.
pub fn qsc_token_text(level: QscLevel) -> &'static str {
    match level {
        QscLevel::High => "<High>",
        QscLevel::Med => "<Med>",
        QscLevel::Low => "<Low>",
    }
}

/// Minimum occurrence count for a token to stay in the vocabulary.
pub const DEFAULT_MIN_COUNT: u64 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneReport {
    pub total_unique: usize,
    pub pruned: usize,
    pub retained: usize,
    pub pruned_occurrences: u64,
}

/// Bijection between token text and ids, plus corpus counts.
///
/// Musical tokens come first (`o` is always id 0), followed by the appended
/// specials: the three QSC start tokens, the mask token and the neutral start
/// token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    entries: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, TokenId>,
    first_special: usize,
}

const SPECIALS: [&str; SPECIAL_COUNT] = ["<High>", "<Med>", "<Low>", MASK, START];

/// Specials always occupy the last five ids, in this order.
pub const SPECIAL_COUNT: usize = 5;

/// Ids of the special tokens, derivable from the vocabulary size alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialIds {
    pub first_special: TokenId,
    pub high: TokenId,
    pub med: TokenId,
    pub low: TokenId,
    pub mask: TokenId,
    pub start: TokenId,
}

impl SpecialIds {
    /// `None` when the vocabulary has no room for `o` plus the specials.
    pub fn for_vocab_size(vocab_size: usize) -> Option<Self> {
        if vocab_size < SPECIAL_COUNT + 1 {
            return None;
        }
        let f = (vocab_size - SPECIAL_COUNT) as u32;
        Some(SpecialIds {
            first_special: TokenId(f),
            high: TokenId(f),
            med: TokenId(f + 1),
            low: TokenId(f + 2),
            mask: TokenId(f + 3),
            start: TokenId(f + 4),
        })
    }

    pub fn qsc(&self, level: QscLevel) -> TokenId {
        match level {
            QscLevel::High => self.high,
            QscLevel::Med => self.med,
            QscLevel::Low => self.low,
        }
    }

    pub fn is_emittable(&self, id: TokenId) -> bool {
        id.0 < self.first_special.0
    }
}

impl Vocabulary {
    /// Builds from musical tokens with counts; `o` is forced to id 0 and the
    /// specials are appended.
    pub fn from_counts<I>(counts: I) -> Self
    where
        I: IntoIterator<Item = (Token, u64)>,
    {
        let mut silent_count = 0;
        let mut rest: Vec<(Token, u64)> = Vec::new();
        for (t, c) in counts {
            if t.is_silent() {
                silent_count += c;
            } else {
                rest.push((t, c));
            }
        }
        rest.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        rest.dedup_by(|a, b| a.0 == b.0);

        let mut entries = vec![SILENT.to_string()];
        let mut cnts = vec![silent_count];
        for (t, c) in rest {
            entries.push(t.to_string());
            cnts.push(c);
        }
        let first_special = entries.len();
        for s in SPECIALS {
            entries.push(s.to_string());
            cnts.push(0);
        }
        let index = entries.iter().enumerate().map(|(i, s)| (s.clone(), TokenId(i as u32))).collect();
        Vocabulary { entries, counts: cnts, index, first_special }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of musical (non-special) entries, including `o`.
    pub fn musical_len(&self) -> usize {
        self.first_special
    }

    pub fn specials(&self) -> SpecialIds {
        SpecialIds::for_vocab_size(self.len()).expect("vocabulary always holds o and the specials")
    }

    pub fn silent_id(&self) -> TokenId {
        TokenId(0)
    }

    pub fn qsc_id(&self, level: QscLevel) -> TokenId {
        self.index[qsc_token_text(level)]
    }

    pub fn mask_id(&self) -> TokenId {
        self.index[MASK]
    }

    pub fn start_id(&self) -> TokenId {
        self.index[START]
    }

    pub fn id(&self, token: &Token) -> Option<TokenId> {
        self.index.get(token.as_str()).copied()
    }

    /// Out-of-vocabulary tokens collapse to the silent token.
    pub fn id_or_silent(&self, token: &Token) -> TokenId {
        self.id(token).unwrap_or(self.silent_id())
    }

    pub fn text(&self, id: TokenId) -> Option<&str> {
        self.entries.get(id.index()).map(String::as_str)
    }

    pub fn count(&self, id: TokenId) -> Option<u64> {
        self.counts.get(id.index()).copied()
    }

    /// True for ids the model may emit: every musical token, never a special.
    pub fn is_emittable(&self, id: TokenId) -> bool {
        id.index() < self.first_special
    }

    /// Grid cell for an emittable id.
    pub fn cell(&self, id: TokenId) -> Option<GridCell> {
        if !self.is_emittable(id) {
            return None;
        }
        Some(GridCell::parse(&self.entries[id.index()]).expect("musical entries are valid tokens"))
    }

    pub fn measure_ids(&self, grid: &MeasureGrid) -> [TokenId; STEPS_PER_MEASURE] {
        std::array::from_fn(|i| self.id_or_silent(&grid.cell(i).render()))
    }

    pub fn measure_from_ids(&self, ids: &[TokenId]) -> Result<MeasureGrid, CorpusError> {
        let cells = ids.iter().map(|&id| self.cell(id).ok_or(CorpusError::UnknownTokenId(id.0))).collect::<Result<Vec<_>, _>>()?;
        MeasureGrid::from_cells(cells)
    }

    pub fn iter(&self) -> impl Iterator<Item = (TokenId, &str, u64)> {
        self.entries.iter().zip(&self.counts).enumerate().map(|(i, (s, c))| (TokenId(i as u32), s.as_str(), *c))
    }

    /// SHA-256 over the id-ordered entry texts. Counts are not included.
    pub fn hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for (i, e) in self.entries.iter().enumerate() {
            h.update(format!("{i}\t{e}\n").as_bytes());
        }
        h.finalize().into()
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# id\ttoken\tcount")?;
        for (id, text, count) in self.iter() {
            writeln!(w, "{id}\t{text}\t{count}")?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(r: R) -> Result<Self, CorpusError> {
        let mut entries = Vec::new();
        let mut counts = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let bad = |msg: &str| CorpusError::Format { line: lineno + 1, message: msg.to_string() };
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            let (Some(id), Some(text), Some(count), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
                return Err(bad("expected 'id<TAB>token<TAB>count'"));
            };
            let id: usize = id.parse().map_err(|_| bad("id is not an integer"))?;
            if id != entries.len() {
                return Err(bad("ids must be consecutive from 0"));
            }
            let count: u64 = count.parse().map_err(|_| bad("count is not an integer"))?;
            entries.push(text.to_string());
            counts.push(count);
        }
        if entries.first().map(String::as_str) != Some(SILENT) {
            return Err(CorpusError::Format { line: 0, message: "id 0 must be the silent token".into() });
        }
        let first_special = entries.len().saturating_sub(SPECIALS.len());
        if entries.len() < SPECIALS.len() + 1 || entries[first_special..] != SPECIALS.map(String::from) {
            return Err(CorpusError::Format { line: 0, message: "special tokens missing or out of order".into() });
        }
        for (i, e) in entries[..first_special].iter().enumerate() {
            let canonical: Token = e.parse().map_err(|_| CorpusError::Format { line: i + 1, message: format!("invalid token '{e}'") })?;
            if canonical.as_str() != e {
                return Err(CorpusError::Format { line: i + 1, message: format!("token '{e}' is not canonical") });
            }
        }
        let index: HashMap<String, TokenId> = entries.iter().enumerate().map(|(i, s)| (s.clone(), TokenId(i as u32))).collect();
        if index.len() != entries.len() {
            return Err(CorpusError::Format { line: 0, message: "duplicate token".into() });
        }
        Ok(Vocabulary { entries, counts, index, first_special })
    }
}

/// Counts every encoded token across the corpus.
pub fn count_tokens<'a, I>(measures: I) -> BTreeMap<Token, u64>
where
    I: IntoIterator<Item = &'a MeasureGrid>,
{
    let mut counts = BTreeMap::new();
    for m in measures {
        for cell in m.cells() {
            *counts.entry(cell.render()).or_insert(0) += 1;
        }
    }
    counts
}

/// Builds the vocabulary, dropping tokens seen fewer than `min_count` times.
///
/// Dropped occurrences are re-counted as `o`, which is how
/// [`Vocabulary::id_or_silent`] encodes them.
pub fn build_vocabulary<'a, I>(measures: I, min_count: u64) -> (Vocabulary, PruneReport)
where
    I: IntoIterator<Item = &'a MeasureGrid>,
{
    let counts = count_tokens(measures);
    let total_unique = counts.len() + usize::from(!counts.contains_key(&Token::silent()));
    let mut pruned = 0;
    let mut pruned_occurrences = 0;
    let mut kept = Vec::new();
    for (t, c) in counts {
        if t.is_silent() || c >= min_count {
            kept.push((t, c));
        } else {
            pruned += 1;
            pruned_occurrences += c;
        }
    }
    kept.push((Token::silent(), pruned_occurrences));
    let vocab = Vocabulary::from_counts(kept);
    let report = PruneReport { total_unique, pruned, retained: vocab.musical_len(), pruned_occurrences };
    (vocab, report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn measure_with(step_tokens: &[(usize, &str)]) -> MeasureGrid {
        let mut g = MeasureGrid::silent();
        for (step, t) in step_tokens {
            *g.cell_mut(*step) = GridCell::parse(t).unwrap();
        }
        g
    }

    fn corpus_with_counts(spec: &[(&str, usize)]) -> Vec<MeasureGrid> {
        let mut out = Vec::new();
        for (tok, n) in spec {
            for _ in 0..*n {
                out.push(measure_with(&[(0, tok)]));
            }
        }
        out
    }

    #[test]
    fn pruning_boundary() {
        let corpus = corpus_with_counts(&[("41f", 19), ("38mp", 20)]);
        let (v, report) = build_vocabulary(&corpus, 20);
        assert!(v.id(&"41f".parse().unwrap()).is_none());
        let kept = v.id(&"38mp".parse().unwrap()).unwrap();
        assert_eq!(v.count(kept), Some(20));
        assert_eq!(report.pruned, 1);
        assert_eq!(report.total_unique, 3);
        assert_eq!(report.retained, 2);
        // 39 measures * 47 silent cells + 19 rewritten
        assert_eq!(v.count(v.silent_id()), Some(39 * 47 + 19));
        let rewritten = v.measure_ids(&corpus[0]);
        assert_eq!(rewritten[0], v.silent_id());
    }

    #[test]
    fn specials_present_and_distinct() {
        let (v, _) = build_vocabulary(std::iter::empty(), 20);
        assert_eq!(v.len(), 6);
        assert_eq!(v.text(v.silent_id()), Some("o"));
        let ids = [v.qsc_id(QscLevel::High), v.qsc_id(QscLevel::Med), v.qsc_id(QscLevel::Low), v.mask_id(), v.start_id()];
        for id in ids {
            assert!(!v.is_emittable(id));
        }
        let mut sorted = ids.to_vec();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 5);
        assert!(v.is_emittable(v.silent_id()));
    }

    #[test]
    fn special_ids_follow_from_size() {
        let corpus = corpus_with_counts(&[("36mf", 25), ("s|38mp", 30)]);
        let (v, _) = build_vocabulary(&corpus, 20);
        let sp = v.specials();
        assert_eq!(sp.mask, v.mask_id());
        assert_eq!(sp.start, v.start_id());
        for l in QscLevel::ALL {
            assert_eq!(sp.qsc(l), v.qsc_id(l));
        }
        assert!(SpecialIds::for_vocab_size(5).is_none());
    }

    #[test]
    fn tsv_round_trip_and_hash() {
        let corpus = corpus_with_counts(&[("36mf", 25), ("s|38mp", 30), ("Hp", 21)]);
        let (v, _) = build_vocabulary(&corpus, 20);
        let mut buf = Vec::new();
        v.write_tsv(&mut buf).unwrap();
        let back = Vocabulary::read_tsv(buf.as_slice()).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.hash(), v.hash());

        let (other, _) = build_vocabulary(&corpus, 22);
        assert_ne!(other.hash(), v.hash());
    }

    #[test]
    fn tsv_rejects_garbage() {
        assert!(Vocabulary::read_tsv("0\to\t1\n".as_bytes()).is_err());
        assert!(Vocabulary::read_tsv("0\to\n".as_bytes()).is_err());
        assert!(Vocabulary::read_tsv("1\to\t5\n".as_bytes()).is_err());
    }

    #[test]
    fn measure_ids_round_trip() {
        let corpus = corpus_with_counts(&[("36mf", 25), ("s|38mp", 30)]);
        let (v, _) = build_vocabulary(&corpus, 20);
        let g = measure_with(&[(3, "36mf"), (10, "s|38mp")]);
        let ids = v.measure_ids(&g);
        assert_eq!(v.measure_from_ids(&ids).unwrap(), g);
        assert!(v.measure_from_ids(&[v.mask_id(); 48]).is_err());
    }
}
