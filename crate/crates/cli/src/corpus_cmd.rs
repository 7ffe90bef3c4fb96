use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use duet_core::biometric::{baseline_sigma, read_sc_csv, sample_at_measure_start, QscLevel, ScSample};
use duet_core::corpus::{
    build_vocabulary, count_tokens, events_from_smf, quantize_events, read_corpus, write_corpus, GridTiming, PruneReport, Session,
    Vocabulary,
};
use log::{info, warn};
use serde::Serialize;

use crate::failure::{Classify, CmdResult, Failure};
use crate::manifest::Recorder;

/// Sidecar holding the session's skin-conductance recording. Samples with
/// negative times are the pre-session calibration.
pub const SC_SIDECAR_SUFFIX: &str = ".sc.csv";

fn midi_files(dir: &Path) -> CmdResult<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).data(format!("cannot read {}", dir.display()))?;
    let mut files = Vec::new();
    for e in entries {
        let p = e.data(format!("cannot list {}", dir.display()))?.path();
        let is_midi =
            p.extension().and_then(|x| x.to_str()).is_some_and(|x| x.eq_ignore_ascii_case("mid") || x.eq_ignore_ascii_case("midi"));
        if is_midi && p.is_file() {
            files.push(p);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Failure::data(format!("no .mid files in {}", dir.display())));
    }
    Ok(files)
}

fn session_qsc(sc: &[ScSample], measures: usize, timing: &GridTiming) -> CmdResult<Vec<QscLevel>> {
    let calibration: Vec<ScSample> = sc.iter().copied().filter(|s| s.t_s < 0.0).collect();
    let baseline = baseline_sigma(&calibration).data("skin-conductance calibration")?;
    let during: Vec<ScSample> = sc.iter().copied().filter(|s| s.t_s >= 0.0).collect();
    Ok((0..measures).map(|m| sample_at_measure_start(&during, &baseline, m as f64 * timing.measure_s())).collect())
}

pub fn build(dir: &Path, out: &Path, tempo_bpm: f64, rec: &mut Recorder) -> CmdResult<()> {
    let timing = GridTiming::new(tempo_bpm).usage("--tempo")?;
    let mut sessions = Vec::new();
    for path in midi_files(dir)? {
        rec.input(&path);
        let bytes = fs::read(&path).data(format!("cannot read {}", path.display()))?;
        let events = events_from_smf(&bytes, tempo_bpm).data(format!("{}", path.display()))?;
        let measures = quantize_events(&events, tempo_bpm, 0).data(format!("{}", path.display()))?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("session").to_string();
        let sidecar = path.with_file_name(format!("{stem}{SC_SIDECAR_SUFFIX}"));
        let qsc = if sidecar.is_file() {
            rec.input(&sidecar);
            let file = File::open(&sidecar).data(format!("cannot open {}", sidecar.display()))?;
            let sc = read_sc_csv(BufReader::new(file)).data(format!("{}", sidecar.display()))?;
            session_qsc(&sc, measures.len(), &timing).map_err(|f| Failure::new(f.exit, f.error.context(sidecar.display().to_string())))?
        } else {
            warn!("{}: no {SC_SIDECAR_SUFFIX} sidecar, every measure labelled Med", path.display());
            vec![QscLevel::Med; measures.len()]
        };
        info!("{}: {} measures", path.display(), measures.len());
        sessions.push(Session::new(stem, tempo_bpm, measures, qsc));
    }
    let mut w = BufWriter::new(File::create(out).runtime(format!("cannot create {}", out.display()))?);
    write_corpus(&mut w, &sessions).and_then(|_| w.flush()).runtime(format!("cannot write {}", out.display()))?;
    rec.output(out);
    let measures: usize = sessions.iter().map(|s| s.measures.len()).sum();
    println!("{} sessions, {measures} measures -> {}", sessions.len(), out.display());
    rec.results(&serde_json::json!({ "sessions": sessions.len(), "measures": measures }));
    Ok(())
}

pub fn load_corpus(path: &Path, rec: &mut Recorder) -> CmdResult<Vec<Session>> {
    rec.input(path);
    let file = File::open(path).data(format!("cannot open corpus {}", path.display()))?;
    let sessions = read_corpus(BufReader::new(file)).data(format!("corpus {}", path.display()))?;
    if sessions.is_empty() {
        return Err(Failure::data(format!("corpus {} has no sessions", path.display())));
    }
    Ok(sessions)
}

pub fn load_vocab(path: &Path, rec: &mut Recorder) -> CmdResult<Vocabulary> {
    rec.input(path);
    let file = File::open(path).data(format!("cannot open vocabulary {}", path.display()))?;
    Vocabulary::read_tsv(BufReader::new(file)).data(format!("vocabulary {}", path.display()))
}

#[derive(Debug, Serialize)]
pub struct CorpusStats {
    pub sessions: usize,
    pub measures: usize,
    pub token_occurrences: u64,
    pub unique_tokens: usize,
    pub min_count: u64,
    pub retained: usize,
    pub pruned: usize,
    pub pruned_occurrences: u64,
    /// Vocabulary size including the special tokens.
    pub vocab_size: usize,
    pub qsc_counts: BTreeMap<String, usize>,
    pub qsc_proportions: BTreeMap<String, f64>,
}

pub fn corpus_stats(sessions: &[Session], min_count: u64) -> (CorpusStats, Vocabulary, PruneReport) {
    let measures: Vec<_> = sessions.iter().flat_map(|s| &s.measures).collect();
    let counts = count_tokens(measures.iter().copied());
    let (vocab, report) = build_vocabulary(measures.iter().copied(), min_count);
    let mut qsc_counts: BTreeMap<String, usize> = QscLevel::ALL.iter().map(|l| (l.to_string(), 0)).collect();
    for s in sessions {
        for q in &s.qsc {
            *qsc_counts.entry(q.to_string()).or_default() += 1;
        }
    }
    let labelled: usize = qsc_counts.values().sum();
    let qsc_proportions =
        qsc_counts.iter().map(|(k, &v)| (k.clone(), if labelled == 0 { 0.0 } else { v as f64 / labelled as f64 })).collect();
    let stats = CorpusStats {
        sessions: sessions.len(),
        measures: measures.len(),
        token_occurrences: counts.values().sum(),
        unique_tokens: counts.len(),
        min_count,
        retained: report.retained,
        pruned: report.pruned,
        pruned_occurrences: report.pruned_occurrences,
        vocab_size: vocab.len(),
        qsc_counts,
        qsc_proportions,
    };
    (stats, vocab, report)
}

pub fn stats_text(s: &CorpusStats) -> String {
    let mut t = String::new();
    t += &format!("sessions            {}\n", s.sessions);
    t += &format!("measures            {}\n", s.measures);
    t += &format!("token occurrences   {}\n", s.token_occurrences);
    t += &format!("unique tokens       {}\n", s.unique_tokens);
    t += &format!("retained (>= {:>3})   {}\n", s.min_count, s.retained);
    t += &format!("pruned              {} ({} occurrences)\n", s.pruned, s.pruned_occurrences);
    t += &format!("vocabulary size     {} with specials\n", s.vocab_size);
    for (level, n) in &s.qsc_counts {
        t += &format!("QSC {level:<4}            {n} ({:.1}%)\n", 100.0 * s.qsc_proportions[level]);
    }
    t
}

pub fn stats(corpus: &Path, min_count: u64, json: bool, rec: &mut Recorder) -> CmdResult<()> {
    let sessions = load_corpus(corpus, rec)?;
    let (s, _, _) = corpus_stats(&sessions, min_count);
    if json {
        println!("{}", serde_json::to_string_pretty(&s).expect("stats serialize"));
    } else {
        print!("{}", stats_text(&s));
    }
    rec.results(&s);
    Ok(())
}

pub fn vocab(corpus: &Path, out: &Path, min_count: u64, rec: &mut Recorder) -> CmdResult<()> {
    let sessions = load_corpus(corpus, rec)?;
    let (s, vocab, _) = corpus_stats(&sessions, min_count);
    let mut w = BufWriter::new(File::create(out).runtime(format!("cannot create {}", out.display()))?);
    vocab.write_tsv(&mut w).and_then(|_| w.flush()).runtime(format!("cannot write {}", out.display()))?;
    rec.output(out);
    println!("retained {} tokens, pruned {} ({} occurrences) at min_count {min_count}", s.retained, s.pruned, s.pruned_occurrences);
    println!("vocabulary of {} (with specials), hash {} -> {}", vocab.len(), hex::encode(vocab.hash()), out.display());
    rec.results(&serde_json::json!({ "stats": s, "vocab_hash": hex::encode(vocab.hash()) }));
    Ok(())
}
