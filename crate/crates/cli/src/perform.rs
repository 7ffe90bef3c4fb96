use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::Duration;

use duet_core::biometric::{FixedQsc, OscQscClient, QscLevel, QscSource};
use duet_core::corpus::{events_from_smf, quantize_events, read_corpus, MeasureGrid};
use duet_core::improviser::{
    run_session, BioCondition, Clock, EngineError, InjectedDelay, InputMode, MeasureOrigin, MelodySource, RealClock, SessionConfig,
    SessionIo, SessionOutcome, VirtualClock, VisCondition,
};
use duet_core::model::load_model;
use duet_core::netio::{FrameSink, MidiSink, NullFrameSink, SmfRecorder, TeeMidiSink, UdpMidiSink, UdpMidiSource, VisualizerServer};
use log::info;
use serde::Serialize;

use crate::corpus_cmd::load_vocab;
use crate::failure::{Classify, CmdResult, Exit, Failure};
use crate::manifest::Recorder;

/// Flag and environment overrides for a session.
#[derive(Debug, Clone, Default)]
pub struct PerformOverrides {
    pub vis: Option<VisCondition>,
    pub bio: Option<BioCondition>,
    pub input: Option<InputMode>,
    pub seed: Option<u64>,
    pub measures: Option<usize>,
    pub tempo_bpm: Option<f64>,
    pub temperature: Option<f64>,
    pub deadline_ms: Option<f64>,
    pub inject_delay_ms: Option<u64>,
    pub inject_delay_measures: Vec<usize>,
    pub model: Option<String>,
    pub vocab: Option<String>,
    pub script: Option<String>,
    pub qsc_service: Option<String>,
    pub visualizer: Option<String>,
    pub no_visualizer: bool,
    pub midi_out: Option<String>,
    pub midi_in: Option<String>,
}

impl PerformOverrides {
    pub fn apply(&self, s: &mut SessionConfig) -> CmdResult<()> {
        if let Some(v) = self.vis {
            s.vis_condition = v;
        }
        if let Some(b) = self.bio {
            s.bio_condition = b;
        }
        if let Some(i) = self.input {
            s.input_mode = i;
        }
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        if let Some(m) = self.measures {
            // 0 plays until the process is stopped
            s.measures = (m > 0).then_some(m);
        }
        if let Some(t) = self.tempo_bpm {
            s.tempo_bpm = t;
        }
        if let Some(t) = self.temperature {
            s.temperature = t;
        }
        if let Some(d) = self.deadline_ms {
            s.deadline_ms = Some(d);
        }
        match (self.inject_delay_ms, self.inject_delay_measures.is_empty()) {
            (Some(delay_ms), false) => s.inject_delay = Some(InjectedDelay { measures: self.inject_delay_measures.clone(), delay_ms }),
            (None, true) => {}
            _ => return Err(Failure::usage("--inject-delay-ms and --inject-delay-at go together")),
        }
        let e = &mut s.endpoints;
        for (slot, v) in [
            (&mut e.model_path, &self.model),
            (&mut e.vocab_path, &self.vocab),
            (&mut e.script_path, &self.script),
            (&mut e.qsc_service, &self.qsc_service),
            (&mut e.visualizer_bind, &self.visualizer),
            (&mut e.midi_out, &self.midi_out),
            (&mut e.midi_in_bind, &self.midi_in),
        ] {
            if v.is_some() {
                slot.clone_from(v);
            }
        }
        if self.no_visualizer {
            e.visualizer_bind = None;
        }
        Ok(())
    }
}

/// Output files of a session beside the log.
#[derive(Debug, Clone)]
pub struct PerformOutputs {
    pub log: PathBuf,
    pub metrics: Option<PathBuf>,
    pub record: Option<PathBuf>,
    pub simulated_clock: bool,
    pub qsc_level: QscLevel,
}

/// A `.mid` file is quantized at the session tempo; anything else is read as
/// a corpus file and its first session is used.
pub fn load_script(path: &Path, tempo_bpm: f64) -> CmdResult<Vec<MeasureGrid>> {
    let is_midi =
        path.extension().and_then(|x| x.to_str()).is_some_and(|x| x.eq_ignore_ascii_case("mid") || x.eq_ignore_ascii_case("midi"));
    let grids = if is_midi {
        let bytes = fs::read(path).data(format!("cannot read script {}", path.display()))?;
        let events = events_from_smf(&bytes, tempo_bpm).data(format!("script {}", path.display()))?;
        quantize_events(&events, tempo_bpm, 1).data(format!("script {}", path.display()))?
    } else {
        let file = File::open(path).data(format!("cannot open script {}", path.display()))?;
        let sessions = read_corpus(BufReader::new(file)).data(format!("script {}", path.display()))?;
        sessions.into_iter().next().map(|s| s.measures).unwrap_or_default()
    };
    if grids.is_empty() {
        return Err(Failure::data(format!("script {} has no measures", path.display())));
    }
    Ok(grids)
}

fn engine_failure(e: EngineError) -> Failure {
    let exit = match e {
        EngineError::Config(_) => Exit::Usage,
        EngineError::Model(_) | EngineError::Corpus(_) => Exit::Data,
        EngineError::Worker(_) | EngineError::Net(_) | EngineError::Io(_) => Exit::Runtime,
    };
    Failure::new(exit, anyhow::Error::new(e).context("session failed"))
}

#[derive(Debug, Serialize)]
struct PerformResults {
    outcome: SessionOutcome,
    measures: usize,
    generated: usize,
    fallbacks: usize,
    misses: Vec<usize>,
    frames: usize,
    events: usize,
    max_lateness_ms: f64,
}

pub fn run_perform(cfg: &SessionConfig, out: &PerformOutputs, rec: &mut Recorder) -> CmdResult<()> {
    cfg.validate().usage("session settings")?;
    rec.config(cfg);
    rec.seed = Some(cfg.seed);
    let ep = &cfg.endpoints;
    let model_path = PathBuf::from(ep.model_path.as_deref().ok_or_else(|| Failure::usage("no model: pass --model or set DUET_MODEL"))?);
    let vocab_path =
        PathBuf::from(ep.vocab_path.as_deref().ok_or_else(|| Failure::usage("no vocabulary: pass --vocab or set DUET_VOCAB"))?);
    let vocab = load_vocab(&vocab_path, rec)?;
    rec.input(&model_path);
    let saved = load_model(&model_path, Some(&vocab.hash())).data(format!("model {}", model_path.display()))?;
    let (model, calibration) = saved.into_tcn().data("model")?;

    let melody = match cfg.input_mode {
        InputMode::Script => {
            let path =
                PathBuf::from(ep.script_path.as_deref().ok_or_else(|| Failure::usage("scripted input needs --script or DUET_SCRIPT"))?);
            rec.input(&path);
            MelodySource::Script(load_script(&path, cfg.tempo_bpm)?)
        }
        InputMode::Live => {
            let bind = ep.midi_in_bind.as_deref().ok_or_else(|| Failure::usage("live input needs --midi-in or DUET_MIDI_IN"))?;
            let src = UdpMidiSource::bind(bind).runtime(format!("cannot bind MIDI input {bind}"))?;
            info!("listening for MIDI on {bind}");
            MelodySource::Live(Box::new(src))
        }
    };
    let qsc: Box<dyn QscSource> = match &ep.qsc_service {
        Some(addr) => Box::new(
            OscQscClient::connect(addr.as_str(), Duration::from_millis(cfg.qsc_timeout_ms)).runtime(format!("biometric service {addr}"))?,
        ),
        None => Box::new(FixedQsc(out.qsc_level)),
    };
    let mut sinks: Vec<Box<dyn MidiSink>> = Vec::new();
    if let Some(target) = &ep.midi_out {
        sinks.push(Box::new(UdpMidiSink::connect(target.as_str()).runtime(format!("MIDI output {target}"))?));
    }
    if let Some(path) = &out.record {
        sinks.push(Box::new(SmfRecorder::new(path, cfg.tempo_bpm)));
    }
    let frames: Arc<dyn FrameSink> = match &ep.visualizer_bind {
        Some(bind) => {
            let server = VisualizerServer::bind(bind.as_str()).runtime(format!("visualizer endpoint {bind}"))?;
            info!("visualizer frames on ws://{}", server.local_addr());
            Arc::new(server)
        }
        None => Arc::new(NullFrameSink),
    };
    let log_file = File::create(&out.log).runtime(format!("cannot create {}", out.log.display()))?;
    let metrics: Option<Box<dyn Write + Send>> = match &out.metrics {
        Some(p) => Some(Box::new(BufWriter::new(File::create(p).runtime(format!("cannot create {}", p.display()))?))),
        None => None,
    };
    let io = SessionIo {
        qsc,
        melody,
        midi_out: Box::new(TeeMidiSink(sinks)),
        frames,
        log: Some(Box::new(BufWriter::new(log_file))),
        metrics,
        stop: Arc::new(AtomicBool::new(false)),
    };
    let clock: Arc<dyn Clock> = if out.simulated_clock { Arc::new(VirtualClock::new()) } else { Arc::new(RealClock::start()) };

    let result = run_session(cfg, Arc::new(model), calibration, Arc::new(vocab), io, clock);
    rec.output(&out.log);
    rec.outputs.extend(out.metrics.iter().cloned());
    rec.outputs.extend(out.record.iter().cloned());
    let log = result.map_err(engine_failure)?;

    let count = |o| log.measures.iter().filter(|m| m.origin == o).count();
    let r = PerformResults {
        outcome: log.outcome.clone(),
        measures: log.measures.len(),
        generated: count(MeasureOrigin::Generated) + count(MeasureOrigin::PreRoll),
        fallbacks: count(MeasureOrigin::Fallback),
        misses: log.misses.clone(),
        frames: log.frames.len(),
        events: log.events.len(),
        max_lateness_ms: log.max_lateness_ms(),
    };
    println!(
        "{} measures ({} generated, {} replayed), {} misses, {} frames, {} drum events, max lateness {:.3} ms",
        r.measures,
        r.generated,
        r.fallbacks,
        r.misses.len(),
        r.frames,
        r.events,
        r.max_lateness_ms
    );
    println!("log -> {}", out.log.display());
    let outcome = log.outcome.clone();
    rec.results(&r);
    match outcome {
        SessionOutcome::Completed | SessionOutcome::Stopped => Ok(()),
        SessionOutcome::Aborted { reason } => Err(Failure::runtime(format!("session aborted: {reason}"))),
    }
}
