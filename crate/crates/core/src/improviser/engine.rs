//! The measure loop. Three actors share the work:
//!
//! * the clock thread (caller's thread) walks an event queue of grid steps,
//!   confidence frames, triggers and barline collections;
//! * the inference worker answers triggers: QSC query, bio condition,
//!   sampling;
//! * the I/O dispatcher sends MIDI and frames and writes the logs.
//!
//! A trigger fires at the start of the last step of measure `n`; its result
//! must be back within one grid step (measured in real time, also under a
//! virtual clock) or measure `n` is replayed in place of `n + 1`.

use std::cmp::Ordering as CmpOrdering;
use std::collections::BinaryHeap;
use std::io::Write;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::{error, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::clock::{Clock, RealtimeGuard};
use super::conditions::{BioCondition, InputMode, VisCondition};
use super::confidence::{confidence_metric, ConfidenceFrame, ConfidenceTracker};
use super::melody::{scripted_measure, without_last_step, LiveMelody};
use super::EngineError;
use crate::biometric::{QscLevel, QscReply, QscSource, DEFAULT_QUERY_TIMEOUT};
use crate::corpus::{GridTiming, MeasureGrid, TokenId, Vocabulary, CONTEXT_MEASURES, DRUM_CHANNEL, STEPS_PER_MEASURE};
use crate::model::{Calibration, SampledMeasure, Tcn};
use crate::netio::{FrameSink, MidiEvent, MidiSink, MidiSource};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectedDelay {
    /// Measures whose generation is slowed down.
    pub measures: Vec<usize>,
    pub delay_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Endpoints {
    pub model_path: Option<String>,
    pub vocab_path: Option<String>,
    /// `host:port` of the biometric OSC service.
    pub qsc_service: Option<String>,
    pub visualizer_bind: Option<String>,
    pub midi_out: Option<String>,
    pub midi_in_bind: Option<String>,
    pub script_path: Option<String>,
}

impl Default for Endpoints {
    fn default() -> Self {
        Endpoints {
            model_path: None,
            vocab_path: None,
            qsc_service: None,
            visualizer_bind: Some("127.0.0.1:8765".into()),
            midi_out: None,
            midi_in_bind: None,
            script_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub tempo_bpm: f64,
    /// `None` runs until stopped.
    pub measures: Option<usize>,
    pub vis_condition: VisCondition,
    pub bio_condition: BioCondition,
    pub input_mode: InputMode,
    pub seed: u64,
    pub temperature: f64,
    /// Generation budget after a trigger; defaults to one grid step.
    pub deadline_ms: Option<f64>,
    pub qsc_timeout_ms: u64,
    pub frame_interval_ms: u64,
    pub max_consecutive_misses: usize,
    pub inject_delay: Option<InjectedDelay>,
    /// Ask for real-time scheduling of the clock thread on a wall clock.
    pub realtime_priority: bool,
    pub endpoints: Endpoints,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            tempo_bpm: 120.0,
            // three minutes at 120 bpm
            measures: Some(90),
            vis_condition: VisCondition::Truthful,
            bio_condition: BioCondition::Truthful,
            input_mode: InputMode::Script,
            seed: 0,
            temperature: 1.0,
            deadline_ms: None,
            qsc_timeout_ms: DEFAULT_QUERY_TIMEOUT.as_millis() as u64,
            frame_interval_ms: 500,
            max_consecutive_misses: 3,
            inject_delay: None,
            realtime_priority: true,
            endpoints: Endpoints::default(),
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if !(self.tempo_bpm > 0.0 && self.tempo_bpm.is_finite()) {
            return Err(EngineError::Config(format!("tempo {} must be positive", self.tempo_bpm)));
        }
        if self.measures == Some(0) {
            return Err(EngineError::Config("a session needs at least one measure".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(EngineError::Config(format!("temperature {} must be positive", self.temperature)));
        }
        if self.frame_interval_ms == 0 {
            return Err(EngineError::Config("frame interval must be positive".into()));
        }
        if self.deadline_ms.is_some_and(|d| !(d > 0.0)) {
            return Err(EngineError::Config("deadline must be positive".into()));
        }
        Ok(())
    }

    pub fn timing(&self) -> GridTiming {
        GridTiming { tempo_bpm: self.tempo_bpm }
    }

    pub fn deadline(&self) -> Duration {
        Duration::from_secs_f64(self.deadline_ms.map_or(self.timing().step_s(), |d| d / 1000.0))
    }
}

pub enum MelodySource {
    Script(Vec<MeasureGrid>),
    Live(Box<dyn MidiSource>),
}

impl MelodySource {
    pub fn mode(&self) -> InputMode {
        match self {
            MelodySource::Script(_) => InputMode::Script,
            MelodySource::Live(_) => InputMode::Live,
        }
    }
}

/// Everything the engine talks to.
pub struct SessionIo {
    pub qsc: Box<dyn QscSource>,
    pub melody: MelodySource,
    pub midi_out: Box<dyn MidiSink>,
    pub frames: Arc<dyn FrameSink>,
    /// Deterministic JSON-lines session log.
    pub log: Option<Box<dyn Write + Send>>,
    /// Timing measurements (latencies, lateness); not reproducible.
    pub metrics: Option<Box<dyn Write + Send>>,
    pub stop: Arc<AtomicBool>,
}

/// Cloneable in-memory writer for logs.
#[derive(Debug, Clone, Default)]
pub struct MemoryLog(Arc<Mutex<Vec<u8>>>);

impl MemoryLog {
    pub fn contents(&self) -> Vec<u8> {
        self.0.lock().expect("log buffer poisoned").clone()
    }
}

impl Write for MemoryLog {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().expect("log buffer poisoned").extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureOrigin {
    PreRoll,
    Generated,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureRecord {
    pub measure: usize,
    pub origin: MeasureOrigin,
    pub request_id: i32,
    pub qsc_raw: QscLevel,
    pub qsc_effective: QscLevel,
    pub qsc_fallback: bool,
    pub ids: Vec<TokenId>,
    pub tokens: Vec<String>,
    pub probs: Vec<f64>,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogRecord {
    SessionStart { config: SessionConfig, vocab_hash: String },
    Trigger { measure: usize, t_ms: f64, request_id: i32 },
    Measure(MeasureRecord),
    Miss { measure: usize, consecutive: usize },
    Frame(ConfidenceFrame),
    SessionEnd { outcome: SessionOutcome, measures: usize, misses: usize, frames: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SessionOutcome {
    Completed,
    Stopped,
    Aborted { reason: String },
}

/// A drum hit as sent, with the grid time it was meant for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmittedEvent {
    pub step: u64,
    pub ideal_ms: f64,
    pub event: MidiEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationTiming {
    pub measure: usize,
    pub latency_us: Option<u64>,
    pub deadline_us: u64,
    pub on_time: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionLog {
    pub measures: Vec<MeasureRecord>,
    pub frames: Vec<ConfidenceFrame>,
    pub events: Vec<EmittedEvent>,
    pub misses: Vec<usize>,
    pub timings: Vec<GenerationTiming>,
    pub outcome: SessionOutcome,
}

impl SessionLog {
    pub fn max_lateness_ms(&self) -> f64 {
        self.events.iter().map(|e| (e.event.t_ms - e.ideal_ms).abs()).fold(0.0, f64::max)
    }
}

struct Job {
    gen: u64,
    measure: usize,
    context: Vec<TokenId>,
    t_session_s: f64,
    delay: Option<Duration>,
}

struct JobResult {
    gen: u64,
    measure: usize,
    reply: QscReply,
    effective: QscLevel,
    sampled: SampledMeasure,
    finished: Instant,
}

struct Worker {
    jobs: Sender<Job>,
    results: Receiver<Result<JobResult, String>>,
    gen: Arc<AtomicU64>,
    handle: JoinHandle<()>,
}

fn spawn_worker(
    model: Arc<Tcn<f32>>,
    mut qsc: Box<dyn QscSource>,
    bio: BioCondition,
    seed: u64,
    temperature: f64,
) -> Result<Worker, EngineError> {
    let (jobs, job_rx) = mpsc::channel::<Job>();
    let (res_tx, results) = mpsc::channel();
    let gen = Arc::new(AtomicU64::new(0));
    let current = gen.clone();
    let handle = thread::Builder::new().name("inference".into()).spawn(move || {
        for job in job_rx {
            let reply = qsc.query(job.measure as i32, job.t_session_s);
            let effective = bio.effective(reply.level);
            if let Some(d) = job.delay {
                let until = Instant::now() + d;
                while Instant::now() < until && current.load(Ordering::Acquire) == job.gen {
                    thread::sleep(Duration::from_millis(1));
                }
            }
            if current.load(Ordering::Acquire) != job.gen {
                continue;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(job.measure as u64);
            let out = model
                .sample_measure(&job.context, effective, temperature, &mut rng)
                .map(|sampled| JobResult { gen: job.gen, measure: job.measure, reply, effective, sampled, finished: Instant::now() })
                .map_err(|e| e.to_string());
            if res_tx.send(out).is_err() {
                break;
            }
        }
    })?;
    Ok(Worker { jobs, results, gen, handle })
}

enum IoMsg {
    Midi(MidiEvent),
    Frame(String),
    Log(String),
    Metric(String),
}

fn spawn_dispatcher(
    mut midi: Box<dyn MidiSink>,
    frames: Arc<dyn FrameSink>,
    mut log: Option<Box<dyn Write + Send>>,
    mut metrics: Option<Box<dyn Write + Send>>,
) -> Result<(Sender<IoMsg>, JoinHandle<()>), EngineError> {
    let (tx, rx) = mpsc::channel::<IoMsg>();
    let handle = thread::Builder::new().name("io-dispatch".into()).spawn(move || {
        let write_line = |w: &mut Option<Box<dyn Write + Send>>, line: &str| {
            if let Some(w) = w {
                if let Err(e) = writeln!(w, "{line}") {
                    error!("log write failed: {e}");
                }
            }
        };
        for msg in rx {
            match msg {
                IoMsg::Midi(e) => {
                    if let Err(err) = midi.send(&e) {
                        warn!("MIDI send failed: {err}");
                    }
                }
                IoMsg::Frame(json) => frames.publish(&json),
                IoMsg::Log(line) => write_line(&mut log, &line),
                IoMsg::Metric(line) => write_line(&mut metrics, &line),
            }
        }
        if let Err(e) = midi.finish() {
            error!("finishing MIDI output failed: {e}");
        }
        for w in [&mut log, &mut metrics].into_iter().flatten() {
            let _ = w.flush();
        }
    })?;
    Ok((tx, handle))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Action {
    Collect { measure: usize },
    Frame { index: u64 },
    Step { step: u64 },
    Trigger { measure: usize },
}

impl Action {
    fn priority(&self) -> u8 {
        match self {
            Action::Collect { .. } => 0,
            Action::Frame { .. } => 1,
            Action::Step { .. } => 2,
            Action::Trigger { .. } => 3,
        }
    }
}

#[derive(Debug, PartialEq, Eq)]
struct Scheduled {
    at_ns: u64,
    action: Action,
}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> CmpOrdering {
        // reversed: BinaryHeap is a max-heap
        (other.at_ns, other.action.priority()).cmp(&(self.at_ns, self.action.priority()))
    }
}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<CmpOrdering> {
        Some(self.cmp(other))
    }
}

struct Pending {
    gen: u64,
    measure: usize,
    /// Real instant of the trigger's grid time; the deadline runs from here.
    triggered: Instant,
}

/// Time allowed for the pre-roll measure, which has no barline to meet.
const PRE_ROLL_TIMEOUT: Duration = Duration::from_secs(10);
/// Gap between the pre-roll finishing and the first downbeat.
const LEAD_IN: Duration = Duration::from_millis(50);

struct Runner<'a> {
    cfg: &'a SessionConfig,
    vocab: &'a Vocabulary,
    calibration: Calibration,
    clock: &'a dyn Clock,
    origin: Duration,
    io: Sender<IoMsg>,
    worker: &'a Worker,
    melody: MelodySource,
    live: LiveMelody,
    live_rx: Option<Receiver<MidiEvent>>,
    machine: Vec<MeasureGrid>,
    current: Option<MeasureRecord>,
    pending: Option<Pending>,
    tracker: ConfidenceTracker,
    consecutive_misses: usize,
    log: SessionLog,
}

impl Runner<'_> {
    fn session_now(&self) -> Duration {
        self.clock.now().saturating_sub(self.origin)
    }

    fn emit_log(&self, rec: &LogRecord) {
        let line = serde_json::to_string(rec).expect("log record serializes");
        let _ = self.io.send(IoMsg::Log(line));
    }

    fn emit_metric<T: Serialize>(&self, m: &T) {
        let _ = self.io.send(IoMsg::Metric(serde_json::to_string(m).expect("metric serializes")));
    }

    fn step_ns(&self, step: u64) -> u64 {
        (step as f64 * self.cfg.timing().step_s() * 1e9).round() as u64
    }

    fn melody_grid(&self, measure: usize, now_s: f64) -> MeasureGrid {
        match &self.melody {
            MelodySource::Script(s) => scripted_measure(s, measure),
            MelodySource::Live(_) => self.live.measure_grid(measure, now_s),
        }
    }

    fn drain_live(&mut self) {
        let now_ms = self.session_now().as_secs_f64() * 1000.0;
        if let MelodySource::Live(src) = &mut self.melody {
            if self.clock.is_virtual() {
                for e in src.poll(now_ms) {
                    self.live.push(&e);
                }
            }
        }
        if let Some(rx) = &self.live_rx {
            for e in rx.try_iter() {
                self.live.push(&e);
            }
        }
    }

    /// Context for measure `target`: measures `target-3 .. target-1`, melody
    /// as heard merged with the machine's drums, the last step blanked.
    fn context_for(&self, target: usize, now_s: f64) -> Vec<TokenId> {
        let mut ids = Vec::with_capacity(CONTEXT_MEASURES * STEPS_PER_MEASURE);
        for back in (1..=CONTEXT_MEASURES).rev() {
            let grid = match target.checked_sub(back) {
                None => MeasureGrid::silent(),
                Some(m) => {
                    let drums = self.machine.get(m).cloned().unwrap_or_else(MeasureGrid::silent);
                    let merged = self.melody_grid(m, now_s).with_drums_from(&drums);
                    if back == 1 {
                        without_last_step(&merged)
                    } else {
                        merged
                    }
                }
            };
            ids.extend_from_slice(&self.vocab.measure_ids(&grid));
        }
        ids
    }

    /// `ideal` is the trigger's scheduled session time.
    fn dispatch(&mut self, measure: usize, ideal: Duration, delay: Option<Duration>) -> Result<(), EngineError> {
        let now = self.session_now();
        let triggered = Instant::now() - now.saturating_sub(ideal);
        let now_s = now.as_secs_f64();
        let context = self.context_for(measure, now_s);
        let gen = self.worker.gen.fetch_add(1, Ordering::AcqRel) + 1;
        let job = Job { gen, measure, context, t_session_s: now_s, delay };
        self.worker.jobs.send(job).map_err(|_| EngineError::Worker("inference worker stopped".into()))?;
        self.pending = Some(Pending { gen, measure, triggered });
        Ok(())
    }

    fn delay_for(&self, measure: usize) -> Option<Duration> {
        self.cfg.inject_delay.as_ref().filter(|d| d.measures.contains(&measure)).map(|d| Duration::from_millis(d.delay_ms))
    }

    /// Waits for the pending result until `limit` after the trigger. Returns
    /// the result with its compute latency.
    fn collect(&mut self, limit: Duration) -> Result<Option<(JobResult, Duration)>, EngineError> {
        let Some(p) = self.pending.take() else { return Ok(None) };
        let until = p.triggered + limit;
        loop {
            let left = until.saturating_duration_since(Instant::now());
            let got = if left.is_zero() {
                self.worker.results.try_recv().map_err(|e| match e {
                    mpsc::TryRecvError::Empty => RecvTimeoutError::Timeout,
                    mpsc::TryRecvError::Disconnected => RecvTimeoutError::Disconnected,
                })
            } else {
                self.worker.results.recv_timeout(left)
            };
            match got {
                Ok(Ok(r)) if r.gen == p.gen && r.measure == p.measure => {
                    let latency = r.finished.saturating_duration_since(p.triggered);
                    if latency > limit {
                        break;
                    }
                    return Ok(Some((r, latency)));
                }
                Ok(Ok(_stale)) => continue,
                Ok(Err(e)) => return Err(EngineError::Worker(e)),
                Err(RecvTimeoutError::Timeout) => break,
                Err(RecvTimeoutError::Disconnected) => return Err(EngineError::Worker("inference worker stopped".into())),
            }
        }
        // Cancel the late job so it does not hold up the next one.
        self.worker.gen.fetch_add(1, Ordering::AcqRel);
        Ok(None)
    }

    fn accept(&mut self, r: JobResult, origin: MeasureOrigin) -> Result<(), EngineError> {
        let grid = self.vocab.measure_from_ids(&r.sampled.ids)?;
        let confidence = confidence_metric(&r.sampled.probs, &self.calibration)?;
        let rec = MeasureRecord {
            measure: r.measure,
            origin,
            request_id: r.reply.request_id,
            qsc_raw: r.reply.level,
            qsc_effective: r.effective,
            qsc_fallback: r.reply.fallback,
            tokens: r.sampled.ids.iter().map(|&id| self.vocab.text(id).unwrap_or("o").to_string()).collect(),
            ids: r.sampled.ids,
            probs: r.sampled.probs,
            confidence,
        };
        self.install(rec, grid);
        Ok(())
    }

    fn install(&mut self, rec: MeasureRecord, grid: MeasureGrid) {
        debug_assert_eq!(rec.measure, self.machine.len());
        self.machine.push(grid);
        self.emit_log(&LogRecord::Measure(rec.clone()));
        self.log.measures.push(rec.clone());
        self.current = Some(rec);
    }

    fn fallback(&mut self, measure: usize) {
        let prev = self.current.clone().expect("pre-roll measure exists");
        let grid = self.machine.last().cloned().unwrap_or_else(MeasureGrid::silent);
        let rec = MeasureRecord { measure, origin: MeasureOrigin::Fallback, ..prev };
        self.install(rec, grid);
    }

    fn on_step(&mut self, step: u64) {
        self.drain_live();
        let measure = (step / STEPS_PER_MEASURE as u64) as usize;
        let k = (step % STEPS_PER_MEASURE as u64) as usize;
        let Some(grid) = self.machine.get(measure) else { return };
        let ideal_ms = self.step_ns(step) as f64 / 1e6;
        let t_ms = self.session_now().as_secs_f64() * 1000.0;
        for (&pitch, band) in &grid.cell(k).drums {
            let event = MidiEvent::note_on(t_ms, DRUM_CHANNEL, pitch, band.representative_velocity())
                .expect("drum pitches and velocities are in range");
            let _ = self.io.send(IoMsg::Midi(event));
            self.log.events.push(EmittedEvent { step, ideal_ms, event });
        }
    }

    fn on_frame(&mut self, index: u64) {
        let Some(cur) = &self.current else { return };
        let c_raw = self.tracker.update(cur.confidence);
        let t_ms = index * self.cfg.frame_interval_ms;
        let beats = t_ms as f64 / 1000.0 / self.cfg.timing().beat_s();
        let frame = ConfidenceFrame {
            t_ms,
            c_raw,
            c_display: self.cfg.vis_condition.display(c_raw),
            condition: self.cfg.vis_condition,
            featureless: self.cfg.vis_condition.featureless(),
            beat_phase: beats - beats.floor(),
            tempo_bpm: self.cfg.tempo_bpm,
        };
        let _ = self.io.send(IoMsg::Frame(frame.to_wire_json()));
        self.emit_log(&LogRecord::Frame(frame));
        self.log.frames.push(frame);
    }
}

/// Runs one session. The caller's thread is the clock thread.
pub fn run_session(
    cfg: &SessionConfig,
    model: Arc<Tcn<f32>>,
    calibration: Calibration,
    vocab: Arc<Vocabulary>,
    io: SessionIo,
    clock: Arc<dyn Clock>,
) -> Result<SessionLog, EngineError> {
    cfg.validate()?;
    if model.config.vocab_size != vocab.len() {
        return Err(EngineError::Config(format!("model expects {} tokens, vocabulary has {}", model.config.vocab_size, vocab.len())));
    }
    if io.melody.mode() != cfg.input_mode {
        return Err(EngineError::Config(format!("input mode is {} but a {} source was given", cfg.input_mode, io.melody.mode())));
    }

    let SessionIo { qsc, melody, midi_out, frames, log, metrics, stop } = io;
    let worker = spawn_worker(model, qsc, cfg.bio_condition, cfg.seed, cfg.temperature)?;
    let (io_tx, dispatcher) = spawn_dispatcher(midi_out, frames, log, metrics)?;

    // Real-time live input is stamped by its own polling thread; under a
    // virtual clock the engine polls once per step instead.
    let (melody, live_rx, input_thread, input_stop) = match melody {
        MelodySource::Live(mut src) if !clock.is_virtual() => {
            let (tx, rx) = mpsc::channel();
            let halt = Arc::new(AtomicBool::new(false));
            let (h, c) = (halt.clone(), clock.clone());
            let handle = thread::Builder::new().name("midi-in".into()).spawn(move || {
                while !h.load(Ordering::Relaxed) {
                    for e in src.poll(c.now().as_secs_f64() * 1000.0) {
                        if tx.send(e).is_err() {
                            return;
                        }
                    }
                    thread::sleep(Duration::from_millis(1));
                }
            })?;
            (MelodySource::Live(Box::new(NoInput)), Some(rx), Some(handle), Some(halt))
        }
        other => (other, None, None, None),
    };

    let mut r = Runner {
        cfg,
        vocab: &vocab,
        calibration,
        clock: clock.as_ref(),
        origin: Duration::ZERO,
        io: io_tx,
        worker: &worker,
        melody,
        live: LiveMelody::new(cfg.tempo_bpm),
        live_rx,
        machine: Vec::new(),
        current: None,
        pending: None,
        tracker: ConfidenceTracker::default(),
        consecutive_misses: 0,
        log: SessionLog {
            measures: Vec::new(),
            frames: Vec::new(),
            events: Vec::new(),
            misses: Vec::new(),
            timings: Vec::new(),
            outcome: SessionOutcome::Completed,
        },
    };
    r.emit_log(&LogRecord::SessionStart { config: cfg.clone(), vocab_hash: hex::encode(vocab.hash()) });

    let result = drive(&mut r, &stop);

    let Runner { io, mut log, .. } = r;
    if let Some(h) = input_stop {
        h.store(true, Ordering::Relaxed);
    }
    if let Some(t) = input_thread {
        let _ = t.join();
    }
    let Worker { jobs, results, gen, handle } = worker;
    gen.fetch_add(1, Ordering::AcqRel);
    drop(jobs);
    drop(results);
    let _ = handle.join();

    if let Err(e) = &result {
        log.outcome = SessionOutcome::Aborted { reason: e.to_string() };
    }
    let end = LogRecord::SessionEnd {
        outcome: log.outcome.clone(),
        measures: log.measures.len(),
        misses: log.misses.len(),
        frames: log.frames.len(),
    };
    let _ = io.send(IoMsg::Log(serde_json::to_string(&end).expect("log record serializes")));
    let _ = io.send(IoMsg::Metric(
        serde_json::json!({"type": "timing_summary", "max_lateness_ms": log.max_lateness_ms(), "events": log.events.len()}).to_string(),
    ));
    drop(io);
    let _ = dispatcher.join();
    result.map(|_| log)
}

struct NoInput;

impl MidiSource for NoInput {
    fn poll(&mut self, _now_ms: f64) -> Vec<MidiEvent> {
        Vec::new()
    }
}

fn drive(r: &mut Runner<'_>, stop: &AtomicBool) -> Result<(), EngineError> {
    let cfg = r.cfg;
    let steps_per_measure = STEPS_PER_MEASURE as u64;
    let total_steps = cfg.measures.map(|m| m as u64 * steps_per_measure);
    let end_ns = total_steps.map(|s| r.step_ns(s));
    let frame_ns = cfg.frame_interval_ms * 1_000_000;
    let deadline = cfg.deadline();

    // Pre-roll: the first measure is generated before the downbeat.
    r.dispatch(0, r.session_now(), r.delay_for(0))?;
    let (first, latency) = r.collect(PRE_ROLL_TIMEOUT)?.ok_or_else(|| EngineError::Worker("pre-roll generation timed out".into()))?;
    r.log.timings.push(GenerationTiming {
        measure: 0,
        latency_us: Some(latency.as_micros() as u64),
        deadline_us: PRE_ROLL_TIMEOUT.as_micros() as u64,
        on_time: true,
    });
    r.accept(first, MeasureOrigin::PreRoll)?;
    r.origin = r.clock.now() + LEAD_IN;

    let _realtime = if cfg.realtime_priority && !r.clock.is_virtual() {
        let g = RealtimeGuard::acquire();
        if g.is_none() {
            warn!("real-time scheduling unavailable; step timing may jitter under load");
        }
        g
    } else {
        None
    };
    let mut queue = BinaryHeap::new();
    queue.push(Scheduled { at_ns: 0, action: Action::Step { step: 0 } });
    queue.push(Scheduled { at_ns: 0, action: Action::Frame { index: 0 } });

    while let Some(Scheduled { at_ns, action }) = queue.pop() {
        if stop.load(Ordering::Relaxed) {
            r.log.outcome = SessionOutcome::Stopped;
            break;
        }
        if end_ns.is_some_and(|e| at_ns >= e) {
            continue;
        }
        r.clock.sleep_until(r.origin + Duration::from_nanos(at_ns));
        match action {
            Action::Step { step } => {
                r.on_step(step);
                let next = step + 1;
                if total_steps.is_none_or(|t| next < t) {
                    queue.push(Scheduled { at_ns: r.step_ns(next), action: Action::Step { step: next } });
                }
                if step % steps_per_measure == steps_per_measure - 1 {
                    let target = (step / steps_per_measure) as usize + 1;
                    if cfg.measures.is_none_or(|m| target < m) {
                        queue.push(Scheduled { at_ns, action: Action::Trigger { measure: target } });
                        queue.push(Scheduled { at_ns: r.step_ns(next), action: Action::Collect { measure: target } });
                    }
                }
            }
            Action::Frame { index } => {
                r.on_frame(index);
                queue.push(Scheduled { at_ns: (index + 1) * frame_ns, action: Action::Frame { index: index + 1 } });
            }
            Action::Trigger { measure } => {
                let t_ms = at_ns as f64 / 1e6;
                r.emit_log(&LogRecord::Trigger { measure, t_ms, request_id: measure as i32 });
                r.dispatch(measure, Duration::from_nanos(at_ns), r.delay_for(measure))?;
            }
            Action::Collect { measure } => {
                let got = r.collect(deadline)?;
                let timing = GenerationTiming {
                    measure,
                    latency_us: got.as_ref().map(|(_, l)| l.as_micros() as u64),
                    deadline_us: deadline.as_micros() as u64,
                    on_time: got.is_some(),
                };
                r.emit_metric(&timing);
                r.log.timings.push(timing);
                match got {
                    Some((res, _)) => {
                        r.consecutive_misses = 0;
                        r.accept(res, MeasureOrigin::Generated)?;
                    }
                    None => {
                        r.consecutive_misses += 1;
                        warn!("measure {measure}: generation missed its deadline; replaying the previous measure");
                        r.log.misses.push(measure);
                        r.emit_log(&LogRecord::Miss { measure, consecutive: r.consecutive_misses });
                        r.fallback(measure);
                        if r.consecutive_misses > cfg.max_consecutive_misses {
                            let reason = format!("{} consecutive deadline misses at measure {measure}", r.consecutive_misses);
                            error!("{reason}; aborting session");
                            r.log.outcome = SessionOutcome::Aborted { reason };
                            break;
                        }
                    }
                }
                if let MelodySource::Live(_) = r.melody {
                    r.live.forget_before(measure.saturating_sub(CONTEXT_MEASURES + 1));
                }
            }
        }
    }
    Ok(())
}
