mod analyze;
mod config;
mod corpus_cmd;
mod failure;
mod manifest;
mod perform;
mod train_cmd;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use duet_core::biometric::QscLevel;
use duet_core::improviser::{BioCondition, InputMode, VisCondition};

use config::load_config;
use failure::{CmdResult, Exit, Failure};
use manifest::Recorder;
use perform::{PerformOutputs, PerformOverrides};
use train_cmd::TrainOverrides;

#[derive(Debug, Parser)]
#[command(name = "duet", version, about = "An AI drummer that improvises with a melodic performer")]
struct Cli {
    /// TOML configuration; flags override it.
    #[arg(long, global = true, env = "DUET_CONFIG")]
    config: Option<PathBuf>,
    /// Where to write the run manifest (default: beside the main output).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Log verbosity (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn", env = "DUET_LOG")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build and inspect the training corpus.
    #[command(subcommand)]
    Corpus(CorpusCommand),
    /// Train a model (or a sweep of models) on a corpus.
    Train(TrainArgs),
    /// Report validation and test perplexity of a model.
    Eval(EvalArgs),
    /// Play a session with the drummer.
    Perform(Box<PerformArgs>),
    /// Study statistics.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
}

#[derive(Debug, Subcommand)]
enum CorpusCommand {
    /// Quantize a folder of duet recordings (.mid, with optional .sc.csv sidecars).
    Build {
        dir: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Click-track tempo of the recordings.
        #[arg(long)]
        tempo: Option<f64>,
    },
    /// Token counts, pruning and QSC level proportions.
    Stats {
        corpus: PathBuf,
        #[arg(long)]
        min_count: Option<u64>,
        #[arg(long)]
        json: bool,
    },
    /// Write the pruned vocabulary as TSV.
    Vocab {
        corpus: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        min_count: Option<u64>,
    },
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Use the neutral <start> token instead of the QSC level.
    #[arg(long)]
    neutral_start: bool,
    /// Grid search over the [sweep] section; keeps the best model.
    #[arg(long, conflicts_with = "untrained")]
    sweep: bool,
    /// Save freshly initialized parameters without training.
    #[arg(long)]
    untrained: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long, env = "DUET_MODEL")]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, env = "DUET_VOCAB")]
    vocab: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct PerformArgs {
    #[arg(long, env = "DUET_MODEL")]
    model: Option<String>,
    #[arg(long, env = "DUET_VOCAB")]
    vocab: Option<String>,
    /// Melody script (.mid or corpus file) for scripted input.
    #[arg(long, env = "DUET_SCRIPT")]
    script: Option<String>,
    #[arg(long, value_parser = parse_vis)]
    vis: Option<VisCondition>,
    #[arg(long, value_parser = parse_bio)]
    bio: Option<BioCondition>,
    #[arg(long, value_parser = parse_input)]
    input: Option<InputMode>,
    #[arg(long)]
    seed: Option<u64>,
    /// Session length in measures; 0 plays until interrupted.
    #[arg(long)]
    measures: Option<usize>,
    #[arg(long)]
    tempo: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    /// Generation budget after each trigger (default: one grid step).
    #[arg(long)]
    deadline_ms: Option<f64>,
    /// Slow down generation by this much for the measures in --inject-delay-at.
    #[arg(long)]
    inject_delay_ms: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    inject_delay_at: Vec<usize>,
    /// `host:port` of the biometric OSC service.
    #[arg(long, env = "DUET_QSC_SERVICE")]
    qsc: Option<String>,
    /// Level used when no biometric service is configured.
    #[arg(long, default_value = "Med")]
    qsc_level: QscLevel,
    /// WebSocket bind address for the visualizer.
    #[arg(long, env = "DUET_VISUALIZER_BIND")]
    visualizer: Option<String>,
    #[arg(long, conflicts_with = "visualizer")]
    no_visualizer: bool,
    /// `host:port` receiving drum MIDI over UDP.
    #[arg(long, env = "DUET_MIDI_OUT")]
    midi_out: Option<String>,
    /// UDP bind address for live melody input.
    #[arg(long, env = "DUET_MIDI_IN")]
    midi_in: Option<String>,
    /// Run on a simulated clock (no waiting, same output).
    #[arg(long)]
    simulated_clock: bool,
    /// JSON-lines session log.
    #[arg(long, default_value = "session.jsonl")]
    log: PathBuf,
    /// Timing measurements (latencies), JSON lines.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Record the drum part as a Standard MIDI File.
    #[arg(long)]
    record: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum AnalyzeCommand {
    /// Flow questionnaire: per-condition table and paired t-tests.
    Flow(AnalyzeArgs),
    /// Listening study: exclusions, preferences and binomial test.
    Listener(AnalyzeArgs),
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    csv: Option<PathBuf>,
    /// Use the published table instead of a CSV.
    #[arg(long, conflicts_with = "csv")]
    published: bool,
    #[arg(long)]
    json: bool,
}

fn parse_vis(s: &str) -> Result<VisCondition, String> {
    s.parse().map_err(|e: duet_core::improviser::EngineError| e.to_string())
}

fn parse_bio(s: &str) -> Result<BioCondition, String> {
    s.parse().map_err(|e: duet_core::improviser::EngineError| e.to_string())
}

fn parse_input(s: &str) -> Result<InputMode, String> {
    s.parse().map_err(|e: duet_core::improviser::EngineError| e.to_string())
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Corpus(CorpusCommand::Build { .. }) => "corpus build",
        Command::Corpus(CorpusCommand::Stats { .. }) => "corpus stats",
        Command::Corpus(CorpusCommand::Vocab { .. }) => "corpus vocab",
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::Perform(_) => "perform",
        Command::Analyze(AnalyzeCommand::Flow(_)) => "analyze flow",
        Command::Analyze(AnalyzeCommand::Listener(_)) => "analyze listener",
    }
}

fn dispatch(cli: &Cli, rec: &mut Recorder) -> CmdResult<()> {
    let mut cfg = load_config(cli.config.as_deref())?;
    if let Some(p) = &cli.config {
        rec.input(p);
    }
    match &cli.command {
        Command::Corpus(c) => match c {
            CorpusCommand::Build { dir, out, tempo } => {
                let tempo = tempo.unwrap_or(cfg.data.tempo_bpm);
                rec.config(&serde_json::json!({ "tempo_bpm": tempo }));
                corpus_cmd::build(dir, out, tempo, rec)
            }
            CorpusCommand::Stats { corpus, min_count, json } => {
                let min_count = min_count.unwrap_or(cfg.data.min_count);
                rec.config(&serde_json::json!({ "min_count": min_count }));
                corpus_cmd::stats(corpus, min_count, *json, rec)
            }
            CorpusCommand::Vocab { corpus, out, min_count } => {
                let min_count = min_count.unwrap_or(cfg.data.min_count);
                rec.config(&serde_json::json!({ "min_count": min_count }));
                corpus_cmd::vocab(corpus, out, min_count, rec)
            }
        },
        Command::Train(a) => {
            TrainOverrides {
                epochs: a.epochs,
                batch_size: a.batch_size,
                patience: a.patience,
                learning_rate: a.learning_rate,
                seed: a.seed,
                neutral_start: a.neutral_start,
            }
            .apply(&mut cfg);
            rec.config(&cfg);
            train_cmd::run_train(&cfg, &a.corpus, &a.vocab, &a.out, a.sweep, a.untrained, rec)
        }
        Command::Eval(a) => train_cmd::run_eval(&cfg, &a.model, &a.corpus, &a.vocab, a.json, rec),
        Command::Perform(a) => {
            PerformOverrides {
                vis: a.vis,
                bio: a.bio,
                input: a.input,
                seed: a.seed,
                measures: a.measures,
                tempo_bpm: a.tempo,
                temperature: a.temperature,
                deadline_ms: a.deadline_ms,
                inject_delay_ms: a.inject_delay_ms,
                inject_delay_measures: a.inject_delay_at.clone(),
                model: a.model.clone(),
                vocab: a.vocab.clone(),
                script: a.script.clone(),
                qsc_service: a.qsc.clone(),
                visualizer: a.visualizer.clone(),
                no_visualizer: a.no_visualizer,
                midi_out: a.midi_out.clone(),
                midi_in: a.midi_in.clone(),
            }
            .apply(&mut cfg.session)?;
            let out = PerformOutputs {
                log: a.log.clone(),
                metrics: a.metrics.clone(),
                record: a.record.clone(),
                simulated_clock: a.simulated_clock,
                qsc_level: a.qsc_level,
            };
            perform::run_perform(&cfg.session, &out, rec)
        }
        Command::Analyze(AnalyzeCommand::Flow(a)) => analyze::flow(a.csv.as_deref(), a.published, a.json, rec),
        Command::Analyze(AnalyzeCommand::Listener(a)) => analyze::listener(a.csv.as_deref(), a.published, a.json, rec),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(Exit::Usage as u8) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::new().parse_filters(&cli.log_level).format_timestamp_millis().init();

    let mut rec = Recorder::new(command_name(&cli.command));
    let result = dispatch(&cli, &mut rec);
    let code = match &result {
        Ok(()) => 0,
        Err(f) => f.exit as u8,
    };
    let manifest = rec.finish(cli.manifest.as_deref(), code);
    match (result, manifest) {
        (Ok(()), Ok(_)) => ExitCode::SUCCESS,
        (Err(f), _) => report(f),
        (Ok(()), Err(f)) => report(f),
    }
}

fn report(f: Failure) -> ExitCode {
    eprintln!("error: {:#}", f.error);
    f.code()
}
