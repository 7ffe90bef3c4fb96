use std::path::Path;

use duet_core::corpus::{window_dataset, Session, Split, Vocabulary, WindowedDataset};
use duet_core::model::{
    examples_from_windows, load_model, perplexity, save_model, train, Calibration, EpochSummary, EvalReport, ModelConfig, ModelError,
    SavedModel, Tcn, TrainConfig,
};
use serde::Serialize;

use crate::config::{DataConfig, DuetConfig, SweepPoint};
use crate::corpus_cmd::{load_corpus, load_vocab};
use crate::failure::{Classify, CmdResult, Exit, Failure};
use crate::manifest::Recorder;

/// Overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct TrainOverrides {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub patience: Option<usize>,
    pub learning_rate: Option<f64>,
    pub seed: Option<u64>,
    pub neutral_start: bool,
}

impl TrainOverrides {
    pub fn apply(&self, cfg: &mut DuetConfig) {
        if let Some(e) = self.epochs {
            cfg.train.max_epochs = e;
        }
        if let Some(b) = self.batch_size {
            cfg.train.batch_size = b;
        }
        if let Some(p) = self.patience {
            cfg.train.patience = p;
        }
        if let Some(lr) = self.learning_rate {
            cfg.train.learning_rate = lr;
        }
        if let Some(s) = self.seed {
            cfg.model.seed = s;
        }
        if self.neutral_start {
            cfg.model.neutral_start = true;
        }
    }
}

fn model_error(e: ModelError, context: &str) -> Failure {
    let exit = match e {
        ModelError::InvalidConfig(_) => Exit::Usage,
        ModelError::Diverged { .. } => Exit::Runtime,
        _ => Exit::Data,
    };
    Failure::new(exit, anyhow::Error::new(e).context(context.to_string()))
}

fn bind_vocab(model: &ModelConfig, vocab: &Vocabulary) -> CmdResult<ModelConfig> {
    if model.vocab_size != 0 && model.vocab_size != vocab.len() {
        return Err(Failure::data(format!(
            "config declares vocab_size {} but the vocabulary has {} tokens",
            model.vocab_size,
            vocab.len()
        )));
    }
    Ok(ModelConfig { vocab_size: vocab.len(), ..model.clone() })
}

pub fn dataset(sessions: &[Session], vocab: &Vocabulary, data: &DataConfig) -> CmdResult<WindowedDataset> {
    let (ds, report) = window_dataset(sessions, vocab, data.fractions, data.stride, data.split_seed).usage("data settings")?;
    if ds.is_empty() {
        return Err(Failure::data(format!("no 4-measure windows in the corpus ({} sessions too short)", report.skipped_sessions.len())));
    }
    Ok(ds)
}

#[derive(Debug, Serialize)]
struct SweepResult {
    model: ModelConfig,
    train: TrainConfig,
    best_epoch: usize,
    best_perplexity: f64,
}

#[derive(Debug, Serialize)]
struct TrainResults {
    windows: [usize; 3],
    history: Vec<EpochSummary>,
    best_epoch: usize,
    calibration: Calibration,
    sweep: Vec<SweepResult>,
}

fn print_epoch(s: &EpochSummary) {
    println!(
        "epoch {:>3}  loss {:.4}  perplexity {:.4}{}",
        s.epoch,
        s.train_loss,
        s.monitor.perplexity,
        if s.improved { " *" } else { "" }
    );
}

pub fn run_train(
    cfg: &DuetConfig,
    corpus: &Path,
    vocab_path: &Path,
    out: &Path,
    sweep: bool,
    untrained: bool,
    rec: &mut Recorder,
) -> CmdResult<()> {
    let sessions = load_corpus(corpus, rec)?;
    let vocab = load_vocab(vocab_path, rec)?;
    let model_cfg = bind_vocab(&cfg.model, &vocab)?;
    rec.seed = Some(model_cfg.seed);
    let ds = dataset(&sessions, &vocab, &cfg.data)?;
    let windows = [ds.train.len(), ds.validation.len(), ds.test.len()];
    println!("windows: {} train, {} validation, {} test", windows[0], windows[1], windows[2]);

    let (model, calibration, history, best_epoch, sweep_results) = if untrained {
        model_cfg.validate().map_err(|e| model_error(e, "model config"))?;
        let m = Tcn::<f32>::init(model_cfg.clone()).map_err(|e| model_error(e, "model init"))?;
        (m, Calibration::uninformed(vocab.len()), Vec::new(), 0, Vec::new())
    } else {
        let points = if sweep {
            if cfg.sweep.is_empty() {
                return Err(Failure::usage("--sweep needs a [sweep] section listing at least one dimension"));
            }
            cfg.sweep.points(&model_cfg, &cfg.train)
        } else {
            vec![SweepPoint { model: model_cfg.clone(), train: cfg.train.clone() }]
        };
        let mut best: Option<(f64, duet_core::model::TrainOutcome<f32>)> = None;
        let mut results = Vec::new();
        for (i, p) in points.iter().enumerate() {
            if points.len() > 1 {
                println!(
                    "sweep {}/{}: embed {} hidden {} layers {} dropout {} lr {} silent weight {}",
                    i + 1,
                    points.len(),
                    p.model.embed_dim,
                    p.model.hidden_units,
                    p.model.layers,
                    p.model.dropout_rate,
                    p.train.learning_rate,
                    p.model.silent_loss_weight
                );
            }
            let outcome = train::<f32>(p.model.clone(), &p.train, &ds, print_epoch).map_err(|e| model_error(e, "training"))?;
            let score = outcome.history.iter().map(|h| h.monitor.perplexity).fold(f64::INFINITY, f64::min);
            results.push(SweepResult {
                model: p.model.clone(),
                train: p.train.clone(),
                best_epoch: outcome.best_epoch,
                best_perplexity: score,
            });
            if best.as_ref().is_none_or(|(b, _)| score < *b) {
                best = Some((score, outcome));
            }
        }
        let (_, o) = best.expect("at least one sweep point");
        if points.len() <= 1 {
            results.clear();
        }
        (o.model, o.calibration, o.history, o.best_epoch, results)
    };

    let saved = SavedModel { config: model.config.clone(), calibration, vocab_hash: vocab.hash(), params: model.params };
    save_model(out, &saved)
        .map_err(|e| Failure::new(Exit::Runtime, anyhow::Error::new(e).context(format!("cannot write {}", out.display()))))?;
    rec.output(out);
    rec.config(&serde_json::json!({ "data": cfg.data, "model": saved.config, "train": cfg.train, "sweep": cfg.sweep }));
    println!("best epoch {best_epoch} -> {}", out.display());
    rec.results(&TrainResults { windows, history, best_epoch, calibration, sweep: sweep_results });
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct EvalResults {
    pub vocab_size: usize,
    pub validation: Option<EvalReport>,
    pub test: Option<EvalReport>,
}

pub fn run_eval(cfg: &DuetConfig, model_path: &Path, corpus: &Path, vocab_path: &Path, json: bool, rec: &mut Recorder) -> CmdResult<()> {
    let sessions = load_corpus(corpus, rec)?;
    let vocab = load_vocab(vocab_path, rec)?;
    rec.input(model_path);
    if !model_path.is_file() {
        return Err(Failure::data(format!("model file {} not found", model_path.display())));
    }
    let saved = load_model(model_path, Some(&vocab.hash())).map_err(|e| model_error(e, &format!("model {}", model_path.display())))?;
    let (model, _) = saved.into_tcn().map_err(|e| model_error(e, "model"))?;
    rec.seed = Some(model.config.seed);
    let ds = dataset(&sessions, &vocab, &cfg.data)?;
    let eval = |split: Split| -> CmdResult<Option<EvalReport>> {
        let windows = ds.split(split);
        if windows.is_empty() {
            return Ok(None);
        }
        let ex = examples_from_windows(windows, &model.config).map_err(|e| model_error(e, "examples"))?;
        perplexity(&model, &ex, 0).map(Some).map_err(|e| model_error(e, "perplexity"))
    };
    let r = EvalResults { vocab_size: vocab.len(), validation: eval(Split::Validation)?, test: eval(Split::Test)? };
    if json {
        println!("{}", serde_json::to_string_pretty(&r).expect("eval serializes"));
    } else {
        for (name, rep) in [("validation", r.validation), ("test", r.test)] {
            match rep {
                Some(e) => println!("{name:<10} perplexity {:.4} over {} tokens", e.perplexity, e.token_count),
                None => println!("{name:<10} (empty split)"),
            }
        }
    }
    rec.config(&serde_json::json!({ "data": cfg.data, "model": model.config }));
    rec.results(&r);
    Ok(())
}
