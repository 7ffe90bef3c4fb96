//! Sequence assembly, weighted loss, Adam training and perplexity.

use log::{info, warn};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Calibration, ModelConfig, TrainConfig, INPUT_LEN};
use super::sample::{log_geometric_mean, sample_measure};
use super::tcn::{Tcn, TcnParams};
use super::{ModelError, Scalar};
use crate::biometric::QscLevel;
use crate::corpus::{SpecialIds, TokenId, Window, WindowedDataset, CONTEXT_LEN, STEPS_PER_MEASURE};

const MIN_PROB: f64 = 1e-12;

/// `[start] ++ context ++ 48 × <mask>`. `qsc = None` uses the neutral `<start>`.
pub fn build_input(specials: &SpecialIds, qsc: Option<QscLevel>, context: &[TokenId]) -> Result<Vec<TokenId>, ModelError> {
    if context.len() != CONTEXT_LEN {
        return Err(ModelError::InputLength { expected: CONTEXT_LEN, got: context.len() });
    }
    let mut v = Vec::with_capacity(INPUT_LEN);
    v.push(qsc.map_or(specials.start, |q| specials.qsc(q)));
    v.extend_from_slice(context);
    v.extend(std::iter::repeat_n(specials.mask, STEPS_PER_MEASURE));
    Ok(v)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceExample {
    pub input_ids: Vec<TokenId>,
    pub target_ids: Vec<TokenId>,
}

impl SequenceExample {
    pub fn from_window(w: &Window, specials: &SpecialIds, neutral_start: bool) -> Result<Self, ModelError> {
        if w.target.len() != STEPS_PER_MEASURE {
            return Err(ModelError::InputLength { expected: STEPS_PER_MEASURE, got: w.target.len() });
        }
        let qsc = if neutral_start { None } else { Some(w.qsc) };
        Ok(SequenceExample { input_ids: build_input(specials, qsc, &w.context)?, target_ids: w.target.clone() })
    }
}

fn target_weight(target: TokenId, silent_weight: f64) -> f64 {
    if target.0 == 0 {
        silent_weight
    } else {
        1.0
    }
}

fn clamped_ln(p: f64) -> f64 {
    if p < MIN_PROB {
        warn!("target probability {p:e} clamped to {MIN_PROB:e}");
        MIN_PROB.ln()
    } else {
        p.ln()
    }
}

/// Weighted-mean cross-entropy. Targets equal to `o` (id 0) carry
/// `silent_weight`, everything else 1.
pub fn loss<F: Scalar>(probs: &Array2<F>, targets: &[TokenId], silent_weight: f64) -> Result<f64, ModelError> {
    if probs.nrows() != targets.len() {
        return Err(ModelError::InputLength { expected: probs.nrows(), got: targets.len() });
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (row, &t) in probs.rows().into_iter().zip(targets) {
        let p = row.get(t.index()).ok_or(ModelError::TokenOutOfRange { id: t.0, vocab_size: row.len() })?;
        let w = target_weight(t, silent_weight);
        num += w * -clamped_ln(p.to_f64().unwrap_or(0.0));
        den += w;
    }
    Ok(num / den)
}

/// Weighted-mean loss over a batch and its gradient with respect to every
/// parameter. `dropout_rng = None` evaluates without dropout.
pub fn loss_and_gradients<F: Scalar, R: Rng + ?Sized>(
    model: &Tcn<F>,
    batch: &[SequenceExample],
    mut dropout_rng: Option<&mut R>,
) -> Result<(f64, TcnParams<F>), ModelError> {
    let w_s = model.config.silent_loss_weight;
    let total_w: f64 = batch.iter().flat_map(|e| e.target_ids.iter()).map(|&t| target_weight(t, w_s)).sum();
    if total_w <= 0.0 {
        return Err(ModelError::EmptyDataset);
    }
    let mut grads = TcnParams::zeros(&model.config);
    let mut num = 0.0;
    for ex in batch {
        let (probs, cache) = model.forward_train(&ex.input_ids, dropout_rng.as_deref_mut())?;
        if ex.target_ids.len() != probs.nrows() {
            return Err(ModelError::InputLength { expected: probs.nrows(), got: ex.target_ids.len() });
        }
        let mut dlogits = probs.clone();
        for (j, &t) in ex.target_ids.iter().enumerate() {
            let w = target_weight(t, w_s);
            let p = probs.get((j, t.index())).ok_or(ModelError::TokenOutOfRange { id: t.0, vocab_size: probs.ncols() })?;
            num += w * -clamped_ln(p.to_f64().unwrap_or(0.0));
            dlogits[(j, t.index())] = dlogits[(j, t.index())] - F::one();
            let coef = F::from_f64(w / total_w).expect("finite");
            dlogits.row_mut(j).mapv_inplace(|v| v * coef);
        }
        model.backward(&cache, &dlogits, &mut grads);
    }
    Ok((num / total_w, grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub perplexity: f64,
    pub token_count: usize,
    pub epoch: usize,
}

/// `exp` of the unweighted mean negative log-likelihood over every
/// fourth-measure target position.
pub fn perplexity<F: Scalar>(model: &Tcn<F>, examples: &[SequenceExample], epoch: usize) -> Result<EvalReport, ModelError> {
    if examples.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut nll = 0.0;
    let mut n = 0;
    for ex in examples {
        let probs = model.forward(&ex.input_ids)?;
        for (row, &t) in probs.rows().into_iter().zip(&ex.target_ids) {
            let p = row.get(t.index()).ok_or(ModelError::TokenOutOfRange { id: t.0, vocab_size: row.len() })?;
            nll -= clamped_ln(p.to_f64().unwrap_or(0.0));
            n += 1;
        }
    }
    Ok(EvalReport { perplexity: (nll / n as f64).exp(), token_count: n, epoch })
}

pub fn examples_from_windows(windows: &[Window], config: &ModelConfig) -> Result<Vec<SequenceExample>, ModelError> {
    let specials = config.specials()?;
    windows.iter().map(|w| SequenceExample::from_window(w, &specials, config.neutral_start)).collect()
}

struct Adam<F> {
    m: TcnParams<F>,
    v: TcnParams<F>,
    step: i32,
}

impl<F: Scalar> Adam<F> {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(config: &ModelConfig) -> Self {
        Adam { m: TcnParams::zeros(config), v: TcnParams::zeros(config), step: 0 }
    }

    fn update(&mut self, params: &mut TcnParams<F>, grads: &TcnParams<F>, lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - Self::BETA1.powi(self.step);
        let bc2 = 1.0 - Self::BETA2.powi(self.step);
        let f = |x: f64| F::from_f64(x).expect("finite");
        let (b1, b2, eps, step) = (f(Self::BETA1), f(Self::BETA2), f(Self::EPS), f(lr / bc1));
        let bc2 = f(bc2);
        for (((p, g), m), v) in params.tensors_mut().into_iter().zip(grads.tensors()).zip(self.m.tensors_mut()).zip(self.v.tensors_mut()) {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (F::one() - b1) * g[i];
                v[i] = b2 * v[i] + (F::one() - b2) * g[i] * g[i];
                p[i] = p[i] - step * m[i] / ((v[i] / bc2).sqrt() + eps);
            }
        }
    }
}

fn clip_global_norm<F: Scalar>(grads: &mut TcnParams<F>, max_norm: f64) -> f64 {
    let norm = grads
        .tensors()
        .iter()
        .flat_map(|t| t.iter())
        .map(|g| {
            let g = g.to_f64().unwrap_or(f64::NAN);
            g * g
        })
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = F::from_f64(max_norm / norm).expect("finite");
        for t in grads.tensors_mut() {
            t.iter_mut().for_each(|g| *g = *g * s);
        }
    }
    norm
}

/// Per-epoch progress handed to the caller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub train_loss: f64,
    pub monitor: EvalReport,
    pub improved: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<F> {
    pub model: Tcn<F>,
    pub history: Vec<EpochSummary>,
    pub best_epoch: usize,
    pub calibration: Calibration,
}

/// Mini-batch Adam with global-norm clipping. Keeps the parameters with the
/// best perplexity on the validation split (the training split when there is
/// no validation data) and stops after `patience` epochs without improvement.
pub fn train<F: Scalar>(
    config: ModelConfig,
    train_cfg: &TrainConfig,
    dataset: &WindowedDataset,
    mut on_epoch: impl FnMut(&EpochSummary),
) -> Result<TrainOutcome<F>, ModelError> {
    train_cfg.validate()?;
    let mut model = Tcn::<F>::init(config)?;
    let train_set = examples_from_windows(&dataset.train, &model.config)?;
    if train_set.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let val_set = examples_from_windows(&dataset.validation, &model.config)?;
    let monitor_set = if val_set.is_empty() { &train_set } else { &val_set };

    let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed ^ 0x7472_6169_6e00);
    let mut adam = Adam::new(&model.config);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best = (f64::INFINITY, model.params.clone(), 0usize);
    let mut history = Vec::new();
    let mut stale = 0;

    for epoch in 1..=train_cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(train_cfg.batch_size).enumerate() {
            let batch: Vec<SequenceExample> = chunk.iter().map(|&i| train_set[i].clone()).collect();
            let (loss, mut grads) = loss_and_gradients(&model, &batch, Some(&mut rng))?;
            let norm = clip_global_norm(&mut grads, train_cfg.clip_norm);
            if !loss.is_finite() || !norm.is_finite() {
                return Err(ModelError::Diverged { epoch, batch: b, loss });
            }
            adam.update(&mut model.params, &grads, train_cfg.learning_rate);
            loss_sum += loss;
            batches += 1;
        }
        if !model.params.is_finite() {
            return Err(ModelError::Diverged { epoch, batch: batches, loss: f64::NAN });
        }
        let monitor = perplexity(&model, monitor_set, epoch)?;
        let improved = monitor.perplexity < best.0;
        if improved {
            best = (monitor.perplexity, model.params.clone(), epoch);
            stale = 0;
        } else {
            stale += 1;
        }
        let summary = EpochSummary { epoch, train_loss: loss_sum / batches as f64, monitor, improved };
        info!("epoch {epoch}: loss {:.4}, perplexity {:.4}", summary.train_loss, monitor.perplexity);
        on_epoch(&summary);
        history.push(summary);
        if train_cfg.target_perplexity.is_some_and(|t| monitor.perplexity <= t) || stale >= train_cfg.patience {
            break;
        }
    }

    model.params = best.1;
    let calibration = calibrate(&model, monitor_set)?;
    Ok(TrainOutcome { model, history, best_epoch: best.2, calibration })
}

/// Samples one measure per example and takes the 5th/95th percentiles of the
/// log geometric means of the chosen-token probabilities.
pub fn calibrate<F: Scalar>(model: &Tcn<F>, examples: &[SequenceExample]) -> Result<Calibration, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed ^ 0x6361_6c69_6200);
    let specials = model.config.specials()?;
    let mut logs = Vec::with_capacity(examples.len());
    for ex in examples {
        let probs = model.forward(&ex.input_ids)?;
        let m = sample_measure(&probs, &specials, 1.0, &mut rng)?;
        logs.push(log_geometric_mean(&m.probs)?);
    }
    Ok(Calibration::from_log_means(&logs, model.config.vocab_size))
}
