use duet_core::biometric::QscLevel;
use duet_core::corpus::{SpecialIds, TokenId, Window, WindowedDataset, CONTEXT_LEN, STEPS_PER_MEASURE};
use duet_core::model::{
    build_input, loss_and_gradients, perplexity, train, ModelConfig, SequenceExample, Tcn, TcnParams, TrainConfig, INPUT_LEN,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn tiny(vocab: usize) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab,
        embed_dim: 4,
        hidden_units: 8,
        layers: 2,
        kernel_size: 14,
        dilations: vec![1, 14],
        dropout_rate: 0.0,
        seed: 5,
        ..Default::default()
    }
}

fn random_example(rng: &mut ChaCha8Rng, vocab: usize) -> SequenceExample {
    let sp = SpecialIds::for_vocab_size(vocab).unwrap();
    let n = sp.first_special.0;
    let ctx: Vec<TokenId> = (0..CONTEXT_LEN).map(|_| TokenId(rng.random_range(0..n))).collect();
    let level = QscLevel::ALL[rng.random_range(0..3)];
    SequenceExample {
        input_ids: build_input(&sp, Some(level), &ctx).unwrap(),
        // a third of targets silent so the weighting is exercised
        target_ids: (0..STEPS_PER_MEASURE).map(|j| if j % 3 == 0 { TokenId(0) } else { TokenId(rng.random_range(0..n)) }).collect(),
    }
}

/// Independent weighted-mean cross-entropy straight from the forward pass.
fn oracle_loss(model: &Tcn<f64>, batch: &[SequenceExample]) -> f64 {
    let w_s = model.config.silent_loss_weight;
    let (mut num, mut den) = (0.0, 0.0);
    for ex in batch {
        let p = model.forward(&ex.input_ids).unwrap();
        for (j, t) in ex.target_ids.iter().enumerate() {
            let w = if t.0 == 0 { w_s } else { 1.0 };
            num -= w * p[(j, t.index())].ln();
            den += w;
        }
    }
    num / den
}

/// Random parameters at a scale where every layer carries signal.
fn randomized(config: ModelConfig, seed: u64) -> Tcn<f64> {
    let mut m = Tcn::<f64>::init(config).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in m.params.tensors_mut() {
        for x in t.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *x = 0.3 * z;
        }
    }
    m
}

#[test]
fn gradients_match_central_differences() {
    let vocab = 12;
    let mut model = randomized(tiny(vocab), 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let batch: Vec<SequenceExample> = (0..2).map(|_| random_example(&mut rng, vocab)).collect();
    let (loss, grads) = loss_and_gradients::<f64, ChaCha8Rng>(&model, &batch, None).unwrap();
    assert!((loss - oracle_loss(&model, &batch)).abs() < 1e-12);

    let h = 1e-5;
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
    let mut worst = 0.0f64;
    for (ti, a_t) in analytic.iter().enumerate() {
        for i in 0..a_t.len() {
            let orig = model.params.tensors()[ti][i];
            model.params.tensors_mut()[ti][i] = orig + h;
            let up = oracle_loss(&model, &batch);
            model.params.tensors_mut()[ti][i] = orig - h;
            let down = oracle_loss(&model, &batch);
            model.params.tensors_mut()[ti][i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = a_t[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > worst {
                eprintln!("tensor {ti} [{i}]: analytic {a:e} numeric {numeric:e} rel {rel:e}");
            }
            worst = worst.max(rel);
        }
    }
    assert!(worst < 1e-4, "max relative error {worst:e}");
}

#[test]
fn masked_positions_never_matter() {
    let vocab = 20;
    let model = Tcn::<f32>::init(ModelConfig { vocab_size: vocab, hidden_units: 16, ..Default::default() }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let base = random_example(&mut rng, vocab).input_ids;
    let reference = model.forward(&base).unwrap();
    for _ in 0..20 {
        let mut noisy = base.clone();
        for t in &mut noisy[INPUT_LEN - STEPS_PER_MEASURE..] {
            *t = TokenId(rng.random_range(0..vocab as u32));
        }
        let out = model.forward(&noisy).unwrap();
        assert!(out.iter().zip(reference.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

#[test]
fn start_token_reaches_last_output() {
    let vocab = 20;
    let model = randomized(ModelConfig { vocab_size: vocab, hidden_units: 16, ..Default::default() }, 4);
    let sp = SpecialIds::for_vocab_size(vocab).unwrap();
    let ctx = vec![TokenId(1); CONTEXT_LEN];
    let hi = model.forward(&build_input(&sp, Some(QscLevel::High), &ctx).unwrap()).unwrap();
    let lo = model.forward(&build_input(&sp, Some(QscLevel::Low), &ctx).unwrap()).unwrap();
    let delta: f64 = hi.row(47).iter().zip(lo.row(47)).map(|(a, b)| (a - b).abs()).sum();
    assert!(delta > 1e-9, "QSC token had no effect on step 47 ({delta:e})");
}

#[test]
fn nothing_outside_the_receptive_field_matters() {
    let vocab = 20;
    let config = ModelConfig { vocab_size: vocab, hidden_units: 16, ..Default::default() };
    let rf = config.receptive_field();
    let model = randomized(config, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let seq: Vec<TokenId> = (0..300).map(|_| TokenId(rng.random_range(0..15))).collect();
    let base = model.sequence_logits(&seq).unwrap();
    for p in [0usize, 17, 150] {
        let mut changed = seq.clone();
        changed[p] = TokenId((changed[p].0 + 1) % 15);
        let out = model.sequence_logits(&changed).unwrap();
        for t in 0..300 {
            let same = out.row(t) == base.row(t);
            if t < p || t >= p + rf {
                assert!(same, "position {p} leaked into output {t}");
            }
        }
        // inside the field the change is visible at its edge
        if p + rf - 1 < 300 {
            assert!(out.row(p + rf - 1) != base.row(p + rf - 1));
        }
        assert!(out.row(p) != base.row(p));
    }
}

#[test]
fn uniform_model_perplexity_is_vocab_size() {
    let vocab = 10;
    let mut model = Tcn::<f64>::init(tiny(vocab)).unwrap();
    model.params.out_weight.fill(0.0);
    model.params.out_bias.fill(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let examples: Vec<SequenceExample> = (0..4).map(|_| random_example(&mut rng, vocab)).collect();
    let r = perplexity(&model, &examples, 0).unwrap();
    assert!((r.perplexity - 10.0).abs() < 1e-6);
    assert_eq!(r.token_count, 4 * 48);
}

#[test]
fn one_hot_model_perplexity_is_one() {
    // bias alone selects token 2 everywhere
    let vocab = 10;
    let mut model = Tcn::<f64>::init(tiny(vocab)).unwrap();
    model.params.out_weight.fill(0.0);
    model.params.out_bias.fill(-1e3);
    model.params.out_bias[2] = 0.0;
    let sp = SpecialIds::for_vocab_size(vocab).unwrap();
    let ex = SequenceExample {
        input_ids: build_input(&sp, Some(QscLevel::Med), &vec![TokenId(0); CONTEXT_LEN]).unwrap(),
        target_ids: vec![TokenId(2); 48],
    };
    assert!((perplexity(&model, &[ex], 0).unwrap().perplexity - 1.0).abs() < 1e-12);
}

#[test]
fn perplexity_matches_standalone_nll_sum() {
    let vocab = 16;
    let model = randomized(tiny(vocab), 12);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let examples: Vec<SequenceExample> = (0..3).map(|_| random_example(&mut rng, vocab)).collect();
    let mut logs = Vec::new();
    for ex in &examples {
        let logits = model
            .sequence_logits(&{
                let mut x = ex.input_ids.clone();
                let mask = SpecialIds::for_vocab_size(vocab).unwrap().mask;
                x[INPUT_LEN - 48..].fill(mask);
                x
            })
            .unwrap();
        for (j, t) in ex.target_ids.iter().enumerate() {
            let row = logits.row(CONTEXT_LEN + j);
            let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
            logs.push(row[t.index()] - lse);
        }
    }
    let want = (-logs.iter().sum::<f64>() / logs.len() as f64).exp();
    let got = perplexity(&model, &examples, 0).unwrap().perplexity;
    assert!((got - want).abs() < 1e-9, "{got} vs {want}");
}

#[test]
fn untrained_model_on_random_corpus_is_near_uniform() {
    let vocab = 10;
    let model = Tcn::<f32>::init(ModelConfig { vocab_size: vocab, ..tiny(vocab) }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let examples: Vec<SequenceExample> = (0..20).map(|_| random_example(&mut rng, vocab)).collect();
    let r = perplexity(&model, &examples, 0).unwrap();
    assert!((r.perplexity - 10.0).abs() < 0.5, "{}", r.perplexity);
}

fn window_from(ex_rng: &mut ChaCha8Rng, n_musical: u32, qsc: QscLevel) -> Window {
    Window {
        session: "s".into(),
        start_measure: 0,
        context: (0..CONTEXT_LEN).map(|_| TokenId(ex_rng.random_range(0..n_musical))).collect(),
        target: (0..STEPS_PER_MEASURE).map(|_| TokenId(ex_rng.random_range(0..n_musical))).collect(),
        qsc,
    }
}

#[test]
fn memorizes_a_single_window() {
    let vocab = 14;
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let w = window_from(&mut rng, 9, QscLevel::High);
    let data = WindowedDataset { train: vec![w], validation: vec![], test: vec![] };
    let tc = TrainConfig { max_epochs: 500, patience: 500, target_perplexity: Some(1.2), ..Default::default() };
    let out = train::<f32>(ModelConfig { hidden_units: 16, ..tiny(vocab) }, &tc, &data, |_| {}).unwrap();
    let last = out.history.last().unwrap();
    assert!(last.monitor.perplexity <= 1.2, "perplexity {} after {} epochs", last.monitor.perplexity, last.epoch);
}

#[test]
fn training_is_deterministic_and_supports_neutral_start() {
    let vocab = 12;
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let windows: Vec<Window> = (0..6).map(|i| window_from(&mut rng, 7, QscLevel::ALL[i % 3])).collect();
    let data = WindowedDataset { train: windows[..4].to_vec(), validation: windows[4..].to_vec(), test: vec![] };
    let tc = TrainConfig { max_epochs: 3, batch_size: 2, ..Default::default() };
    let cfg = ModelConfig { dropout_rate: 0.1, ..tiny(vocab) };
    let a = train::<f32>(cfg.clone(), &tc, &data, |_| {}).unwrap();
    let b = train::<f32>(cfg.clone(), &tc, &data, |_| {}).unwrap();
    assert_eq!(a.model.params, b.model.params);
    assert_eq!(a.history, b.history);

    let neutral = train::<f32>(ModelConfig { neutral_start: true, ..cfg }, &tc, &data, |_| {}).unwrap();
    assert!(neutral.history.iter().all(|h| h.monitor.perplexity.is_finite()));
    assert_ne!(neutral.model.params, a.model.params);
}

#[test]
fn random_source_trains_to_its_entropy() {
    // five equiprobable musical tokens, nothing to learn beyond the marginal
    let vocab = 10;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let windows: Vec<Window> = (0..40).map(|_| window_from(&mut rng, 5, QscLevel::Med)).collect();
    let data = WindowedDataset { train: windows[..32].to_vec(), validation: windows[32..].to_vec(), test: vec![] };
    let tc = TrainConfig { max_epochs: 30, learning_rate: 1e-2, ..Default::default() };
    let cfg = ModelConfig { silent_loss_weight: 1.0, ..tiny(vocab) };
    let out = train::<f32>(cfg, &tc, &data, |_| {}).unwrap();
    let best = out.history.iter().map(|h| h.monitor.perplexity).fold(f64::INFINITY, f64::min);
    assert!((best - 5.0).abs() < 0.5, "best validation perplexity {best}");
}

#[test]
fn params_cast_round_trip() {
    let p = Tcn::<f32>::init(tiny(12)).unwrap().params;
    let back: TcnParams<f32> = p.cast::<f64>().cast();
    assert_eq!(back, p);
}
