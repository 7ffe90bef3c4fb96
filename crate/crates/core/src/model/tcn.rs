//! Embedding, causal dilated convolution stack, and softmax read-out, with
//! hand-written backpropagation.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::{ModelConfig, FIRST_OUTPUT_POS, INPUT_LEN};
use super::{ModelError, Scalar};
use crate::corpus::{TokenId, STEPS_PER_MEASURE};

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<F> {
    /// `hidden × (kernel · in_channels)`. Column `k·in + c` is channel `c` of
    /// tap `k`; tap `k` reads `(kernel − 1 − k)·dilation` steps back.
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TcnParams<F> {
    /// `vocab × embed`
    pub embedding: Array2<F>,
    pub layers: Vec<ConvLayer<F>>,
    /// `hidden × vocab`
    pub out_weight: Array2<F>,
    pub out_bias: Array1<F>,
}

impl<F: Scalar> TcnParams<F> {
    /// Declared shapes, in storage order.
    pub fn shapes(config: &ModelConfig) -> Vec<Vec<usize>> {
        let mut v = vec![vec![config.vocab_size, config.embed_dim]];
        let mut c_in = config.embed_dim;
        for _ in 0..config.layers {
            v.push(vec![config.hidden_units, config.kernel_size * c_in]);
            v.push(vec![config.hidden_units]);
            c_in = config.hidden_units;
        }
        v.push(vec![config.hidden_units, config.vocab_size]);
        v.push(vec![config.vocab_size]);
        v
    }

    pub fn zeros(config: &ModelConfig) -> Self {
        let mut c_in = config.embed_dim;
        let mut layers = Vec::with_capacity(config.layers);
        for _ in 0..config.layers {
            layers.push(ConvLayer {
                weight: Array2::zeros((config.hidden_units, config.kernel_size * c_in)),
                bias: Array1::zeros(config.hidden_units),
            });
            c_in = config.hidden_units;
        }
        TcnParams {
            embedding: Array2::zeros((config.vocab_size, config.embed_dim)),
            layers,
            out_weight: Array2::zeros((config.hidden_units, config.vocab_size)),
            out_bias: Array1::zeros(config.vocab_size),
        }
    }

    /// Normal embeddings, He-scaled convolutions, and a near-zero read-out so
    /// an untrained model predicts close to uniformly.
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Self {
        let mut p = Self::zeros(config);
        let mut fill = |a: &mut [F], sd: f64| {
            for x in a.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *x = F::from_f64(z * sd).expect("finite");
            }
        };
        fill(p.embedding.as_slice_mut().expect("standard layout"), 1.0);
        for l in &mut p.layers {
            let fan_in = l.weight.ncols() as f64;
            fill(l.weight.as_slice_mut().expect("standard layout"), (2.0 / fan_in).sqrt());
        }
        // Residual layers roughly double the activation variance each.
        let growth = 2f64.powi(config.layers.min(64) as i32);
        fill(p.out_weight.as_slice_mut().expect("standard layout"), 0.01 / (config.hidden_units as f64 * growth).sqrt());
        p
    }

    pub fn tensors(&self) -> Vec<&[F]> {
        let mut v: Vec<&[F]> = vec![self.embedding.as_slice().expect("standard layout")];
        for l in &self.layers {
            v.push(l.weight.as_slice().expect("standard layout"));
            v.push(l.bias.as_slice().expect("standard layout"));
        }
        v.push(self.out_weight.as_slice().expect("standard layout"));
        v.push(self.out_bias.as_slice().expect("standard layout"));
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [F]> {
        let mut v: Vec<&mut [F]> = vec![self.embedding.as_slice_mut().expect("standard layout")];
        for l in &mut self.layers {
            v.push(l.weight.as_slice_mut().expect("standard layout"));
            v.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        v.push(self.out_weight.as_slice_mut().expect("standard layout"));
        v.push(self.out_bias.as_slice_mut().expect("standard layout"));
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    pub fn check_shapes(&self, config: &ModelConfig) -> Result<(), ModelError> {
        let expected = Self::shapes(config);
        let got: Vec<Vec<usize>> = {
            let mut v = vec![self.embedding.shape().to_vec()];
            for l in &self.layers {
                v.push(l.weight.shape().to_vec());
                v.push(l.bias.shape().to_vec());
            }
            v.push(self.out_weight.shape().to_vec());
            v.push(self.out_bias.shape().to_vec());
            v
        };
        if got != expected {
            return Err(ModelError::InvalidConfig(format!("parameter shapes {got:?} do not match config {expected:?}")));
        }
        Ok(())
    }

    pub fn cast<G: Scalar>(&self) -> TcnParams<G> {
        let c = |x: &F| G::from_f64(x.to_f64().expect("finite")).expect("finite");
        TcnParams {
            embedding: self.embedding.map(c),
            layers: self.layers.iter().map(|l| ConvLayer { weight: l.weight.map(c), bias: l.bias.map(c) }).collect(),
            out_weight: self.out_weight.map(c),
            out_bias: self.out_bias.map(c),
        }
    }
}

struct LayerCache<F> {
    cols: Array2<F>,
    /// ReLU derivative times the dropout scale.
    gate: Array2<F>,
    residual: bool,
}

/// Activations kept from a training forward pass.
pub(crate) struct ForwardCache<F> {
    ids: Vec<usize>,
    layers: Vec<LayerCache<F>>,
    hidden: Array2<F>,
    out_rows: std::ops::Range<usize>,
}

fn im2col<F: Scalar>(x: &Array2<F>, kernel: usize, dilation: usize) -> Array2<F> {
    let (t_len, c) = x.dim();
    let mut cols = Array2::zeros((t_len, kernel * c));
    for tap in 0..kernel {
        let shift = (kernel - 1 - tap) * dilation;
        if shift >= t_len {
            continue;
        }
        cols.slice_mut(s![shift.., tap * c..(tap + 1) * c]).assign(&x.slice(s![..t_len - shift, ..]));
    }
    cols
}

fn col2im_add<F: Scalar>(dcols: &Array2<F>, dx: &mut Array2<F>, kernel: usize, dilation: usize) {
    let (t_len, c) = dx.dim();
    for tap in 0..kernel {
        let shift = (kernel - 1 - tap) * dilation;
        if shift >= t_len {
            continue;
        }
        let mut dst = dx.slice_mut(s![..t_len - shift, ..]);
        dst += &dcols.slice(s![shift.., tap * c..(tap + 1) * c]);
    }
}

fn softmax_rows<F: Scalar>(logits: &mut Array2<F>) {
    for mut row in logits.rows_mut() {
        let max = row.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// A configured network with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Tcn<F> {
    pub config: ModelConfig,
    pub params: TcnParams<F>,
}

impl<F: Scalar> Tcn<F> {
    pub fn new(config: ModelConfig, params: TcnParams<F>) -> Result<Self, ModelError> {
        config.validate()?;
        params.check_shapes(&config)?;
        Ok(Tcn { config, params })
    }

    pub fn init(config: ModelConfig) -> Result<Self, ModelError> {
        use rand::SeedableRng;
        config.validate()?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed);
        let params = TcnParams::init(&config, &mut rng);
        Ok(Tcn { config, params })
    }

    fn check_ids(&self, ids: &[TokenId]) -> Result<Vec<usize>, ModelError> {
        ids.iter()
            .map(|id| {
                let i = id.index();
                if i < self.config.vocab_size {
                    Ok(i)
                } else {
                    Err(ModelError::TokenOutOfRange { id: id.0, vocab_size: self.config.vocab_size })
                }
            })
            .collect()
    }

    fn hidden<R: Rng + ?Sized>(&self, ids: &[usize], mut dropout: Option<&mut R>, keep: bool) -> (Array2<F>, Vec<LayerCache<F>>) {
        let cfg = &self.config;
        let mut x = self.params.embedding.select(Axis(0), ids);
        let mut caches = Vec::new();
        let p = cfg.dropout_rate;
        let scale = F::from_f64(1.0 / (1.0 - p)).expect("finite");
        for (layer, &d) in self.params.layers.iter().zip(&cfg.dilations) {
            let cols = im2col(&x, cfg.kernel_size, d);
            let mut z = Array2::zeros((x.nrows(), cfg.hidden_units));
            general_mat_mul(F::one(), &cols, &layer.weight.t(), F::zero(), &mut z);
            z += &layer.bias;
            let mut gate = z.mapv(|v| if v > F::zero() { F::one() } else { F::zero() });
            if let Some(rng) = dropout.as_deref_mut() {
                if p > 0.0 {
                    gate.mapv_inplace(|g| if rng.random::<f64>() < p { F::zero() } else { g * scale });
                }
            }
            z *= &gate;
            let residual = x.ncols() == cfg.hidden_units;
            if residual {
                z += &x;
            }
            if keep {
                caches.push(LayerCache { cols, gate, residual });
            }
            x = z;
        }
        (x, caches)
    }

    fn readout(&self, hidden: ndarray::ArrayView2<F>) -> Array2<F> {
        let mut logits = hidden.dot(&self.params.out_weight);
        logits += &self.params.out_bias;
        logits
    }

    /// Logits at every position of an arbitrary-length sequence. Diagnostic
    /// entry point for causality and receptive-field checks.
    pub fn sequence_logits(&self, ids: &[TokenId]) -> Result<Array2<F>, ModelError> {
        let ids = self.check_ids(ids)?;
        let (h, _) = self.hidden::<rand::rngs::ThreadRng>(&ids, None, false);
        Ok(self.readout(h.view()))
    }

    /// Predictive distributions (48 × vocab) for the fourth measure. The last
    /// 48 input positions are overwritten with the mask token first, so their
    /// content never matters.
    pub fn forward(&self, input: &[TokenId]) -> Result<Array2<F>, ModelError> {
        let ids = self.masked_ids(input)?;
        let (h, _) = self.hidden::<rand::rngs::ThreadRng>(&ids, None, false);
        let mut out = self.readout(h.slice(s![FIRST_OUTPUT_POS..FIRST_OUTPUT_POS + STEPS_PER_MEASURE, ..]));
        softmax_rows(&mut out);
        Ok(out)
    }

    fn masked_ids(&self, input: &[TokenId]) -> Result<Vec<usize>, ModelError> {
        if input.len() != INPUT_LEN {
            return Err(ModelError::InputLength { expected: INPUT_LEN, got: input.len() });
        }
        let mut ids = self.check_ids(input)?;
        let mask = self.config.specials()?.mask.index();
        for id in &mut ids[INPUT_LEN - STEPS_PER_MEASURE..] {
            *id = mask;
        }
        Ok(ids)
    }

    /// Training forward pass: probabilities plus the cache for `backward`.
    pub(crate) fn forward_train<R: Rng + ?Sized>(
        &self,
        input: &[TokenId],
        dropout: Option<&mut R>,
    ) -> Result<(Array2<F>, ForwardCache<F>), ModelError> {
        let ids = self.masked_ids(input)?;
        let (hidden, layers) = self.hidden(&ids, dropout, true);
        let out_rows = FIRST_OUTPUT_POS..FIRST_OUTPUT_POS + STEPS_PER_MEASURE;
        let mut probs = self.readout(hidden.slice(s![out_rows.clone(), ..]));
        softmax_rows(&mut probs);
        Ok((probs, ForwardCache { ids, layers, hidden, out_rows }))
    }

    /// Accumulates parameter gradients into `grads` given the loss gradient
    /// with respect to the output logits.
    pub(crate) fn backward(&self, cache: &ForwardCache<F>, dlogits: &Array2<F>, grads: &mut TcnParams<F>) {
        let cfg = &self.config;
        let h_out = cache.hidden.slice(s![cache.out_rows.clone(), ..]);
        general_mat_mul(F::one(), &h_out.t(), dlogits, F::one(), &mut grads.out_weight);
        grads.out_bias += &dlogits.sum_axis(Axis(0));

        let mut dh = Array2::zeros(cache.hidden.raw_dim());
        general_mat_mul(F::one(), dlogits, &self.params.out_weight.t(), F::zero(), &mut dh.slice_mut(s![cache.out_rows.clone(), ..]));

        for l in (0..cfg.layers).rev() {
            let lc = &cache.layers[l];
            let layer = &self.params.layers[l];
            let g = &mut grads.layers[l];
            let dz = &dh * &lc.gate;
            general_mat_mul(F::one(), &dz.t(), &lc.cols, F::one(), &mut g.weight);
            g.bias += &dz.sum_axis(Axis(0));
            let dcols = dz.dot(&layer.weight);
            let c_in = layer.weight.ncols() / cfg.kernel_size;
            let mut dx = if lc.residual { dh } else { Array2::zeros((dz.nrows(), c_in)) };
            col2im_add(&dcols, &mut dx, cfg.kernel_size, cfg.dilations[l]);
            dh = dx;
        }
        for (t, &id) in cache.ids.iter().enumerate() {
            let mut row = grads.embedding.row_mut(id);
            row += &dh.row(t);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> ModelConfig {
        ModelConfig {
            vocab_size: 12,
            embed_dim: 4,
            hidden_units: 8,
            layers: 2,
            kernel_size: 14,
            dilations: vec![1, 14],
            dropout_rate: 0.0,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn im2col_shifts_are_causal() {
        let x = Array2::from_shape_fn((5, 1), |(t, _)| (t + 1) as f64);
        let cols = im2col(&x, 3, 2);
        // tap 0 looks back 4, tap 1 looks back 2, tap 2 is the present step
        assert_eq!(cols.row(4).to_vec(), vec![1.0, 3.0, 5.0]);
        assert_eq!(cols.row(1).to_vec(), vec![0.0, 0.0, 2.0]);
    }

    #[test]
    fn rows_are_distributions() {
        let m = Tcn::<f64>::init(tiny()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let input: Vec<TokenId> = (0..INPUT_LEN).map(|_| TokenId(rng.random_range(0..12))).collect();
        let p = m.forward(&input).unwrap();
        assert_eq!(p.dim(), (48, 12));
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn rejects_bad_input() {
        let m = Tcn::<f32>::init(tiny()).unwrap();
        assert!(matches!(m.forward(&[TokenId(0); 10]), Err(ModelError::InputLength { .. })));
        let mut input = vec![TokenId(0); INPUT_LEN];
        input[3] = TokenId(12);
        assert!(matches!(m.forward(&input), Err(ModelError::TokenOutOfRange { id: 12, .. })));
    }

    #[test]
    fn shapes_round_trip() {
        let c = tiny();
        let p = TcnParams::<f32>::zeros(&c);
        p.check_shapes(&c).unwrap();
        let total: usize = TcnParams::<f32>::shapes(&c).iter().map(|s| s.iter().product::<usize>()).sum();
        assert_eq!(total, p.parameter_count());
    }
}
