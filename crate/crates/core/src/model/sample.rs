//! Weighted selection of one measure from the predictive distributions.

use ndarray::Array2;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tcn::Tcn;
use super::train::build_input;
use super::{ModelError, Scalar};
use crate::biometric::QscLevel;
use crate::corpus::{SpecialIds, TokenId};

/// Below this temperature sampling is replaced by argmax.
pub const GREEDY_TEMPERATURE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledMeasure {
    pub ids: Vec<TokenId>,
    /// Probability the model's row assigned to each chosen token.
    pub probs: Vec<f64>,
}

/// Samples each row independently from `p^(1/T)`, restricted to musical
/// tokens (the specials are never emitted).
pub fn sample_measure<F: Scalar, R: Rng + ?Sized>(
    probs: &Array2<F>,
    specials: &SpecialIds,
    temperature: f64,
    rng: &mut R,
) -> Result<SampledMeasure, ModelError> {
    if !(temperature > 0.0) {
        return Err(ModelError::InvalidConfig(format!("temperature {temperature} must be positive")));
    }
    let n_emit = specials.first_special.index().min(probs.ncols());
    let mut ids = Vec::with_capacity(probs.nrows());
    let mut chosen = Vec::with_capacity(probs.nrows());
    for row in probs.rows() {
        let p: Vec<f64> = row.iter().take(n_emit).map(|v| v.to_f64().unwrap_or(0.0)).collect();
        let argmax = p.iter().enumerate().fold(0, |best, (i, &v)| if v > p[best] { i } else { best });
        let pick = if temperature < GREEDY_TEMPERATURE {
            argmax
        } else {
            let logs: Vec<f64> = p.iter().map(|&v| if v > 0.0 { v.ln() / temperature } else { f64::NEG_INFINITY }).collect();
            let max = logs[argmax];
            let weights: Vec<f64> = logs.iter().map(|&l| (l - max).exp()).collect();
            match WeightedIndex::new(&weights) {
                Ok(dist) => dist.sample(rng),
                Err(_) => argmax,
            }
        };
        ids.push(TokenId(pick as u32));
        chosen.push(p[pick]);
    }
    Ok(SampledMeasure { ids, probs: chosen })
}

/// Natural log of the geometric mean.
pub fn log_geometric_mean(probs: &[f64]) -> Result<f64, ModelError> {
    if probs.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    Ok(probs.iter().map(|p| p.max(f64::MIN_POSITIVE).ln()).sum::<f64>() / probs.len() as f64)
}

impl<F: Scalar> Tcn<F> {
    /// Generates the fourth measure from three context measures and the QSC
    /// level (ignored by models trained with the neutral start token).
    pub fn sample_measure<R: Rng + ?Sized>(
        &self,
        context: &[TokenId],
        qsc: QscLevel,
        temperature: f64,
        rng: &mut R,
    ) -> Result<SampledMeasure, ModelError> {
        let specials = self.config.specials()?;
        let start = if self.config.neutral_start { None } else { Some(qsc) };
        let input = build_input(&specials, start, context)?;
        let probs = self.forward(&input)?;
        sample_measure(&probs, &specials, temperature, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn specials(v: usize) -> SpecialIds {
        SpecialIds::for_vocab_size(v).unwrap()
    }

    #[test]
    fn greedy_limit_is_argmax() {
        let mut p = Array2::from_elem((3, 9), 0.05);
        p[(0, 2)] = 0.6;
        p[(1, 0)] = 0.6;
        p[(2, 3)] = 0.6;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = sample_measure(&p, &specials(9), 1e-9, &mut rng).unwrap();
        assert_eq!(m.ids, vec![TokenId(2), TokenId(0), TokenId(3)]);
        assert_eq!(m.probs, vec![0.6, 0.6, 0.6]);
    }

    #[test]
    fn specials_never_sampled() {
        // all the mass sits on a special token except a sliver
        let v = 8;
        let mut p = Array2::zeros((48, v));
        for mut r in p.rows_mut() {
            r[1] = 0.01;
            r[2] = 0.01;
            r[6] = 0.98;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = sample_measure(&p, &specials(v), 1.0, &mut rng).unwrap();
        assert!(m.ids.iter().all(|id| specials(v).is_emittable(*id)));
    }

    #[test]
    fn chi_squared_matches_row() {
        let row = [0.4, 0.25, 0.15, 0.1, 0.06, 0.04];
        let v = row.len() + 5;
        let mut p = Array2::zeros((1, v));
        for (i, &x) in row.iter().enumerate() {
            p[(0, i)] = x;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 10_000;
        let mut counts = [0usize; 6];
        for _ in 0..n {
            counts[sample_measure(&p, &specials(v), 1.0, &mut rng).unwrap().ids[0].index()] += 1;
        }
        let stat: f64 = counts.iter().zip(row).map(|(&c, e)| (c as f64 - e * n as f64).powi(2) / (e * n as f64)).sum();
        let p_value = 1.0 - ChiSquared::new(5.0).unwrap().cdf(stat);
        assert!(p_value > 0.01, "chi2 {stat}, p {p_value}");
    }

    #[test]
    fn same_seed_same_measure() {
        let p = Array2::from_elem((48, 12), 1.0 / 12.0);
        let a = sample_measure(&p, &specials(12), 1.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_measure(&p, &specials(12), 1.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn geometric_mean() {
        let g = log_geometric_mean(&[0.5, 0.125]).unwrap().exp();
        assert!((g - 0.25).abs() < 1e-12);
        assert!(log_geometric_mean(&[]).is_err());
    }
}
