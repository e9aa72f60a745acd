//! Scoring new documents with a fitted model.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CovariateEncoding, Vocabulary};
use crate::distributions::pick;
use crate::error::{Error, Result};
use crate::parallel::Workers;
use crate::regression::{design_row, do_class_probabilities, PriorFamily};
use crate::rng::{Phase, RngStream};
use crate::sampler::Posterior;
use crate::topic_state::Hyper;

pub const MODEL_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_NEW_DOC_ITERATIONS: usize = 200;
pub const DEFAULT_NEW_DOC_BURN_IN: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub schema_version: u32,
    pub hyper: Hyper,
    pub prior: PriorFamily,
    pub vocabulary: Vocabulary,
    pub label_names: Vec<String>,
    pub covariate_encoding: CovariateEncoding,
    /// K×V, row-major.
    pub phi_bar: Vec<f64>,
    pub eta_draws: Vec<DMatrix<f64>>,
    pub eta_mean: DMatrix<f64>,
    pub new_doc_iterations: usize,
    pub new_doc_burn_in: usize,
}

/// Label, class probabilities and topic proportions of one document.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub probabilities: Vec<f64>,
    pub zbar: Vec<f64>,
}

impl FittedModel {
    pub fn from_posterior(
        posterior: &Posterior,
        hyper: Hyper,
        prior: PriorFamily,
        vocabulary: Vocabulary,
        label_names: Vec<String>,
        covariate_encoding: CovariateEncoding,
    ) -> Result<Self> {
        let eta_mean = eta_mean(&posterior.eta_draws)?;
        let model = Self {
            schema_version: MODEL_SCHEMA_VERSION,
            hyper,
            prior,
            vocabulary,
            label_names,
            covariate_encoding,
            phi_bar: posterior.phi_bar.clone(),
            eta_draws: posterior.eta_draws.clone(),
            eta_mean,
            new_doc_iterations: DEFAULT_NEW_DOC_ITERATIONS,
            new_doc_burn_in: DEFAULT_NEW_DOC_BURN_IN,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn num_topics(&self) -> usize {
        self.hyper.num_topics
    }

    pub fn vocab_size(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "model schema {} (expected {MODEL_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let (k, v) = (self.num_topics(), self.vocab_size());
        if self.phi_bar.len() != k * v {
            return Err(Error::Schema("phi_bar shape".into()));
        }
        if self.eta_draws.is_empty() {
            return Err(Error::Schema("no coefficient draws".into()));
        }
        let shape = (1 + k + self.covariate_encoding.width(), self.label_names.len());
        if self.eta_mean.shape() != shape || self.eta_draws.iter().any(|e| e.shape() != shape) {
            return Err(Error::Schema("coefficient shape".into()));
        }
        if self.new_doc_burn_in >= self.new_doc_iterations {
            return Err(Error::Schema("new-document sweep has no retained passes".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    /// Names of the coefficient rows: intercept, topics, covariate features.
    pub fn coefficient_names(&self) -> Vec<String> {
        std::iter::once("intercept".to_string())
            .chain((0..self.num_topics()).map(|k| format!("topic_{k}")))
            .chain(self.covariate_encoding.feature_names())
            .collect()
    }

    pub fn predict_one<R: Rng + ?Sized>(&self, tokens: &[u32], x: &[f64], rng: &mut R) -> Prediction {
        let zbar = sample_new_doc_topics(
            tokens,
            &self.phi_bar,
            self.num_topics(),
            self.hyper.alpha,
            self.new_doc_iterations,
            self.new_doc_burn_in,
            rng,
        );
        Prediction {
            label: predict_label(&zbar, x, &self.eta_mean),
            probabilities: predictive_distribution(&zbar, x, &self.eta_draws),
            zbar,
        }
    }

    /// Predicts every document; document `d` uses its own stream, so the
    /// output does not depend on the worker count.
    pub fn predict(&self, docs: &[Vec<u32>], covariates: &DMatrix<f64>, seed: u64, workers: &Workers) -> Result<Vec<Prediction>> {
        if covariates.nrows() != docs.len() || covariates.ncols() != self.covariate_encoding.width() {
            return Err(Error::InvalidArgument("covariate matrix does not match the documents or the model".into()));
        }
        let v = self.vocab_size() as u32;
        if docs.iter().flatten().any(|&w| w >= v) {
            return Err(Error::InvalidArgument("token id outside the model vocabulary".into()));
        }
        let blocks = workers.map_blocks(docs.len(), |range| {
            range
                .map(|d| {
                    let mut rng = RngStream::for_entity(seed, 0, Phase::Predict, d as u64);
                    let x: Vec<f64> = covariates.row(d).iter().copied().collect();
                    self.predict_one(&docs[d], &x, &mut rng)
                })
                .collect::<Vec<_>>()
        });
        Ok(blocks.into_iter().flatten().collect())
    }
}

/// Elementwise mean of K×V draws with each row renormalized.
pub fn estimate_phi_bar(draws: &[Vec<f64>], vocab_size: usize) -> Result<Vec<f64>> {
    let first = draws.first().ok_or_else(|| Error::InvalidArgument("no Φ draws to average".into()))?;
    if vocab_size == 0 || draws.iter().any(|d| d.len() != first.len()) || first.len() % vocab_size != 0 {
        return Err(Error::InvalidArgument("Φ draws have inconsistent shapes".into()));
    }
    let mut out = vec![0.0; first.len()];
    for d in draws {
        out.iter_mut().zip(d).for_each(|(o, p)| *o += p);
    }
    for row in out.chunks_mut(vocab_size) {
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= total);
    }
    Ok(out)
}

fn eta_mean(draws: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let first = draws.first().ok_or_else(|| Error::InvalidArgument("no coefficient draws".into()))?;
    let mut sum = DMatrix::zeros(first.nrows(), first.ncols());
    for d in draws {
        sum += d;
    }
    Ok(sum / draws.len() as f64)
}

/// Collapsed sweeps over one new document with Φ fixed at `phi_bar`.
/// Returns the topic proportions averaged over the passes after `burn_in`;
/// the zero vector for an empty document.
pub fn sample_new_doc_topics<R: Rng + ?Sized>(
    tokens: &[u32],
    phi_bar: &[f64],
    num_topics: usize,
    alpha: f64,
    iterations: usize,
    burn_in: usize,
    rng: &mut R,
) -> Vec<f64> {
    let k = num_topics;
    let mut mean = vec![0.0; k];
    if tokens.is_empty() || iterations <= burn_in {
        return mean;
    }
    let v = phi_bar.len() / k;
    let mut z: Vec<usize> = tokens.iter().map(|_| rng.random_range(0..k)).collect();
    let mut counts = vec![0u32; k];
    z.iter().for_each(|&t| counts[t] += 1);
    let mut weights = vec![0.0; k];
    for pass in 0..iterations {
        for (zi, &w) in z.iter_mut().zip(tokens) {
            counts[*zi] -= 1;
            let mut total = 0.0;
            for t in 0..k {
                let p = phi_bar[t * v + w as usize] * (counts[t] as f64 + alpha);
                weights[t] = p;
                total += p;
            }
            *zi = pick(&weights, total, rng);
            counts[*zi] += 1;
        }
        if pass >= burn_in {
            mean.iter_mut().zip(&counts).for_each(|(m, &c)| *m += c as f64);
        }
    }
    let scale = 1.0 / ((iterations - burn_in) as f64 * tokens.len() as f64);
    mean.iter_mut().for_each(|m| *m *= scale);
    mean
}

fn linear_predictors(zbar: &[f64], x: &[f64], eta: &DMatrix<f64>) -> Vec<f64> {
    let row = design_row(zbar, x);
    (0..eta.ncols()).map(|l| row.iter().enumerate().map(|(j, r)| r * eta[(j, l)]).sum()).collect()
}

/// `argmax_l (1, zbar, x)·η_l`, lowest id on ties.
pub fn predict_label(zbar: &[f64], x: &[f64], eta_mean: &DMatrix<f64>) -> usize {
    let h = linear_predictors(zbar, x, eta_mean);
    let mut best = 0;
    for (l, &v) in h.iter().enumerate() {
        if v > h[best] {
            best = l;
        }
    }
    best
}

/// Class probabilities averaged over the coefficient draws.
pub fn predictive_distribution(zbar: &[f64], x: &[f64], eta_draws: &[DMatrix<f64>]) -> Vec<f64> {
    let l = eta_draws.first().map_or(0, |e| e.ncols());
    let mut out = vec![0.0; l];
    for eta in eta_draws {
        let p = do_class_probabilities(&linear_predictors(zbar, x, eta));
        out.iter_mut().zip(p).for_each(|(o, v)| *o += v);
    }
    let n = eta_draws.len().max(1) as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phi_bar_examples() {
        let p = vec![0.2, 0.8, 0.5, 0.5];
        assert_eq!(estimate_phi_bar(std::slice::from_ref(&p), 2).unwrap(), p);
        let q = vec![0.6, 0.4, 0.1, 0.9];
        let m = estimate_phi_bar(&[p, q], 2).unwrap();
        let want = [0.4, 0.6, 0.3, 0.7];
        for (a, b) in m.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        for row in m.chunks(2) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(estimate_phi_bar(&[], 2).is_err());
    }

    #[test]
    fn new_doc_single_topic_and_empty() {
        let mut r = RngStream::new(1, 1);
        assert_eq!(sample_new_doc_topics(&[0, 1, 1], &[0.5, 0.5], 1, 0.1, 20, 10, &mut r), vec![1.0]);
        assert_eq!(sample_new_doc_topics(&[], &[0.5, 0.5, 0.5, 0.5], 2, 0.1, 20, 10, &mut r), vec![0.0, 0.0]);
    }

    #[test]
    fn new_doc_on_disjoint_supports() {
        // topic 0 owns words 0..2, topic 1 owns words 2..4
        let phi = [0.5, 0.5 - 1e-9, 1e-9, 0.0, 0.0, 1e-9, 0.5, 0.5 - 1e-9];
        let mut r = RngStream::new(2, 2);
        let z = sample_new_doc_topics(&[0, 1, 0, 0, 1, 1], &phi, 2, 0.01, 200, 100, &mut r);
        assert!(z[0] > 0.999, "{z:?}");
    }

    #[test]
    fn new_doc_topic_permutation() {
        let phi = [0.7, 0.2, 0.1, 0.1, 0.3, 0.6];
        let phi_swapped = [0.1, 0.3, 0.6, 0.7, 0.2, 0.1];
        let doc = [0u32, 2, 2, 1, 0, 2, 2];
        let a = sample_new_doc_topics(&doc, &phi, 2, 0.5, 4000, 500, &mut RngStream::new(3, 3));
        let b = sample_new_doc_topics(&doc, &phi_swapped, 2, 0.5, 4000, 500, &mut RngStream::new(4, 4));
        assert!((a[0] - b[1]).abs() < 0.02, "{a:?} {b:?}");
    }

    #[test]
    fn label_rule() {
        let eta = DMatrix::from_row_slice(1, 2, &[0.3, -0.1]);
        assert_eq!(predict_label(&[], &[], &eta), 0);
        let eta = DMatrix::from_row_slice(2, 3, &[0.0, 0.0, 0.0, 0.2, 0.9, 0.4]);
        assert_eq!(predict_label(&[1.0], &[], &eta), 1);
        let mut shifted = eta.clone();
        shifted.row_mut(0).add_scalar_mut(5.0);
        assert_eq!(predict_label(&[1.0], &[], &shifted), 1);
        let tie = DMatrix::from_row_slice(1, 2, &[0.5, 0.5]);
        assert_eq!(predict_label(&[], &[], &tie), 0);
    }

    #[test]
    fn predictive_distribution_examples() {
        let flat = DMatrix::from_row_slice(1, 3, &[0.2, 0.2, 0.2]);
        let p = predictive_distribution(&[], &[], std::slice::from_ref(&flat));
        assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        let eta = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let p = predictive_distribution(&[], &[], std::slice::from_ref(&eta));
        assert!((p[0] - 0.627240).abs() < 1e-6 && (p[1] - 0.372760).abs() < 1e-6);
        let argmax = if p[0] >= p[1] { 0 } else { 1 };
        assert_eq!(argmax, predict_label(&[], &[], &eta));
        let two = [eta.clone(), flat.columns(0, 2).into_owned()];
        let avg = predictive_distribution(&[], &[], &two);
        assert!((avg[0] - (0.627240 + 0.5) / 2.0).abs() < 1e-6);
    }
}
