//! Ancestral sampling from the generative model.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Cauchy, StandardNormal};

use crate::corpus::Corpus;
use crate::distributions::{pick, sample_dirichlet, sample_dirichlet_into, sample_truncated_normal, Side};
use crate::error::{Error, Result};
use crate::regression::{design_row, do_orthant_probabilities, PriorFamily, PriorKind};
use crate::rng::{Phase, RngStream};
use crate::topic_state::Hyper;

#[derive(Clone, Debug, PartialEq)]
pub struct SimulationConfig {
    pub num_docs: usize,
    pub doc_length: usize,
    pub vocab_size: usize,
    pub num_labels: usize,
    /// Extra covariates, drawn i.i.d. standard normal.
    pub num_covariates: usize,
    pub hyper: Hyper,
    pub prior: PriorFamily,
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        if self.vocab_size == 0 || self.num_labels == 0 {
            return Err(Error::InvalidArgument("vocabulary and label set must be non-empty".into()));
        }
        Ok(())
    }

    pub fn num_predictors(&self) -> usize {
        1 + self.hyper.num_topics + self.num_covariates
    }
}

/// Global parameters of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters {
    /// K×V, row-major.
    pub phi: Vec<f64>,
    /// (1+K+P)×L.
    pub eta: DMatrix<f64>,
    pub tau: Vec<f64>,
    /// (K+P)×L.
    pub lambda: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Simulated {
    pub corpus: Corpus,
    pub params: Parameters,
    pub theta: Vec<Vec<f64>>,
    pub z: Vec<Vec<u32>>,
    /// D×L latent utilities consistent with the labels.
    pub a: DMatrix<f64>,
}

fn half_cauchy<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let c = Cauchy::new(0.0, 1.0).expect("unit Cauchy");
    let v: f64 = rng.sample(c);
    v.abs().max(f64::MIN_POSITIVE)
}

/// Φ, τ, λ and η from their priors.
pub fn sample_parameters<R: Rng + ?Sized>(config: &SimulationConfig, rng: &mut R) -> Result<Parameters> {
    config.validate()?;
    let (k, v, l) = (config.hyper.num_topics, config.vocab_size, config.num_labels);
    let mut phi = vec![0.0; k * v];
    for row in phi.chunks_mut(v) {
        sample_dirichlet_into(std::iter::repeat_n(config.hyper.beta, v), row, rng)?;
    }
    let shrunk = k + config.num_covariates;
    let c = config.prior.c;
    let mut eta = DMatrix::zeros(1 + shrunk, l);
    let mut tau = vec![1.0; l];
    let mut lambda = DMatrix::from_element(shrunk, l, 1.0);
    for class in 0..l {
        let z0: f64 = rng.sample(StandardNormal);
        eta[(0, class)] = c * z0;
        if config.prior.kind == PriorKind::Horseshoe {
            tau[class] = half_cauchy(rng);
        }
        for p in 0..shrunk {
            let sd = match config.prior.kind {
                PriorKind::Horseshoe => {
                    lambda[(p, class)] = half_cauchy(rng);
                    tau[class] * lambda[(p, class)]
                }
                PriorKind::Normal => c,
            };
            let zp: f64 = rng.sample(StandardNormal);
            eta[(1 + p, class)] = sd * zp;
        }
    }
    Ok(Parameters { phi, eta, tau, lambda })
}

/// Label and latent utilities for one document given its linear predictors.
pub fn sample_label_and_latents<R: Rng + ?Sized>(h: &[f64], rng: &mut R) -> Result<(usize, Vec<f64>)> {
    let probs = do_orthant_probabilities(h);
    let total: f64 = probs.iter().sum();
    let y = pick(&probs, total, rng);
    let a = h
        .iter()
        .enumerate()
        .map(|(l, &m)| sample_truncated_normal(m, if l == y { Side::Positive } else { Side::Negative }, rng))
        .collect::<Result<Vec<_>>>()?;
    Ok((y, a))
}

/// Draws every token's word from its topic's row of `phi`.
pub fn sample_words<R: Rng + ?Sized>(z: &[u32], phi: &[f64], vocab_size: usize, rng: &mut R) -> Vec<u32> {
    z.iter()
        .map(|&t| {
            let row = &phi[t as usize * vocab_size..(t as usize + 1) * vocab_size];
            pick(row, row.iter().sum(), rng) as u32
        })
        .collect()
}

/// Documents, topics, labels and latents given fixed parameters.
pub fn simulate_documents(config: &SimulationConfig, params: &Parameters, seed: u64) -> Result<Simulated> {
    config.validate()?;
    let (k, v, l) = (config.hyper.num_topics, config.vocab_size, config.num_labels);
    if params.eta.shape() != (config.num_predictors(), l) || params.phi.len() != k * v {
        return Err(Error::InvalidArgument("parameters do not match the simulation shape".into()));
    }
    let n = config.doc_length;
    let mut docs = Vec::with_capacity(config.num_docs);
    let mut labels = Vec::with_capacity(config.num_docs);
    let mut theta = Vec::with_capacity(config.num_docs);
    let mut zs = Vec::with_capacity(config.num_docs);
    let mut covariates = DMatrix::zeros(config.num_docs, config.num_covariates);
    let mut a = DMatrix::zeros(config.num_docs, l);
    for d in 0..config.num_docs {
        let mut rng = RngStream::for_entity(seed, 0, Phase::Simulate, 1 + d as u64);
        let th = sample_dirichlet(&vec![config.hyper.alpha; k], &mut rng)?;
        let z: Vec<u32> = (0..n).map(|_| pick(&th, 1.0, &mut rng) as u32).collect();
        let words = sample_words(&z, &params.phi, v, &mut rng);
        let x: Vec<f64> = (0..config.num_covariates).map(|_| rng.sample(StandardNormal)).collect();
        for (p, &xv) in x.iter().enumerate() {
            covariates[(d, p)] = xv;
        }
        let mut zbar = vec![0.0; k];
        z.iter().for_each(|&t| zbar[t as usize] += 1.0);
        if n > 0 {
            zbar.iter_mut().for_each(|c| *c /= n as f64);
        }
        let row = design_row(&zbar, &x);
        let h: Vec<f64> =
            (0..l).map(|c| row.iter().enumerate().map(|(j, r)| r * params.eta[(j, c)]).sum()).collect();
        let (y, a_row) = sample_label_and_latents(&h, &mut rng)?;
        for (c, &v) in a_row.iter().enumerate() {
            a[(d, c)] = v;
        }
        labels.push(y);
        docs.push(words);
        theta.push(th);
        zs.push(z);
    }
    let corpus = Corpus {
        doc_ids: (0..config.num_docs).map(|d| format!("doc{d}")).collect(),
        label_names: (0..l).map(|c| format!("class{c:02}")).collect(),
        vocab_size: v,
        covariates,
        labels,
        docs,
    };
    Ok(Simulated { corpus, params: params.clone(), theta, z: zs, a })
}

/// Parameters from the prior, then documents.
pub fn forward_simulate(config: &SimulationConfig, seed: u64) -> Result<Simulated> {
    let mut rng = RngStream::for_entity(seed, 0, Phase::Simulate, 0);
    let params = sample_parameters(config, &mut rng)?;
    simulate_documents(config, &params, seed)
}
