//! Joint-distribution check of the Gibbs sampler.
//!
//! Conditioning on "exactly one utility is positive" tilts the prior by
//! `Π_d Z(h_d)`, where `Z` is the total diagonal-orthant mass. The forward
//! side therefore accepts each prior draw with probability `Π_d Z(h_d)`;
//! the chain side alternates one Gibbs iteration with an exact redraw of
//! words, labels and latents.

use nalgebra::DMatrix;
use rand::Rng;

use super::simulate::{sample_label_and_latents, sample_parameters, sample_words, simulate_documents, SimulationConfig};
use super::{gibbs_iteration, IterationContext, ModelState, SweepOptions};
use crate::error::{Error, Result};
use crate::parallel::Workers;
use crate::regression::{design_row, do_log_normalizer, RegressionState};
use crate::rng::{Phase, RngStream};
use crate::topic_state::TopicState;

#[derive(Clone, Debug)]
pub struct GewekeConfig {
    pub sim: SimulationConfig,
    /// Accepted forward draws.
    pub forward_draws: usize,
    pub chain_iterations: usize,
    pub chain_burn_in: usize,
    /// Batches for the batch-means standard error of the chain.
    pub batches: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GewekeStat {
    pub name: &'static str,
    pub forward_mean: f64,
    pub forward_se: f64,
    pub chain_mean: f64,
    pub chain_se: f64,
    pub chain_ess: f64,
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GewekeReport {
    pub stats: Vec<GewekeStat>,
    pub forward_attempts: usize,
}

pub const STAT_NAMES: [&str; 12] = [
    "intercept_0",
    "atan_intercept_1",
    "atan_eta_topic0_class0",
    "atan_eta_topic1_class1",
    "tau0_ratio",
    "lambda_topic0_class1_ratio",
    "zbar_doc0_topic0",
    "mean_zbar_topic0",
    "phi_row0_entropy",
    "phi_00",
    "label0_fraction",
    "atan_a00",
];

/// Bounded summaries of one joint draw.
#[allow(clippy::too_many_arguments)]
fn statistics(
    eta: &DMatrix<f64>,
    tau: &[f64],
    lambda: &DMatrix<f64>,
    phi: &[f64],
    vocab_size: usize,
    zbar: &[Vec<f64>],
    labels: &[usize],
    a: &DMatrix<f64>,
) -> Vec<f64> {
    let row0 = &phi[..vocab_size];
    let entropy: f64 = -row0.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>();
    let d = zbar.len() as f64;
    vec![
        eta[(0, 0)],
        eta[(0, 1)].atan(),
        eta[(1, 0)].atan(),
        eta[(2, 1)].atan(),
        tau[0] / (1.0 + tau[0]),
        lambda[(0, 1)] / (1.0 + lambda[(0, 1)]),
        zbar[0][0],
        zbar.iter().map(|z| z[0]).sum::<f64>() / d,
        entropy,
        phi[0],
        labels.iter().filter(|&&y| y == 0).count() as f64 / labels.len() as f64,
        a[(0, 0)].atan(),
    ]
}

fn zbar_of(z: &[Vec<u32>], k: usize) -> Vec<Vec<f64>> {
    z.iter()
        .map(|zd| {
            let mut v = vec![0.0; k];
            zd.iter().for_each(|&t| v[t as usize] += 1.0);
            let n = zd.len().max(1) as f64;
            v.iter_mut().for_each(|c| *c /= n);
            v
        })
        .collect()
}

fn predictors(zbar: &[Vec<f64>], covariates: &DMatrix<f64>, eta: &DMatrix<f64>) -> Vec<Vec<f64>> {
    zbar.iter()
        .enumerate()
        .map(|(d, zb)| {
            let x: Vec<f64> = covariates.row(d).iter().copied().collect();
            let row = design_row(zb, &x);
            (0..eta.ncols()).map(|l| row.iter().enumerate().map(|(j, r)| r * eta[(j, l)]).sum()).collect()
        })
        .collect()
}

/// Forward draws from the tilted joint, by rejection.
fn forward_sample(cfg: &GewekeConfig) -> Result<(Vec<Vec<f64>>, usize, super::simulate::Simulated)> {
    let k = cfg.sim.hyper.num_topics;
    let mut out = Vec::with_capacity(cfg.forward_draws);
    let mut attempts = 0usize;
    let mut first = None;
    let mut rng = RngStream::for_entity(cfg.seed, 0, Phase::Simulate, u64::MAX);
    while out.len() < cfg.forward_draws {
        attempts += 1;
        if attempts > 1_000 * cfg.forward_draws + 1_000_000 {
            return Err(Error::InvalidArgument("forward rejection sampler acceptance too low".into()));
        }
        let params = sample_parameters(&cfg.sim, &mut rng)?;
        let sim = simulate_documents(&cfg.sim, &params, rng.random())?;
        let zbar = zbar_of(&sim.z, k);
        let log_accept: f64 = predictors(&zbar, &sim.corpus.covariates, &params.eta)
            .iter()
            .map(|h| do_log_normalizer(h))
            .sum();
        if rng.random::<f64>().ln() >= log_accept {
            continue;
        }
        out.push(statistics(
            &params.eta,
            &params.tau,
            &params.lambda,
            &params.phi,
            cfg.sim.vocab_size,
            &zbar,
            &sim.corpus.labels,
            &sim.a,
        ));
        if first.is_none() {
            first = Some(sim);
        }
    }
    Ok((out, attempts, first.expect("at least one draw")))
}

/// Successive-conditional chain started from a forward draw.
fn chain_sample(cfg: &GewekeConfig, start: super::simulate::Simulated) -> Result<Vec<BatchMeans>> {
    let k = cfg.sim.hyper.num_topics;
    let v = cfg.sim.vocab_size;
    let mut corpus = start.corpus;
    let mut topics = TopicState::from_assignments(&corpus, k, start.z)?;
    topics.phi = start.params.phi.clone();
    let regression = RegressionState {
        eta: start.params.eta.clone(),
        a: start.a.clone(),
        tau: start.params.tau.clone(),
        lambda: start.params.lambda.clone(),
    };
    let mut state = ModelState { iteration: 0, topics, regression };
    let workers = Workers::serial();
    let seed = cfg.seed ^ 0x5eed_c4a1;
    let kept = cfg.chain_iterations - cfg.chain_burn_in;
    let mut out = vec![BatchMeans::new(kept, cfg.batches); STAT_NAMES.len()];
    for it in 0..cfg.chain_iterations {
        let ctx = IterationContext {
            corpus: &corpus,
            hyper: &cfg.sim.hyper,
            prior: &cfg.sim.prior,
            seed,
            workers: &workers,
            options: SweepOptions::default(),
        };
        gibbs_iteration(&mut state, &ctx)?;
        let iteration = state.iteration;
        for d in 0..corpus.num_docs() {
            let mut rng = RngStream::for_entity(seed, iteration, Phase::DataResample, d as u64);
            corpus.docs[d] = sample_words(&state.topics.z[d], &state.topics.phi, v, &mut rng);
        }
        state.topics.rebuild_counts(&corpus)?;
        let zbar = state.zbar_all();
        let h = predictors(&zbar, &corpus.covariates, &state.regression.eta);
        for (d, hd) in h.iter().enumerate() {
            let mut rng = RngStream::for_entity(seed, iteration, Phase::DataResample, (1 << 32) + d as u64);
            let (y, a_row) = sample_label_and_latents(hd, &mut rng)?;
            corpus.labels[d] = y;
            for (l, &a) in a_row.iter().enumerate() {
                state.regression.a[(d, l)] = a;
            }
        }
        if it >= cfg.chain_burn_in {
            let r = &state.regression;
            let stats = statistics(&r.eta, &r.tau, &r.lambda, &state.topics.phi, v, &zbar, &corpus.labels, &r.a);
            out.iter_mut().zip(stats).for_each(|(acc, x)| acc.push(x));
        }
    }
    Ok(out)
}

fn mean_var(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Streaming batch means over a run of known length. Values past the last
/// full batch count towards the mean and variance only.
#[derive(Clone, Debug)]
pub struct BatchMeans {
    batch_size: usize,
    n: usize,
    sum: f64,
    sum_sq: f64,
    current: f64,
    batch_totals: Vec<f64>,
    batches: usize,
}

impl BatchMeans {
    pub fn new(len: usize, batches: usize) -> Self {
        let batches = batches.max(2);
        Self {
            batch_size: (len / batches).max(1),
            n: 0,
            sum: 0.0,
            sum_sq: 0.0,
            current: 0.0,
            batch_totals: Vec::with_capacity(batches),
            batches,
        }
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sum_sq += x * x;
        if self.batch_totals.len() < self.batches {
            self.current += x;
            if self.n.is_multiple_of(self.batch_size) {
                self.batch_totals.push(self.current);
                self.current = 0.0;
            }
        }
    }

    /// Mean, batch-means standard error and effective sample size.
    pub fn finish(&self) -> (f64, f64, f64) {
        let n = self.n as f64;
        let mean = self.sum / n;
        let var = ((self.sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
        let bm: Vec<f64> = self.batch_totals.iter().map(|t| t / self.batch_size as f64).collect();
        let b = bm.len() as f64;
        let bmean = bm.iter().sum::<f64>() / b;
        let bvar = bm.iter().map(|m| (m - bmean).powi(2)).sum::<f64>() / (b - 1.0);
        let se = (bvar / b).sqrt();
        let ess = if se > 0.0 { var / (se * se) } else { n };
        (mean, se, ess)
    }
}

/// Mean, batch-means standard error and effective sample size.
pub fn batch_means(xs: &[f64], batches: usize) -> (f64, f64, f64) {
    let mut acc = BatchMeans::new(xs.len(), batches);
    xs.iter().for_each(|&x| acc.push(x));
    acc.finish()
}

pub fn run_geweke(cfg: &GewekeConfig) -> Result<GewekeReport> {
    cfg.sim.validate()?;
    if cfg.chain_iterations < cfg.chain_burn_in + 2 * cfg.batches || cfg.batches < 2 || cfg.forward_draws < 2 {
        return Err(Error::InvalidArgument("too few draws for the requested batches".into()));
    }
    if cfg.sim.num_labels < 2 || cfg.sim.hyper.num_topics < 2 {
        return Err(Error::InvalidArgument("the monitored statistics need K ≥ 2 and L ≥ 2".into()));
    }
    let (forward, attempts, start) = forward_sample(cfg)?;
    let chain = chain_sample(cfg, start)?;
    let stats = STAT_NAMES
        .iter()
        .enumerate()
        .map(|(j, &name)| {
            let (fm, fv) = mean_var(forward.iter().map(|s| s[j]));
            let fse = (fv / forward.len() as f64).sqrt();
            let (cm, cse, ess) = chain[j].finish();
            let z = (fm - cm) / (fse * fse + cse * cse).sqrt();
            GewekeStat { name, forward_mean: fm, forward_se: fse, chain_mean: cm, chain_se: cse, chain_ess: ess, z }
        })
        .collect();
    Ok(GewekeReport { stats, forward_attempts: attempts })
}
