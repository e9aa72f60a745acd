//! The Gibbs sweep and the training loop.
//!
//! One iteration updates, in order: latent utilities, per-class η with τ and
//! λ, the η cross-product, topic indicators (document-parallel) and Φ
//! (topic-parallel). Every random draw comes from a stream keyed by
//! `(seed, iteration, phase, entity)`, so the result does not depend on the
//! number of workers.

pub mod cache;
pub mod geweke;
pub mod loglik;
pub mod simulate;

use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::parallel::Workers;
use crate::regression::{design_matrix, PriorFamily, RegressionState};
use crate::rng::{Phase, RngStream};
use crate::topic_state::{Hyper, TopicState};

pub use cache::{
    compute_g_full, g_for_counts, sample_z_document, update_g_incremental, DocSupervision, EtaCross, GStrategy,
    Scratch, TopicMove,
};
pub use loglik::LogLikelihood;

pub const SNAPSHOT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub hyper: Hyper,
    pub prior: PriorFamily,
    pub iterations: u64,
    pub burn_in: u64,
    /// Number of final iterations whose Φ draws are averaged.
    pub phi_mean_window: u64,
    /// Keep every `thinning`-th η draw after burn-in.
    pub thinning: u64,
    pub seed: u64,
    pub workers: usize,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        PriorFamily::new(self.prior.kind, self.prior.c)?;
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.burn_in >= self.iterations {
            return bad(format!("burn_in ({}) must be below iterations ({})", self.burn_in, self.iterations));
        }
        let kept = self.iterations - self.burn_in;
        if self.phi_mean_window == 0 || self.phi_mean_window > kept {
            return bad(format!("phi_mean_window must be in 1..={kept}, got {}", self.phi_mean_window));
        }
        if self.thinning == 0 || self.thinning > kept {
            return bad(format!("thinning must be in 1..={kept}, got {}", self.thinning));
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        Ok(())
    }
}

/// Which blocks an iteration updates. The default is the joint sampler.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SweepOptions {
    /// Update a, η, τ, λ.
    pub regression: bool,
    /// Update z and Φ.
    pub topics: bool,
    /// Let the regression enter the z conditional.
    pub supervised_topics: bool,
    pub strategy: GStrategy,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { regression: true, topics: true, supervised_topics: true, strategy: GStrategy::Cached }
    }
}

impl SweepOptions {
    /// Plain LDA: z and Φ only.
    pub fn topics_only() -> Self {
        Self { regression: false, supervised_topics: false, ..Self::default() }
    }

    /// DO probit on fixed topic proportions.
    pub fn regression_only() -> Self {
        Self { topics: false, supervised_topics: false, ..Self::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub iteration: u64,
    pub topics: TopicState,
    pub regression: RegressionState,
}

impl ModelState {
    /// Random topics, η = 0, τ = λ = 1, a = 0.
    pub fn init(corpus: &Corpus, hyper: &Hyper, seed: u64, workers: &Workers) -> Result<Self> {
        corpus.validate()?;
        let topics = TopicState::init_random(corpus, hyper, seed, workers)?;
        let regression =
            RegressionState::new(corpus.num_docs(), hyper.num_topics + corpus.num_covariates(), corpus.num_labels());
        Ok(Self { iteration: 0, topics, regression })
    }

    pub fn zbar_all(&self) -> Vec<Vec<f64>> {
        (0..self.topics.num_docs()).map(|d| self.topics.zbar(d)).collect()
    }

    pub fn design(&self, corpus: &Corpus) -> DMatrix<f64> {
        design_matrix(&self.zbar_all(), &corpus.covariates)
    }

    /// Linear predictors `h = design · η`, D×L.
    pub fn linear_predictors(&self, corpus: &Corpus) -> DMatrix<f64> {
        self.design(corpus) * &self.regression.eta
    }

    pub fn log_likelihood(&self, corpus: &Corpus, hyper: &Hyper) -> LogLikelihood {
        let h = self.linear_predictors(corpus);
        LogLikelihood {
            do_term: loglik::do_log_likelihood(&h),
            do_label_term: loglik::do_label_log_likelihood(&h, &corpus.labels),
            lda_term: loglik::lda_log_likelihood(
                &self.topics.topic_word,
                &self.topics.topic_totals,
                self.topics.vocab_size,
                hyper.beta,
            ),
        }
    }

    /// FNV-1a over every stored number's bit pattern.
    pub fn state_hash(&self) -> u64 {
        let mut h = Fnv::default();
        h.u64(self.iteration);
        self.topics.z.iter().flatten().for_each(|&v| h.u64(v as u64));
        self.topics.doc_topic.iter().for_each(|&v| h.u64(v as u64));
        self.topics.topic_word.iter().for_each(|&v| h.u64(v as u64));
        self.topics.phi.iter().for_each(|v| h.u64(v.to_bits()));
        let r = &self.regression;
        for m in [&r.eta, &r.a, &r.lambda] {
            m.iter().for_each(|v| h.u64(v.to_bits()));
        }
        r.tau.iter().for_each(|v| h.u64(v.to_bits()));
        h.0
    }
}

struct Fnv(u64);

impl Default for Fnv {
    fn default() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }
}

impl Fnv {
    fn u64(&mut self, v: u64) {
        for b in v.to_le_bytes() {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }
}

/// Shared, read-only inputs of an iteration.
#[derive(Clone, Copy, Debug)]
pub struct IterationContext<'a> {
    pub corpus: &'a Corpus,
    pub hyper: &'a Hyper,
    pub prior: &'a PriorFamily,
    pub seed: u64,
    pub workers: &'a Workers,
    pub options: SweepOptions,
}

/// Advances `state` by one iteration.
pub fn gibbs_iteration(state: &mut ModelState, ctx: &IterationContext<'_>) -> Result<()> {
    let it = state.iteration + 1;
    let corpus = ctx.corpus;
    if ctx.options.regression {
        let design = state.design(corpus);
        let h = &design * &state.regression.eta;
        state.regression.sample_latents(&h, &corpus.labels, ctx.seed, it, ctx.workers)?;
        state.regression.update_coefficients(&design, ctx.prior, ctx.seed, it, ctx.workers)?;
        if cfg!(debug_assertions) {
            state.regression.check_latents(&corpus.labels)?;
        }
    }
    if ctx.options.topics {
        let k = ctx.hyper.num_topics;
        let cross = if ctx.options.supervised_topics {
            EtaCross::compute(&state.regression.eta, k)
        } else {
            EtaCross::zeros(k)
        };
        sample_topics(state, ctx, &cross, it)?;
        state.topics.sample_phi(ctx.hyper, ctx.seed, it, ctx.workers)?;
    }
    state.iteration = it;
    Ok(())
}

/// The document-parallel z phase. Each worker owns a contiguous block of
/// documents and records its topic moves; the moves are applied to the
/// topic-word counts afterwards in block order.
fn sample_topics(state: &mut ModelState, ctx: &IterationContext<'_>, cross: &EtaCross, it: u64) -> Result<()> {
    let topics = &mut state.topics;
    let (k, v) = (topics.num_topics, topics.vocab_size);
    let mut phi_t = vec![0.0; v * k];
    for t in 0..k {
        for w in 0..v {
            phi_t[w * k + t] = topics.phi[t * v + w];
        }
    }
    let reg = &state.regression;
    let corpus = ctx.corpus;
    let supervised = ctx.options.supervised_topics;
    let alpha = ctx.hyper.alpha;
    let (seed, strategy) = (ctx.seed, ctx.options.strategy);
    let mut docs: Vec<(&mut Vec<u32>, &mut [u32])> = topics.z.iter_mut().zip(topics.doc_topic.chunks_mut(k)).collect();
    let results = ctx.workers.map_blocks_mut(&mut docs, |start, block| -> Result<Vec<TopicMove>> {
        let mut moves = Vec::new();
        let mut scratch = Scratch::default();
        let mut a_row = vec![0.0; reg.a.ncols()];
        let mut x = vec![0.0; corpus.covariates.ncols()];
        for (i, (z, counts)) in block.iter_mut().enumerate() {
            let d = start + i;
            let mut rng = RngStream::for_entity(seed, it, Phase::Topics, d as u64);
            let supervision = if supervised {
                a_row.iter_mut().enumerate().for_each(|(l, v)| *v = reg.a[(d, l)]);
                x.iter_mut().enumerate().for_each(|(p, v)| *v = corpus.covariates[(d, p)]);
                Some(DocSupervision { a_row: &a_row, x: &x, eta: &reg.eta, cross })
            } else {
                None
            };
            sample_z_document(
                &corpus.docs[d],
                z,
                counts,
                &phi_t,
                alpha,
                supervision,
                strategy,
                &mut rng,
                &mut moves,
                &mut scratch,
                None,
            )
            .map_err(|e| match e {
                Error::CountUnderflow { topic, .. } => Error::CountUnderflow { doc: d, topic },
                other => other,
            })?;
        }
        Ok(moves)
    });
    for moves in results {
        for m in moves? {
            let from = m.from as usize * v + m.word as usize;
            if topics.topic_word[from] == 0 || topics.topic_totals[m.from as usize] == 0 {
                return Err(Error::CountUnderflow { doc: usize::MAX, topic: m.from as usize });
            }
            topics.topic_word[from] -= 1;
            topics.topic_totals[m.from as usize] -= 1;
            topics.topic_word[m.to as usize * v + m.word as usize] += 1;
            topics.topic_totals[m.to as usize] += 1;
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: u64,
    pub loglik: LogLikelihood,
    pub wall_seconds: f64,
}

impl TraceRow {
    pub const HEADER: &'static str = "iteration\tdo_loglik\tlda_loglik\ttotal\twall_seconds";

    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{:.6}",
            self.iteration,
            self.loglik.do_term,
            self.loglik.lda_term,
            self.loglik.total(),
            self.wall_seconds
        )
    }
}

/// What a training run keeps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    /// K×V mean of the last `phi_mean_window` Φ draws, row-major.
    pub phi_bar: Vec<f64>,
    pub eta_draws: Vec<DMatrix<f64>>,
    pub trace: Vec<TraceRow>,
}

/// Runs the joint sampler for `config.iterations` iterations from a fresh
/// state. `on_iteration` sees every state after its trace row is computed.
pub fn run(
    corpus: &Corpus,
    config: &RunConfig,
    mut on_iteration: impl FnMut(&ModelState, &TraceRow) -> Result<()>,
) -> Result<(ModelState, Posterior)> {
    config.validate()?;
    let workers = Workers::new(config.workers)?;
    let state = ModelState::init(corpus, &config.hyper, config.seed, &workers)?;
    run_from(corpus, config, &workers, state, SweepOptions::default(), &mut on_iteration)
}

/// Continues `state` up to `config.iterations`, collecting posterior draws.
pub fn run_from(
    corpus: &Corpus,
    config: &RunConfig,
    workers: &Workers,
    mut state: ModelState,
    options: SweepOptions,
    on_iteration: &mut dyn FnMut(&ModelState, &TraceRow) -> Result<()>,
) -> Result<(ModelState, Posterior)> {
    config.validate()?;
    let ctx = IterationContext {
        corpus,
        hyper: &config.hyper,
        prior: &config.prior,
        seed: config.seed,
        workers,
        options,
    };
    let phi_start = config.iterations - config.phi_mean_window;
    let mut phi_sum = vec![0.0; state.topics.phi.len()];
    let mut eta_draws = Vec::new();
    let mut trace = Vec::new();
    let clock = Instant::now();
    while state.iteration < config.iterations {
        gibbs_iteration(&mut state, &ctx)?;
        let it = state.iteration;
        if it > phi_start {
            phi_sum.iter_mut().zip(&state.topics.phi).for_each(|(s, p)| *s += p);
        }
        if it > config.burn_in && (it - config.burn_in).is_multiple_of(config.thinning) {
            eta_draws.push(state.regression.eta.clone());
        }
        let row = TraceRow {
            iteration: it,
            loglik: state.log_likelihood(corpus, &config.hyper),
            wall_seconds: clock.elapsed().as_secs_f64(),
        };
        on_iteration(&state, &row)?;
        trace.push(row);
    }
    let window = config.phi_mean_window.min(config.iterations.saturating_sub(phi_start)) as f64;
    let mut phi_bar: Vec<f64> = phi_sum.iter().map(|s| s / window).collect();
    for row in phi_bar.chunks_mut(state.topics.vocab_size.max(1)) {
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            row.iter_mut().for_each(|p| *p /= total);
        }
    }
    Ok((state, Posterior { phi_bar, eta_draws, trace }))
}

/// Serialized sampler state for checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub schema_version: u32,
    pub seed: u64,
    pub hyper: Hyper,
    pub prior: PriorFamily,
    pub state: ModelState,
}

impl Snapshot {
    pub fn new(state: &ModelState, config: &RunConfig) -> Self {
        Self {
            schema_version: SNAPSHOT_SCHEMA_VERSION,
            seed: config.seed,
            hyper: config.hyper,
            prior: config.prior,
            state: state.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let snap: Self = serde_json::from_str(text)?;
        if snap.schema_version != SNAPSHOT_SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "snapshot schema {} (expected {SNAPSHOT_SCHEMA_VERSION})",
                snap.schema_version
            )));
        }
        Ok(snap)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regression::PriorKind;

    pub(crate) fn small_corpus(seed: u64) -> Corpus {
        let config = simulate::SimulationConfig {
            num_docs: 40,
            doc_length: 30,
            vocab_size: 25,
            num_labels: 3,
            num_covariates: 2,
            hyper: Hyper::new(0.3, 0.1, 4).unwrap(),
            prior: PriorFamily::new(PriorKind::Horseshoe, 1.0).unwrap(),
        };
        simulate::forward_simulate(&config, seed).unwrap().corpus
    }

    fn config(workers: usize) -> RunConfig {
        RunConfig {
            hyper: Hyper::new(0.3, 0.1, 4).unwrap(),
            prior: PriorFamily::horseshoe(),
            iterations: 10,
            burn_in: 5,
            phi_mean_window: 3,
            thinning: 2,
            seed: 42,
            workers,
        }
    }

    #[test]
    fn worker_count_does_not_change_the_chain() {
        let corpus = small_corpus(1);
        let hashes: Vec<u64> = [1, 2, 8]
            .iter()
            .map(|&w| run(&corpus, &config(w), |_, _| Ok(())).unwrap().0.state_hash())
            .collect();
        assert_eq!(hashes[0], hashes[1]);
        assert_eq!(hashes[0], hashes[2]);
    }

    #[test]
    fn counts_are_conserved_every_iteration() {
        let corpus = small_corpus(2);
        let n = corpus.num_tokens() as u64;
        run(&corpus, &config(3), |s, _| {
            assert_eq!(s.topics.topic_totals.iter().sum::<u64>(), n);
            assert_eq!(s.topics.doc_topic.iter().map(|&c| c as u64).sum::<u64>(), n);
            s.topics.check_consistency(&corpus)?;
            s.regression.check_latents(&corpus.labels)
        })
        .unwrap();
    }

    #[test]
    fn posterior_collection_sizes() {
        let corpus = small_corpus(3);
        let (_, post) = run(&corpus, &config(1), |_, _| Ok(())).unwrap();
        assert_eq!(post.trace.len(), 10);
        // iterations 7 and 9 … after burn-in 5 with thinning 2
        assert_eq!(post.eta_draws.len(), 2);
        for row in post.phi_bar.chunks(25) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn config_validation() {
        let mut c = config(1);
        c.burn_in = 10;
        assert!(c.validate().is_err());
        let mut c = config(1);
        c.phi_mean_window = 6;
        assert!(c.validate().is_err());
        let mut c = config(1);
        c.workers = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn snapshot_round_trip() {
        let corpus = small_corpus(4);
        let cfg = config(1);
        let (state, _) = run(&corpus, &cfg, |_, _| Ok(())).unwrap();
        let snap = Snapshot::new(&state, &cfg);
        let back = Snapshot::from_json(&snap.to_json().unwrap()).unwrap();
        assert_eq!(back, snap);
        assert_eq!(back.state.state_hash(), state.state_hash());
    }

    #[test]
    fn cached_and_naive_sweeps_agree() {
        let corpus = small_corpus(5);
        let cfg = config(1);
        let workers = Workers::serial();
        let init = ModelState::init(&corpus, &cfg.hyper, cfg.seed, &workers).unwrap();
        let mut states = Vec::new();
        for strategy in [GStrategy::Cached, GStrategy::Naive] {
            let opts = SweepOptions { strategy, ..SweepOptions::default() };
            let (s, _) = run_from(&corpus, &cfg, &workers, init.clone(), opts, &mut |_, _| Ok(())).unwrap();
            states.push(s);
        }
        // rounding can differ in the last bits of g, not in the draws
        assert_eq!(states[0].topics.z, states[1].topics.z);
    }
}
