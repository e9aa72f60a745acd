//! LDA sufficient statistics, topic indicators and the topic-word matrix Φ.
//!
//! θ is integrated out: the document-topic counts plus `alpha` enter the
//! indicator conditional directly. Φ is sampled explicitly, which keeps
//! documents conditionally independent within a sweep.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::distributions::sample_dirichlet_into;
use crate::error::{Error, Result};
use crate::parallel::Workers;
use crate::rng::{Phase, RngStream};

/// Symmetric Dirichlet hyperparameters and topic count.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub alpha: f64,
    pub beta: f64,
    pub num_topics: usize,
}

impl Hyper {
    pub fn new(alpha: f64, beta: f64, num_topics: usize) -> Result<Self> {
        let h = Self { alpha, beta, num_topics };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidArgument(format!("beta must be positive, got {}", self.beta)));
        }
        if self.num_topics < 1 {
            return Err(Error::InvalidArgument("need at least one topic".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopicState {
    pub num_topics: usize,
    pub vocab_size: usize,
    /// Topic of every token, per document.
    pub z: Vec<Vec<u32>>,
    /// D×K, row-major.
    pub doc_topic: Vec<u32>,
    /// K×V, row-major.
    pub topic_word: Vec<u32>,
    pub topic_totals: Vec<u64>,
    /// K×V row-stochastic, row-major.
    pub phi: Vec<f64>,
}

impl TopicState {
    /// Uniform random topic for every token, then one Φ draw.
    pub fn init_random(corpus: &Corpus, hyper: &Hyper, seed: u64, workers: &Workers) -> Result<Self> {
        hyper.validate()?;
        let k = hyper.num_topics;
        let z: Vec<Vec<u32>> = corpus
            .docs
            .iter()
            .enumerate()
            .map(|(d, doc)| {
                let mut rng = RngStream::for_entity(seed, 0, Phase::Init, d as u64);
                doc.iter().map(|_| rng.random_range(0..k as u32)).collect()
            })
            .collect();
        let mut state = Self::from_assignments(corpus, k, z)?;
        state.sample_phi(hyper, seed, 0, workers)?;
        Ok(state)
    }

    /// Builds counts from given assignments; Φ is set to uniform.
    pub fn from_assignments(corpus: &Corpus, num_topics: usize, z: Vec<Vec<u32>>) -> Result<Self> {
        let v = corpus.vocab_size;
        let mut state = Self {
            num_topics,
            vocab_size: v,
            z,
            doc_topic: vec![0; corpus.num_docs() * num_topics],
            topic_word: vec![0; num_topics * v],
            topic_totals: vec![0; num_topics],
            phi: vec![1.0 / v as f64; num_topics * v],
        };
        state.rebuild_counts(corpus)?;
        Ok(state)
    }

    /// Recomputes every count matrix from `z`.
    pub fn rebuild_counts(&mut self, corpus: &Corpus) -> Result<()> {
        let (k, v) = (self.num_topics, self.vocab_size);
        if self.z.len() != corpus.num_docs() {
            return Err(Error::Inconsistent("assignment count differs from document count".into()));
        }
        self.doc_topic.iter_mut().for_each(|c| *c = 0);
        self.topic_word.iter_mut().for_each(|c| *c = 0);
        self.topic_totals.iter_mut().for_each(|c| *c = 0);
        for (d, (doc, zd)) in corpus.docs.iter().zip(&self.z).enumerate() {
            if doc.len() != zd.len() {
                return Err(Error::Inconsistent(format!("document {d} length differs from its assignments")));
            }
            for (&w, &t) in doc.iter().zip(zd) {
                let t = t as usize;
                if t >= k || w as usize >= v {
                    return Err(Error::Inconsistent(format!("token in document {d} out of range")));
                }
                self.doc_topic[d * k + t] += 1;
                self.topic_word[t * v + w as usize] += 1;
                self.topic_totals[t] += 1;
            }
        }
        Ok(())
    }

    pub fn num_docs(&self) -> usize {
        self.z.len()
    }

    pub fn doc_counts(&self, d: usize) -> &[u32] {
        &self.doc_topic[d * self.num_topics..(d + 1) * self.num_topics]
    }

    pub fn phi_row(&self, k: usize) -> &[f64] {
        &self.phi[k * self.vocab_size..(k + 1) * self.vocab_size]
    }

    /// Removes token `n` of document `d` from the counts. `z` keeps the old
    /// value until the matching [`increment`](Self::increment).
    pub fn decrement(&mut self, corpus: &Corpus, d: usize, n: usize) -> Result<()> {
        let k = self.num_topics;
        let t = self.z[d][n] as usize;
        let w = corpus.docs[d][n] as usize;
        let dt = &mut self.doc_topic[d * k + t];
        let tw = &mut self.topic_word[t * self.vocab_size + w];
        let tt = &mut self.topic_totals[t];
        if *dt == 0 || *tw == 0 || *tt == 0 {
            return Err(Error::CountUnderflow { doc: d, topic: t });
        }
        *dt -= 1;
        *tw -= 1;
        *tt -= 1;
        Ok(())
    }

    /// Assigns token `n` of document `d` to `topic` and adds it to the counts.
    pub fn increment(&mut self, corpus: &Corpus, d: usize, n: usize, topic: usize) -> Result<()> {
        if topic >= self.num_topics {
            return Err(Error::InvalidArgument(format!("topic {topic} out of range")));
        }
        let w = corpus.docs[d][n] as usize;
        self.z[d][n] = topic as u32;
        self.doc_topic[d * self.num_topics + topic] += 1;
        self.topic_word[topic * self.vocab_size + w] += 1;
        self.topic_totals[topic] += 1;
        Ok(())
    }

    /// Topic proportions of document `d`; the zero vector for empty documents.
    pub fn zbar(&self, d: usize) -> Vec<f64> {
        let counts = self.doc_counts(d);
        let n: u32 = counts.iter().sum();
        if n == 0 {
            return vec![0.0; self.num_topics];
        }
        counts.iter().map(|&c| c as f64 / n as f64).collect()
    }

    /// Draws every row `φ_k ~ Dir(beta + topic_word[k])`, rows in parallel.
    pub fn sample_phi(&mut self, hyper: &Hyper, seed: u64, iteration: u64, workers: &Workers) -> Result<()> {
        let v = self.vocab_size;
        let beta = hyper.beta;
        let counts = &self.topic_word;
        let failure = std::sync::Mutex::new(None);
        workers.for_each_row(&mut self.phi, v, |k, row| {
            let mut rng = RngStream::for_entity(seed, iteration, Phase::Phi, k as u64);
            let conc = counts[k * v..(k + 1) * v].iter().map(|&c| beta + c as f64);
            if let Err(e) = sample_dirichlet_into(conc, row, &mut rng) {
                *failure.lock().unwrap() = Some(e);
            }
        });
        match failure.into_inner().unwrap() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    /// Checks that the incremental counts equal a from-scratch recount.
    pub fn check_consistency(&self, corpus: &Corpus) -> Result<()> {
        let mut fresh = self.clone();
        fresh.rebuild_counts(corpus)?;
        if fresh.doc_topic != self.doc_topic
            || fresh.topic_word != self.topic_word
            || fresh.topic_totals != self.topic_totals
        {
            return Err(Error::Inconsistent("counts differ from a recount of z".into()));
        }
        Ok(())
    }
}
