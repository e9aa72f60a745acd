//! Log-likelihood monitoring.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::regression::{do_log_label_likelihood, do_log_normalizer};
use crate::special::ln_gamma;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogLikelihood {
    /// Σ_d ln Σ_s Φ(h_ds) Π_{l≠s} Φ(−h_dl).
    pub do_term: f64,
    /// Σ_d ln Φ(h_{d,y_d}) Π_{l≠y_d} Φ(−h_dl).
    pub do_label_term: f64,
    /// ln p(w | z, β).
    pub lda_term: f64,
}

impl LogLikelihood {
    pub fn total(&self) -> f64 {
        self.do_term + self.lda_term
    }
}

/// Sum over documents of the log total orthant mass.
pub fn do_log_likelihood(h: &DMatrix<f64>) -> f64 {
    (0..h.nrows())
        .map(|d| do_log_normalizer(&h.row(d).iter().copied().collect::<Vec<_>>()))
        .sum()
}

/// Sum over documents of the log mass of the observed label's orthant.
pub fn do_label_log_likelihood(h: &DMatrix<f64>, labels: &[usize]) -> f64 {
    labels
        .iter()
        .enumerate()
        .map(|(d, &y)| do_log_label_likelihood(&h.row(d).iter().copied().collect::<Vec<_>>(), y))
        .sum()
}

/// Dirichlet-multinomial normaliser of every topic row.
pub fn lda_log_likelihood(topic_word: &[u32], topic_totals: &[u64], vocab_size: usize, beta: f64) -> f64 {
    let v = vocab_size as f64;
    let lg_beta = ln_gamma(beta);
    let lg_vbeta = ln_gamma(v * beta);
    topic_totals
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let row = &topic_word[k * vocab_size..(k + 1) * vocab_size];
            let words: f64 = row.iter().filter(|&&c| c > 0).map(|&c| ln_gamma(beta + c as f64) - lg_beta).sum();
            lg_vbeta - ln_gamma(v * beta + n as f64) + words
        })
        .sum()
}
