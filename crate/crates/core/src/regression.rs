//! Diagonal orthant probit layer: latent utilities, coefficients and
//! horseshoe shrinkage.
//!
//! Coefficient layout per class is `(intercept, topic_1..topic_K, x_1..x_P)`.
//! The intercept always has a `N(0, c²)` prior; the remaining `K+P` rows are
//! either horseshoe-shrunk or `N(0, c²)` depending on [`PriorKind`].

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{
    sample_mvn_by_precision, sample_truncated_exponential, sample_truncated_gamma_inverse,
    sample_truncated_normal, Side,
};
use crate::error::{Error, Result};
use crate::parallel::Workers;
use crate::rng::{Phase, RngStream};
use crate::special::{log_sum_exp, norm_log_cdf};

/// Bounds on 1/τ² and 1/λ², i.e. τ, λ ∈ [1e-6, 1e6].
pub const SHRINK_PRECISION_MIN: f64 = 1e-12;
pub const SHRINK_PRECISION_MAX: f64 = 1e12;
const JITTER: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorKind {
    Horseshoe,
    Normal,
}

impl std::str::FromStr for PriorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "horseshoe" => Ok(Self::Horseshoe),
            "normal" => Ok(Self::Normal),
            other => Err(Error::InvalidArgument(format!("unknown prior {other:?}"))),
        }
    }
}

impl std::fmt::Display for PriorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Horseshoe => "horseshoe",
            Self::Normal => "normal",
        })
    }
}

/// `c` is a standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorFamily {
    pub kind: PriorKind,
    pub c: f64,
}

impl PriorFamily {
    pub const DEFAULT_C: f64 = 100.0;

    pub fn new(kind: PriorKind, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidArgument(format!("prior scale c must be positive, got {c}")));
        }
        Ok(Self { kind, c })
    }

    pub fn horseshoe() -> Self {
        Self { kind: PriorKind::Horseshoe, c: Self::DEFAULT_C }
    }

    pub fn normal() -> Self {
        Self { kind: PriorKind::Normal, c: Self::DEFAULT_C }
    }

    /// Diagonal of the prior precision for one class.
    pub fn precision(&self, tau: f64, lambda: &[f64]) -> DVector<f64> {
        let base = 1.0 / (self.c * self.c);
        let mut out = DVector::from_element(lambda.len() + 1, base);
        if self.kind == PriorKind::Horseshoe {
            for (p, &l) in lambda.iter().enumerate() {
                out[p + 1] = 1.0 / (tau * tau * l * l);
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionState {
    /// (1+K+P)×L; column `l` is η_l.
    pub eta: DMatrix<f64>,
    /// D×L latent utilities.
    pub a: DMatrix<f64>,
    /// Per-class global scale.
    pub tau: Vec<f64>,
    /// (K+P)×L local scales.
    pub lambda: DMatrix<f64>,
}

impl RegressionState {
    /// η = 0, a = 0, τ = λ = 1.
    pub fn new(num_docs: usize, num_predictors: usize, num_labels: usize) -> Self {
        Self {
            eta: DMatrix::zeros(num_predictors + 1, num_labels),
            a: DMatrix::zeros(num_docs, num_labels),
            tau: vec![1.0; num_labels],
            lambda: DMatrix::from_element(num_predictors, num_labels, 1.0),
        }
    }

    pub fn num_labels(&self) -> usize {
        self.eta.ncols()
    }

    /// Redraws every `a[d][l]` from `N(h[d][l], 1)` truncated to the orthant
    /// of label `labels[d]`.
    pub fn sample_latents(
        &mut self,
        h: &DMatrix<f64>,
        labels: &[usize],
        seed: u64,
        iteration: u64,
        workers: &Workers,
    ) -> Result<()> {
        let num_labels = self.num_labels();
        let blocks = workers.map_blocks(labels.len(), |range| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(range.len() * num_labels);
            for d in range {
                let mut rng = RngStream::for_entity(seed, iteration, Phase::Latent, d as u64);
                for l in 0..num_labels {
                    let side = if l == labels[d] { Side::Positive } else { Side::Negative };
                    out.push(sample_truncated_normal(h[(d, l)], side, &mut rng)?);
                }
            }
            Ok(out)
        });
        let mut d = 0;
        for block in blocks {
            for row in block?.chunks(num_labels) {
                for (l, &v) in row.iter().enumerate() {
                    self.a[(d, l)] = v;
                }
                d += 1;
            }
        }
        Ok(())
    }

    /// Per class, in order: η_l, then τ_l and λ_{·,l} under the horseshoe.
    /// Classes run in parallel on independent streams.
    pub fn update_coefficients(
        &mut self,
        design: &DMatrix<f64>,
        prior: &PriorFamily,
        seed: u64,
        iteration: u64,
        workers: &Workers,
    ) -> Result<()> {
        let gram = design.tr_mul(design);
        let rhs = design.tr_mul(&self.a);
        let num_labels = self.num_labels();
        let state = &*self;
        let blocks = workers.map_blocks(num_labels, |range| {
            range
                .map(|l| {
                    let mut rng = RngStream::for_entity(seed, iteration, Phase::Coefficients, l as u64);
                    state.update_class(l, &gram, &rhs.column(l).into_owned(), prior, &mut rng)
                        .map_err(|e| match e {
                            Error::NotPositiveDefinite => Error::CoefficientUpdate { class: l, iteration },
                            other => other,
                        })
                })
                .collect::<Vec<_>>()
        });
        for (l, result) in blocks.into_iter().flatten().enumerate() {
            let (eta, tau, lambda) = result?;
            self.eta.set_column(l, &eta);
            self.tau[l] = tau;
            self.lambda.set_column(l, &DVector::from_vec(lambda));
        }
        Ok(())
    }

    fn update_class<R: Rng + ?Sized>(
        &self,
        l: usize,
        gram: &DMatrix<f64>,
        rhs: &DVector<f64>,
        prior: &PriorFamily,
        rng: &mut R,
    ) -> Result<(DVector<f64>, f64, Vec<f64>)> {
        let mut lambda: Vec<f64> = self.lambda.column(l).iter().copied().collect();
        let mut tau = self.tau[l];
        let eta = sample_eta_class(gram, rhs, tau, &lambda, prior, rng)?;
        if prior.kind == PriorKind::Horseshoe {
            let shrunk = &eta.as_slice()[1..];
            tau = sample_tau(shrunk, &lambda, tau, rng)?;
            for (p, lam) in lambda.iter_mut().enumerate() {
                *lam = sample_lambda(shrunk[p], tau, *lam, rng)?;
            }
        }
        Ok((eta, tau, lambda))
    }

    /// Latent sign pattern check: positive exactly at the observed label.
    pub fn check_latents(&self, labels: &[usize]) -> Result<()> {
        for (d, &y) in labels.iter().enumerate() {
            for l in 0..self.num_labels() {
                let v = self.a[(d, l)];
                if (l == y) != (v > 0.0) || !v.is_finite() {
                    return Err(Error::Inconsistent(format!("latent ({d}, {l}) = {v} violates label {y}")));
                }
            }
        }
        Ok(())
    }
}

/// `(1, zbar, x)`.
pub fn design_row(zbar: &[f64], x: &[f64]) -> Vec<f64> {
    let mut row = Vec::with_capacity(1 + zbar.len() + x.len());
    row.push(1.0);
    row.extend_from_slice(zbar);
    row.extend_from_slice(x);
    row
}

/// Stacks design rows for all documents.
pub fn design_matrix(zbar: &[Vec<f64>], covariates: &DMatrix<f64>) -> DMatrix<f64> {
    let k = zbar.first().map_or(0, Vec::len);
    let p = covariates.ncols();
    DMatrix::from_fn(zbar.len(), 1 + k + p, |d, j| match j {
        0 => 1.0,
        j if j <= k => zbar[d][j - 1],
        j => covariates[(d, j - 1 - k)],
    })
}

/// One draw of η_l given the Gram matrix `DᵀD` and `Dᵀa_l`.
///
/// A failed factorization is retried once with a small diagonal jitter.
pub fn sample_eta_class<R: Rng + ?Sized>(
    gram: &DMatrix<f64>,
    rhs: &DVector<f64>,
    tau: f64,
    lambda: &[f64],
    prior: &PriorFamily,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let mut q = gram.clone();
    let pr = prior.precision(tau, lambda);
    if pr.len() != q.nrows() {
        return Err(Error::InvalidArgument("design width does not match shrinkage parameters".into()));
    }
    for (i, v) in pr.iter().enumerate() {
        q[(i, i)] += v;
    }
    match sample_mvn_by_precision(&q, rhs, rng) {
        Err(Error::NotPositiveDefinite) => {
            for i in 0..q.nrows() {
                q[(i, i)] += JITTER;
            }
            sample_mvn_by_precision(&q, rhs, rng)
        }
        other => other,
    }
}

/// Slice update of a half-Cauchy global scale.
///
/// `u ~ U(0, 1/(1+1/τ²))`, then `1/τ² ~ Gamma((n+1)/2, ½Σ(η/λ)²)` below
/// `(1-u)/u`, with `n = eta.len()`.
pub fn sample_tau<R: Rng + ?Sized>(eta: &[f64], lambda: &[f64], tau_prev: f64, rng: &mut R) -> Result<f64> {
    let rate = 0.5 * eta.iter().zip(lambda).map(|(e, l)| (e / l).powi(2)).sum::<f64>();
    let shape = (eta.len() as f64 + 1.0) / 2.0;
    let upper = slice_bound(tau_prev, rng);
    let gamma = sample_truncated_gamma_inverse(shape, rate, upper, rng)?;
    Ok(1.0 / gamma.clamp(SHRINK_PRECISION_MIN, SHRINK_PRECISION_MAX).sqrt())
}

/// Slice update of one half-Cauchy local scale:
/// `1/λ² ~ Exp(½(η/τ)²)` below `(1-u)/u`.
pub fn sample_lambda<R: Rng + ?Sized>(eta: f64, tau: f64, lambda_prev: f64, rng: &mut R) -> Result<f64> {
    let rate = 0.5 * (eta / tau).powi(2);
    let upper = slice_bound(lambda_prev, rng);
    let gamma = sample_truncated_exponential(rate, upper, rng)?;
    Ok(1.0 / gamma.clamp(SHRINK_PRECISION_MIN, SHRINK_PRECISION_MAX).sqrt())
}

fn slice_bound<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    let gamma = 1.0 / (scale * scale);
    // u = v/(1+γ) with v ~ U(0,1], so (1-u)/u = (1+γ)/v - 1
    let v: f64 = 1.0 - rng.random::<f64>();
    ((1.0 + gamma) / v - 1.0).max(f64::MIN_POSITIVE)
}

/// `Φ(h_l) / Σ_s Φ(h_s)`, evaluated in log space.
pub fn do_class_probabilities(h: &[f64]) -> Vec<f64> {
    normalize_log(&h.iter().map(|&v| norm_log_cdf(v)).collect::<Vec<_>>())
}

/// Log mass of each diagonal orthant: `ln Φ(h_l) + Σ_{s≠l} ln Φ(-h_s)`.
pub fn do_orthant_log_masses(h: &[f64]) -> Vec<f64> {
    let neg: f64 = h.iter().map(|&v| norm_log_cdf(-v)).sum();
    h.iter().map(|&v| norm_log_cdf(v) - norm_log_cdf(-v) + neg).collect()
}

/// Probability that the label is `l` given that exactly one utility is
/// positive.
pub fn do_orthant_probabilities(h: &[f64]) -> Vec<f64> {
    normalize_log(&do_orthant_log_masses(h))
}

/// Log of the total mass of the diagonal orthants.
pub fn do_log_normalizer(h: &[f64]) -> f64 {
    log_sum_exp(&do_orthant_log_masses(h))
}

/// Log mass of the orthant of label `y`.
pub fn do_log_label_likelihood(h: &[f64], y: usize) -> f64 {
    do_orthant_log_masses(h)[y]
}

fn normalize_log(logs: &[f64]) -> Vec<f64> {
    let total = log_sum_exp(logs);
    logs.iter().map(|&v| (v - total).exp()).collect()
}
