//! Supervised term of the topic-indicator conditional.
//!
//! For document `d` with `N` tokens, excluding token `i` leaves the count
//! vector `n'`. The log-weight the regression adds to topic `k` is
//!
//! ```text
//! g_k = (1/N) Σ_l η_{l,k} (a_{d,l} − (1, n'/N, x_d)·η_l) − S_kk / (2N²)
//! ```
//!
//! with `S = Σ_l η_{l,·} η_{l,·}ᵀ` over topic rows. Moving one token out of
//! topic `t` adds `S[·][t]/N²` and moving one in subtracts it, so after one
//! O(L·(K+P)) setup per document each token costs O(K).

use nalgebra::DMatrix;
use rand::Rng;

use crate::distributions::pick;
use crate::error::{Error, Result};

/// K×K cross-product of the topic rows of η.
#[derive(Clone, Debug, PartialEq)]
pub struct EtaCross {
    k: usize,
    s: Vec<f64>,
}

impl EtaCross {
    pub fn compute(eta: &DMatrix<f64>, num_topics: usize) -> Self {
        let k = num_topics;
        let mut s = vec![0.0; k * k];
        for i in 0..k {
            for j in i..k {
                let v: f64 = (0..eta.ncols()).map(|l| eta[(1 + i, l)] * eta[(1 + j, l)]).sum();
                s[i * k + j] = v;
                s[j * k + i] = v;
            }
        }
        Self { k, s }
    }

    pub fn zeros(num_topics: usize) -> Self {
        Self { k: num_topics, s: vec![0.0; num_topics * num_topics] }
    }

    pub fn num_topics(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.s[i * self.k + j]
    }

    /// `S[·][t]` (equal to row `t` by symmetry).
    pub fn column(&self, t: usize) -> &[f64] {
        &self.s[t * self.k..(t + 1) * self.k]
    }
}

/// `x·η_l` restricted to rows `1+K..`, plus the intercept.
fn fixed_part(eta: &DMatrix<f64>, l: usize, x: &[f64], k: usize) -> f64 {
    eta[(0, l)] + x.iter().enumerate().map(|(p, v)| v * eta[(1 + k + p, l)]).sum::<f64>()
}

/// g for one topic straight from its definition:
/// `-½ Σ_l [ -2(η_{l,k}/N)(a_l - (1, zbar, x)·η_l) + (η_{l,k}/N)² ]`.
pub fn compute_g_full(k: usize, zbar_excl: &[f64], x: &[f64], a_row: &[f64], eta: &DMatrix<f64>, n_d: usize) -> f64 {
    let n = n_d as f64;
    let num_topics = zbar_excl.len();
    let mut total = 0.0;
    for (l, &a) in a_row.iter().enumerate() {
        let pred = fixed_part(eta, l, x, num_topics)
            + zbar_excl.iter().enumerate().map(|(j, z)| z * eta[(1 + j, l)]).sum::<f64>();
        let c = eta[(1 + k, l)] / n;
        total += -2.0 * c * (a - pred) + c * c;
    }
    -0.5 * total
}

/// Moves g from "token i−1 excluded" to "token i excluded": token i−1 has
/// just been assigned `z_new` and token i currently sits in `z_old`.
pub fn update_g_incremental(g_prev: &[f64], cross: &EtaCross, z_old: usize, z_new: usize, n_d: usize) -> Vec<f64> {
    let mut g = g_prev.to_vec();
    if z_old != z_new {
        let inv = 1.0 / (n_d as f64 * n_d as f64);
        let (so, sn) = (cross.column(z_old), cross.column(z_new));
        for (k, gk) in g.iter_mut().enumerate() {
            *gk += (so[k] - sn[k]) * inv;
        }
    }
    g
}

/// g for every topic given an arbitrary count vector `counts` over a
/// document of length `n_d`.
pub fn g_for_counts(
    counts: &[u32],
    n_d: usize,
    x: &[f64],
    a_row: &[f64],
    eta: &DMatrix<f64>,
    cross: &EtaCross,
    out: &mut [f64],
) {
    let k = counts.len();
    let n = n_d as f64;
    out.iter_mut().for_each(|g| *g = 0.0);
    for (l, &a) in a_row.iter().enumerate() {
        let pred = fixed_part(eta, l, x, k)
            + counts.iter().enumerate().map(|(j, &c)| c as f64 / n * eta[(1 + j, l)]).sum::<f64>();
        let resid = (a - pred) / n;
        for (t, g) in out.iter_mut().enumerate() {
            *g += eta[(1 + t, l)] * resid;
        }
    }
    let inv = 0.5 / (n * n);
    for (t, g) in out.iter_mut().enumerate() {
        *g -= cross.get(t, t) * inv;
    }
}

/// How the supervised term is evaluated during a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GStrategy {
    /// Incremental updates from the η cross-product.
    Cached,
    /// [`compute_g_full`] for every topic at every token.
    Naive,
}

/// Regression quantities needed by one document's sweep.
#[derive(Clone, Copy, Debug)]
pub struct DocSupervision<'a> {
    pub a_row: &'a [f64],
    pub x: &'a [f64],
    pub eta: &'a DMatrix<f64>,
    pub cross: &'a EtaCross,
}

/// A token moved from `from` to `to`; feeds the topic-word reduction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TopicMove {
    pub word: u32,
    pub from: u32,
    pub to: u32,
}

/// Per-worker buffers reused across documents.
#[derive(Clone, Debug, Default)]
pub struct Scratch {
    g: Vec<f64>,
    weights: Vec<f64>,
    zbar: Vec<f64>,
}

/// Called before each token is drawn with `(token, g, weights)`; weights are
/// unnormalized and include the exp(g − max g) factor.
pub type TokenObserver<'o> = &'o mut dyn FnMut(usize, &[f64], &[f64]);

/// Resamples every token of one document in order.
///
/// `phi_t` is Φ transposed (V×K, row-major). `counts` is the document's
/// topic-count row, updated in place together with `z`.
#[allow(clippy::too_many_arguments)]
pub fn sample_z_document<R: Rng + ?Sized>(
    words: &[u32],
    z: &mut [u32],
    counts: &mut [u32],
    phi_t: &[f64],
    alpha: f64,
    supervision: Option<DocSupervision<'_>>,
    strategy: GStrategy,
    rng: &mut R,
    moves: &mut Vec<TopicMove>,
    scratch: &mut Scratch,
    mut observer: Option<TokenObserver<'_>>,
) -> Result<()> {
    let k = counts.len();
    let n_d = words.len();
    if n_d == 0 {
        return Ok(());
    }
    let Scratch { g, weights, zbar } = scratch;
    g.clear();
    g.resize(k, 0.0);
    weights.resize(k, 0.0);
    zbar.resize(k, 0.0);
    if let (Some(sup), GStrategy::Cached) = (&supervision, strategy) {
        g_for_counts(counts, n_d, sup.x, sup.a_row, sup.eta, sup.cross, g);
    }
    let inv_n2 = 1.0 / (n_d as f64 * n_d as f64);
    for (i, (&w, zi)) in words.iter().zip(z.iter_mut()).enumerate() {
        let old = *zi as usize;
        if counts[old] == 0 {
            return Err(Error::CountUnderflow { doc: usize::MAX, topic: old });
        }
        counts[old] -= 1;
        if let Some(sup) = &supervision {
            match strategy {
                GStrategy::Cached => {
                    for (gk, s) in g.iter_mut().zip(sup.cross.column(old)) {
                        *gk += s * inv_n2;
                    }
                }
                GStrategy::Naive => {
                    for (zb, &c) in zbar.iter_mut().zip(counts.iter()) {
                        *zb = c as f64 / n_d as f64;
                    }
                    for (t, gk) in g.iter_mut().enumerate() {
                        *gk = compute_g_full(t, zbar, sup.x, sup.a_row, sup.eta, n_d);
                    }
                }
            }
        }
        let gmax = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let phi_row = &phi_t[w as usize * k..(w as usize + 1) * k];
        let mut total = 0.0;
        for t in 0..k {
            let v = phi_row[t] * (counts[t] as f64 + alpha) * (g[t] - gmax).exp();
            weights[t] = v;
            total += v;
        }
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::DegenerateWeights);
        }
        if let Some(obs) = observer.as_mut() {
            obs(i, g, weights);
        }
        let new = pick(weights, total, rng);
        counts[new] += 1;
        if let (Some(sup), GStrategy::Cached) = (&supervision, strategy) {
            for (gk, s) in g.iter_mut().zip(sup.cross.column(new)) {
                *gk -= s * inv_n2;
            }
        }
        if new != old {
            *zi = new as u32;
            moves.push(TopicMove { word: w, from: old as u32, to: new as u32 });
        }
    }
    Ok(())
}
