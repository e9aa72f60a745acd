//! Summaries of a fitted model as plain tables.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::predict::FittedModel;

pub const DEFAULT_HISTOGRAM_BINS: usize = 30;

#[derive(Clone, Debug, PartialEq)]
pub struct TopWord {
    pub word: String,
    pub prob: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientSummary {
    /// Row of η: 0 is the intercept, then topics, then covariates.
    pub row: usize,
    pub name: String,
    pub mean: f64,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
    /// The 95% central interval excludes zero.
    pub signal: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    /// `counts.len() + 1` increasing edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub top_words: Vec<Vec<TopWord>>,
    pub label_names: Vec<String>,
    /// One table per class, sorted by decreasing |mean|.
    pub coefficients: Vec<Vec<CoefficientSummary>>,
    pub prior: String,
    /// Posterior means of every non-intercept coefficient.
    pub histogram: Histogram,
}

/// The `top_n` most probable words of every topic; lower ids win ties.
pub fn top_words(phi_bar: &[f64], vocab: &[String], top_n: usize) -> Vec<Vec<TopWord>> {
    let v = vocab.len();
    if v == 0 {
        return Vec::new();
    }
    phi_bar
        .chunks(v)
        .map(|row| {
            let mut ids: Vec<usize> = (0..v).collect();
            ids.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            ids.into_iter().take(top_n).map(|i| TopWord { word: vocab[i].clone(), prob: row[i] }).collect()
        })
        .collect()
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per-class posterior summaries of every coefficient row.
pub fn coefficient_tables(draws: &[DMatrix<f64>], names: &[String]) -> Result<Vec<Vec<CoefficientSummary>>> {
    let first = draws.first().ok_or_else(|| Error::InvalidArgument("no coefficient draws".into()))?;
    if names.len() != first.nrows() {
        return Err(Error::InvalidArgument("one name per coefficient row is required".into()));
    }
    let n = draws.len() as f64;
    let tables = (0..first.ncols())
        .map(|l| {
            let mut table: Vec<CoefficientSummary> = (0..first.nrows())
                .map(|p| {
                    let mut xs: Vec<f64> = draws.iter().map(|e| e[(p, l)]).collect();
                    xs.sort_by(f64::total_cmp);
                    let lower = quantile(&xs, 0.025);
                    let upper = quantile(&xs, 0.975);
                    CoefficientSummary {
                        row: p,
                        name: names[p].clone(),
                        mean: xs.iter().sum::<f64>() / n,
                        median: quantile(&xs, 0.5),
                        lower,
                        upper,
                        signal: lower > 0.0 || upper < 0.0,
                    }
                })
                .collect();
            table.sort_by(|a, b| b.mean.abs().total_cmp(&a.mean.abs()).then(a.row.cmp(&b.row)));
            table
        })
        .collect();
    Ok(tables)
}

/// Equal-width bins over the range of `values`. A degenerate range gets a
/// unit-width window around its value.
pub fn histogram(values: &[f64], bins: usize) -> Histogram {
    let bins = bins.max(1);
    let (mut lo, mut hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if values.is_empty() {
        (lo, hi) = (-0.5, 0.5);
    } else if hi - lo <= 0.0 {
        (lo, hi) = (lo - 0.5, hi + 0.5);
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| if i == bins { hi } else { lo + i as f64 * width }).collect();
    let mut counts = vec![0; bins];
    for &v in values {
        let b = (((v - lo) / width).floor() as usize).min(bins - 1);
        counts[b] += 1;
    }
    Histogram { edges, counts }
}

impl Report {
    pub fn new(model: &FittedModel, top_n: usize, bins: usize) -> Result<Self> {
        let coefficients = coefficient_tables(&model.eta_draws, &model.coefficient_names())?;
        let means: Vec<f64> = model.eta_mean.rows(1, model.eta_mean.nrows() - 1).iter().copied().collect();
        Ok(Self {
            top_words: top_words(&model.phi_bar, model.vocabulary.types(), top_n),
            label_names: model.label_names.clone(),
            coefficients,
            prior: model.prior.kind.to_string(),
            histogram: histogram(&means, bins),
        })
    }

    /// Top words as `topic, rank, word, prob` rows.
    pub fn topics_tsv(&self) -> String {
        let mut out = String::from("topic\trank\tword\tprob\n");
        for (k, words) in self.top_words.iter().enumerate() {
            for (r, w) in words.iter().enumerate() {
                let _ = writeln!(out, "{k}\t{}\t{}\t{:.6e}", r + 1, w.word, w.prob);
            }
        }
        out
    }

    pub fn coefficients_tsv(&self) -> String {
        let mut out = String::from("class\tcoefficient\tmean\tmedian\tlower95\tupper95\tsignal\n");
        for (l, table) in self.coefficients.iter().enumerate() {
            for c in table {
                let _ = writeln!(
                    out,
                    "{}\t{}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}\t{}",
                    self.label_names[l],
                    c.name,
                    c.mean,
                    c.median,
                    c.lower,
                    c.upper,
                    u8::from(c.signal)
                );
            }
        }
        out
    }

    pub fn histogram_tsv(&self) -> String {
        let mut out = String::from("prior\tbin_lower\tbin_upper\tcount\n");
        let h = &self.histogram;
        for (b, c) in h.counts.iter().enumerate() {
            let _ = writeln!(out, "{}\t{:.6e}\t{:.6e}\t{c}", self.prior, h.edges[b], h.edges[b + 1]);
        }
        out
    }
}
