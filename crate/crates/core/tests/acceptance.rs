//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! Run a subset with `cargo test --release --test acceptance -- 2 4`.
//! Criterion 8 needs the 20 Newsgroups "bydate" split; point
//! `DOLDA_20NG_DIR` at the directory holding `20news-bydate-train` and
//! `20news-bydate-test`.

use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use dolda::corpus::{build_vocabulary, encode, tokenize, CovariateEncoding, CovariateTable, Stoplist, Vocabulary};
use dolda::distributions::{sample_truncated_normal, Side};
use dolda::parallel::Workers;
use dolda::predict::FittedModel;
use dolda::regression::{sample_eta_class, sample_lambda, sample_tau, PriorFamily, PriorKind};
use dolda::report::{coefficient_tables, quantile};
use dolda::rng::RngStream;
use dolda::sampler::cache::{compute_g_full, update_g_incremental, EtaCross, GStrategy};
use dolda::sampler::geweke::{run_geweke, GewekeConfig};
use dolda::sampler::simulate::{sample_parameters, simulate_documents, Parameters, SimulationConfig};
use dolda::sampler::{gibbs_iteration, run, run_from, IterationContext, ModelState, Posterior, RunConfig, SweepOptions};
use dolda::topic_state::Hyper;

const GEWEKE_MAX_Z: f64 = 4.0;
const GEWEKE_BUDGET: Duration = Duration::from_secs(600);
const CACHE_MOVES: usize = 1_000;
const CACHE_TOL: f64 = 1e-8;
const MC_SIGMAS: f64 = 3.0;
const ORACLE_DRAWS: usize = 100_000;
const KS_ALPHA: f64 = 0.001;
const TN_DRAWS: usize = 1_000_000;
const RECOVER_MIN_ACCURACY: f64 = 0.90;
const RECOVER_MAX_TV: f64 = 0.10;
const RECOVER_BUDGET: Duration = Duration::from_secs(15 * 60);
const SHRINK_RATIO: f64 = 0.1;
const NEWS_MIN_ACCURACY: f64 = 0.70;
const NEWS_BUDGET: Duration = Duration::from_secs(30 * 60);
const SPEEDUP: f64 = 5.0;

struct Outcome {
    pass: bool,
    detail: String,
    /// Inputs were missing, so the criterion could not be exercised.
    unavailable: bool,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail, unavailable: false }
}

// ---------------------------------------------------------------- 1

fn geweke() -> Outcome {
    let clock = Instant::now();
    let cfg = GewekeConfig {
        sim: SimulationConfig {
            num_docs: 8,
            doc_length: 10,
            vocab_size: 6,
            num_labels: 2,
            num_covariates: 0,
            hyper: Hyper::new(0.5, 0.5, 2).unwrap(),
            prior: PriorFamily::new(PriorKind::Horseshoe, 1.0).unwrap(),
        },
        forward_draws: 50_000,
        chain_iterations: 8_000_000,
        chain_burn_in: 1_000,
        batches: 50,
        seed: 11,
    };
    let report = run_geweke(&cfg).expect("geweke run");
    let elapsed = clock.elapsed();
    for s in &report.stats {
        println!(
            "      {:28} forward {:+.4} ± {:.4}  chain {:+.4} ± {:.4}  ess {:>9.0}  z {:+.2}",
            s.name, s.forward_mean, s.forward_se, s.chain_mean, s.chain_se, s.chain_ess, s.z
        );
    }
    let max_z = report.stats.iter().map(|s| s.z.abs()).fold(0.0, f64::max);
    let min_ess = report.stats.iter().map(|s| s.chain_ess).fold(f64::INFINITY, f64::min);
    let pass = report.stats.len() >= 8 && max_z < GEWEKE_MAX_Z && elapsed < GEWEKE_BUDGET;
    outcome(
        pass,
        format!(
            "{} statistics, max |z| {max_z:.2} (< {GEWEKE_MAX_Z}), min chain ESS {min_ess:.0}, {:.0} s (< {})",
            report.stats.len(),
            elapsed.as_secs_f64(),
            GEWEKE_BUDGET.as_secs()
        ),
    )
}

// ---------------------------------------------------------------- 2

fn cache_equivalence() -> Outcome {
    let clock = Instant::now();
    let (k, l, p, n) = (8, 4, 2, 50);
    let mut r = RngStream::new(2, 0);
    let eta = DMatrix::from_fn(1 + k + p, l, |_, _| r.sample::<f64, _>(StandardNormal));
    let a: Vec<f64> = (0..l).map(|_| r.sample(StandardNormal)).collect();
    let x: Vec<f64> = (0..p).map(|_| r.sample(StandardNormal)).collect();
    let cross = EtaCross::compute(&eta, k);
    let mut z: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
    let full = |z: &[usize], excluded: usize| -> Vec<f64> {
        let mut zbar = vec![0.0; k];
        for (i, &t) in z.iter().enumerate() {
            if i != excluded {
                zbar[t] += 1.0 / n as f64;
            }
        }
        (0..k).map(|t| compute_g_full(t, &zbar, &x, &a, &eta, n)).collect()
    };
    let mut prev = r.random_range(0..n);
    let mut g = full(&z, prev);
    let mut worst: f64 = 0.0;
    for _ in 0..CACHE_MOVES {
        z[prev] = r.random_range(0..k);
        let next = r.random_range(0..n);
        g = update_g_incremental(&g, &cross, z[next], z[prev], n);
        let want = full(&z, next);
        worst = g.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
        prev = next;
    }
    outcome(
        worst <= CACHE_TOL,
        format!("{CACHE_MOVES} random moves, max |incremental - full| {worst:.2e} (<= {CACHE_TOL:e}), {:.2} s", clock.elapsed().as_secs_f64()),
    )
}

// ---------------------------------------------------------------- 3

/// CDF of a density on (0, ∞), integrated on a fine log-scale grid.
fn grid_cdf(log_density: impl Fn(f64) -> f64) -> impl Fn(f64) -> f64 {
    let (lo, hi, n) = (-20.0f64, 20.0f64, 400_000usize);
    let dt = (hi - lo) / n as f64;
    let logs: Vec<f64> = (0..=n).map(|i| lo + i as f64 * dt).map(|t| log_density(t.exp()) + t).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut cdf = vec![0.0; n + 1];
    for i in 1..=n {
        cdf[i] = cdf[i - 1] + 0.5 * dt * ((logs[i - 1] - max).exp() + (logs[i] - max).exp());
    }
    let total = cdf[n];
    cdf.iter_mut().for_each(|c| *c /= total);
    move |s: f64| {
        let pos = ((s.ln() - lo) / dt).clamp(0.0, n as f64 - 1e-9);
        let i = pos.floor() as usize;
        let f = pos - i as f64;
        cdf[i] * (1.0 - f) + cdf[i + 1] * f
    }
}

fn grid_inverse(cdf: &impl Fn(f64) -> f64, u: f64) -> f64 {
    let (mut lo, mut hi) = (-20.0f64, 20.0f64);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid.exp()) < u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi)).exp()
}

fn ks(samples: &mut [f64], cdf: &impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

fn ks_critical(n: usize) -> f64 {
    (-(KS_ALPHA / 2.0).ln() / 2.0).sqrt() / (n as f64).sqrt()
}

fn conditional_oracles() -> Outcome {
    let clock = Instant::now();
    let mut notes = Vec::new();
    let mut pass = true;

    // η: explicit inverse of the posterior precision
    let design = DMatrix::from_fn(40, 4, |d, j| if j == 0 { 1.0 } else { ((d * (j + 3)) as f64 * 0.37).sin() });
    let y = DVector::from_fn(40, |d, _| (d as f64 * 0.21).cos() * 1.5);
    let gram = design.tr_mul(&design);
    let rhs = design.tr_mul(&y);
    let prior = PriorFamily::horseshoe();
    let (tau, lambda) = (0.6, [1.2, 0.3, 2.5]);
    let mut precision = gram.clone();
    precision[(0, 0)] += 1.0 / (prior.c * prior.c);
    for (j, lj) in lambda.iter().enumerate() {
        precision[(1 + j, 1 + j)] += 1.0 / (tau * tau * lj * lj);
    }
    let cov = precision.try_inverse().expect("invertible");
    let mean = &cov * &rhs;
    let mut r = RngStream::new(3, 0);
    let draws: Vec<DVector<f64>> =
        (0..ORACLE_DRAWS).map(|_| sample_eta_class(&gram, &rhs, tau, &lambda, &prior, &mut r).unwrap()).collect();
    let n = ORACLE_DRAWS as f64;
    let mut worst: f64 = 0.0;
    for i in 0..4 {
        let m = draws.iter().map(|d| d[i]).sum::<f64>() / n;
        worst = worst.max((m - mean[i]).abs() / (cov[(i, i)] / n).sqrt());
        for j in i..4 {
            let c = draws.iter().map(|d| (d[i] - mean[i]) * (d[j] - mean[j])).sum::<f64>() / n;
            let se = ((cov[(i, i)] * cov[(j, j)] + cov[(i, j)].powi(2)) / n).sqrt();
            worst = worst.max((c - cov[(i, j)]).abs() / se);
        }
    }
    pass &= worst < MC_SIGMAS;
    notes.push(format!("eta moments max {worst:.2} MC sigma"));

    // τ | η, λ ∝ τ^{-m} exp(-Σ(η/λ)²/(2τ²)) / (1+τ²)
    let crit = ks_critical(ORACLE_DRAWS);
    let mut worst_ks: f64 = 0.0;
    for (case, (eta, lam)) in
        [(vec![0.4, -1.1, 0.02], vec![1.0, 0.3, 2.0]), (vec![0.01; 5], vec![1.0; 5])].into_iter().enumerate()
    {
        let b = 0.5 * eta.iter().zip(&lam).map(|(e, l): (&f64, &f64)| (e / l).powi(2)).sum::<f64>();
        let m = eta.len() as f64;
        let cdf = grid_cdf(|t| -m * t.ln() - b / (t * t) - (t * t).ln_1p());
        let mut r = RngStream::new(30 + case as u64, 0);
        let mut out: Vec<f64> = (0..ORACLE_DRAWS)
            .map(|_| {
                let start = grid_inverse(&cdf, r.random());
                sample_tau(&eta, &lam, start, &mut r).unwrap()
            })
            .collect();
        worst_ks = worst_ks.max(ks(&mut out, &cdf));
    }
    // λ | η, τ ∝ λ^{-1} exp(-(η/τ)²/(2λ²)) / (1+λ²)
    for (case, (eta, tau)) in [(0.7f64, 1.0f64), (2.5, 0.1), (0.002, 0.8)].into_iter().enumerate() {
        let b = 0.5 * (eta / tau).powi(2);
        let cdf = grid_cdf(|l| -l.ln() - b / (l * l) - (l * l).ln_1p());
        let mut r = RngStream::new(40 + case as u64, 0);
        let mut out: Vec<f64> = (0..ORACLE_DRAWS)
            .map(|_| {
                let start = grid_inverse(&cdf, r.random());
                sample_lambda(eta, tau, start, &mut r).unwrap()
            })
            .collect();
        worst_ks = worst_ks.max(ks(&mut out, &cdf));
    }
    pass &= worst_ks < crit;
    notes.push(format!("tau/lambda max KS {worst_ks:.5} (< {crit:.5})"));
    outcome(pass, format!("{}, {:.1} s", notes.join(", "), clock.elapsed().as_secs_f64()))
}

// ---------------------------------------------------------------- 4

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

fn truncated_normal() -> Outcome {
    let mut r = RngStream::new(4, 0);
    let zero: Vec<f64> = (0..TN_DRAWS).map(|_| sample_truncated_normal(0.0, Side::Positive, &mut r).unwrap()).collect();
    let tail: Vec<f64> = (0..TN_DRAWS).map(|_| sample_truncated_normal(-8.0, Side::Positive, &mut r).unwrap()).collect();
    let want_zero = (2.0 / std::f64::consts::PI).sqrt();
    // φ(8)/(1-Φ(8)) - 8, with 1-Φ(8) = erfc(8/√2)/2
    let pdf8 = (-32.0f64).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let upper8 = 0.5 * statrs::function::erf::erfc(8.0 / std::f64::consts::SQRT_2);
    let want_tail = pdf8 / upper8 - 8.0;
    let (m0, se0) = mean_se(&zero);
    let (m8, se8) = mean_se(&tail);
    let (s0, s8) = ((m0 - want_zero).abs() / se0, (m8 - want_tail).abs() / se8);
    let quoted = (m8 - 0.1221).abs() / se8;
    outcome(
        s0 < MC_SIGMAS && s8 < MC_SIGMAS,
        format!(
            "mean 0: {m0:.5} vs {want_zero:.5} ({s0:.2} sigma); mean -8: {m8:.5} vs {want_tail:.6} ({s8:.2} sigma; \
             the rounded 0.1221 sits {quoted:.1} sigma away)"
        ),
    )
}

// ---------------------------------------------------------------- 5 and 7

const TOPICS: usize = 10;
const CLASSES: usize = 5;
const VOCAB: usize = 500;

/// Well-separated sparse topics; topic k pushes class k mod 5 up and the
/// others down.
fn planted(seed: u64) -> (SimulationConfig, Parameters) {
    let cfg = SimulationConfig {
        num_docs: 700,
        doc_length: 100,
        vocab_size: VOCAB,
        num_labels: CLASSES,
        num_covariates: 0,
        hyper: Hyper::new(0.1, 0.01, TOPICS).unwrap(),
        prior: PriorFamily::horseshoe(),
    };
    let mut r = RngStream::new(seed, 99);
    let mut params = sample_parameters(&cfg, &mut r).unwrap();
    let strength = 8.0;
    let mut eta = DMatrix::from_element(1 + TOPICS, CLASSES, -strength / 2.0);
    eta.row_mut(0).fill(0.0);
    for t in 0..TOPICS {
        eta[(1 + t, t % CLASSES)] = strength;
    }
    params.eta = eta;
    (cfg, params)
}

fn mean_best_tv(truth: &[f64], est: &[f64], k: usize, v: usize) -> f64 {
    let tv = |i: usize, j: usize| 0.5 * (0..v).map(|w| (truth[i * v + w] - est[j * v + w]).abs()).sum::<f64>();
    // assignment by dynamic programming over subsets of estimated topics
    let mut best = vec![f64::INFINITY; 1 << k];
    best[0] = 0.0;
    for mask in 0..(1usize << k) {
        let i = mask.count_ones() as usize;
        if i == k || best[mask].is_infinite() {
            continue;
        }
        for j in (0..k).filter(|j| mask & (1 << j) == 0) {
            let next = mask | (1 << j);
            best[next] = best[next].min(best[mask] + tv(i, j));
        }
    }
    best[(1 << k) - 1] / k as f64
}

fn synthetic_vocab() -> Vocabulary {
    Vocabulary::from_types((0..VOCAB).map(|i| format!("w{i}")).collect()).unwrap()
}

fn held_out_accuracy(post: &Posterior, config: &RunConfig, train_labels: &[String], test: &dolda::corpus::Corpus) -> f64 {
    let enc = CovariateEncoding::infer(&CovariateTable::empty(0), &[]);
    let model =
        FittedModel::from_posterior(post, config.hyper, config.prior, synthetic_vocab(), train_labels.to_vec(), enc)
            .unwrap();
    let preds = model.predict(&test.docs, &test.covariates, 7, &Workers::serial()).unwrap();
    preds.iter().zip(&test.labels).filter(|(p, &y)| p.label == y).count() as f64 / test.num_docs() as f64
}

fn recover_config(seed: u64) -> RunConfig {
    RunConfig {
        hyper: Hyper::new(0.1, 0.01, TOPICS).unwrap(),
        prior: PriorFamily::horseshoe(),
        iterations: 400,
        burn_in: 200,
        phi_mean_window: 100,
        thinning: 5,
        seed,
        workers: 1,
    }
}

fn split(sim: &dolda::sampler::simulate::Simulated) -> (dolda::corpus::Corpus, dolda::corpus::Corpus) {
    (sim.corpus.subset(&(0..500).collect::<Vec<_>>()), sim.corpus.subset(&(500..700).collect::<Vec<_>>()))
}

fn joint_fit(seed: u64) -> (f64, f64, Duration) {
    let clock = Instant::now();
    let (cfg, params) = planted(seed);
    let sim = simulate_documents(&cfg, &params, seed).unwrap();
    let (train, test) = split(&sim);
    let config = recover_config(seed);
    let (_, post) = run(&train, &config, |_, _| Ok(())).unwrap();
    let acc = held_out_accuracy(&post, &config, &train.label_names, &test);
    (acc, mean_best_tv(&params.phi, &post.phi_bar, TOPICS, VOCAB), clock.elapsed())
}

/// Plain LDA, then the probit regression on the final topic proportions.
fn two_step_fit(seed: u64) -> f64 {
    let (cfg, params) = planted(seed);
    let sim = simulate_documents(&cfg, &params, seed).unwrap();
    let (train, test) = split(&sim);
    let config = recover_config(seed);
    let w = Workers::serial();
    let state = ModelState::init(&train, &config.hyper, seed, &w).unwrap();
    let (state, lda) = run_from(&train, &config, &w, state, SweepOptions::topics_only(), &mut |_, _| Ok(())).unwrap();
    let n = config.iterations;
    let second = RunConfig { iterations: n + n / 2, burn_in: n + n / 4, ..config.clone() };
    let (_, reg) = run_from(&train, &second, &w, state, SweepOptions::regression_only(), &mut |_, _| Ok(())).unwrap();
    let post = Posterior { phi_bar: lda.phi_bar, eta_draws: reg.eta_draws, trace: Vec::new() };
    held_out_accuracy(&post, &config, &train.label_names, &test)
}

fn simulate_and_recover() -> Outcome {
    let (acc, tv, elapsed) = joint_fit(1);
    outcome(
        acc >= RECOVER_MIN_ACCURACY && tv <= RECOVER_MAX_TV && elapsed < RECOVER_BUDGET,
        format!(
            "held-out accuracy {acc:.3} (>= {RECOVER_MIN_ACCURACY}), mean matched TV {tv:.4} (<= {RECOVER_MAX_TV}), {:.1} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn joint_vs_two_step() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for seed in 1..=3 {
        let (joint, _, _) = joint_fit(seed);
        let two = two_step_fit(seed);
        pass &= joint >= two;
        parts.push(format!("seed {seed}: joint {joint:.3} vs two-step {two:.3}"));
    }
    outcome(pass, parts.join("; "))
}

// ---------------------------------------------------------------- 6

fn shrinkage() -> Outcome {
    let clock = Instant::now();
    let (d, p, seed) = (1000, 50, 1);
    let planted_signals = [1.0, -1.0, 0.75, -0.75, 1.25];
    // documents are empty, so only the intercept and covariates carry signal
    let cfg = SimulationConfig {
        num_docs: d,
        doc_length: 0,
        vocab_size: 2,
        num_labels: 2,
        num_covariates: p,
        hyper: Hyper::new(0.1, 0.1, 1).unwrap(),
        prior: PriorFamily::horseshoe(),
    };
    let mut params = sample_parameters(&cfg, &mut RngStream::new(seed, 5)).unwrap();
    let mut eta = DMatrix::zeros(2 + p, 2);
    for (j, &b) in planted_signals.iter().enumerate() {
        eta[(2 + j, 0)] = b;
        eta[(2 + j, 1)] = -b;
    }
    params.eta = eta;
    let sim = simulate_documents(&cfg, &params, seed).unwrap();
    let names: Vec<String> = (0..2 + p).map(|i| format!("row{i}")).collect();
    let mut medians = Vec::new();
    let mut flagged_ok = true;
    let mut flagged_counts = Vec::new();
    for prior in [PriorFamily::horseshoe(), PriorFamily::normal()] {
        let config = RunConfig {
            hyper: cfg.hyper,
            prior,
            iterations: 4000,
            burn_in: 1000,
            phi_mean_window: 1,
            thinning: 1,
            seed,
            workers: 1,
        };
        let (_, post) = run(&sim.corpus, &config, |_, _| Ok(())).unwrap();
        let tables = coefficient_tables(&post.eta_draws, &names).unwrap();
        // |posterior median| of every null covariate, per class
        let per_class: Vec<Vec<f64>> = tables
            .iter()
            .map(|t| t.iter().filter(|c| c.row >= 2 + planted_signals.len()).map(|c| c.median.abs()).collect())
            .collect();
        medians.push(per_class);
        if prior.kind == PriorKind::Horseshoe {
            for t in &tables {
                let flagged: Vec<usize> = t.iter().filter(|c| c.signal && c.row >= 2).map(|c| c.row - 2).collect();
                let mut sorted = flagged.clone();
                sorted.sort();
                flagged_ok &= sorted == (0..planted_signals.len()).collect::<Vec<_>>();
                flagged_counts.push(flagged.len());
            }
        }
    }
    let mut ratios = Vec::new();
    let mut worst_single: f64 = 0.0;
    for (hs, nm) in medians[0].iter().zip(&medians[1]) {
        let (mut hs, mut nm) = (hs.clone(), nm.clone());
        for (h, n) in hs.iter().zip(&nm) {
            worst_single = worst_single.max(h / n);
        }
        hs.sort_by(f64::total_cmp);
        nm.sort_by(f64::total_cmp);
        ratios.push(quantile(&hs, 0.5) / quantile(&nm, 0.5));
    }
    let worst = ratios.iter().copied().fold(0.0, f64::max);
    outcome(
        flagged_ok && worst < SHRINK_RATIO,
        format!(
            "null |median| ratio horseshoe/normal per class {:.3}/{:.3} (< {SHRINK_RATIO}; largest single-coefficient ratio {worst_single:.2}), \
             flagged per class {:?} (planted 5 each, exact match {flagged_ok}), {:.1} s",
            ratios[0],
            ratios[1],
            flagged_counts,
            clock.elapsed().as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 8

const NEWS_GROUPS: [&str; 4] = ["alt.atheism", "comp.graphics", "sci.space", "talk.religion.misc"];

/// Message bodies and group names of one split; headers are dropped.
fn read_news_split(dir: &Path) -> std::io::Result<(Vec<String>, Vec<String>)> {
    let (mut texts, mut labels) = (Vec::new(), Vec::new());
    for group in NEWS_GROUPS {
        let mut files: Vec<_> = std::fs::read_dir(dir.join(group))?.filter_map(|e| e.ok()).map(|e| e.path()).collect();
        files.sort();
        for f in files {
            let raw = String::from_utf8_lossy(&std::fs::read(&f)?).into_owned();
            let body = raw.split_once("\n\n").map_or(raw.as_str(), |(_, b)| b).to_string();
            texts.push(body);
            labels.push(group.to_string());
        }
    }
    Ok((texts, labels))
}

fn newsgroups() -> Outcome {
    let Some(root) = std::env::var_os("DOLDA_20NG_DIR") else {
        return Outcome {
            pass: false,
            detail: "20 Newsgroups data not available (set DOLDA_20NG_DIR to the bydate split)".into(),
            unavailable: true,
        };
    };
    let root = Path::new(&root);
    let clock = Instant::now();
    let (train_texts, train_labels) = match read_news_split(&root.join("20news-bydate-train")) {
        Ok(x) => x,
        Err(e) => return Outcome { pass: false, detail: format!("cannot read training split: {e}"), unavailable: true },
    };
    let (test_texts, test_labels) = match read_news_split(&root.join("20news-bydate-test")) {
        Ok(x) => x,
        Err(e) => return Outcome { pass: false, detail: format!("cannot read test split: {e}"), unavailable: true },
    };
    let stop = Stoplist::english();
    let train_tokens: Vec<Vec<String>> = train_texts.iter().map(|t| tokenize(t, &stop)).collect();
    let vocab = build_vocabulary(&train_tokens, &stop, 0.01).unwrap();
    let ids: Vec<String> = (0..train_texts.len()).map(|i| i.to_string()).collect();
    let table = CovariateTable::empty(train_texts.len());
    let enc = encode(&ids, &train_tokens, &train_labels, &table, &vocab, 10, &[]).unwrap();
    let config = RunConfig {
        hyper: Hyper::new(0.01, 0.01, 20).unwrap(),
        prior: PriorFamily::horseshoe(),
        iterations: 1000,
        burn_in: 500,
        phi_mean_window: 100,
        thinning: 5,
        seed: 8,
        workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let (_, post) = run(&enc.corpus, &config, |_, _| Ok(())).unwrap();
    let model = FittedModel::from_posterior(
        &post,
        config.hyper,
        config.prior,
        vocab.clone(),
        enc.corpus.label_names.clone(),
        enc.covariate_encoding.clone(),
    )
    .unwrap();
    let test_docs: Vec<Vec<u32>> = test_texts.iter().map(|t| vocab.encode(&tokenize(t, &stop))).collect();
    let x = DMatrix::zeros(test_docs.len(), 0);
    let preds = model.predict(&test_docs, &x, config.seed, &Workers::new(config.workers).unwrap()).unwrap();
    let hits = preds.iter().zip(&test_labels).filter(|(p, y)| &model.label_names[p.label] == *y).count();
    let acc = hits as f64 / test_labels.len() as f64;
    let elapsed = clock.elapsed();
    outcome(
        acc >= NEWS_MIN_ACCURACY && elapsed < NEWS_BUDGET,
        format!(
            "{} train / {} test docs, accuracy {acc:.3} (>= {NEWS_MIN_ACCURACY}), {:.0} s",
            enc.corpus.num_docs(),
            test_labels.len(),
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 9

fn supervised_state(docs: usize, k: usize, l: usize, seed: u64) -> (dolda::corpus::Corpus, ModelState, Hyper) {
    let cfg = SimulationConfig {
        num_docs: docs,
        doc_length: 100,
        vocab_size: 1000,
        num_labels: l,
        num_covariates: 0,
        hyper: Hyper::new(0.1, 0.01, k).unwrap(),
        prior: PriorFamily::horseshoe(),
    };
    let mut r = RngStream::new(seed, 9);
    let mut params = sample_parameters(&cfg, &mut r).unwrap();
    params.eta = DMatrix::from_fn(1 + k, l, |_, _| r.sample::<f64, _>(StandardNormal));
    let sim = simulate_documents(&cfg, &params, seed).unwrap();
    let mut state = ModelState::init(&sim.corpus, &cfg.hyper, seed, &Workers::serial()).unwrap();
    state.regression.eta = params.eta.clone();
    state.regression.a = sim.a.clone();
    (sim.corpus, state, cfg.hyper)
}

fn sweep_seconds_per_token(corpus: &dolda::corpus::Corpus, state: &ModelState, hyper: &Hyper, strategy: GStrategy) -> f64 {
    let mut state = state.clone();
    let workers = Workers::serial();
    let options = SweepOptions { regression: false, topics: true, supervised_topics: true, strategy };
    let ctx =
        IterationContext { corpus, hyper, prior: &PriorFamily::horseshoe(), seed: 5, workers: &workers, options };
    let clock = Instant::now();
    gibbs_iteration(&mut state, &ctx).unwrap();
    clock.elapsed().as_secs_f64() / corpus.num_tokens() as f64
}

fn performance() -> Outcome {
    let (k, l) = (100, 20);
    let (corpus, state, hyper) = supervised_state(10_000, k, l, 9);
    let cached = sweep_seconds_per_token(&corpus, &state, &hyper, GStrategy::Cached);
    // the naive sweep costs the same per token on any document; time it on
    // the first 200 documents
    let idx: Vec<usize> = (0..200).collect();
    let small = corpus.subset(&idx);
    let mut small_state = ModelState::init(&small, &hyper, 9, &Workers::serial()).unwrap();
    small_state.regression.eta = state.regression.eta.clone();
    small_state.regression.a = DMatrix::from_fn(200, l, |d, c| state.regression.a[(d, c)]);
    let naive = sweep_seconds_per_token(&small, &small_state, &hyper, GStrategy::Naive);
    let speedup = naive / cached;
    let tokens = corpus.num_tokens();

    let (corpus, state, hyper) = supervised_state(300, 8, 4, 10);
    let hashes: Vec<u64> = [1, 2, 8]
        .iter()
        .map(|&n| {
            let workers = Workers::new(n).unwrap();
            let mut s = state.clone();
            let ctx = IterationContext {
                corpus: &corpus,
                hyper: &hyper,
                prior: &PriorFamily::horseshoe(),
                seed: 21,
                workers: &workers,
                options: SweepOptions::default(),
            };
            for _ in 0..10 {
                gibbs_iteration(&mut s, &ctx).unwrap();
            }
            s.state_hash()
        })
        .collect();
    let same = hashes.iter().all(|&h| h == hashes[0]);
    outcome(
        speedup >= SPEEDUP && same,
        format!(
            "K={k} L={l}, {} tokens: cached {:.1} ns/token, naive {:.1} ns/token, speedup {speedup:.1}x (>= {SPEEDUP}); \
             state hash for workers 1/2/8 {:016x}/{:016x}/{:016x}",
            tokens,
            cached * 1e9,
            naive * 1e9,
            hashes[0],
            hashes[1],
            hashes[2]
        ),
    )
}

// ----------------------------------------------------------------

fn main() {
    let picked: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    type Check = (usize, &'static str, fn() -> Outcome);
    let criteria: [Check; 9] = [
        (1, "geweke joint distribution", geweke),
        (2, "cache equivalence", cache_equivalence),
        (3, "conditional posterior oracles", conditional_oracles),
        (4, "truncated normal primitives", truncated_normal),
        (5, "simulate and recover", simulate_and_recover),
        (6, "shrinkage behaviour", shrinkage),
        (7, "joint vs two-step", joint_vs_two_step),
        (8, "20 newsgroups subset", newsgroups),
        (9, "performance and worker invariance", performance),
    ];
    let mut failed = Vec::new();
    for (id, name, check) in criteria {
        if !picked.is_empty() && !picked.contains(&id) {
            continue;
        }
        let o = check();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("{tag} [{id}] {name}: {}", o.detail);
        if !o.pass && !o.unavailable {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
