use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use dolda::corpus::{
    build_vocabulary, encode, load_raw_corpus, split_folds, tokenize, Corpus, CorpusSource,
    EncodedCorpus, RawCorpus, SourceLayout, Stoplist, Vocabulary, DEFAULT_MIN_CLASS_DOCS,
};
use dolda::parallel::Workers;
use dolda::predict::{FittedModel, DEFAULT_NEW_DOC_BURN_IN, DEFAULT_NEW_DOC_ITERATIONS};
use dolda::regression::{PriorFamily, PriorKind};
use dolda::report::{Report, DEFAULT_HISTOGRAM_BINS};
use dolda::sampler::{run, RunConfig, Snapshot, TraceRow};
use dolda::topic_state::Hyper;

use crate::error::CliError;
use crate::manifest::{corpus_fingerprint, sha256_file, RunManifest};
use crate::settings::{Reader, Settings};

pub const MODEL_FILE: &str = "model.json";
pub const TRACE_FILE: &str = "trace.tsv";
pub const PREDICTIONS_FILE: &str = "predictions.tsv";
pub const CV_FILE: &str = "cv.tsv";
pub const CHECKPOINT_DIR: &str = "checkpoints";

/// Settings keys holding paths, made absolute when a config file is read.
pub const PATH_KEYS: &[&str] = &["corpus", "text_dir", "metadata", "stoplist", "model"];

/// Where a command writes, and what a rerun must match.
pub struct Context {
    pub out_dir: PathBuf,
    pub expect: Option<RunManifest>,
    pub quiet: bool,
}

impl Context {
    fn verify(&self, manifest: &RunManifest) -> Result<(), CliError> {
        let Some(expect) = &self.expect else { return Ok(()) };
        if expect.corpus_fingerprint != manifest.corpus_fingerprint {
            return Err(CliError::Validation("corpus content differs from the manifest".into()));
        }
        for (name, hash) in &expect.inputs {
            if manifest.inputs.get(name) != Some(hash) {
                return Err(CliError::Validation(format!("input {name} differs from the manifest")));
            }
        }
        Ok(())
    }

    fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

pub fn execute(command: &str, settings: &Settings, ctx: &Context) -> Result<RunManifest, CliError> {
    fs::create_dir_all(&ctx.out_dir)?;
    let manifest = match command {
        "train" => train(settings, ctx)?,
        "cv" => cv(settings, ctx)?,
        "predict" => predict(settings, ctx)?,
        "report" => report(settings, ctx)?,
        other => return Err(CliError::Validation(format!("unknown command {other:?}"))),
    };
    manifest.write(&ctx.out_dir)?;
    Ok(manifest)
}

fn parse_delimiter(value: &str) -> Result<u8, String> {
    match value {
        "tab" | "\\t" | "\t" => Ok(b'\t'),
        "comma" | "," => Ok(b','),
        s if s.len() == 1 && s.is_ascii() => Ok(s.as_bytes()[0]),
        s => Err(format!("unsupported delimiter {s:?}")),
    }
}

fn read_source(r: &mut Reader<'_>, label_column: Option<String>) -> CorpusSource {
    let corpus = r.optional("corpus");
    let text_dir = r.optional("text_dir");
    let metadata = r.optional("metadata");
    let text_column = r.get("text_column", "text".to_string());
    let doc_id_column = r.optional("id_column");
    let covariate_columns = r.list("covariates");
    let delimiter_value = r.optional("delimiter");
    let layout = match (corpus, text_dir, metadata) {
        (Some(path), None, None) => SourceLayout::Table { path: path.into(), text_column },
        (None, Some(dir), Some(meta)) => SourceLayout::Directory { text_dir: dir.into(), metadata: meta.into() },
        _ => {
            r.check(false, || "give either corpus, or text_dir together with metadata".into());
            SourceLayout::Table { path: PathBuf::new(), text_column }
        }
    };
    let table_path = match &layout {
        SourceLayout::Table { path, .. } => path.clone(),
        SourceLayout::Directory { metadata, .. } => metadata.clone(),
    };
    let delimiter = match delimiter_value {
        Some(v) => parse_delimiter(&v).unwrap_or_else(|e| {
            r.check(false, || format!("delimiter: {e}"));
            b'\t'
        }),
        None if table_path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) => b',',
        None => b'\t',
    };
    CorpusSource { layout, delimiter, doc_id_column, label_column, covariate_columns }
}

struct TrainSettings {
    source: CorpusSource,
    stoplist: String,
    min_class_docs: usize,
    rare_mass: f64,
    categorical: Vec<String>,
    run: RunConfig,
    checkpoint_every: u64,
    new_doc_iterations: usize,
    new_doc_burn_in: usize,
    folds: usize,
    parallel_folds: bool,
}

impl TrainSettings {
    fn read(settings: &Settings) -> Result<Self, CliError> {
        let mut r = Reader::new(settings);
        let label = r.get("label_column", "label".to_string());
        let source = read_source(&mut r, Some(label));
        let stoplist = r.get("stoplist", "english".to_string());
        let min_class_docs = r.get("min_class_docs", DEFAULT_MIN_CLASS_DOCS);
        let rare_mass: f64 = r.get("rare_mass", 0.01);
        r.check((0.0..1.0).contains(&rare_mass), || format!("rare_mass = {rare_mass} (must be in [0, 1))"));
        let categorical = r.list("categorical");
        let topics: usize = r.get("topics", 20);
        let alpha: f64 = r.get("alpha", 0.01);
        let beta: f64 = r.get("beta", 0.01);
        let hyper = Hyper::new(alpha, beta, topics).unwrap_or_else(|e| {
            r.check(false, || format!("topics/alpha/beta: {e}"));
            Hyper { alpha: 1.0, beta: 1.0, num_topics: 1 }
        });
        let kind: PriorKind = r.get("prior", PriorKind::Horseshoe);
        let c: f64 = r.get("c", PriorFamily::DEFAULT_C);
        let prior = PriorFamily::new(kind, c).unwrap_or_else(|e| {
            r.check(false, || format!("c: {e}"));
            PriorFamily::horseshoe()
        });
        let iterations: u64 = r.get("iterations", 1000);
        let run = RunConfig {
            hyper,
            prior,
            iterations,
            burn_in: r.get("burn_in", iterations / 2),
            phi_mean_window: r.get("phi_mean_window", (iterations / 10).max(1)),
            thinning: r.get("thinning", 1),
            seed: r.get("seed", 1),
            workers: r.get("workers", 1),
        };
        if let Err(e) = run.validate() {
            r.check(false, || format!("schedule: {e}"));
        }
        let new_doc_iterations = r.get("new_doc_iterations", DEFAULT_NEW_DOC_ITERATIONS);
        let new_doc_burn_in = r.get("new_doc_burn_in", DEFAULT_NEW_DOC_BURN_IN);
        r.check(new_doc_burn_in < new_doc_iterations, || "new_doc_burn_in must be below new_doc_iterations".into());
        let folds = r.get("folds", 5);
        r.check(folds >= 2, || format!("folds = {folds} (need at least 2)"));
        let parallel_folds = r.get("parallel_folds", false);
        let checkpoint_every = r.get("checkpoint_every", 0);
        r.finish()?;
        Ok(Self {
            source,
            stoplist,
            min_class_docs,
            rare_mass,
            categorical,
            run,
            checkpoint_every,
            new_doc_iterations,
            new_doc_burn_in,
            folds,
            parallel_folds,
        })
    }

    fn stoplist(&self) -> Result<(Stoplist, Option<PathBuf>), CliError> {
        match self.stoplist.as_str() {
            "english" => Ok((Stoplist::english(), None)),
            "none" => Ok((Stoplist::default(), None)),
            path => {
                let text = fs::read_to_string(path)
                    .map_err(|e| CliError::Validation(format!("cannot read stoplist {path}: {e}")))?;
                Ok((Stoplist::parse(&text), Some(PathBuf::from(path))))
            }
        }
    }
}

struct Prepared {
    encoded: EncodedCorpus,
    vocab: Vocabulary,
}

/// Loads, tokenizes, prunes and encodes the training corpus.
fn prepare(ts: &TrainSettings, manifest: &mut RunManifest, ctx: &Context) -> Result<Prepared, CliError> {
    let raw = load_raw_corpus(&ts.source)?;
    let (stoplist, stop_path) = ts.stoplist()?;
    manifest.corpus_fingerprint = Some(corpus_fingerprint(&raw));
    if let Some(p) = stop_path {
        manifest.inputs.insert("stoplist".into(), sha256_file(&p)?);
    }
    ctx.verify(manifest)?;
    let labels = raw.labels.as_ref().expect("label column requested");
    let tokens: Vec<Vec<String>> = raw.texts.iter().map(|t| tokenize(t, &stoplist)).collect();
    let vocab = build_vocabulary(&tokens, &stoplist, ts.rare_mass)?;
    let encoded = encode(&raw.doc_ids, &tokens, labels, &raw.covariates, &vocab, ts.min_class_docs, &ts.categorical)?;
    if !encoded.dropped_labels.is_empty() {
        ctx.note(format!(
            "warning: dropped classes with fewer than {} documents: {}",
            ts.min_class_docs,
            encoded.dropped_labels.join(", ")
        ));
    }
    let empty = encoded.corpus.empty_documents().len();
    if empty > 0 {
        ctx.note(format!("warning: {empty} documents have no in-vocabulary tokens"));
    }
    ctx.note(format!(
        "corpus: {} documents, {} tokens, {} word types, {} classes",
        encoded.corpus.num_docs(),
        encoded.corpus.num_tokens(),
        vocab.len(),
        encoded.corpus.num_labels()
    ));
    Ok(Prepared { encoded, vocab })
}

fn fit(
    corpus: &Corpus,
    prepared: &Prepared,
    ts: &TrainSettings,
    mut trace: Option<&mut dyn Write>,
    checkpoints: Option<&Path>,
) -> Result<FittedModel, CliError> {
    let mut on_iteration = |state: &dolda::sampler::ModelState, row: &TraceRow| -> dolda::Result<()> {
        if let Some(w) = trace.as_deref_mut() {
            writeln!(w, "{}", row.to_tsv())?;
        }
        if let Some(dir) = checkpoints {
            if ts.checkpoint_every > 0 && row.iteration.is_multiple_of(ts.checkpoint_every) {
                let snap = Snapshot::new(state, &ts.run);
                fs::write(dir.join(format!("snapshot_{:06}.json", row.iteration)), snap.to_json()?)?;
            }
        }
        Ok(())
    };
    let (_, posterior) = run(corpus, &ts.run, &mut on_iteration)?;
    let mut model = FittedModel::from_posterior(
        &posterior,
        ts.run.hyper,
        ts.run.prior,
        prepared.vocab.clone(),
        corpus.label_names.clone(),
        prepared.encoded.covariate_encoding.clone(),
    )?;
    model.new_doc_iterations = ts.new_doc_iterations;
    model.new_doc_burn_in = ts.new_doc_burn_in;
    model.validate()?;
    Ok(model)
}

fn train(settings: &Settings, ctx: &Context) -> Result<RunManifest, CliError> {
    let ts = TrainSettings::read(settings)?;
    let mut manifest = RunManifest::new("train", settings, ts.run.seed);
    let clock = Instant::now();
    let prepared = prepare(&ts, &mut manifest, ctx)?;
    manifest.timings.insert("prepare_seconds".into(), clock.elapsed().as_secs_f64());

    let mut trace = BufWriter::new(File::create(ctx.out_dir.join(TRACE_FILE))?);
    writeln!(trace, "{}", TraceRow::HEADER)?;
    let checkpoints = (ts.checkpoint_every > 0).then(|| ctx.out_dir.join(CHECKPOINT_DIR));
    if let Some(dir) = &checkpoints {
        fs::create_dir_all(dir)?;
    }
    let started = Instant::now();
    let model = fit(&prepared.encoded.corpus, &prepared, &ts, Some(&mut trace), checkpoints.as_deref())?;
    trace.flush()?;
    manifest.timings.insert("sampling_seconds".into(), started.elapsed().as_secs_f64());
    fs::write(ctx.out_dir.join(MODEL_FILE), model.to_json()?)?;
    manifest.outputs = vec![MODEL_FILE.into(), TRACE_FILE.into()];
    if let Some(dir) = checkpoints {
        let mut names: Vec<String> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok())
            .map(|e| format!("{CHECKPOINT_DIR}/{}", e.file_name().to_string_lossy()))
            .collect();
        names.sort();
        manifest.outputs.extend(names);
    }
    manifest.timings.insert("total_seconds".into(), clock.elapsed().as_secs_f64());
    ctx.note(format!("trained {} iterations in {:.1} s", ts.run.iterations, clock.elapsed().as_secs_f64()));
    Ok(manifest)
}

/// Classes that have no document among `indices`.
fn absent_classes(corpus: &Corpus, indices: &[usize]) -> Vec<usize> {
    let mut seen = vec![false; corpus.num_labels()];
    indices.iter().for_each(|&d| seen[corpus.labels[d]] = true);
    (0..seen.len()).filter(|&l| !seen[l]).collect()
}

fn accuracy(predicted: &[usize], truth: &[usize]) -> f64 {
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    hits as f64 / truth.len().max(1) as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub train_docs: usize,
    pub test_docs: usize,
    pub accuracy: f64,
}

fn run_fold(
    fold: usize,
    corpus: &Corpus,
    train_idx: &[usize],
    test_idx: &[usize],
    prepared: &Prepared,
    ts: &TrainSettings,
) -> Result<FoldResult, CliError> {
    let train = corpus.subset(train_idx);
    let test = corpus.subset(test_idx);
    let model = fit(&train, prepared, ts, None, None)?;
    let workers = Workers::new(ts.run.workers)?;
    let preds = model.predict(&test.docs, &test.covariates, ts.run.seed, &workers)?;
    let labels: Vec<usize> = preds.iter().map(|p| p.label).collect();
    Ok(FoldResult { fold, train_docs: train_idx.len(), test_docs: test_idx.len(), accuracy: accuracy(&labels, &test.labels) })
}

fn cv(settings: &Settings, ctx: &Context) -> Result<RunManifest, CliError> {
    let ts = TrainSettings::read(settings)?;
    let mut manifest = RunManifest::new("cv", settings, ts.run.seed);
    let clock = Instant::now();
    let prepared = prepare(&ts, &mut manifest, ctx)?;
    let corpus = &prepared.encoded.corpus;
    let folds = split_folds(&corpus.labels, ts.folds, ts.run.seed)?;
    let splits: Vec<(Vec<usize>, Vec<usize>)> =
        (0..ts.folds).map(|f| (folds.train_indices(f), folds.test_indices(f))).collect();
    for (f, (train_idx, _)) in splits.iter().enumerate() {
        let absent = absent_classes(corpus, train_idx);
        if !absent.is_empty() {
            let names: Vec<&str> = absent.iter().map(|&l| corpus.label_names[l].as_str()).collect();
            ctx.note(format!(
                "warning: fold {f}: classes absent from the training part are kept with no positive examples: {}",
                names.join(", ")
            ));
        }
    }
    let results: Vec<Result<FoldResult, CliError>> = if ts.parallel_folds {
        std::thread::scope(|s| {
            let handles: Vec<_> = splits
                .iter()
                .enumerate()
                .map(|(f, (tr, te))| {
                    let (prepared, ts) = (&prepared, &ts);
                    s.spawn(move || run_fold(f, corpus, tr, te, prepared, ts))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("fold thread panicked")).collect()
        })
    } else {
        splits.iter().enumerate().map(|(f, (tr, te))| run_fold(f, corpus, tr, te, &prepared, &ts)).collect()
    };
    let results = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let (mean, std) = mean_std(&results.iter().map(|r| r.accuracy).collect::<Vec<_>>());
    let mut out = String::from("fold\ttrain_docs\ttest_docs\taccuracy\n");
    for r in &results {
        out.push_str(&format!("{}\t{}\t{}\t{:.6}\n", r.fold, r.train_docs, r.test_docs, r.accuracy));
        ctx.note(format!("fold {}: accuracy {:.4}", r.fold, r.accuracy));
    }
    out.push_str(&format!("mean\t\t\t{mean:.6}\nstd\t\t\t{std:.6}\n"));
    fs::write(ctx.out_dir.join(CV_FILE), out)?;
    ctx.note(format!("mean accuracy {mean:.4} (std {std:.4})"));
    manifest.outputs = vec![CV_FILE.into()];
    manifest.timings.insert("total_seconds".into(), clock.elapsed().as_secs_f64());
    Ok(manifest)
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

fn load_model(path: &str, manifest: &mut RunManifest) -> Result<FittedModel, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Validation(format!("cannot read model {path}: {e}")))?;
    manifest.inputs.insert("model".into(), sha256_file(Path::new(path))?);
    Ok(FittedModel::from_json(&text)?)
}

fn predict(settings: &Settings, ctx: &Context) -> Result<RunManifest, CliError> {
    let mut r = Reader::new(settings);
    let model_path = r.required("model");
    let label = r.optional("label_column");
    let mut source = read_source(&mut r, label);
    let seed: u64 = r.get("seed", 1);
    let workers: usize = r.get("workers", 1);
    r.check(workers > 0, || "workers must be at least 1".into());
    r.finish()?;

    let mut manifest = RunManifest::new("predict", settings, seed);
    let clock = Instant::now();
    let model = load_model(&model_path, &mut manifest)?;
    if source.covariate_columns.is_empty() {
        source.covariate_columns = model.covariate_encoding.columns.iter().map(|c| c.name.clone()).collect();
    }
    let raw = load_raw_corpus(&source)?;
    manifest.corpus_fingerprint = Some(corpus_fingerprint(&raw));
    ctx.verify(&manifest)?;
    let (docs, x) = encode_for_model(&raw, &model)?;
    let preds = model.predict(&docs, &x, seed, &Workers::new(workers)?)?;

    let mut out = String::from("doc_id\tpredicted_label");
    for name in &model.label_names {
        out.push_str(&format!("\tp_{name}"));
    }
    out.push('\n');
    for (d, p) in preds.iter().enumerate() {
        out.push_str(&format!("{}\t{}", raw.doc_ids[d], model.label_names[p.label]));
        for q in &p.probabilities {
            out.push_str(&format!("\t{q:.6}"));
        }
        out.push('\n');
    }
    fs::write(ctx.out_dir.join(PREDICTIONS_FILE), out)?;
    if let Some(labels) = &raw.labels {
        let hits = preds.iter().zip(labels).filter(|(p, y)| model.label_names[p.label] == **y).count();
        ctx.note(format!("accuracy {:.4} ({hits}/{})", hits as f64 / labels.len().max(1) as f64, labels.len()));
    }
    manifest.outputs = vec![PREDICTIONS_FILE.into()];
    manifest.timings.insert("total_seconds".into(), clock.elapsed().as_secs_f64());
    Ok(manifest)
}

/// Token ids and covariates of a raw corpus under the model's vocabulary
/// and covariate encoding.
pub fn encode_for_model(raw: &RawCorpus, model: &FittedModel) -> Result<(Vec<Vec<u32>>, nalgebra::DMatrix<f64>), CliError> {
    let none = Stoplist::default();
    let docs = raw.texts.iter().map(|t| model.vocabulary.encode(&tokenize(t, &none))).collect();
    let x = model.covariate_encoding.apply(&raw.covariates)?;
    Ok((docs, x))
}

fn report(settings: &Settings, ctx: &Context) -> Result<RunManifest, CliError> {
    let mut r = Reader::new(settings);
    let model_path = r.required("model");
    let top_n: usize = r.get("top_n", 10);
    let bins: usize = r.get("bins", DEFAULT_HISTOGRAM_BINS);
    r.check(top_n > 0, || "top_n must be at least 1".into());
    r.check(bins > 0, || "bins must be at least 1".into());
    r.finish()?;
    let mut manifest = RunManifest::new("report", settings, 0);
    let clock = Instant::now();
    let model = load_model(&model_path, &mut manifest)?;
    ctx.verify(&manifest)?;
    let rep = Report::new(&model, top_n, bins)?;
    let files: BTreeMap<&str, String> = BTreeMap::from([
        ("topics.tsv", rep.topics_tsv()),
        ("coefficients.tsv", rep.coefficients_tsv()),
        ("histogram.tsv", rep.histogram_tsv()),
    ]);
    for (name, body) in &files {
        fs::write(ctx.out_dir.join(name), body)?;
    }
    manifest.outputs = files.keys().map(|s| s.to_string()).collect();
    manifest.timings.insert("total_seconds".into(), clock.elapsed().as_secs_f64());
    Ok(manifest)
}
