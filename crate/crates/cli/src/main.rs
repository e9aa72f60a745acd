mod commands;
mod error;
mod manifest;
mod settings;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{execute, Context, PATH_KEYS};
use error::CliError;
use manifest::{RunManifest, MANIFEST_FILE};
use settings::Settings;

/// Supervised topic model training, prediction and evaluation.
#[derive(Parser)]
#[command(name = "dolda", version)]
struct Cli {
    /// Suppress progress messages.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model; writes model.json, trace.tsv and manifest.json.
    Train {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Override a config entry, e.g. `--set seed=3`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Score documents with a fitted model.
    Predict {
        #[arg(short, long)]
        model: PathBuf,
        /// Delimiter-separated file with a text column.
        #[arg(long, conflicts_with_all = ["text_dir", "metadata"])]
        corpus: Option<PathBuf>,
        /// Directory of text files named by document id.
        #[arg(long, requires = "metadata")]
        text_dir: Option<PathBuf>,
        #[arg(long, requires = "text_dir")]
        metadata: Option<PathBuf>,
        #[arg(long)]
        text_column: Option<String>,
        #[arg(long)]
        id_column: Option<String>,
        /// When given, accuracy against this column is reported.
        #[arg(long)]
        label_column: Option<String>,
        /// Comma-separated covariate columns; defaults to the model's.
        #[arg(long)]
        covariates: Option<String>,
        #[arg(long)]
        delimiter: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// K-fold cross-validated accuracy.
    Cv {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        folds: Option<usize>,
        /// Run the folds concurrently.
        #[arg(long)]
        parallel_folds: bool,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Top words, coefficient tables and coefficient histograms.
    Report {
        #[arg(short, long)]
        model: PathBuf,
        #[arg(long)]
        top_n: Option<usize>,
        #[arg(long)]
        bins: Option<usize>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Repeat the command recorded in a manifest.
    Rerun {
        manifest: PathBuf,
        /// Defaults to the manifest's directory.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

fn with_overrides(mut settings: Settings, overrides: &[String]) -> Result<Settings, CliError> {
    let cwd = std::env::current_dir()?;
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| CliError::Validation(format!("--set expects KEY=VALUE, got {o:?}")))?;
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        let v = if PATH_KEYS.contains(&k.as_str()) && !matches!(v.as_str(), "english" | "none") {
            settings::absolute(&cwd, &v).display().to_string()
        } else {
            v
        };
        settings.insert(k, v);
    }
    Ok(settings)
}

fn put(settings: &mut Settings, key: &str, value: Option<impl ToString>) {
    if let Some(v) = value {
        settings.insert(key.to_string(), v.to_string());
    }
}

fn put_path(settings: &mut Settings, key: &str, value: Option<&Path>) -> Result<(), CliError> {
    let cwd = std::env::current_dir()?;
    put(settings, key, value.map(|p| settings::absolute(&cwd, &p.display().to_string()).display().to_string()));
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let quiet = cli.quiet;
    let ctx = |out_dir: PathBuf, expect: Option<RunManifest>| Context { out_dir, expect, quiet };
    match cli.command {
        Command::Train { config, output, overrides } => {
            let s = with_overrides(settings::load(&config, PATH_KEYS)?, &overrides)?;
            execute("train", &s, &ctx(output, None))?;
        }
        Command::Cv { config, output, folds, parallel_folds, overrides } => {
            let mut s = with_overrides(settings::load(&config, PATH_KEYS)?, &overrides)?;
            put(&mut s, "folds", folds);
            if parallel_folds {
                s.insert("parallel_folds".into(), "true".into());
            }
            execute("cv", &s, &ctx(output, None))?;
        }
        Command::Predict {
            model,
            corpus,
            text_dir,
            metadata,
            text_column,
            id_column,
            label_column,
            covariates,
            delimiter,
            seed,
            workers,
            output,
        } => {
            if corpus.is_none() && text_dir.is_none() {
                return Err(CliError::Validation("predict needs --corpus or --text-dir with --metadata".into()));
            }
            let mut s = Settings::new();
            put_path(&mut s, "model", Some(&model))?;
            put_path(&mut s, "corpus", corpus.as_deref())?;
            put_path(&mut s, "text_dir", text_dir.as_deref())?;
            put_path(&mut s, "metadata", metadata.as_deref())?;
            put(&mut s, "text_column", text_column);
            put(&mut s, "id_column", id_column);
            put(&mut s, "label_column", label_column);
            put(&mut s, "covariates", covariates);
            put(&mut s, "delimiter", delimiter);
            put(&mut s, "seed", seed);
            put(&mut s, "workers", workers);
            execute("predict", &s, &ctx(output, None))?;
        }
        Command::Report { model, top_n, bins, output } => {
            let mut s = Settings::new();
            put_path(&mut s, "model", Some(&model))?;
            put(&mut s, "top_n", top_n);
            put(&mut s, "bins", bins);
            execute("report", &s, &ctx(output, None))?;
        }
        Command::Rerun { manifest, output } => {
            let path = if manifest.is_dir() { manifest.join(MANIFEST_FILE) } else { manifest };
            let m = RunManifest::read(&path)?;
            let out = output.unwrap_or_else(|| path.parent().unwrap_or(Path::new(".")).to_path_buf());
            execute(&m.command.clone(), &m.settings.clone(), &ctx(out, Some(m)))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
