use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use dolda::corpus::RawCorpus;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;
use crate::settings::Settings;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything needed to repeat a command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    pub settings: Settings,
    /// Content hash of the documents, labels and covariates read.
    pub corpus_fingerprint: Option<String>,
    /// Input files other than the corpus, with their hashes.
    pub inputs: BTreeMap<String, String>,
    pub seed: u64,
    pub code_version: String,
    pub timings: BTreeMap<String, f64>,
    /// Files written, relative to the manifest's directory.
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, settings: &Settings, seed: u64) -> Self {
        Self {
            schema_version: MANIFEST_SCHEMA_VERSION,
            command: command.to_string(),
            settings: settings.clone(),
            corpus_fingerprint: None,
            inputs: BTreeMap::new(),
            seed,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            timings: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read manifest {}: {e}", path.display())))?;
        let m: Self = serde_json::from_str(&text)?;
        if m.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(CliError::Validation(format!(
                "manifest schema {} (expected {MANIFEST_SCHEMA_VERSION})",
                m.schema_version
            )));
        }
        Ok(m)
    }
}

fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(2 * bytes.len());
    for b in bytes {
        let _ = write!(s, "{b:02x}");
    }
    s
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

/// Hash of the corpus content, independent of its on-disk layout.
pub fn corpus_fingerprint(raw: &RawCorpus) -> String {
    let mut h = Sha256::new();
    let mut field = |s: &str| {
        h.update((s.len() as u64).to_le_bytes());
        h.update(s.as_bytes());
    };
    for d in 0..raw.len() {
        field(&raw.doc_ids[d]);
        field(&raw.texts[d]);
        field(raw.labels.as_ref().map_or("", |l| l[d].as_str()));
        for v in &raw.covariates.rows[d] {
            field(v);
        }
    }
    raw.covariates.names.iter().for_each(|n| field(n));
    hex(&h.finalize())
}
