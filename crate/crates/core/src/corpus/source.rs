use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::CovariateTable;
use crate::error::{Error, Result};

/// Where the documents live.
#[derive(Clone, Debug, PartialEq)]
pub enum SourceLayout {
    /// One delimiter-separated file with a text column.
    Table { path: PathBuf, text_column: String },
    /// A directory of UTF-8 text files named by doc id (optionally with a
    /// `.txt` suffix) plus a delimiter-separated metadata file.
    Directory { text_dir: PathBuf, metadata: PathBuf },
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSource {
    pub layout: SourceLayout,
    pub delimiter: u8,
    /// Row numbers are used as ids when absent.
    pub doc_id_column: Option<String>,
    pub label_column: Option<String>,
    pub covariate_columns: Vec<String>,
}

/// Untokenized documents with their metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct RawCorpus {
    pub doc_ids: Vec<String>,
    pub texts: Vec<String>,
    pub labels: Option<Vec<String>>,
    pub covariates: CovariateTable,
}

impl RawCorpus {
    pub fn len(&self) -> usize {
        self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }
}

struct Table {
    columns: HashMap<String, usize>,
    rows: Vec<csv::StringRecord>,
}

impl Table {
    fn read(path: &Path, delimiter: u8) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().delimiter(delimiter).flexible(false).from_path(path)?;
        let columns = reader
            .headers()?
            .iter()
            .enumerate()
            .map(|(i, h)| (h.trim().to_string(), i))
            .collect();
        let rows = reader.records().collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self { columns, rows })
    }

    fn column(&self, name: &str) -> Result<Vec<String>> {
        let j = *self.columns.get(name).ok_or_else(|| Error::MissingColumn(name.to_string()))?;
        Ok(self.rows.iter().map(|r| r.get(j).unwrap_or("").to_string()).collect())
    }
}

/// Reads the documents and metadata described by `source`.
pub fn load_raw_corpus(source: &CorpusSource) -> Result<RawCorpus> {
    let (table, texts) = match &source.layout {
        SourceLayout::Table { path, text_column } => {
            let table = Table::read(path, source.delimiter)?;
            let texts = table.column(text_column)?;
            (table, texts)
        }
        SourceLayout::Directory { text_dir, metadata } => {
            let table = Table::read(metadata, source.delimiter)?;
            let id_column = source
                .doc_id_column
                .as_deref()
                .ok_or_else(|| Error::InvalidArgument("directory corpora need a doc id column".into()))?;
            let texts = table
                .column(id_column)?
                .iter()
                .map(|id| read_document(text_dir, id))
                .collect::<Result<Vec<_>>>()?;
            (table, texts)
        }
    };
    let doc_ids = match &source.doc_id_column {
        Some(c) => table.column(c)?,
        None => (0..texts.len()).map(|i| i.to_string()).collect(),
    };
    let labels = source.label_column.as_deref().map(|c| table.column(c)).transpose()?;
    let columns = source
        .covariate_columns
        .iter()
        .map(|c| table.column(c))
        .collect::<Result<Vec<_>>>()?;
    let rows = (0..texts.len()).map(|d| columns.iter().map(|c| c[d].clone()).collect()).collect();
    Ok(RawCorpus {
        doc_ids,
        texts,
        labels,
        covariates: CovariateTable { names: source.covariate_columns.clone(), rows },
    })
}

fn read_document(dir: &Path, id: &str) -> Result<String> {
    let plain = dir.join(id);
    if plain.is_file() {
        return Ok(fs::read_to_string(plain)?);
    }
    let with_ext = dir.join(format!("{id}.txt"));
    fs::read_to_string(&with_ext)
        .map_err(|e| Error::InvalidArgument(format!("document {id}: {} ({e})", with_ext.display())))
}
