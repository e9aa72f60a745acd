//! Text ingestion: tokenization, vocabulary pruning, encoding and
//! cross-validation folds.

mod source;

pub use source::{load_raw_corpus, CorpusSource, RawCorpus, SourceLayout};

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Phase, RngStream};

const BUNDLED_STOPLIST: &str = include_str!("stoplist.txt");

/// Set of words removed during tokenization.
#[derive(Clone, Debug, Default)]
pub struct Stoplist {
    words: HashSet<String>,
}

impl Stoplist {
    /// The bundled English stoplist.
    pub fn english() -> Self {
        Self::parse(BUNDLED_STOPLIST)
    }

    /// One word per line; blank lines are ignored.
    pub fn parse(text: &str) -> Self {
        let words = text
            .lines()
            .map(|l| l.trim().to_lowercase())
            .filter(|l| !l.is_empty())
            .collect();
        Self { words }
    }

    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self { words: words.into_iter().map(|w| w.into().to_lowercase()).collect() }
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Lowercase alphabetic tokens of `text` with stoplisted words removed.
/// Any non-letter character (punctuation, digits, whitespace) separates tokens.
pub fn tokenize(text: &str, stoplist: &Stoplist) -> Vec<String> {
    text.split(|c: char| !c.is_alphabetic())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .filter(|t| !stoplist.contains(t))
        .collect()
}

/// Dense word-type ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "Vec<String>", try_from = "Vec<String>")]
pub struct Vocabulary {
    types: Vec<String>,
    index: HashMap<String, u32>,
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.types
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    fn try_from(types: Vec<String>) -> Result<Self> {
        Vocabulary::from_types(types)
    }
}

impl Vocabulary {
    /// Builds a vocabulary from an ordered list of distinct words.
    pub fn from_types(types: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(types.len());
        for (i, t) in types.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate word type {t:?}")));
            }
        }
        Ok(Self { types, index })
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: u32) -> &str {
        &self.types[id as usize]
    }

    pub fn types(&self) -> &[String] {
        &self.types
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().filter_map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<&str> {
        ids.iter().map(|&i| self.word(i)).collect()
    }
}

/// Builds the vocabulary, pruning the least frequent word types whose
/// cumulative token count stays within `rare_mass` of all tokens.
///
/// Types are pruned in ascending order of frequency (ties lexicographic)
/// until the next one would push the pruned mass above the budget. Kept types
/// are numbered by descending frequency, ties lexicographic.
pub fn build_vocabulary<S: AsRef<str>>(
    token_docs: &[Vec<S>],
    stoplist: &Stoplist,
    rare_mass: f64,
) -> Result<Vocabulary> {
    if !(0.0..1.0).contains(&rare_mass) {
        return Err(Error::InvalidArgument(format!("rare_mass {rare_mass} not in [0, 1)")));
    }
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for doc in token_docs {
        for t in doc {
            let t = t.as_ref();
            if !stoplist.contains(t) {
                *counts.entry(t).or_default() += 1;
            }
        }
    }
    let total: u64 = counts.values().sum();
    let budget = rare_mass * total as f64;

    let mut ascending: Vec<(&str, u64)> = counts.into_iter().collect();
    ascending.sort_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(b.0)));
    let mut pruned_mass = 0u64;
    let mut first_kept = 0;
    for (_, c) in &ascending {
        if (pruned_mass + c) as f64 <= budget {
            pruned_mass += c;
            first_kept += 1;
        } else {
            break;
        }
    }
    let mut kept: Vec<(&str, u64)> = ascending[first_kept..].to_vec();
    if kept.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    Vocabulary::from_types(kept.into_iter().map(|(w, _)| w.to_string()).collect())
}

/// Raw (string-valued) covariates, one row per document.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CovariateTable {
    pub names: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CovariateTable {
    pub fn empty(rows: usize) -> Self {
        Self { names: Vec::new(), rows: vec![Vec::new(); rows] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateKind {
    Numeric,
    /// One 0/1 column per level, levels sorted.
    Categorical { levels: Vec<String> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovariateColumn {
    pub name: String,
    #[serde(flatten)]
    pub kind: CovariateKind,
}

/// How raw covariate columns map onto the numeric design columns.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CovariateEncoding {
    pub columns: Vec<CovariateColumn>,
}

impl CovariateEncoding {
    /// Infers column kinds: a column whose every value parses as a number is
    /// numeric, anything else is one-hot encoded.
    pub fn infer(table: &CovariateTable, force_categorical: &[String]) -> Self {
        let columns = table
            .names
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let numeric = !force_categorical.contains(name)
                    && table.rows.iter().all(|r| r[j].trim().parse::<f64>().map(f64::is_finite).unwrap_or(false));
                let kind = if numeric {
                    CovariateKind::Numeric
                } else {
                    let levels: BTreeSet<&str> = table.rows.iter().map(|r| r[j].trim()).collect();
                    CovariateKind::Categorical { levels: levels.into_iter().map(String::from).collect() }
                };
                CovariateColumn { name: name.clone(), kind }
            })
            .collect();
        Self { columns }
    }

    /// Number of design columns produced.
    pub fn width(&self) -> usize {
        self.columns
            .iter()
            .map(|c| match &c.kind {
                CovariateKind::Numeric => 1,
                CovariateKind::Categorical { levels } => levels.len(),
            })
            .sum()
    }

    /// Names of the design columns, e.g. `color=red`.
    pub fn feature_names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.width());
        for c in &self.columns {
            match &c.kind {
                CovariateKind::Numeric => out.push(c.name.clone()),
                CovariateKind::Categorical { levels } => {
                    out.extend(levels.iter().map(|l| format!("{}={}", c.name, l)))
                }
            }
        }
        out
    }

    /// Encodes a table whose column set must match this encoding. Categorical
    /// levels never seen during training encode as all zeros.
    pub fn apply(&self, table: &CovariateTable) -> Result<DMatrix<f64>> {
        let expected: BTreeSet<&str> = self.columns.iter().map(|c| c.name.as_str()).collect();
        let given: BTreeSet<&str> = table.names.iter().map(String::as_str).collect();
        if expected != given {
            let unknown: Vec<&str> = given.difference(&expected).copied().collect();
            let missing: Vec<&str> = expected.difference(&given).copied().collect();
            return Err(Error::InvalidArgument(format!(
                "covariate columns do not match the model (unknown: {unknown:?}, missing: {missing:?})"
            )));
        }
        let position: HashMap<&str, usize> = table.names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let mut x = DMatrix::zeros(table.rows.len(), self.width());
        for (d, row) in table.rows.iter().enumerate() {
            let mut col = 0;
            for c in &self.columns {
                let raw = row[position[c.name.as_str()]].trim();
                match &c.kind {
                    CovariateKind::Numeric => {
                        x[(d, col)] = raw.parse::<f64>().map_err(|_| {
                            Error::InvalidArgument(format!("covariate {} value {raw:?} is not numeric", c.name))
                        })?;
                        col += 1;
                    }
                    CovariateKind::Categorical { levels } => {
                        if let Ok(i) = levels.binary_search_by(|l| l.as_str().cmp(raw)) {
                            x[(d, col + i)] = 1.0;
                        }
                        col += levels.len();
                    }
                }
            }
        }
        Ok(x)
    }
}

/// Model-ready documents.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub docs: Vec<Vec<u32>>,
    pub labels: Vec<usize>,
    /// D×P covariates without an intercept column.
    pub covariates: DMatrix<f64>,
    pub label_names: Vec<String>,
    pub vocab_size: usize,
    pub doc_ids: Vec<String>,
}

impl Corpus {
    pub fn num_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn num_labels(&self) -> usize {
        self.label_names.len()
    }

    pub fn num_covariates(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn num_tokens(&self) -> usize {
        self.docs.iter().map(Vec::len).sum()
    }

    pub fn covariate_row(&self, d: usize) -> Vec<f64> {
        self.covariates.row(d).iter().copied().collect()
    }

    /// Indices of documents with no tokens left after pruning.
    pub fn empty_documents(&self) -> Vec<usize> {
        self.docs.iter().enumerate().filter(|(_, d)| d.is_empty()).map(|(i, _)| i).collect()
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<()> {
        let d = self.docs.len();
        if self.labels.len() != d || self.covariates.nrows() != d || self.doc_ids.len() != d {
            return Err(Error::InvalidArgument("docs, labels, covariates and ids differ in length".into()));
        }
        if let Some(&l) = self.labels.iter().find(|&&l| l >= self.label_names.len()) {
            return Err(Error::InvalidArgument(format!("label id {l} out of range")));
        }
        if self.docs.iter().flatten().any(|&w| w as usize >= self.vocab_size) {
            return Err(Error::InvalidArgument("token id out of vocabulary range".into()));
        }
        Ok(())
    }

    /// Sub-corpus with the given documents, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Corpus {
        let mut covariates = DMatrix::zeros(indices.len(), self.num_covariates());
        for (r, &i) in indices.iter().enumerate() {
            covariates.set_row(r, &self.covariates.row(i));
        }
        Corpus {
            docs: indices.iter().map(|&i| self.docs[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            covariates,
            label_names: self.label_names.clone(),
            vocab_size: self.vocab_size,
            doc_ids: indices.iter().map(|&i| self.doc_ids[i].clone()).collect(),
        }
    }
}

/// Result of [`encode`].
#[derive(Clone, Debug)]
pub struct EncodedCorpus {
    pub corpus: Corpus,
    /// Original positions of the documents that were kept.
    pub kept: Vec<usize>,
    pub covariate_encoding: CovariateEncoding,
    /// Labels dropped for having too few documents.
    pub dropped_labels: Vec<String>,
}

/// Default minimum number of documents a class needs to be kept.
pub const DEFAULT_MIN_CLASS_DOCS: usize = 10;

/// Encodes tokenized, labelled documents against `vocab`.
///
/// Out-of-vocabulary tokens are dropped; documents that end up empty are kept
/// (see [`Corpus::empty_documents`]). Classes with fewer than
/// `min_class_docs` documents are removed together with their documents.
/// Label ids follow the lexicographic order of the label names.
pub fn encode<S: AsRef<str>>(
    doc_ids: &[String],
    token_docs: &[Vec<S>],
    labels: &[String],
    covariates: &CovariateTable,
    vocab: &Vocabulary,
    min_class_docs: usize,
    categorical: &[String],
) -> Result<EncodedCorpus> {
    let n = token_docs.len();
    if labels.len() != n || covariates.rows.len() != n || doc_ids.len() != n {
        return Err(Error::InvalidArgument("documents, labels and covariate rows must align".into()));
    }
    let mut class_sizes: BTreeMap<&str, usize> = BTreeMap::new();
    for l in labels {
        *class_sizes.entry(l.as_str()).or_default() += 1;
    }
    let label_names: Vec<String> =
        class_sizes.iter().filter(|(_, &c)| c >= min_class_docs).map(|(l, _)| l.to_string()).collect();
    let dropped_labels: Vec<String> =
        class_sizes.iter().filter(|(_, &c)| c < min_class_docs).map(|(l, _)| l.to_string()).collect();
    if label_names.is_empty() {
        return Err(Error::InvalidArgument(format!("no class has at least {min_class_docs} documents")));
    }
    let label_id: HashMap<&str, usize> = label_names.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();

    let kept: Vec<usize> = (0..n).filter(|&d| label_id.contains_key(labels[d].as_str())).collect();
    let kept_table = CovariateTable {
        names: covariates.names.clone(),
        rows: kept.iter().map(|&d| covariates.rows[d].clone()).collect(),
    };
    let covariate_encoding = CovariateEncoding::infer(&kept_table, categorical);
    let x = covariate_encoding.apply(&kept_table)?;

    let corpus = Corpus {
        docs: kept
            .iter()
            .map(|&d| token_docs[d].iter().filter_map(|t| vocab.id(t.as_ref())).collect())
            .collect(),
        labels: kept.iter().map(|&d| label_id[labels[d].as_str()]).collect(),
        covariates: x,
        label_names,
        vocab_size: vocab.len(),
        doc_ids: kept.iter().map(|&d| doc_ids[d].clone()).collect(),
    };
    Ok(EncodedCorpus { corpus, kept, covariate_encoding, dropped_labels })
}

/// Fold id of every document.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldAssignment {
    pub fold_of_doc: Vec<usize>,
    pub folds: usize,
}

impl FoldAssignment {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of_doc.len()).filter(|&d| self.fold_of_doc[d] == fold).collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of_doc.len()).filter(|&d| self.fold_of_doc[d] != fold).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.folds];
        for &f in &self.fold_of_doc {
            s[f] += 1;
        }
        s
    }
}

/// Stratified assignment of documents to `folds` folds.
///
/// Each class is shuffled and dealt round-robin, continuing the deal across
/// classes, so fold sizes differ by at most one overall and per class.
pub fn split_folds(labels: &[usize], folds: usize, seed: u64) -> Result<FoldAssignment> {
    let d = labels.len();
    if folds < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {folds}")));
    }
    if folds > d {
        return Err(Error::InvalidArgument(format!("{folds} folds for {d} documents")));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut rng = RngStream::for_entity(seed, 0, Phase::Folds, 0);
    let mut fold_of_doc = vec![0; d];
    let mut next = 0;
    for members in by_class.values_mut() {
        members.shuffle(&mut rng);
        for &doc in members.iter() {
            fold_of_doc[doc] = next % folds;
            next += 1;
        }
    }
    Ok(FoldAssignment { fold_of_doc, folds })
}
