//! Document model and the `Adocs` / `Mdocs` indexes over a chunked corpus.
//!
//! `adocs(x)` holds the chunks cut from entity `x`'s own article, `mdocs(x)`
//! the chunks in which `x` appears as a mention. Both are stored as sorted
//! sets of document positions; positions follow `DocId` order.

mod chunk;
mod pairs;

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use chunk::{chunk_article, Article, Link, MAX_CHUNK_TOKENS};
pub use pairs::{
    build_pretraining_corpus, build_query_set, read_pairs, select_positive, select_strong_negative,
    write_pairs, BuildReport, DropReason, PairConfig, PositiveType, QueryEntry, TrainingPair,
    POSITIVE_TYPE_WEIGHTS,
};

use crate::text::tokenize;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid link span {start}..{end} for `{entity}` in article `{article}`")]
    InvalidSpan { article: String, entity: String, start: usize, end: usize },
    #[error("document {0} is invalid: {1}")]
    InvalidDocument(DocId, String),
    #[error("chunks of article `{0}` are not contiguous from 0")]
    NonContiguousChunks(String),
    #[error("duplicate document {0}")]
    DuplicateDocument(DocId),
    #[error("sample size {requested} exceeds {eligible} eligible triples")]
    SampleTooLarge { requested: usize, eligible: usize },
    #[error("{file} line {line}: {message}")]
    Parse { file: String, line: usize, message: String },
    #[error(transparent)]
    Kg(#[from] crate::kg::KgError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `(article entity id, chunk index)`; serialized as a two-element array.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "(String, u32)", into = "(String, u32)")]
pub struct DocId {
    pub article: String,
    pub chunk: u32,
}

impl DocId {
    pub fn new(article: impl Into<String>, chunk: u32) -> Self {
        Self { article: article.into(), chunk }
    }
}

impl From<(String, u32)> for DocId {
    fn from((article, chunk): (String, u32)) -> Self {
        Self { article, chunk }
    }
}

impl From<DocId> for (String, u32) {
    fn from(d: DocId) -> Self {
        (d.article, d.chunk)
    }
}

impl std::fmt::Display for DocId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}#{}", self.article, self.chunk)
    }
}

/// An entity occurrence covering tokens `start..end` of a document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub entity: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: DocId,
    /// Normalized tokens joined by single spaces.
    pub text: String,
    pub tokens: usize,
    pub mentions: Vec<Mention>,
}

impl Document {
    pub fn mentions_entity(&self, entity: &str) -> bool {
        self.mentions.iter().any(|m| m.entity == entity)
    }
}

/// One line of `corpus.jsonl`.
#[derive(Debug, Serialize, Deserialize)]
struct DocumentRecord {
    article: String,
    chunk: u32,
    text: String,
    mentions: Vec<Mention>,
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    documents: Vec<Document>,
    positions: HashMap<DocId, usize>,
    adocs: HashMap<String, BTreeSet<usize>>,
    mdocs: HashMap<String, BTreeSet<usize>>,
}

static EMPTY: BTreeSet<usize> = BTreeSet::new();

impl Corpus {
    /// Sorts documents by id, validates them and builds the mention indexes.
    pub fn new(mut documents: Vec<Document>) -> Result<Self, CorpusError> {
        documents.sort_by(|a, b| a.id.cmp(&b.id));
        for (i, doc) in documents.iter().enumerate() {
            let counted = tokenize(&doc.text).len();
            if counted != doc.tokens {
                return Err(CorpusError::InvalidDocument(
                    doc.id.clone(),
                    format!("token count {} but text has {counted}", doc.tokens),
                ));
            }
            if doc.tokens > MAX_CHUNK_TOKENS {
                return Err(CorpusError::InvalidDocument(doc.id.clone(), format!("{} tokens", doc.tokens)));
            }
            if let Some(m) = doc.mentions.iter().find(|m| m.start >= m.end || m.end > doc.tokens) {
                return Err(CorpusError::InvalidDocument(
                    doc.id.clone(),
                    format!("mention of `{}` at {}..{}", m.entity, m.start, m.end),
                ));
            }
            let expected_chunk = match i.checked_sub(1).map(|p| &documents[p].id) {
                Some(prev) if prev == &doc.id => return Err(CorpusError::DuplicateDocument(doc.id.clone())),
                Some(prev) if prev.article == doc.id.article => prev.chunk + 1,
                _ => 0,
            };
            if doc.id.chunk != expected_chunk {
                return Err(CorpusError::NonContiguousChunks(doc.id.article.clone()));
            }
        }

        let mut positions = HashMap::with_capacity(documents.len());
        let mut adocs: HashMap<String, BTreeSet<usize>> = HashMap::new();
        let mut mdocs: HashMap<String, BTreeSet<usize>> = HashMap::new();
        for (i, doc) in documents.iter().enumerate() {
            positions.insert(doc.id.clone(), i);
            adocs.entry(doc.id.article.clone()).or_default().insert(i);
            for m in &doc.mentions {
                mdocs.entry(m.entity.clone()).or_default().insert(i);
            }
        }
        Ok(Self { documents, positions, adocs, mdocs })
    }

    /// Chunks every article (in parallel) and indexes the result.
    pub fn from_articles(articles: &[Article]) -> Result<Self, CorpusError> {
        let chunks: Result<Vec<Vec<Document>>, CorpusError> =
            articles.par_iter().map(|a| chunk_article(&a.entity, &a.text, &a.links)).collect();
        Self::new(chunks?.into_iter().flatten().collect())
    }

    /// Documents in ascending `DocId` order.
    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn position(&self, id: &DocId) -> Option<usize> {
        self.positions.get(id).copied()
    }

    pub fn get(&self, id: &DocId) -> Option<&Document> {
        self.position(id).map(|i| &self.documents[i])
    }

    pub fn adocs(&self, entity: &str) -> &BTreeSet<usize> {
        self.adocs.get(entity).unwrap_or(&EMPTY)
    }

    pub fn mdocs(&self, entity: &str) -> &BTreeSet<usize> {
        self.mdocs.get(entity).unwrap_or(&EMPTY)
    }

    pub fn has_article(&self, entity: &str) -> bool {
        !self.adocs(entity).is_empty()
    }
}

pub fn read_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let file = path.display().to_string();
    let reader = BufReader::new(fs::File::open(path)?);
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DocumentRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            file: file.clone(),
            line: i + 1,
            message: e.to_string(),
        })?;
        let tokens = tokenize(&rec.text).len();
        docs.push(Document { id: DocId::new(rec.article, rec.chunk), text: rec.text, tokens, mentions: rec.mentions });
    }
    Corpus::new(docs)
}

pub fn write_corpus(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for d in corpus.documents() {
        let rec = DocumentRecord {
            article: d.id.article.clone(),
            chunk: d.id.chunk,
            text: d.text.clone(),
            mentions: d.mentions.clone(),
        };
        writeln!(w, "{}", serde_json::to_string(&rec).expect("serializable"))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_articles(path: &Path) -> Result<Vec<Article>, CorpusError> {
    let file = path.display().to_string();
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            file: file.clone(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_articles(articles: &[Article], path: &Path) -> Result<(), CorpusError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for a in articles {
        writeln!(w, "{}", serde_json::to_string(a).expect("serializable"))?;
    }
    w.flush()?;
    Ok(())
}
