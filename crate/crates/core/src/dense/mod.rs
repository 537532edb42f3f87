//! Document embedding store with exact and clustered inner-product search.
//!
//! `embeddings.bin` layout (little-endian):
//!
//! ```text
//! magic "KGCE" | version u32 | dim u32 | count u64
//! count × dim f32, row-major
//! count × (u32 byte length, UTF-8 article id, u32 chunk)
//! ```
//!
//! Rows are sorted by `DocId`, so ties in score are broken by row position.

mod clustered;

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

pub use clustered::{ClusteredIndex, ClusterConfig};

use crate::binio::*;
use crate::corpus::{Corpus, DocId};
use crate::encoder::DualEncoder;
use crate::scalar::{desc_then_asc, dot, Scalar};

pub const EMBEDDINGS_MAGIC: &[u8; 4] = b"KGCE";
pub const EMBEDDINGS_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DenseError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("document ids must be unique and sorted")]
    UnsortedIds,
    #[error("invalid cluster configuration: {0}")]
    InvalidClusters(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore<T> {
    dim: usize,
    ids: Vec<DocId>,
    vectors: Vec<T>,
}

impl<T: Scalar> EmbeddingStore<T> {
    pub fn new(dim: usize, ids: Vec<DocId>, vectors: Vec<T>) -> Result<Self, DenseError> {
        if vectors.len() != ids.len() * dim {
            return Err(DenseError::DimMismatch { expected: ids.len() * dim, got: vectors.len() });
        }
        if ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DenseError::UnsortedIds);
        }
        Ok(Self { dim, ids, vectors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> &[DocId] {
        &self.ids
    }

    pub fn vectors(&self) -> &[T] {
        &self.vectors
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    fn check_dim(&self, query: &[T]) -> Result<(), DenseError> {
        if query.len() != self.dim {
            return Err(DenseError::DimMismatch { expected: self.dim, got: query.len() });
        }
        Ok(())
    }

    /// Top-`k` rows among `rows` by inner product, descending; ties by row position.
    pub(crate) fn top_k_of<I>(&self, query: &[T], rows: I, k: usize) -> Vec<(usize, T)>
    where
        I: IntoIterator<Item = usize>,
    {
        let mut scored: Vec<(usize, T)> = rows.into_iter().map(|r| (r, dot(query, self.row(r)))).collect();
        let cmp = |a: &(usize, T), b: &(usize, T)| desc_then_asc((a.1, a.0), (b.1, b.0));
        if k < scored.len() {
            scored.select_nth_unstable_by(k, cmp);
            scored.truncate(k);
        }
        scored.sort_by(cmp);
        scored
    }

    /// Exact top-`k` as `(row position, score)`.
    pub fn search_exact_positions(&self, query: &[T], k: usize) -> Result<Vec<(usize, T)>, DenseError> {
        self.check_dim(query)?;
        Ok(self.top_k_of(query, 0..self.count(), k))
    }

    /// Exact top-`k` by inner product; `k > count` returns every document.
    pub fn search_exact(&self, query: &[T], k: usize) -> Result<Vec<(DocId, T)>, DenseError> {
        Ok(self.search_exact_positions(query, k)?.into_iter().map(|(r, s)| (self.ids[r].clone(), s)).collect())
    }

    pub fn save(&self, path: &Path) -> Result<(), DenseError> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(EMBEDDINGS_MAGIC)?;
        write_u32(w, EMBEDDINGS_VERSION)?;
        write_u32(w, self.dim as u32)?;
        write_u64(w, self.count() as u64)?;
        for &v in &self.vectors {
            write_f32(w, v.as_f32())?;
        }
        for id in &self.ids {
            write_str(w, &id.article)?;
            write_u32(w, id.chunk)?;
        }
        Ok(())
    }

    /// Reads `embeddings.bin`; also the import path for externally computed vectors.
    pub fn load(path: &Path) -> Result<Self, DenseError> {
        Self::read_from(&mut BufReader::new(fs::File::open(path)?))
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, DenseError> {
        expect_magic(r, EMBEDDINGS_MAGIC)?;
        let version = read_u32(r)?;
        if version != EMBEDDINGS_VERSION {
            return Err(invalid(&format!("unsupported embeddings version {version}")).into());
        }
        let dim = read_u32(r)? as usize;
        let count = read_u64(r)? as usize;
        let mut vectors = Vec::with_capacity(count * dim);
        for _ in 0..count * dim {
            vectors.push(T::of(f64::from(read_f32(r)?)));
        }
        let mut ids = Vec::with_capacity(count);
        for _ in 0..count {
            let article = read_str(r)?;
            ids.push(DocId::new(article, read_u32(r)?));
        }
        Self::new(dim, ids, vectors)
    }
}

/// One document-encoder vector per corpus document, in corpus order.
pub fn embed_corpus<T: Scalar>(model: &DualEncoder<T>, corpus: &Corpus) -> Result<EmbeddingStore<T>, DenseError> {
    let dim = model.dim();
    let rows: Vec<Vec<T>> = corpus.documents().par_iter().map(|d| model.encode_doc(&d.text)).collect();
    if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
        return Err(DenseError::DimMismatch { expected: dim, got: bad.len() });
    }
    let ids = corpus.documents().iter().map(|d| d.id.clone()).collect();
    EmbeddingStore::new(dim, ids, rows.concat())
}
