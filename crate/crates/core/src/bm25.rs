//! Okapi BM25 over an inverted index.
//!
//! ```text
//! score(q, d) = Σ_{t ∈ q} IDF(t) · tf·(k1 + 1) / (tf + k1·(1 − b + b·|d|/avgdl))
//! IDF(t)      = ln(1 + (N − df + 0.5) / (df + 0.5))
//! ```
//!
//! Repeated query terms contribute once per occurrence. The `1 +` inside the
//! logarithm keeps every contribution non-negative.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::binio::*;
use crate::corpus::{Corpus, DocId};
use crate::scalar::{desc_then_asc, Scalar};
use crate::text::tokenize;

const SNAPSHOT_MAGIC: &[u8; 4] = b"KGBM";
const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum Bm25Error {
    #[error("cannot index an empty corpus")]
    EmptyCorpus,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params<T> {
    pub k1: T,
    pub b: T,
}

impl<T: Scalar> Default for Bm25Params<T> {
    fn default() -> Self {
        Self { k1: T::of(1.2), b: T::of(0.75) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bm25Index<T = f64> {
    /// term → (document position, term frequency), ascending by position
    postings: BTreeMap<String, Vec<(u32, u32)>>,
    doc_lengths: Vec<u32>,
    doc_ids: Vec<DocId>,
    avg_doc_length: T,
    params: Bm25Params<T>,
}

impl<T: Scalar> Bm25Index<T> {
    /// Indexes the corpus; document positions match [`Corpus::documents`].
    pub fn build(corpus: &Corpus, params: Bm25Params<T>) -> Result<Self, Bm25Error> {
        Self::from_texts(corpus.documents().iter().map(|d| (d.id.clone(), d.text.as_str())), params)
    }

    /// Indexes `(id, text)` pairs in the given order.
    pub fn from_texts<'a, I>(docs: I, params: Bm25Params<T>) -> Result<Self, Bm25Error>
    where
        I: IntoIterator<Item = (DocId, &'a str)>,
    {
        let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
        let mut doc_lengths = Vec::new();
        let mut doc_ids = Vec::new();
        for (pos, (id, text)) in docs.into_iter().enumerate() {
            let tokens = tokenize(text);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in &tokens {
                *tf.entry(t.clone()).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push((pos as u32, count));
            }
            doc_lengths.push(tokens.len() as u32);
            doc_ids.push(id);
        }
        if doc_ids.is_empty() {
            return Err(Bm25Error::EmptyCorpus);
        }
        let total: u64 = doc_lengths.iter().map(|&l| u64::from(l)).sum();
        let avg_doc_length = T::of(total as f64 / doc_lengths.len() as f64);
        Ok(Self { postings, doc_lengths, doc_ids, avg_doc_length, params })
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_doc_length(&self) -> T {
        self.avg_doc_length
    }

    pub fn params(&self) -> Bm25Params<T> {
        self.params
    }

    pub fn postings(&self, term: &str) -> &[(u32, u32)] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn doc_id(&self, pos: usize) -> &DocId {
        &self.doc_ids[pos]
    }

    pub fn doc_length(&self, pos: usize) -> u32 {
        self.doc_lengths[pos]
    }

    pub fn idf(&self, term: &str) -> T {
        let n = T::of(self.doc_count() as f64);
        let df = T::of(self.postings(term).len() as f64);
        let half = T::of(0.5);
        (T::one() + (n - df + half) / (df + half)).ln()
    }

    /// Ranked `(document position, score)` pairs with score > 0, ties by position.
    pub fn score_positions(&self, query: &str, top_k: usize) -> Vec<(usize, T)> {
        let Bm25Params { k1, b } = self.params;
        let mut acc = vec![T::zero(); self.doc_count()];
        let mut touched = vec![false; self.doc_count()];
        for term in tokenize(query) {
            let idf = self.idf(&term);
            for &(pos, tf) in self.postings(&term) {
                let pos = pos as usize;
                let tf = T::of(f64::from(tf));
                let len = T::of(f64::from(self.doc_lengths[pos]));
                let norm = k1 * (T::one() - b + b * len / self.avg_doc_length);
                acc[pos] += idf * tf * (k1 + T::one()) / (tf + norm);
                touched[pos] = true;
            }
        }
        let mut hits: Vec<(usize, T)> =
            (0..acc.len()).filter(|&p| touched[p] && acc[p] > T::zero()).map(|p| (p, acc[p])).collect();
        hits.sort_by(|a, b| desc_then_asc((a.1, a.0), (b.1, b.0)));
        hits.truncate(top_k);
        hits
    }

    /// Ranked `(doc id, score)` list of at most `top_k` documents with positive score.
    pub fn score(&self, query: &str, top_k: usize) -> Vec<(DocId, T)> {
        self.score_positions(query, top_k).into_iter().map(|(p, s)| (self.doc_ids[p].clone(), s)).collect()
    }

    /// Writes a little-endian snapshot: magic `KGBM`, version, k1, b, documents, postings.
    pub fn save(&self, path: &Path) -> Result<(), Bm25Error> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        w.write_all(SNAPSHOT_MAGIC)?;
        write_u32(&mut w, SNAPSHOT_VERSION)?;
        write_f64(&mut w, self.params.k1.as_f64())?;
        write_f64(&mut w, self.params.b.as_f64())?;
        write_u64(&mut w, self.doc_count() as u64)?;
        for (id, &len) in self.doc_ids.iter().zip(&self.doc_lengths) {
            write_str(&mut w, &id.article)?;
            write_u32(&mut w, id.chunk)?;
            write_u32(&mut w, len)?;
        }
        write_u64(&mut w, self.postings.len() as u64)?;
        for (term, list) in &self.postings {
            write_str(&mut w, term)?;
            write_u32(&mut w, list.len() as u32)?;
            for &(pos, tf) in list {
                write_u32(&mut w, pos)?;
                write_u32(&mut w, tf)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, Bm25Error> {
        let mut r = BufReader::new(fs::File::open(path)?);
        expect_magic(&mut r, SNAPSHOT_MAGIC)?;
        if read_u32(&mut r)? != SNAPSHOT_VERSION {
            return Err(invalid("unsupported BM25 snapshot version").into());
        }
        let params = Bm25Params { k1: T::of(read_f64(&mut r)?), b: T::of(read_f64(&mut r)?) };
        let n = read_u64(&mut r)? as usize;
        if n == 0 {
            return Err(Bm25Error::EmptyCorpus);
        }
        let mut doc_ids = Vec::with_capacity(n);
        let mut doc_lengths = Vec::with_capacity(n);
        for _ in 0..n {
            let article = read_str(&mut r)?;
            let chunk = read_u32(&mut r)?;
            doc_ids.push(DocId::new(article, chunk));
            doc_lengths.push(read_u32(&mut r)?);
        }
        let terms = read_u64(&mut r)?;
        let mut postings = BTreeMap::new();
        for _ in 0..terms {
            let term = read_str(&mut r)?;
            let len = read_u32(&mut r)? as usize;
            let mut list = Vec::with_capacity(len);
            for _ in 0..len {
                let pos = read_u32(&mut r)?;
                if pos as usize >= n {
                    return Err(invalid("posting refers to unknown document").into());
                }
                list.push((pos, read_u32(&mut r)?));
            }
            postings.insert(term, list);
        }
        let total: u64 = doc_lengths.iter().map(|&l| u64::from(l)).sum();
        let avg_doc_length = T::of(total as f64 / n as f64);
        Ok(Self { postings, doc_lengths, doc_ids, avg_doc_length, params })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn index(texts: &[&str]) -> Bm25Index<f64> {
        Bm25Index::from_texts(
            texts.iter().enumerate().map(|(i, t)| (DocId::new(format!("d{i}"), 0), *t)),
            Bm25Params::default(),
        )
        .unwrap()
    }

    /// Naive O(N·|q|) scorer written straight from the formula.
    fn naive(texts: &[&str], query: &str) -> Vec<f64> {
        let (k1, b) = (1.2, 0.75);
        let docs: Vec<Vec<String>> = texts.iter().map(|t| tokenize(t)).collect();
        let n = docs.len() as f64;
        let avg = docs.iter().map(Vec::len).sum::<usize>() as f64 / n;
        docs.iter()
            .map(|d| {
                tokenize(query)
                    .iter()
                    .map(|q| {
                        let tf = d.iter().filter(|t| *t == q).count() as f64;
                        if tf == 0.0 {
                            return 0.0;
                        }
                        let df = docs.iter().filter(|d| d.contains(q)).count() as f64;
                        let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                        idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * d.len() as f64 / avg))
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn single_doc_postings() {
        let idx = index(&["a b a"]);
        assert_eq!(idx.postings("a"), &[(0, 2)]);
        assert_eq!(idx.postings("b"), &[(0, 1)]);
        assert_eq!(idx.avg_doc_length(), 3.0);
    }

    #[test]
    fn identical_docs_share_entries() {
        let idx = index(&["x y", "x y"]);
        assert_eq!(idx.doc_count(), 2);
        assert_eq!(idx.postings("x"), &[(0, 1), (1, 1)]);
    }

    #[test]
    fn rebuild_is_identical() {
        assert_eq!(index(&["a b", "c a d"]), index(&["a b", "c a d"]));
    }

    #[test]
    fn empty_corpus_rejected() {
        let r = Bm25Index::<f64>::from_texts(std::iter::empty(), Bm25Params::default());
        assert!(matches!(r, Err(Bm25Error::EmptyCorpus)));
    }

    #[test]
    fn absent_term_and_empty_query() {
        let idx = index(&["a b"]);
        assert!(idx.score("zzz", 10).is_empty());
        assert!(idx.score("", 10).is_empty());
    }

    #[test]
    fn two_doc_closed_form() {
        let idx = index(&["x", "y"]);
        let got = idx.score("x", 10);
        // N=2, df=1: idf = ln(1 + 1.5/1.5) = ln 2; tf=1, len=avg=1 → tf part = 2.2/2.2 = 1
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].0, DocId::new("d0", 0));
        assert!((got[0].1 - 2f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn repeated_query_terms_add_up() {
        let idx = index(&["x z", "y"]);
        let one = idx.score("x", 1)[0].1;
        let two = idx.score("x x", 1)[0].1;
        assert!((two - 2.0 * one).abs() < 1e-9);
    }

    #[test]
    fn matches_naive_oracle_with_ties_by_position() {
        let texts = ["a b c", "a a d", "b c", "e", "a b c"];
        let idx = index(&texts);
        for q in ["a", "b c", "a d e", "c c a"] {
            let expected = naive(&texts, q);
            let mut order: Vec<usize> = (0..texts.len()).filter(|&i| expected[i] > 0.0).collect();
            order.sort_by(|&x, &y| expected[y].partial_cmp(&expected[x]).unwrap().then(x.cmp(&y)));
            let got = idx.score_positions(q, texts.len());
            assert_eq!(got.iter().map(|g| g.0).collect::<Vec<_>>(), order, "{q}");
            for (p, s) in got {
                assert!((s - expected[p]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let idx = index(&["a b c", "a a d"]);
        let path = dir.path().join("bm25.bin");
        idx.save(&path).unwrap();
        assert_eq!(Bm25Index::<f64>::load(&path).unwrap(), idx);
    }
}
