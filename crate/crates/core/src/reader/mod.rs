//! Retrieve-and-read: top-K dense retrieval for a triple query, a pluggable
//! candidate generator, edit-distance grounding and the marginalized joint
//! training signal.
//!
//! The reference generator is extractive. Every entity mentioned in a
//! retrieved document is a candidate with
//!
//! ```text
//! score(e) = Σ_{d ∋ e} p(d | q) · exp(w · f(e, d, q))
//! ```
//!
//! where `p(d | q)` is the softmax of the retrieval scores and `f` holds the
//! mention count of `e` in `d`, the token overlap between `e`'s label and the
//! query, and `1 / (1 + gap)` for the token gap between the nearest mentions
//! of `e` and of the query head in `d` (0 when the head is not mentioned).

mod edit;
mod joint;
mod predictions;

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use thiserror::Error;

pub use edit::levenshtein;
pub use joint::{batch_joint_loss, joint_finetune_step, joint_loss, JointOutcome, JointStep};
pub use predictions::{read_predictions, write_predictions};

use crate::corpus::{Corpus, DocId, Mention};
use crate::dense::{ClusteredIndex, DenseError, EmbeddingStore};
use crate::encoder::DualEncoder;
use crate::kg::{f_label, KgDataset, KgError, TripleQuery};
use crate::scalar::{desc_then_asc, dot, softmax, Scalar};
use crate::text::tokenize;

pub const FEATURE_COUNT: usize = 3;

#[derive(Debug, Error)]
pub enum ReaderError {
    #[error("retrieved documents contain no candidate mentions")]
    NoCandidates,
    #[error("embedding store rows do not match the corpus documents")]
    IndexMismatch,
    #[error("{0}")]
    Predictions(String),
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error(transparent)]
    Dense(#[from] DenseError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievedDoc<T> {
    pub id: DocId,
    /// Row in the corpus and the embedding store.
    pub position: usize,
    pub text: String,
    pub mentions: Vec<Mention>,
    pub score: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReaderInput<T> {
    pub search_query: String,
    /// Head entity of the triple query.
    pub head: String,
    /// Descending retrieval score.
    pub documents: Vec<RetrievedDoc<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateAnswer<T> {
    pub surface: String,
    pub score: T,
    pub supporting_docs: Vec<DocId>,
}

/// Ranked entities for one query; ids unique, scores non-increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedPrediction<T> {
    pub query: TripleQuery,
    pub ranking: Vec<(String, T)>,
}

/// Weights of the reference reader's three features.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReaderParams<T> {
    pub weights: [T; FEATURE_COUNT],
}

impl<T: Scalar> Default for ReaderParams<T> {
    fn default() -> Self {
        Self { weights: [T::zero(); FEATURE_COUNT] }
    }
}

impl<T: Scalar> ReaderParams<T> {
    /// Serialized as one tab-separated line of weights.
    pub fn to_line(&self) -> String {
        self.weights.iter().map(|w| w.to_string()).collect::<Vec<_>>().join("\t")
    }

    pub fn from_line(line: &str) -> Option<Self> {
        let vals: Vec<f64> = line.trim().split('\t').map(str::parse).collect::<Result<_, _>>().ok()?;
        let weights: [f64; FEATURE_COUNT] = vals.try_into().ok()?;
        Some(Self { weights: weights.map(T::of) })
    }
}

/// Dense retrieval over a frozen embedding store.
#[derive(Debug, Clone, Copy)]
pub struct Retriever<'a, T> {
    pub model: &'a DualEncoder<T>,
    pub store: &'a EmbeddingStore<T>,
    pub clustered: Option<&'a ClusteredIndex<T>>,
    pub corpus: &'a Corpus,
    pub kg: &'a KgDataset,
}

impl<'a, T: Scalar> Retriever<'a, T> {
    pub fn new(
        model: &'a DualEncoder<T>,
        store: &'a EmbeddingStore<T>,
        corpus: &'a Corpus,
        kg: &'a KgDataset,
    ) -> Result<Self, ReaderError> {
        let aligned = store.count() == corpus.len()
            && store.ids().iter().zip(corpus.documents()).all(|(id, d)| id == &d.id);
        if !aligned {
            return Err(ReaderError::IndexMismatch);
        }
        if store.dim() != model.dim() {
            return Err(DenseError::DimMismatch { expected: model.dim(), got: store.dim() }.into());
        }
        Ok(Self { model, store, clustered: None, corpus, kg })
    }

    pub fn with_clustered(mut self, index: &'a ClusteredIndex<T>) -> Self {
        self.clustered = Some(index);
        self
    }

    pub(crate) fn search(&self, query_vec: &[T], k: usize) -> Result<Vec<(usize, T)>, DenseError> {
        match self.clustered {
            Some(idx) => idx.search_positions(self.store, query_vec, k),
            None => self.store.search_exact_positions(query_vec, k),
        }
    }

    /// Top-`k` documents for `f_label(tq)`; alias sampling is never used here.
    pub fn retrieve(&self, tq: &TripleQuery, k: usize) -> Result<ReaderInput<T>, ReaderError> {
        let search_query = f_label(tq, self.kg)?;
        let q = self.model.encode_query(&search_query);
        let documents = self
            .search(&q, k)?
            .into_iter()
            .map(|(pos, score)| {
                let d = &self.corpus.documents()[pos];
                RetrievedDoc { id: d.id.clone(), position: pos, text: d.text.clone(), mentions: d.mentions.clone(), score }
            })
            .collect();
        Ok(ReaderInput { search_query, head: tq.head.clone(), documents })
    }
}

/// Softmax over the retrieval scores.
pub fn doc_posterior<T: Scalar>(input: &ReaderInput<T>) -> Vec<T> {
    softmax(&input.documents.iter().map(|d| d.score).collect::<Vec<_>>())
}

/// Per-document features of every candidate entity mentioned in the document,
/// keyed by entity id. Mentions of entities unknown to the KG are ignored.
pub(crate) fn doc_features<T: Scalar>(
    doc: &RetrievedDoc<T>,
    head: &str,
    query_tokens: &BTreeSet<String>,
    kg: &KgDataset,
) -> BTreeMap<String, [T; FEATURE_COUNT]> {
    let head_spans: Vec<(usize, usize)> =
        doc.mentions.iter().filter(|m| m.entity == head).map(|m| (m.start, m.end)).collect();
    let mut out: BTreeMap<String, (usize, Option<usize>)> = BTreeMap::new();
    for m in doc.mentions.iter().filter(|m| kg.entity(&m.entity).is_some()) {
        let gap = head_spans
            .iter()
            .map(|&(s, e)| if m.end <= s { s - m.end } else { m.start.saturating_sub(e) })
            .min();
        let entry = out.entry(m.entity.clone()).or_insert((0, None));
        entry.0 += 1;
        entry.1 = match (entry.1, gap) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
    }
    out.into_iter()
        .map(|(e, (count, gap))| {
            let label: BTreeSet<String> = tokenize(&kg.entity(&e).expect("known entity").label).into_iter().collect();
            let overlap = label.intersection(query_tokens).count();
            let proximity = gap.map_or(T::zero(), |g| T::one() / T::of(1.0 + g as f64));
            (e, [T::of(count as f64), T::of(overlap as f64), proximity])
        })
        .collect()
}

/// Produces scored answer strings for a reader input.
pub trait CandidateGenerator<T>: Sync {
    fn generate(&self, input: &ReaderInput<T>, kg: &KgDataset, width: usize)
        -> Result<Vec<CandidateAnswer<T>>, ReaderError>;
}

/// The reference extractive reader.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureReader<T> {
    pub params: ReaderParams<T>,
}

impl<T: Scalar> CandidateGenerator<T> for FeatureReader<T> {
    fn generate(
        &self,
        input: &ReaderInput<T>,
        kg: &KgDataset,
        width: usize,
    ) -> Result<Vec<CandidateAnswer<T>>, ReaderError> {
        generate_candidates(input, kg, &self.params, width)
    }
}

/// Top-`width` candidates by score, ties by ascending entity id.
pub fn generate_candidates<T: Scalar>(
    input: &ReaderInput<T>,
    kg: &KgDataset,
    params: &ReaderParams<T>,
    width: usize,
) -> Result<Vec<CandidateAnswer<T>>, ReaderError> {
    let posterior = doc_posterior(input);
    let query_tokens: BTreeSet<String> = tokenize(&input.search_query).into_iter().collect();
    let mut scores: BTreeMap<String, (T, Vec<DocId>)> = BTreeMap::new();
    for (doc, &p) in input.documents.iter().zip(&posterior) {
        for (entity, f) in doc_features(doc, &input.head, &query_tokens, kg) {
            let logit = params.weights.iter().zip(&f).map(|(&w, &x)| w * x).sum::<T>();
            let entry = scores.entry(entity).or_insert((T::zero(), Vec::new()));
            entry.0 += p * logit.exp();
            entry.1.push(doc.id.clone());
        }
    }
    if scores.is_empty() {
        return Err(ReaderError::NoCandidates);
    }
    let mut ranked: Vec<(String, T, Vec<DocId>)> = scores.into_iter().map(|(e, (s, d))| (e, s, d)).collect();
    ranked.sort_by(|a, b| desc_then_asc((a.1, &a.0), (b.1, &b.0)));
    ranked.truncate(width);
    Ok(ranked
        .into_iter()
        .map(|(e, score, supporting_docs)| CandidateAnswer {
            surface: kg.entity(&e).expect("known entity").label.clone(),
            score,
            supporting_docs,
        })
        .collect())
}

/// Entity whose label (and aliases, when enabled) is closest in edit distance
/// to `surface`; ties go to the smallest entity id. Returns `(id, distance)`.
pub fn ground_to_entity<'k>(surface: &str, kg: &'k KgDataset, use_aliases: bool) -> Option<(&'k str, usize)> {
    let mut best: Option<(&str, usize)> = None;
    for e in kg.entities() {
        let mut d = levenshtein(surface, &e.label);
        if use_aliases {
            d = e.aliases.iter().map(|a| levenshtein(surface, a)).fold(d, usize::min);
        }
        if best.map_or(true, |(_, b)| d < b) {
            best = Some((&e.id, d));
        }
        if d == 0 && !use_aliases {
            // entities are id-sorted, so an exact match cannot be beaten
            break;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PredictConfig {
    pub k: usize,
    pub width: usize,
    pub alias_grounding: bool,
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self { k: 5, width: 64, alias_grounding: false }
    }
}

/// Retrieve, generate, ground, keep the best score per entity.
/// A query without candidates yields an empty ranking.
pub fn predict<T: Scalar, G: CandidateGenerator<T> + ?Sized>(
    retriever: &Retriever<'_, T>,
    generator: &G,
    tq: &TripleQuery,
    config: &PredictConfig,
) -> Result<RankedPrediction<T>, ReaderError> {
    let input = retriever.retrieve(tq, config.k)?;
    let candidates = match generator.generate(&input, retriever.kg, config.width) {
        Ok(c) => c,
        Err(ReaderError::NoCandidates) => Vec::new(),
        Err(e) => return Err(e),
    };
    let mut best: BTreeMap<&str, T> = BTreeMap::new();
    for c in &candidates {
        let Some((entity, _)) = ground_to_entity(&c.surface, retriever.kg, config.alias_grounding) else {
            continue;
        };
        let slot = best.entry(entity).or_insert(c.score);
        if c.score > *slot {
            *slot = c.score;
        }
    }
    let mut ranking: Vec<(String, T)> = best.into_iter().map(|(e, s)| (e.to_string(), s)).collect();
    ranking.sort_by(|a, b| desc_then_asc((a.1, &a.0), (b.1, &b.0)));
    Ok(RankedPrediction { query: tq.clone(), ranking })
}

/// [`predict`] over many queries in parallel; output order follows `queries`.
pub fn predict_all<T: Scalar, G: CandidateGenerator<T> + ?Sized>(
    retriever: &Retriever<'_, T>,
    generator: &G,
    queries: &[TripleQuery],
    config: &PredictConfig,
) -> Result<Vec<RankedPrediction<T>>, ReaderError> {
    queries.par_iter().map(|tq| predict(retriever, generator, tq, config)).collect()
}

/// Inner product of the encoded query with one store row.
pub fn retrieval_score<T: Scalar>(retriever: &Retriever<'_, T>, tq: &TripleQuery, position: usize) -> Result<T, ReaderError> {
    let q = retriever.model.encode_query(&f_label(tq, retriever.kg)?);
    Ok(dot(&q, retriever.store.row(position)))
}

#[cfg(test)]
pub(crate) mod fixture {
    use super::*;
    use crate::corpus::Document;
    use crate::dense::embed_corpus;
    use crate::encoder::Vocab;
    use crate::kg::{Entity, Relation, Triple};

    pub fn kg(labels: &[(&str, &str)]) -> KgDataset {
        KgDataset::new(
            labels.iter().map(|(id, l)| Entity { id: id.to_string(), label: l.to_string(), aliases: vec![] }).collect(),
            vec![Relation::forward("r", "born in", vec![])],
            vec![Triple::new(labels[0].0, "r", labels[1].0)],
            vec![],
            vec![],
        )
        .unwrap()
    }

    pub fn doc(article: &str, text: &str, mentions: &[(&str, usize, usize)]) -> Document {
        Document {
            id: DocId::new(article, 0),
            text: text.to_string(),
            tokens: tokenize(text).len(),
            mentions: mentions.iter().map(|&(e, s, t)| Mention { entity: e.into(), start: s, end: t }).collect(),
        }
    }

    pub struct World {
        pub kg: KgDataset,
        pub corpus: Corpus,
        pub model: DualEncoder<f64>,
        pub store: EmbeddingStore<f64>,
    }

    pub fn world(labels: &[(&str, &str)], docs: Vec<Document>, seed: u64) -> World {
        let kg = kg(labels);
        let corpus = Corpus::new(docs).unwrap();
        let texts = corpus
            .documents()
            .iter()
            .map(|d| d.text.clone())
            .chain(kg.entities().iter().map(|e| e.label.clone()))
            .chain(kg.relations().iter().map(|r| r.label.clone()));
        let model = DualEncoder::new_random(Vocab::build(texts), 6, seed);
        let store = embed_corpus(&model, &corpus).unwrap();
        World { kg, corpus, model, store }
    }

    impl World {
        pub fn retriever(&self) -> Retriever<'_, f64> {
            Retriever::new(&self.model, &self.store, &self.corpus, &self.kg).unwrap()
        }
    }

    pub fn input(head: &str, query: &str, docs: Vec<(Document, f64)>) -> ReaderInput<f64> {
        ReaderInput {
            search_query: query.to_string(),
            head: head.to_string(),
            documents: docs
                .into_iter()
                .enumerate()
                .map(|(i, (d, s))| RetrievedDoc { id: d.id, position: i, text: d.text, mentions: d.mentions, score: s })
                .collect(),
        }
    }
}
