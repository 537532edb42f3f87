//! Contrastive pre-training corpus: sampled search queries, typed positives
//! and BM25-mined strong negatives.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError, DocId};
use crate::bm25::Bm25Index;
use crate::kg::{f_label_alias, KgDataset, Split, TripleQuery};
use crate::scalar::Scalar;

/// Sampling weights of the entity, distant and answer positive types.
pub const POSITIVE_TYPE_WEIGHTS: [f64; 3] = [0.45, 0.45, 0.10];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PositiveType {
    /// `Adocs(h) ∩ Mdocs(t)`
    Entity,
    /// `Mdocs(h) ∩ Mdocs(t)`
    Distant,
    /// `Mdocs(t)`
    Answer,
}

impl PositiveType {
    pub const ALL: [PositiveType; 3] = [PositiveType::Entity, PositiveType::Distant, PositiveType::Answer];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DropReason {
    NoPositive,
    NoNegative,
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DropReason::NoPositive => "NoPositive",
            DropReason::NoNegative => "NoNegative",
        })
    }
}

/// A sampled triple query together with one of its search-query strings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryEntry {
    pub query: TripleQuery,
    pub search_query: String,
}

/// One line of `pairs.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    #[serde(rename = "query")]
    pub search_query: String,
    #[serde(rename = "tq")]
    pub source_query: TripleQuery,
    #[serde(rename = "pos")]
    pub positive: DocId,
    #[serde(rename = "neg")]
    pub strong_negative: DocId,
    #[serde(rename = "pos_type")]
    pub positive_type: PositiveType,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairConfig {
    /// Triples to sample; `None` takes every eligible triple.
    pub sample_size: Option<usize>,
    /// Search-query variants per triple query.
    pub n_variants: usize,
    /// BM25 results scanned for a strong negative.
    pub negative_depth: usize,
    pub seed: u64,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self { sample_size: None, n_variants: 25, negative_depth: 1000, seed: 0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BuildReport {
    pub eligible_triples: usize,
    pub sampled_triples: usize,
    pub queries: usize,
    pub emitted: usize,
    pub dropped_no_positive: usize,
    pub dropped_no_negative: usize,
    pub by_type: [usize; 3],
}

impl fmt::Display for BuildReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "eligible_triples\t{}", self.eligible_triples)?;
        writeln!(f, "sampled_triples\t{}", self.sampled_triples)?;
        writeln!(f, "queries\t{}", self.queries)?;
        writeln!(f, "emitted\t{}", self.emitted)?;
        writeln!(f, "dropped\tNoPositive\t{}", self.dropped_no_positive)?;
        writeln!(f, "dropped\tNoNegative\t{}", self.dropped_no_negative)?;
        writeln!(f, "pos_type\tentity\t{}", self.by_type[0])?;
        writeln!(f, "pos_type\tdistant\t{}", self.by_type[1])?;
        writeln!(f, "pos_type\tanswer\t{}", self.by_type[2])
    }
}

/// Samples `sample_size` eligible train triples without replacement and emits
/// `n_variants` alias-sampled search queries for both directions of each.
///
/// A triple is eligible when both endpoints have an article in the corpus.
/// Output order: sampled triples in ascending train order; per triple the
/// forward variants, then the inverse variants.
pub fn build_query_set<R: Rng + ?Sized>(
    kg: &KgDataset,
    corpus: &Corpus,
    sample_size: usize,
    n_variants: usize,
    rng: &mut R,
) -> Result<Vec<QueryEntry>, CorpusError> {
    let eligible: Vec<_> = kg
        .split(Split::Train)
        .iter()
        .filter(|t| corpus.has_article(&t.head) && corpus.has_article(&t.tail))
        .collect();
    if sample_size > eligible.len() {
        return Err(CorpusError::SampleTooLarge { requested: sample_size, eligible: eligible.len() });
    }
    let mut picked = sample(rng, eligible.len(), sample_size).into_vec();
    picked.sort_unstable();
    let mut out = Vec::with_capacity(sample_size * 2 * n_variants);
    for i in picked {
        let triple = eligible[i];
        for tq in [triple.forward_query(), triple.inverse_query()] {
            for _ in 0..n_variants {
                let search_query = f_label_alias(&tq, kg, rng)?;
                out.push(QueryEntry { query: tq.clone(), search_query });
            }
        }
    }
    Ok(out)
}

fn candidates(tq: &TripleQuery, corpus: &Corpus) -> [Vec<usize>; 3] {
    let answer = tq.answer.as_deref().unwrap_or_default();
    let m_t = corpus.mdocs(answer);
    let both = |s: &BTreeSet<usize>| s.intersection(m_t).copied().collect::<Vec<_>>();
    [both(corpus.adocs(&tq.head)), both(corpus.mdocs(&tq.head)), m_t.iter().copied().collect()]
}

/// Draws a positive type with weights 0.45/0.45/0.10 renormalized over the
/// non-empty candidate sets, then a document uniformly from that set.
pub fn select_positive<R: Rng + ?Sized>(
    tq: &TripleQuery,
    corpus: &Corpus,
    rng: &mut R,
) -> Result<(DocId, PositiveType), DropReason> {
    let sets = candidates(tq, corpus);
    let total: f64 = (0..3).filter(|&i| !sets[i].is_empty()).map(|i| POSITIVE_TYPE_WEIGHTS[i]).sum();
    if total == 0.0 {
        return Err(DropReason::NoPositive);
    }
    let mut u = rng.gen::<f64>() * total;
    let mut chosen = None;
    for i in (0..3).filter(|&i| !sets[i].is_empty()) {
        chosen = Some(i);
        if u < POSITIVE_TYPE_WEIGHTS[i] {
            break;
        }
        u -= POSITIVE_TYPE_WEIGHTS[i];
    }
    let i = chosen.expect("at least one non-empty set");
    let doc = sets[i][rng.gen_range(0..sets[i].len())];
    Ok((corpus.documents()[doc].id.clone(), PositiveType::ALL[i]))
}

/// Highest-ranked BM25 document (within `depth` results) that does not mention `answer`.
pub fn select_strong_negative<T: Scalar>(
    search_query: &str,
    answer: &str,
    corpus: &Corpus,
    bm25: &Bm25Index<T>,
    depth: usize,
) -> Result<DocId, DropReason> {
    let m_t = corpus.mdocs(answer);
    bm25.score_positions(search_query, depth)
        .into_iter()
        .find(|(pos, _)| !m_t.contains(pos))
        .map(|(pos, _)| bm25.doc_id(pos).clone())
        .ok_or(DropReason::NoNegative)
}

/// Full pre-training corpus construction. Queries without a positive or a
/// strong negative are dropped and counted.
///
/// Each query entry draws from its own ChaCha stream derived from the seed,
/// so the output does not depend on the worker count.
pub fn build_pretraining_corpus<T: Scalar>(
    kg: &KgDataset,
    corpus: &Corpus,
    bm25: &Bm25Index<T>,
    config: &PairConfig,
) -> Result<(Vec<TrainingPair>, BuildReport), CorpusError> {
    let eligible = kg
        .split(Split::Train)
        .iter()
        .filter(|t| corpus.has_article(&t.head) && corpus.has_article(&t.tail))
        .count();
    let sample_size = config.sample_size.unwrap_or(eligible);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let entries = build_query_set(kg, corpus, sample_size, config.n_variants, &mut rng)?;

    let results: Vec<Result<TrainingPair, DropReason>> = entries
        .par_iter()
        .enumerate()
        .map(|(i, entry)| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(i as u64 + 1);
            let answer = entry.query.answer.as_deref().unwrap_or_default();
            let (positive, positive_type) = select_positive(&entry.query, corpus, &mut rng)?;
            let strong_negative =
                select_strong_negative(&entry.search_query, answer, corpus, bm25, config.negative_depth)?;
            Ok(TrainingPair {
                search_query: entry.search_query.clone(),
                source_query: entry.query.clone(),
                positive,
                strong_negative,
                positive_type,
            })
        })
        .collect();

    let mut report = BuildReport {
        eligible_triples: eligible,
        sampled_triples: sample_size,
        queries: entries.len(),
        ..Default::default()
    };
    let mut pairs = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(p) => {
                report.by_type[PositiveType::ALL.iter().position(|&t| t == p.positive_type).unwrap()] += 1;
                pairs.push(p);
            }
            Err(DropReason::NoPositive) => report.dropped_no_positive += 1,
            Err(DropReason::NoNegative) => report.dropped_no_negative += 1,
        }
    }
    report.emitted = pairs.len();
    Ok((pairs, report))
}

pub fn write_pairs(pairs: &[TrainingPair], path: &Path) -> Result<(), CorpusError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for p in pairs {
        writeln!(w, "{}", serde_json::to_string(p).expect("serializable"))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_pairs(path: &Path) -> Result<Vec<TrainingPair>, CorpusError> {
    let file = path.display().to_string();
    let mut out = Vec::new();
    for (i, line) in BufReader::new(fs::File::open(path)?).lines().enumerate() {
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bm25::Bm25Params;
    use crate::corpus::{Document, Mention};
    use crate::kg::{Entity, Relation, Triple};
    use crate::text::tokenize;

    fn doc(article: &str, chunk: u32, text: &str, mentions: &[&str]) -> Document {
        Document {
            id: DocId::new(article, chunk),
            text: text.to_string(),
            tokens: tokenize(text).len(),
            mentions: mentions.iter().map(|e| Mention { entity: e.to_string(), start: 0, end: 1 }).collect(),
        }
    }

    fn tq(h: &str, t: &str) -> TripleQuery {
        TripleQuery { head: h.into(), relation: "r".into(), answer: Some(t.into()) }
    }

    fn kg(entities: &[&str], train: &[(&str, &str)]) -> KgDataset {
        KgDataset::new(
            entities.iter().map(|e| Entity { id: e.to_string(), label: e.to_uppercase(), aliases: vec![] }).collect(),
            vec![Relation::forward("r", "rel", vec![])],
            train.iter().map(|(h, t)| Triple::new(*h, "r", *t)).collect(),
            vec![],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn only_answer_type_available() {
        let corpus = Corpus::new(vec![doc("x", 0, "t here", &["t"]), doc("h", 0, "h only", &["h"])]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let (d, ty) = select_positive(&tq("h", "t"), &corpus, &mut rng).unwrap();
            assert_eq!(ty, PositiveType::Answer);
            assert_eq!(d, DocId::new("x", 0));
        }
    }

    #[test]
    fn no_positive_when_answer_unmentioned() {
        let corpus = Corpus::new(vec![doc("h", 0, "h", &["h"])]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(select_positive(&tq("h", "t"), &corpus, &mut rng), Err(DropReason::NoPositive));
    }

    #[test]
    fn positive_selection_is_reproducible() {
        let corpus = Corpus::new(vec![
            doc("h", 0, "a", &["t"]),
            doc("x", 0, "b", &["h", "t"]),
            doc("y", 0, "c", &["t"]),
        ])
        .unwrap();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            (0..100).map(|_| select_positive(&tq("h", "t"), &corpus, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn renormalized_proportions_without_entity_type() {
        // Adocs(h) ∩ Mdocs(t) = ∅, Mdocs(h) ∩ Mdocs(t) ≠ ∅
        let corpus = Corpus::new(vec![doc("h", 0, "a", &["h"]), doc("x", 0, "b", &["h", "t"])]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10_000;
        let mut distant = 0;
        for _ in 0..n {
            match select_positive(&tq("h", "t"), &corpus, &mut rng).unwrap().1 {
                PositiveType::Distant => distant += 1,
                PositiveType::Answer => {}
                PositiveType::Entity => panic!("entity set is empty"),
            }
        }
        let freq = distant as f64 / n as f64;
        assert!((freq - 0.45 / 0.55).abs() <= 0.02, "{freq}");
    }

    #[test]
    fn strong_negative_skips_answer_mentions() {
        let corpus = Corpus::new(vec![
            doc("d1", 0, "q q q", &["t"]),
            doc("d2", 0, "q q x", &[]),
            doc("d3", 0, "q x x", &[]),
        ])
        .unwrap();
        let bm25 = Bm25Index::<f64>::build(&corpus, Bm25Params::default()).unwrap();
        assert_eq!(bm25.score("q", 3)[0].0, DocId::new("d1", 0));
        assert_eq!(select_strong_negative("q", "t", &corpus, &bm25, 1000), Ok(DocId::new("d2", 0)));
        assert_eq!(select_strong_negative("q", "other", &corpus, &bm25, 1000), Ok(DocId::new("d1", 0)));
        assert_eq!(select_strong_negative("q", "t", &corpus, &bm25, 1), Err(DropReason::NoNegative));
    }

    #[test]
    fn all_docs_mention_answer() {
        let corpus =
            Corpus::new(vec![doc("a", 0, "q", &["t"]), doc("b", 0, "q", &["t"]), doc("c", 0, "q", &["t"])]).unwrap();
        let bm25 = Bm25Index::<f64>::build(&corpus, Bm25Params::default()).unwrap();
        assert_eq!(select_strong_negative("q", "t", &corpus, &bm25, 1000), Err(DropReason::NoNegative));
    }

    #[test]
    fn query_set_sizes() {
        let ents: Vec<String> = (0..12).map(|i| format!("e{i:02}")).collect();
        let ent_refs: Vec<&str> = ents.iter().map(String::as_str).collect();
        let train: Vec<(&str, &str)> = (0..11).map(|i| (ent_refs[i], ent_refs[i + 1])).collect();
        let kg = kg(&ent_refs, &train);
        let corpus = Corpus::new(ents.iter().map(|e| doc(e, 0, e, &[e.as_str()])).collect()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(build_query_set(&kg, &corpus, 10, 25, &mut rng).unwrap().len(), 500);
        assert!(build_query_set(&kg, &corpus, 0, 25, &mut rng).unwrap().is_empty());
        let one = build_query_set(&kg, &corpus, 1, 1, &mut rng).unwrap();
        assert_eq!(one.len(), 2);
        assert_eq!(one[1].query.relation, "r::inv");
        let expected = |q: &TripleQuery| crate::kg::f_label(q, &kg).unwrap();
        assert_eq!(one[0].search_query, expected(&one[0].query));
        assert_eq!(one[1].search_query, expected(&one[1].query));
        assert!(matches!(
            build_query_set(&kg, &corpus, 12, 1, &mut rng),
            Err(CorpusError::SampleTooLarge { requested: 12, eligible: 11 })
        ));
    }

    #[test]
    fn drops_are_counted() {
        let kg = kg(&["a", "b", "c"], &[("a", "b"), ("a", "c")]);
        // c is never mentioned, so (a, r, c) has no positive; (c, r::inv, a) still does
        let corpus = Corpus::new(vec![
            doc("a", 0, "A r B", &["a", "b"]),
            doc("b", 0, "B r A", &["b", "a"]),
            doc("c", 0, "C", &[]),
        ])
        .unwrap();
        let bm25 = Bm25Index::<f64>::build(&corpus, Bm25Params::default()).unwrap();
        let cfg = PairConfig { n_variants: 1, ..Default::default() };
        let (pairs, report) = build_pretraining_corpus(&kg, &corpus, &bm25, &cfg).unwrap();
        assert_eq!(report.queries, 4);
        assert_eq!(report.dropped_no_positive, 1);
        assert_eq!(report.emitted + report.dropped_no_positive + report.dropped_no_negative, 4);
        assert_eq!(pairs.len(), report.emitted);
        assert!(report.to_string().contains("dropped\tNoPositive\t1"));
    }

    #[test]
    fn pair_json_layout() {
        let p = TrainingPair {
            search_query: "A rel".into(),
            source_query: tq("a", "b"),
            positive: DocId::new("a", 0),
            strong_negative: DocId::new("c", 1),
            positive_type: PositiveType::Distant,
        };
        assert_eq!(
            serde_json::to_string(&p).unwrap(),
            r#"{"query":"A rel","tq":{"head":"a","relation":"r","answer":"b"},"pos":["a",0],"neg":["c",1],"pos_type":"distant"}"#
        );
    }
}
