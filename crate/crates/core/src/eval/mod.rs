//! Filtered link-prediction metrics, a TuckER ranker and the per-relation
//! ensemble of the two.

mod ensemble;
mod kge;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ensemble::{apply_ensemble, fit_ensemble, EnsemblePolicy, ModelChoice};
pub use kge::{rank_kge, rank_kge_all, train_kge, KgeConfig, KgeRanker};

use crate::kg::{KgDataset, TripleQuery};
use crate::reader::RankedPrediction;

pub const HITS_AT: [usize; 3] = [1, 3, 10];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction {0} has no gold answer")]
    MissingGold(usize),
    #[error("no predictions left after restricting to the relation subset")]
    EmptySubsetAfterFilter,
    #[error("relation subset is empty")]
    EmptySubset,
    #[error("reports disagree on relations or query counts: {0}")]
    RelationMismatch(String),
    #[error("prediction lists differ at query {0}")]
    QueryMismatch(usize),
    #[error("train split is empty")]
    EmptyTrain,
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationMetrics {
    pub mrr: f64,
    pub hits: BTreeMap<usize, f64>,
    pub n_queries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mrr: f64,
    pub hits: BTreeMap<usize, f64>,
    /// Keyed by directed relation id.
    pub per_relation: BTreeMap<String, RelationMetrics>,
    pub n_queries: usize,
}

impl MetricReport {
    pub fn hits_at(&self, k: usize) -> f64 {
        self.hits.get(&k).copied().unwrap_or(0.0)
    }

    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Known answers of every `(head, directed relation)` pair over all splits.
#[derive(Debug, Clone, Default)]
pub struct KnownAnswers {
    answers: HashMap<(String, String), HashSet<String>>,
}

impl KnownAnswers {
    pub fn new(kg: &KgDataset) -> Self {
        let mut answers: HashMap<(String, String), HashSet<String>> = HashMap::new();
        for t in kg.all_triples() {
            for q in [t.forward_query(), t.inverse_query()] {
                let a = q.answer.expect("triple queries carry answers");
                answers.entry((q.head, q.relation)).or_default().insert(a);
            }
        }
        Self { answers }
    }

    pub fn get(&self, head: &str, relation: &str) -> Option<&HashSet<String>> {
        self.answers.get(&(head.to_string(), relation.to_string()))
    }
}

/// 1 + entities above the gold; with `filter`, other known answers of the
/// query are skipped. `None` when the gold is not ranked.
pub fn gold_rank<T>(pred: &RankedPrediction<T>, gold: &str, filter: Option<&KnownAnswers>) -> Option<usize> {
    let known = filter.and_then(|f| f.get(&pred.query.head, &pred.query.relation));
    let mut rank = 1;
    for (e, _) in &pred.ranking {
        if e == gold {
            return Some(rank);
        }
        if !known.is_some_and(|k| k.contains(e)) {
            rank += 1;
        }
    }
    None
}

fn summarize(rrs: impl Iterator<Item = (f64, Option<usize>)>) -> RelationMetrics {
    let mut sum = 0.0;
    let mut hits = [0usize; HITS_AT.len()];
    let mut n = 0;
    for (rr, rank) in rrs {
        n += 1;
        sum += rr;
        for (h, &k) in hits.iter_mut().zip(&HITS_AT) {
            if rank.is_some_and(|r| r <= k) {
                *h += 1;
            }
        }
    }
    let denom = n.max(1) as f64;
    RelationMetrics {
        mrr: sum / denom,
        hits: HITS_AT.iter().zip(hits).map(|(&k, h)| (k, h as f64 / denom)).collect(),
        n_queries: n,
    }
}

/// MRR and Hits@{1,3,10} over queries that carry a gold answer, overall and
/// per directed relation. A gold absent from a ranking scores reciprocal rank 0.
pub fn evaluate<T: Sync>(
    predictions: &[RankedPrediction<T>],
    kg: &KgDataset,
    filtered: bool,
) -> Result<MetricReport, EvalError> {
    let filter = filtered.then(|| KnownAnswers::new(kg));
    let ranks: Vec<(f64, Option<usize>)> = predictions
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let gold = p.query.answer.as_deref().ok_or(EvalError::MissingGold(i))?;
            let rank = gold_rank(p, gold, filter.as_ref());
            Ok((rank.map_or(0.0, |r| 1.0 / r as f64), rank))
        })
        .collect::<Result<_, EvalError>>()?;
    let overall = summarize(ranks.iter().copied());
    let relations: BTreeSet<&str> = predictions.iter().map(|p| p.query.relation.as_str()).collect();
    let per_relation = relations
        .into_iter()
        .map(|r| {
            let sel = predictions.iter().zip(&ranks).filter(|(p, _)| p.query.relation == r).map(|(_, &x)| x);
            (r.to_string(), summarize(sel))
        })
        .collect();
    Ok(MetricReport { mrr: overall.mrr, hits: overall.hits, per_relation, n_queries: overall.n_queries })
}

/// Base relation id of a directed query relation.
fn base_relation<'a>(kg: &'a KgDataset, tq: &'a TripleQuery) -> &'a str {
    kg.relation(&tq.relation).map_or(tq.relation.as_str(), |r| r.base())
}

/// [`evaluate`] on queries whose base relation is in `subset`; inverse
/// queries count under their forward relation.
pub fn evaluate_split<T: Sync + Clone>(
    predictions: &[RankedPrediction<T>],
    kg: &KgDataset,
    subset: &[String],
    filtered: bool,
) -> Result<MetricReport, EvalError> {
    if subset.is_empty() {
        return Err(EvalError::EmptySubset);
    }
    let keep: HashSet<&str> = subset.iter().map(String::as_str).collect();
    let selected: Vec<RankedPrediction<T>> =
        predictions.iter().filter(|p| keep.contains(base_relation(kg, &p.query))).cloned().collect();
    if selected.is_empty() {
        return Err(EvalError::EmptySubsetAfterFilter);
    }
    evaluate(&selected, kg, filtered)
}

/// One relation id per line; blank lines and `#` comments ignored.
pub fn read_relation_split(path: &Path) -> Result<Vec<String>, EvalError> {
    Ok(fs::read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

pub fn write_relation_split(relations: &[String], path: &Path) -> Result<(), EvalError> {
    fs::write(path, relations.iter().map(|r| format!("{r}\n")).collect::<String>())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{Entity, Relation, Triple};

    fn kg() -> KgDataset {
        let ents = ["a", "b", "c", "d", "e"]
            .iter()
            .map(|&id| Entity { id: id.into(), label: id.to_uppercase(), aliases: vec![] })
            .collect();
        KgDataset::new(
            ents,
            vec![Relation::forward("r", "rel", vec![]), Relation::forward("s", "sel", vec![])],
            vec![Triple::new("a", "r", "b"), Triple::new("a", "r", "c")],
            vec![Triple::new("b", "s", "a")],
            vec![Triple::new("a", "r", "d")],
        )
        .unwrap()
    }

    fn pred(h: &str, r: &str, gold: &str, ranking: &[&str]) -> RankedPrediction<f64> {
        RankedPrediction {
            query: TripleQuery { head: h.into(), relation: r.into(), answer: Some(gold.into()) },
            ranking: ranking.iter().enumerate().map(|(i, e)| (e.to_string(), -(i as f64))).collect(),
        }
    }

    #[test]
    fn arithmetic_mrr() {
        let kg = kg();
        let preds = vec![
            pred("b", "s", "a", &["a", "b"]),
            pred("b", "s", "a", &["c", "a"]),
            pred("b", "s", "a", &["c", "d", "e", "a"]),
        ];
        let r = evaluate(&preds, &kg, false).unwrap();
        assert!((r.mrr - (1.0 + 0.5 + 0.25) / 3.0).abs() < 1e-12);
        assert_eq!(r.hits_at(1), 1.0 / 3.0);
        assert_eq!(r.hits_at(3), 2.0 / 3.0);
        assert_eq!(r.hits_at(10), 1.0);
    }

    #[test]
    fn filtering_removes_other_known_tails() {
        let kg = kg();
        let p = pred("a", "r", "d", &["b", "c", "d", "e"]);
        assert_eq!(gold_rank(&p, "d", None), Some(3));
        assert_eq!(gold_rank(&p, "d", Some(&KnownAnswers::new(&kg))), Some(1));
        let inv = pred("b", "r::inv", "a", &["e", "a"]);
        assert_eq!(gold_rank(&inv, "a", Some(&KnownAnswers::new(&kg))), Some(2));
        let filt = evaluate(&[p], &kg, true).unwrap();
        assert_eq!(filt.mrr, 1.0);
    }

    #[test]
    fn missing_gold_and_unranked_gold() {
        let kg = kg();
        let mut p = pred("a", "r", "d", &["b"]);
        let r = evaluate(std::slice::from_ref(&p), &kg, false).unwrap();
        assert_eq!((r.mrr, r.hits_at(10)), (0.0, 0.0));
        p.query.answer = None;
        assert!(matches!(evaluate(&[p], &kg, false), Err(EvalError::MissingGold(0))));
    }

    #[test]
    fn splits_partition_and_weight() {
        let kg = kg();
        let preds = vec![
            pred("a", "r", "d", &["d"]),
            pred("d", "r::inv", "a", &["b", "a"]),
            pred("b", "s", "a", &["c", "d", "a"]),
        ];
        let all = evaluate(&preds, &kg, false).unwrap();
        let full = evaluate_split(&preds, &kg, &["r".into(), "s".into()], false).unwrap();
        assert_eq!(full, all);
        let r = evaluate_split(&preds, &kg, &["r".into()], false).unwrap();
        let s = evaluate_split(&preds, &kg, &["s".into()], false).unwrap();
        assert_eq!(r.n_queries, 2);
        let weighted = (r.mrr * r.n_queries as f64 + s.mrr * s.n_queries as f64) / 3.0;
        assert!((weighted - all.mrr).abs() < 1e-12);
        assert!(matches!(evaluate_split(&preds, &kg, &[], false), Err(EvalError::EmptySubset)));
        assert!(matches!(
            evaluate_split(&preds, &kg, &["zzz".into()], false),
            Err(EvalError::EmptySubsetAfterFilter)
        ));
    }

    #[test]
    fn report_json_round_trip() {
        let kg = kg();
        let r = evaluate(&[pred("a", "r", "d", &["e", "d"])], &kg, true).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        r.save(&path).unwrap();
        assert_eq!(MetricReport::load(&path).unwrap(), r);
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(v["hits"]["10"], 1.0);
        assert_eq!(v["per_relation"]["r"]["n_queries"], 1);
    }

    #[test]
    fn relation_split_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("uninferable.txt");
        fs::write(&path, "# text-only\nP1\n\nP2\n").unwrap();
        assert_eq!(read_relation_split(&path).unwrap(), vec!["P1", "P2"]);
        write_relation_split(&["x".into()], &path).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "x\n");
    }
}
