use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EvalError, MetricReport};
use crate::reader::RankedPrediction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelChoice {
    #[serde(rename = "IR")]
    Ir,
    #[serde(rename = "KGE")]
    Kge,
}

/// Which model answers queries of each directed relation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsemblePolicy {
    pub choice: BTreeMap<String, ModelChoice>,
    pub default: ModelChoice,
}

impl EnsemblePolicy {
    pub fn choose(&self, relation: &str) -> ModelChoice {
        self.choice.get(relation).copied().unwrap_or(self.default)
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

fn pick(ir: f64, kge: f64) -> ModelChoice {
    if ir > kge {
        ModelChoice::Ir
    } else {
        ModelChoice::Kge
    }
}

/// Per relation, the model with strictly higher validation MRR, else KGE.
pub fn fit_ensemble(ir_valid: &MetricReport, kge_valid: &MetricReport) -> Result<EnsemblePolicy, EvalError> {
    if ir_valid.n_queries != kge_valid.n_queries {
        return Err(EvalError::RelationMismatch(format!(
            "{} vs {} queries",
            ir_valid.n_queries, kge_valid.n_queries
        )));
    }
    let mut choice = BTreeMap::new();
    for (rel, ir) in &ir_valid.per_relation {
        let kge = kge_valid
            .per_relation
            .get(rel)
            .filter(|k| k.n_queries == ir.n_queries)
            .ok_or_else(|| EvalError::RelationMismatch(rel.clone()))?;
        choice.insert(rel.clone(), pick(ir.mrr, kge.mrr));
    }
    if let Some(extra) = kge_valid.per_relation.keys().find(|r| !ir_valid.per_relation.contains_key(*r)) {
        return Err(EvalError::RelationMismatch(extra.clone()));
    }
    Ok(EnsemblePolicy { choice, default: pick(ir_valid.mrr, kge_valid.mrr) })
}

/// The chosen model's ranking for every query, unmodified.
pub fn apply_ensemble<T: Clone>(
    policy: &EnsemblePolicy,
    ir_preds: &[RankedPrediction<T>],
    kge_preds: &[RankedPrediction<T>],
) -> Result<Vec<RankedPrediction<T>>, EvalError> {
    if ir_preds.len() != kge_preds.len() {
        return Err(EvalError::QueryMismatch(ir_preds.len().min(kge_preds.len())));
    }
    ir_preds
        .iter()
        .zip(kge_preds)
        .enumerate()
        .map(|(i, (ir, kge))| {
            if ir.query != kge.query {
                return Err(EvalError::QueryMismatch(i));
            }
            Ok(match policy.choose(&ir.query.relation) {
                ModelChoice::Ir => ir.clone(),
                ModelChoice::Kge => kge.clone(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::RelationMetrics;
    use crate::kg::TripleQuery;

    fn report(rels: &[(&str, f64)]) -> MetricReport {
        let per_relation: BTreeMap<String, RelationMetrics> = rels
            .iter()
            .map(|&(r, mrr)| (r.to_string(), RelationMetrics { mrr, hits: BTreeMap::new(), n_queries: 2 }))
            .collect();
        let mrr = rels.iter().map(|r| r.1).sum::<f64>() / rels.len() as f64;
        MetricReport { mrr, hits: BTreeMap::new(), per_relation, n_queries: 2 * rels.len() }
    }

    #[test]
    fn choices_and_ties() {
        let p = fit_ensemble(&report(&[("P509", 0.284), ("P19", 0.5)]), &report(&[("P509", 0.237), ("P19", 0.5)])).unwrap();
        assert_eq!(p.choose("P509"), ModelChoice::Ir);
        assert_eq!(p.choose("P19"), ModelChoice::Kge);
        assert_eq!(p.default, ModelChoice::Ir);
        assert_eq!(p.choose("unseen"), ModelChoice::Ir);
    }

    #[test]
    fn mismatched_reports() {
        assert!(matches!(
            fit_ensemble(&report(&[("a", 0.1)]), &report(&[("b", 0.1)])),
            Err(EvalError::RelationMismatch(_))
        ));
        assert!(fit_ensemble(&report(&[("a", 0.1)]), &report(&[("a", 0.1), ("b", 0.2)])).is_err());
    }

    fn preds(tag: f64) -> Vec<RankedPrediction<f64>> {
        ["r", "s"]
            .iter()
            .map(|r| RankedPrediction {
                query: TripleQuery { head: "h".into(), relation: r.to_string(), answer: Some("t".into()) },
                ranking: vec![("t".into(), tag)],
            })
            .collect()
    }

    #[test]
    fn apply_selects_whole_rankings() {
        let all_ir = EnsemblePolicy { choice: BTreeMap::new(), default: ModelChoice::Ir };
        assert_eq!(apply_ensemble(&all_ir, &preds(1.0), &preds(2.0)).unwrap(), preds(1.0));
        let mixed = EnsemblePolicy { choice: [("s".to_string(), ModelChoice::Kge)].into(), default: ModelChoice::Ir };
        let out = apply_ensemble(&mixed, &preds(1.0), &preds(2.0)).unwrap();
        assert_eq!((out[0].ranking[0].1, out[1].ranking[0].1), (1.0, 2.0));
        let mut other = preds(2.0);
        other[1].query.head = "x".into();
        assert!(matches!(apply_ensemble(&mixed, &preds(1.0), &other), Err(EvalError::QueryMismatch(1))));
    }

    #[test]
    fn policy_json() {
        let p = EnsemblePolicy { choice: [("r".to_string(), ModelChoice::Ir)].into(), default: ModelChoice::Kge };
        let v = serde_json::to_value(&p).unwrap();
        assert_eq!(v["choice"]["r"], "IR");
        assert_eq!(v["default"], "KGE");
    }
}
