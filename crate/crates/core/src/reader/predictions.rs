//! `predictions.tsv`: `query_index  head  relation  rank  entity  score`, ranks from 1.
//! Queries with an empty ranking have no rows.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{RankedPrediction, ReaderError};
use crate::kg::TripleQuery;
use crate::scalar::Scalar;

pub fn write_predictions<T: Scalar>(predictions: &[RankedPrediction<T>], path: &Path) -> Result<(), ReaderError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for (i, p) in predictions.iter().enumerate() {
        for (rank, (entity, score)) in p.ranking.iter().enumerate() {
            writeln!(w, "{i}\t{}\t{}\t{}\t{entity}\t{score}", p.query.head, p.query.relation, rank + 1)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads rows back against the query list they were written for.
pub fn read_predictions<T: Scalar>(path: &Path, queries: &[TripleQuery]) -> Result<Vec<RankedPrediction<T>>, ReaderError> {
    let text = fs::read_to_string(path)?;
    let mut out: Vec<RankedPrediction<T>> =
        queries.iter().map(|q| RankedPrediction { query: q.clone(), ranking: Vec::new() }).collect();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
        let bad = |msg: &str| ReaderError::Predictions(format!("{}:{}: {msg}", path.display(), n + 1));
        let cols: Vec<&str> = line.split('\t').collect();
        let [idx, head, rel, rank, entity, score] = cols[..] else {
            return Err(bad("expected 6 columns"));
        };
        let idx: usize = idx.parse().map_err(|_| bad("bad query index"))?;
        let rank: usize = rank.parse().map_err(|_| bad("bad rank"))?;
        let score: f64 = score.parse().map_err(|_| bad("bad score"))?;
        let p = out.get_mut(idx).ok_or_else(|| bad("query index out of range"))?;
        if p.query.head != head || p.query.relation != rel {
            return Err(bad("row does not match the query list"));
        }
        if rank != p.ranking.len() + 1 {
            return Err(bad("ranks must be consecutive from 1"));
        }
        p.ranking.push((entity.to_string(), T::of(score)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(h: &str, r: &str) -> TripleQuery {
        TripleQuery { head: h.into(), relation: r.into(), answer: None }
    }

    #[test]
    fn round_trip_with_empty_ranking() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("predictions.tsv");
        let preds = vec![
            RankedPrediction { query: q("a", "r"), ranking: vec![("b".into(), 0.75f32), ("c".into(), 0.125)] },
            RankedPrediction { query: q("b", "r::inv"), ranking: vec![] },
            RankedPrediction { query: q("c", "r"), ranking: vec![("a".into(), 1e-7)] },
        ];
        write_predictions(&preds, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next(), Some("0\ta\tr\t1\tb\t0.75"));
        let queries: Vec<_> = preds.iter().map(|p| p.query.clone()).collect();
        assert_eq!(read_predictions::<f32>(&path, &queries).unwrap(), preds);
    }

    #[test]
    fn mismatched_rows_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.tsv");
        fs::write(&path, "0\ta\tr\t2\tb\t1\n").unwrap();
        assert!(read_predictions::<f64>(&path, &[q("a", "r")]).is_err());
        fs::write(&path, "0\tz\tr\t1\tb\t1\n").unwrap();
        assert!(read_predictions::<f64>(&path, &[q("a", "r")]).is_err());
        fs::write(&path, "3\ta\tr\t1\tb\t1\n").unwrap();
        assert!(read_predictions::<f64>(&path, &[q("a", "r")]).is_err());
    }
}
