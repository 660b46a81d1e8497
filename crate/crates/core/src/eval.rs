//! Ranking metrics over one positive and its sampled negatives, time-bucketed
//! loss, and result serialization.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedQuery {
    pub positive: f64,
    pub negatives: Vec<f64>,
}

impl RankedQuery {
    /// 1-based rank of the positive; ties count against it.
    pub fn rank(&self) -> usize {
        1 + self.negatives.iter().filter(|&&s| s >= self.positive).count()
    }
}

pub fn mrr(queries: &[RankedQuery]) -> Result<f64> {
    if queries.is_empty() {
        return Err(Error::Data("MRR needs at least one query".into()));
    }
    Ok(queries.iter().map(|q| 1.0 / q.rank() as f64).sum::<f64>() / queries.len() as f64)
}

/// Average precision of a scored pool: mean over positives of the precision
/// at the positive's rank. Ties are broken with negatives first.
pub fn average_precision(labels: &[bool], scores: &[f64]) -> Result<f64> {
    if labels.len() != scores.len() {
        return Err(Error::Data(format!("{} labels for {} scores", labels.len(), scores.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Data("NaN score".into()));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::Data("average precision needs at least one positive".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(labels[a].cmp(&labels[b])));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &k) in order.iter().enumerate() {
        if labels[k] {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

/// Average precision over all queries' candidates pooled together.
pub fn pooled_average_precision(queries: &[RankedQuery]) -> Result<f64> {
    let mut labels = Vec::new();
    let mut scores = Vec::new();
    for q in queries {
        labels.push(true);
        scores.push(q.positive);
        labels.extend(std::iter::repeat_n(false, q.negatives.len()));
        scores.extend_from_slice(&q.negatives);
    }
    average_precision(&labels, &scores)
}

/// Mean loss per bucket `[edges[i], edges[i+1])` of `positions` (fractions of
/// the test duration; the last bucket is closed). Empty buckets are `None`.
pub fn time_group_loss(positions: &[f64], losses: &[f64], edges: &[f64]) -> Result<Vec<Option<f64>>> {
    if positions.len() != losses.len() {
        return Err(Error::Data(format!("{} positions for {} losses", positions.len(), losses.len())));
    }
    let valid = edges.len() >= 2
        && edges[0] == 0.0
        && edges[edges.len() - 1] == 1.0
        && edges.windows(2).all(|w| w[0] < w[1]);
    if !valid {
        return Err(Error::Config(format!("bucket edges must ascend from 0 to 1, got {edges:?}")));
    }
    let nb = edges.len() - 1;
    let mut sum = vec![0.0; nb];
    let mut count = vec![0usize; nb];
    for (&x, &l) in positions.iter().zip(losses) {
        let b = edges[1..].iter().position(|&e| x < e).unwrap_or(nb - 1);
        sum[b] += l;
        count[b] += 1;
    }
    Ok(sum
        .iter()
        .zip(&count)
        .map(|(s, &c)| if c > 0 { Some(s / c as f64) } else { None })
        .collect())
}

/// Evenly spaced bucket edges over `[0, 1]`.
pub fn uniform_edges(groups: usize) -> Vec<f64> {
    let g = groups.max(1);
    (0..=g).map(|i| i as f64 / g as f64).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ap: f64,
    pub mrr: f64,
    pub n_queries: usize,
    pub negatives_per_query: usize,
    /// Mean binary cross-entropy over all candidates.
    pub mean_loss: f64,
    pub time_group_edges: Vec<f64>,
    /// Mean candidate loss per bucket of the evaluated time span.
    pub time_group_loss: Vec<Option<f64>>,
}

impl MetricReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub variant: String,
    pub seed: u64,
    pub split: String,
    pub sample_ratio: f64,
    pub train_events: usize,
    pub data_hash: String,
    pub ap: f64,
    pub mrr: f64,
}

/// Writes one row per run with a header.
pub fn write_results_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Serde(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<ResultRow>, _>>()
        .map_err(|e| Error::Serde(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(pos: f64, negs: &[f64]) -> RankedQuery {
        RankedQuery {
            positive: pos,
            negatives: negs.to_vec(),
        }
    }

    #[test]
    fn mrr_examples() {
        assert_eq!(mrr(&[q(1.0, &[0.5; 50])]).unwrap(), 1.0);
        assert_eq!(mrr(&[q(0.0, &[0.5; 50])]).unwrap(), 1.0 / 51.0);
        assert_eq!(mrr(&[q(0.5, &[0.5, 0.1, 0.2])]).unwrap(), 0.5);
        assert!(mrr(&[]).is_err());
    }

    #[test]
    fn ap_examples() {
        let perfect = [q(0.9, &[0.1, 0.2]), q(0.8, &[0.3])];
        assert_eq!(pooled_average_precision(&perfect).unwrap(), 1.0);
        let mut negs = vec![0.0; 50];
        negs[0] = 0.9;
        assert_eq!(pooled_average_precision(&[q(0.5, &negs)]).unwrap(), 0.5);
        assert!(average_precision(&[false, false], &[0.1, 0.2]).is_err());
    }

    #[test]
    fn time_groups() {
        let edges = uniform_edges(4);
        let g = time_group_loss(&[0.1, 0.2], &[1.0, 3.0], &edges).unwrap();
        assert_eq!(g, vec![Some(2.0), None, None, None]);
        let g = time_group_loss(&[0.0, 0.25, 1.0], &[1.0, 2.0, 4.0], &edges).unwrap();
        assert_eq!(g, vec![Some(1.0), Some(2.0), None, Some(4.0)]);
        let all = time_group_loss(&[0.0, 0.5, 1.0], &[1.0, 2.0, 6.0], &[0.0, 1.0]).unwrap();
        assert_eq!(all, vec![Some(3.0)]);
        assert!(time_group_loss(&[], &[], &[0.0, 0.5]).is_err());
    }

    #[test]
    fn results_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.csv");
        let rows = vec![ResultRow {
            variant: "gsnop".into(),
            seed: 3,
            split: "test".into(),
            sample_ratio: 0.5,
            train_events: 10,
            data_hash: "ab".into(),
            ap: 0.25,
            mrr: 0.5,
        }];
        write_results_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("variant,seed,split,sample_ratio,train_events,data_hash,ap,mrr\n"));
        assert_eq!(read_results_csv(&path).unwrap(), rows);
    }
}
