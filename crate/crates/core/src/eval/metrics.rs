use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use super::{Qrels, Run};
use crate::error::{Error, Result};

/// Minimum grade counted as relevant by the binary metrics.
pub const DEFAULT_REL_THRESHOLD: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    /// Reciprocal rank of the first relevant hit within the cutoff.
    Mrr(usize),
    /// nDCG with linear gain at the cutoff.
    Ndcg(usize),
    /// Average precision to the given depth.
    Map(usize),
    /// Fraction of relevant documents retrieved within the cutoff.
    Recall(usize),
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Mrr(k) => write!(f, "mrr@{k}"),
            Metric::Ndcg(k) => write!(f, "ndcg@{k}"),
            Metric::Map(1000) => write!(f, "map"),
            Metric::Map(k) => write!(f, "map@{k}"),
            Metric::Recall(k) => write!(f, "recall@{k}"),
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    /// `mrr@k`, `ndcg@k`, `map`, `map@k`, `recall@k`. Cutoffs are mandatory
    /// except for `map`, which defaults to depth 1000.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("unknown metric `{s}`"));
        let lower = s.trim().to_ascii_lowercase();
        let (name, cutoff) = match lower.split_once('@') {
            Some((name, k)) => {
                let k: usize = k.parse().map_err(|_| bad())?;
                if k == 0 {
                    return Err(Error::InvalidArgument(format!(
                        "metric cutoff must be positive in `{s}`"
                    )));
                }
                (name.to_string(), Some(k))
            }
            None => (lower, None),
        };
        let need = |k: Option<usize>| {
            k.ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "metric `{s}` needs an explicit cutoff, e.g. `{name}@10`"
                ))
            })
        };
        match name.as_str() {
            "mrr" | "rr" => Ok(Metric::Mrr(need(cutoff)?)),
            "ndcg" | "ndcg_cut" => Ok(Metric::Ndcg(need(cutoff)?)),
            "map" | "ap" => Ok(Metric::Map(cutoff.unwrap_or(1000))),
            "recall" | "r" => Ok(Metric::Recall(need(cutoff)?)),
            _ => Err(bad()),
        }
    }
}

/// Per-query values and their mean.
///
/// Every qid in the qrels is evaluated; a qid missing from the run scores 0.
/// `None` marks an undefined value (recall without relevant documents), which
/// is left out of the mean.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub metric: Metric,
    pub per_query: BTreeMap<String, Option<f64>>,
    pub mean: f64,
}

impl MetricReport {
    fn from_values(metric: Metric, per_query: BTreeMap<String, Option<f64>>) -> Self {
        let defined: Vec<f64> = per_query.values().flatten().copied().collect();
        let mean = if defined.is_empty() {
            0.0
        } else {
            defined.iter().sum::<f64>() / defined.len() as f64
        };
        Self {
            metric,
            per_query,
            mean,
        }
    }

    pub fn get(&self, qid: &str) -> Option<f64> {
        self.per_query.get(qid).copied().flatten()
    }
}

fn per_query(
    run: &Run,
    qrels: &Qrels,
    metric: Metric,
    f: impl Fn(&[&str], &BTreeMap<String, u32>) -> Option<f64>,
) -> MetricReport {
    let values = qrels
        .iter()
        .map(|(qid, judgments)| (qid.to_string(), f(&run.ranking(qid), judgments)))
        .collect();
    MetricReport::from_values(metric, values)
}

fn is_relevant(judgments: &BTreeMap<String, u32>, docid: &str, threshold: u32) -> bool {
    judgments.get(docid).is_some_and(|&g| g >= threshold)
}

fn relevant_count(judgments: &BTreeMap<String, u32>, threshold: u32) -> usize {
    judgments.values().filter(|&&g| g >= threshold).count()
}

pub fn mrr_at_k(run: &Run, qrels: &Qrels, k: usize, threshold: u32) -> MetricReport {
    per_query(run, qrels, Metric::Mrr(k), |ranking, judgments| {
        let first = ranking
            .iter()
            .take(k)
            .position(|d| is_relevant(judgments, d, threshold));
        Some(first.map_or(0.0, |r| 1.0 / (r + 1) as f64))
    })
}

fn dcg(gains: impl Iterator<Item = u32>) -> f64 {
    gains
        .enumerate()
        .map(|(r, g)| f64::from(g) / ((r + 2) as f64).log2())
        .sum()
}

/// Linear-gain nDCG: grades are used as gains directly.
pub fn ndcg_at_k(run: &Run, qrels: &Qrels, k: usize) -> MetricReport {
    per_query(run, qrels, Metric::Ndcg(k), |ranking, judgments| {
        let mut ideal: Vec<u32> = judgments.values().copied().filter(|&g| g > 0).collect();
        ideal.sort_unstable_by(|a, b| b.cmp(a));
        let idcg = dcg(ideal.into_iter().take(k));
        if idcg == 0.0 {
            return Some(0.0);
        }
        let actual = dcg(ranking
            .iter()
            .take(k)
            .map(|d| judgments.get(*d).copied().unwrap_or(0)));
        Some(actual / idcg)
    })
}

pub fn average_precision(run: &Run, qrels: &Qrels, depth: usize, threshold: u32) -> MetricReport {
    per_query(run, qrels, Metric::Map(depth), |ranking, judgments| {
        let total = relevant_count(judgments, threshold);
        if total == 0 {
            return Some(0.0);
        }
        let mut hits = 0usize;
        let mut sum = 0.0;
        for (r, d) in ranking.iter().take(depth).enumerate() {
            if is_relevant(judgments, d, threshold) {
                hits += 1;
                sum += hits as f64 / (r + 1) as f64;
            }
        }
        Some(sum / total as f64)
    })
}

pub fn recall_at_k(run: &Run, qrels: &Qrels, k: usize, threshold: u32) -> MetricReport {
    per_query(run, qrels, Metric::Recall(k), |ranking, judgments| {
        let total = relevant_count(judgments, threshold);
        if total == 0 {
            return None;
        }
        let found = ranking
            .iter()
            .take(k)
            .filter(|d| is_relevant(judgments, d, threshold))
            .count();
        Some(found as f64 / total as f64)
    })
}

pub fn evaluate(run: &Run, qrels: &Qrels, metric: Metric, threshold: u32) -> MetricReport {
    match metric {
        Metric::Mrr(k) => mrr_at_k(run, qrels, k, threshold),
        Metric::Ndcg(k) => ndcg_at_k(run, qrels, k),
        Metric::Map(depth) => average_precision(run, qrels, depth, threshold),
        Metric::Recall(k) => recall_at_k(run, qrels, k, threshold),
    }
}
