//! Pairwise reranking of the head of a pointwise ranking.
//!
//! For the top `k1` candidates every ordered pair `(i, j)` is scored with
//! `p[i][j] = P(d_i more relevant than d_j)`. The pairwise matrix is folded
//! into one score per candidate by an [`AggregationMethod`]; candidates below
//! `k1` keep their pointwise order.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mono::{score_batched, ScoringOptions, TextSource};
use crate::ranked::{RankedList, Scored};
use crate::scorer::Scorer;

/// Probabilities are clamped to `[LOG_EPSILON, 1 - LOG_EPSILON]` before taking logs.
pub const LOG_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DuoPrompt {
    pub query: String,
    pub doc0: String,
    pub doc1: String,
    pub rendered: String,
}

/// `Query: {query} Document0: {doc0} Document1: {doc1} Relevant:`
pub fn render_duo_prompt(query: &str, doc0: &str, doc1: &str) -> Result<DuoPrompt> {
    if query.is_empty() || doc0.is_empty() || doc1.is_empty() {
        return Err(Error::InvalidArgument(
            "duo prompt needs a query and two documents".into(),
        ));
    }
    Ok(DuoPrompt {
        query: query.to_string(),
        doc0: doc0.to_string(),
        doc1: doc1.to_string(),
        rendered: format!("Query: {query} Document0: {doc0} Document1: {doc1} Relevant:"),
    })
}

/// Number of pairwise inferences needed to rerank `k1` candidates.
pub fn inference_count(k1: usize) -> usize {
    k1 * k1.saturating_sub(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregationMethod {
    /// `s_i = Σ_j p[i][j]`
    Sum,
    /// `s_i = Σ_j ln p[i][j]`
    SumLog,
    /// `s_i = Σ_j (p[i][j] + 1 - p[j][i])`
    #[default]
    SymSum,
    /// `s_i = Σ_j (ln p[i][j] + ln(1 - p[j][i]))`
    SymSumLog,
}

impl AggregationMethod {
    pub const ALL: [AggregationMethod; 4] = [
        AggregationMethod::Sum,
        AggregationMethod::SumLog,
        AggregationMethod::SymSum,
        AggregationMethod::SymSumLog,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AggregationMethod::Sum => "sum",
            AggregationMethod::SumLog => "sum-log",
            AggregationMethod::SymSum => "sym-sum",
            AggregationMethod::SymSumLog => "sym-sum-log",
        }
    }
}

impl fmt::Display for AggregationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AggregationMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let normalized = s.to_ascii_lowercase().replace('_', "-");
        Self::ALL
            .into_iter()
            .find(|m| m.name() == normalized || m.name().replace('-', "") == normalized)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown aggregation method `{s}`")))
    }
}

/// Square matrix of pairwise preferences; the diagonal is unused.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseMatrix {
    ids: Vec<String>,
    values: Vec<f64>,
}

impl PairwiseMatrix {
    /// `values[i][j]` for `i != j` must lie in `[0, 1]`; diagonal entries are ignored.
    pub fn new(ids: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self> {
        let n = ids.len();
        if values.len() != n || values.iter().any(|row| row.len() != n) {
            return Err(Error::InvalidArgument(format!(
                "pairwise matrix must be {n}x{n}"
            )));
        }
        Self::from_fn(ids, |i, j| values[i][j])
    }

    pub fn from_fn(ids: Vec<String>, mut p: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let n = ids.len();
        let mut values = vec![f64::NAN; n * n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let v = p(i, j);
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidArgument(format!(
                        "p[{i}][{j}] = {v} is outside [0, 1]"
                    )));
                }
                values[i * n + j] = v;
            }
        }
        Ok(Self { ids, values })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// `p[i][j]`; `NaN` on the diagonal.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.len() + j]
    }

    /// The sub-matrix over the first `k` candidates.
    pub fn leading(&self, k: usize) -> Self {
        let k = k.min(self.len());
        let n = self.len();
        let mut values = Vec::with_capacity(k * k);
        for i in 0..k {
            values.extend_from_slice(&self.values[i * n..i * n + k]);
        }
        Self {
            ids: self.ids[..k].to_vec(),
            values,
        }
    }
}

fn clamped_ln(p: f64) -> f64 {
    p.clamp(LOG_EPSILON, 1.0 - LOG_EPSILON).ln()
}

/// One score per candidate, in matrix order.
pub fn aggregate(matrix: &PairwiseMatrix, method: AggregationMethod) -> Result<Vec<f64>> {
    let n = matrix.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "aggregation needs at least two candidates, got {n}"
        )));
    }
    let term = |i: usize, j: usize| -> f64 {
        let pij = matrix.get(i, j);
        let pji = matrix.get(j, i);
        match method {
            AggregationMethod::Sum => pij,
            AggregationMethod::SumLog => clamped_ln(pij),
            AggregationMethod::SymSum => pij + (1.0 - pji),
            AggregationMethod::SymSumLog => clamped_ln(pij) + clamped_ln(1.0 - pji),
        }
    };
    Ok((0..n)
        .map(|i| (0..n).filter(|&j| j != i).map(|j| term(i, j)).sum())
        .collect())
}

/// Scores all `k * (k - 1)` ordered pairs of `texts`.
pub fn score_pairs(
    query: &str,
    ids: &[&str],
    texts: &[String],
    scorer: &dyn Scorer,
    opts: &ScoringOptions,
) -> Result<PairwiseMatrix> {
    let k = ids.len();
    if k < 2 || texts.len() != k {
        return Err(Error::InvalidArgument(format!(
            "pair scoring needs at least two candidates with texts, got {k}"
        )));
    }
    let pairs: Vec<(usize, usize)> = (0..k)
        .flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect();
    let probs = score_batched(pairs.len(), opts, |range| {
        let batch: Vec<(&str, &str)> = pairs[range]
            .iter()
            .map(|&(i, j)| (texts[i].as_str(), texts[j].as_str()))
            .collect();
        scorer.score_duo(query, &batch)
    })?;
    let mut grid = vec![vec![0.0; k]; k];
    for (&(i, j), p) in pairs.iter().zip(probs) {
        grid[i][j] = p;
    }
    PairwiseMatrix::new(ids.iter().map(|s| s.to_string()).collect(), grid)
}

/// Reorders the head of `mono_output` with an already scored matrix whose ids
/// are the leading entries of `mono_output`; the tail passes through untouched.
///
/// Head entries are scored with their aggregate, shifted by a constant so
/// that the lowest head score sits one unit above the first tail score.
pub fn merge_head(
    mono_output: &RankedList,
    matrix: &PairwiseMatrix,
    method: AggregationMethod,
) -> Result<RankedList> {
    let k = matrix.len();
    if k < 2 {
        return Ok(mono_output.clone().with_tag("duo"));
    }
    let head = &mono_output.entries()[..k];
    if head.iter().zip(matrix.ids()).any(|(e, id)| &e.id != id) {
        return Err(Error::InvalidArgument(
            "pairwise matrix ids must match the head of the ranking".into(),
        ));
    }
    let scores = aggregate(matrix, method)?;
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let tail = &mono_output.entries()[k..];
    let offset = match tail.first() {
        Some(first) => {
            let head_min = scores.iter().copied().fold(f64::INFINITY, f64::min);
            first.score - head_min + 1.0
        }
        None => 0.0,
    };
    let mut entries: Vec<Scored> = order
        .into_iter()
        .map(|i| Scored::new(head[i].id.clone(), scores[i] + offset))
        .collect();
    entries.extend_from_slice(tail);
    RankedList::new(mono_output.qid(), "duo", entries)
}

/// Pairwise reranking of the top `k1` entries of `mono_output`.
///
/// `k1` is clamped to the list length; with fewer than two candidates no pairs
/// are scored and the input comes back unchanged.
pub fn duo_rerank(
    query: &str,
    mono_output: &RankedList,
    k1: usize,
    method: AggregationMethod,
    scorer: &dyn Scorer,
    texts: &dyn TextSource,
    opts: &ScoringOptions,
) -> Result<RankedList> {
    let k = k1.min(mono_output.len());
    if k < 2 {
        return Ok(mono_output.clone().with_tag("duo"));
    }
    let ids: Vec<&str> = mono_output.ids().take(k).collect();
    let head_texts = ids
        .iter()
        .map(|id| {
            texts
                .text(id)
                .ok_or_else(|| Error::MissingText(id.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let matrix = score_pairs(query, &ids, &head_texts, scorer, opts)?;
    merge_head(mono_output, &matrix, method)
}
