//! Relevance judgments, run files and retrieval metrics.

mod metrics;
mod trec;

use std::collections::BTreeMap;

use crate::error::Result;
use crate::ranked::{RankedList, Scored};

pub use metrics::{
    average_precision, evaluate, mrr_at_k, ndcg_at_k, recall_at_k, Metric, MetricReport,
    DEFAULT_REL_THRESHOLD,
};

/// Graded judgments: qid -> docid -> grade.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, qid: impl Into<String>, docid: impl Into<String>, grade: u32) {
        self.judgments
            .entry(qid.into())
            .or_default()
            .insert(docid.into(), grade);
    }

    pub fn grade(&self, qid: &str, docid: &str) -> Option<u32> {
        self.judgments.get(qid).and_then(|j| j.get(docid)).copied()
    }

    pub fn contains(&self, qid: &str, docid: &str) -> bool {
        self.grade(qid, docid).is_some()
    }

    pub fn judgments(&self, qid: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(qid)
    }

    pub fn qids(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &BTreeMap<String, u32>)> {
        self.judgments.iter().map(|(q, j)| (q.as_str(), j))
    }

    pub fn is_empty(&self) -> bool {
        self.judgments.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunEntry {
    pub docid: String,
    pub rank: usize,
    pub score: f64,
    pub tag: String,
}

/// A system's output for many queries, in rank order per qid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Run {
    queries: BTreeMap<String, Vec<RunEntry>>,
}

impl Run {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends `list` for its qid, with ranks from 1 and the given tag.
    pub fn insert_list(&mut self, list: &RankedList, tag: &str) {
        let entries = list
            .entries()
            .iter()
            .enumerate()
            .map(|(i, e)| RunEntry {
                docid: e.id.clone(),
                rank: i + 1,
                score: e.score,
                tag: tag.to_string(),
            })
            .collect();
        self.queries.insert(list.qid().to_string(), entries);
    }

    pub fn from_lists<'a>(lists: impl IntoIterator<Item = &'a RankedList>, tag: &str) -> Self {
        let mut run = Self::new();
        for list in lists {
            run.insert_list(list, tag);
        }
        run
    }

    pub fn query(&self, qid: &str) -> &[RunEntry] {
        self.queries.get(qid).map_or(&[], Vec::as_slice)
    }

    pub fn qids(&self) -> impl Iterator<Item = &str> {
        self.queries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.queries.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.values().all(Vec::is_empty)
    }

    /// Docids in rank order.
    pub fn ranking(&self, qid: &str) -> Vec<&str> {
        self.query(qid).iter().map(|e| e.docid.as_str()).collect()
    }

    pub fn to_ranked_list(&self, qid: &str) -> Result<RankedList> {
        let entries = self
            .query(qid)
            .iter()
            .map(|e| Scored::new(e.docid.clone(), e.score))
            .collect();
        let tag = self.query(qid).first().map_or("", |e| e.tag.as_str());
        RankedList::new(qid, tag, entries)
    }

    pub fn to_ranked_lists(&self) -> Result<Vec<RankedList>> {
        self.qids().map(|q| self.to_ranked_list(q)).collect()
    }

    /// Multiplies every score by `factor` (for invariance checks).
    pub fn map_scores(&self, f: impl Fn(f64) -> f64) -> Self {
        let mut out = self.clone();
        for entries in out.queries.values_mut() {
            for e in entries {
                e.score = f(e.score);
            }
        }
        out
    }

    pub(crate) fn insert_entries(&mut self, qid: String, entries: Vec<RunEntry>) {
        self.queries.insert(qid, entries);
    }
}

/// Drops entries judged in `prior` and renumbers ranks from 1.
pub fn residual_filter(run: &Run, prior: &Qrels) -> Run {
    let mut out = Run::new();
    for qid in run.qids() {
        let kept = run
            .query(qid)
            .iter()
            .filter(|e| !prior.contains(qid, &e.docid))
            .enumerate()
            .map(|(i, e)| RunEntry {
                rank: i + 1,
                ..e.clone()
            })
            .collect();
        out.insert_entries(qid.to_string(), kept);
    }
    out
}
