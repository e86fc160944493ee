//! Pointwise reranking: every candidate is scored independently with a
//! relevance probability.

use std::collections::HashMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::batch::run_batches;
use crate::corpus::{segment, Document, SegmentationConfig};
use crate::error::{Error, Result};
use crate::index::InvertedIndex;
use crate::ranked::{RankedList, Scored};
use crate::scorer::{check_probs, with_retries, Scorer, ScorerError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MonoPrompt {
    pub query: String,
    pub document: String,
    pub rendered: String,
}

/// `Query: {query} Document: {document} Relevant:`
pub fn render_mono_prompt(query: &str, document: &str) -> Result<MonoPrompt> {
    if query.is_empty() || document.is_empty() {
        return Err(Error::InvalidArgument(
            "mono prompt needs a query and a document".into(),
        ));
    }
    Ok(MonoPrompt {
        query: query.to_string(),
        document: document.to_string(),
        rendered: format!("Query: {query} Document: {document} Relevant:"),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointwiseScore {
    pub id: String,
    pub probability: f64,
}

/// Batching and retry policy for scorer calls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringOptions {
    /// Items per scorer request.
    pub batch_size: usize,
    /// Concurrent requests per query.
    pub max_in_flight: usize,
    /// Extra attempts after a transport failure.
    pub max_retries: usize,
}

impl Default for ScoringOptions {
    fn default() -> Self {
        Self {
            batch_size: 32,
            max_in_flight: 1,
            max_retries: 2,
        }
    }
}

/// Looks up the text a reranker should see for a unit id.
pub trait TextSource {
    fn text(&self, id: &str) -> Option<String>;
}

impl TextSource for InvertedIndex {
    /// The stored original text; expansions are never part of it.
    fn text(&self, id: &str) -> Option<String> {
        self.stored(id).map(|s| s.full_text())
    }
}

impl TextSource for HashMap<String, String> {
    fn text(&self, id: &str) -> Option<String> {
        self.get(id).cloned()
    }
}

impl<T: TextSource + ?Sized> TextSource for &T {
    fn text(&self, id: &str) -> Option<String> {
        (**self).text(id)
    }
}

/// Scores `count` items in batches, assembling results by item position.
pub(crate) fn score_batched<F>(count: usize, opts: &ScoringOptions, call: F) -> Result<Vec<f64>>
where
    F: Fn(Range<usize>) -> Result<Vec<f64>, ScorerError> + Sync,
{
    let batch = opts.batch_size.max(1);
    let ranges: Vec<Range<usize>> = (0..count)
        .step_by(batch)
        .map(|start| start..(start + batch).min(count))
        .collect();
    let results = run_batches(ranges.len(), opts.max_in_flight, |b| {
        let range = ranges[b].clone();
        with_retries(opts.max_retries, || {
            let probs = call(range.clone())?;
            check_probs(&probs, range.len())?;
            Ok(probs)
        })
    });
    let mut scores = Vec::with_capacity(count);
    let mut failure = None;
    let mut scored = 0;
    for (range, result) in ranges.iter().zip(results) {
        match result {
            Ok(probs) => {
                scored += range.len();
                scores.extend(probs);
            }
            Err(e) => {
                failure.get_or_insert(e);
            }
        }
    }
    match failure {
        None => Ok(scores),
        Some(source) => Err(Error::ScorerAborted {
            scored,
            total: count,
            source,
        }),
    }
}

fn fetch_texts(ids: &[&str], texts: &dyn TextSource) -> Result<Vec<String>> {
    ids.iter()
        .map(|id| {
            texts
                .text(id)
                .ok_or_else(|| Error::MissingText(id.to_string()))
        })
        .collect()
}

/// Orders `(prior position, score)` pairs by score, keeping prior order on ties.
fn rank_by_score(
    ids: &[&str],
    scores: &[f64],
    k_out: usize,
    qid: &str,
    tag: &str,
) -> Result<RankedList> {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order.truncate(k_out);
    let entries = order
        .into_iter()
        .map(|i| Scored::new(ids[i], scores[i]))
        .collect();
    RankedList::new(qid, tag, entries)
}

/// Rescores every candidate with `P(relevant | query, text)` and keeps the
/// best `k_out`. Ties keep the order of `candidates`.
pub fn mono_rerank(
    query: &str,
    candidates: &RankedList,
    texts: &dyn TextSource,
    k_out: usize,
    scorer: &dyn Scorer,
    opts: &ScoringOptions,
) -> Result<RankedList> {
    let ids: Vec<&str> = candidates.ids().collect();
    let docs = fetch_texts(&ids, texts)?;
    let scores = score_batched(docs.len(), opts, |range| {
        let batch: Vec<&str> = docs[range].iter().map(String::as_str).collect();
        scorer.score_mono(query, &batch)
    })?;
    rank_by_score(&ids, &scores, k_out, candidates.qid(), "mono")
}

/// Supplies the passages of a candidate document.
pub trait PassageSource {
    /// `(passage id, text)` in ordinal order.
    fn passages(&self, docid: &str) -> Result<Vec<(String, String)>>;
}

/// Segments documents stored in a document-granularity index.
pub struct SegmentingSource<'a> {
    pub index: &'a InvertedIndex,
    pub segmentation: SegmentationConfig,
}

impl PassageSource for SegmentingSource<'_> {
    fn passages(&self, docid: &str) -> Result<Vec<(String, String)>> {
        let stored = self
            .index
            .stored(docid)
            .ok_or_else(|| Error::MissingText(docid.to_string()))?;
        let doc = Document::new(docid, stored.title.clone(), stored.body.clone())?;
        Ok(segment(&doc, &self.segmentation)?
            .into_iter()
            .map(|p| (p.id(), p.text))
            .collect())
    }
}

/// Reads `docid#n` passages from a passage-granularity index.
pub struct StoredPassages<'a>(pub &'a InvertedIndex);

impl PassageSource for StoredPassages<'_> {
    fn passages(&self, docid: &str) -> Result<Vec<(String, String)>> {
        let ids = self.0.passages_of(docid);
        if ids.is_empty() {
            return Err(Error::MissingText(docid.to_string()));
        }
        ids.into_iter()
            .map(|id| {
                let text = self
                    .0
                    .text(id)
                    .ok_or_else(|| Error::MissingText(id.to_string()))?;
                Ok((id.to_string(), text))
            })
            .collect()
    }
}

impl<F> PassageSource for F
where
    F: Fn(&str) -> Result<Vec<(String, String)>>,
{
    fn passages(&self, docid: &str) -> Result<Vec<(String, String)>> {
        self(docid)
    }
}

/// The best-scoring passage of a document.
#[derive(Debug, Clone, PartialEq)]
pub struct Representative {
    pub passage_id: String,
    pub text: String,
    pub probability: f64,
}

#[derive(Debug, Clone)]
pub struct MaxPOutput {
    pub ranked: RankedList,
    /// Keyed by docid, for every candidate (not only the kept `k_out`).
    pub representatives: HashMap<String, Representative>,
    /// Total passages scored.
    pub passages_scored: usize,
}

impl TextSource for MaxPOutput {
    fn text(&self, id: &str) -> Option<String> {
        self.representatives.get(id).map(|r| r.text.clone())
    }
}

/// Scores every passage of every candidate document; a document's score is
/// its best passage probability, and that passage becomes its representative.
pub fn mono_rerank_maxp(
    query: &str,
    candidates: &RankedList,
    passages: &dyn PassageSource,
    k_out: usize,
    scorer: &dyn Scorer,
    opts: &ScoringOptions,
) -> Result<MaxPOutput> {
    let ids: Vec<&str> = candidates.ids().collect();
    let mut flat: Vec<(usize, String, String)> = Vec::new();
    for (doc, id) in ids.iter().enumerate() {
        let parts = passages.passages(id)?;
        if parts.is_empty() {
            return Err(Error::MissingText(id.to_string()));
        }
        flat.extend(parts.into_iter().map(|(pid, text)| (doc, pid, text)));
    }
    let probs = score_batched(flat.len(), opts, |range| {
        let batch: Vec<&str> = flat[range].iter().map(|(_, _, t)| t.as_str()).collect();
        scorer.score_mono(query, &batch)
    })?;

    let mut best: Vec<Option<usize>> = vec![None; ids.len()];
    for (i, ((doc, _, _), p)) in flat.iter().zip(&probs).enumerate() {
        match best[*doc] {
            Some(j) if probs[j] >= *p => {}
            _ => best[*doc] = Some(i),
        }
    }
    let mut scores = Vec::with_capacity(ids.len());
    let mut representatives = HashMap::with_capacity(ids.len());
    for (doc, b) in best.into_iter().enumerate() {
        let i = b.expect("every document has a passage");
        let (_, pid, text) = &flat[i];
        scores.push(probs[i]);
        representatives.insert(
            ids[doc].to_string(),
            Representative {
                passage_id: pid.clone(),
                text: text.clone(),
                probability: probs[i],
            },
        );
    }
    Ok(MaxPOutput {
        ranked: rank_by_score(&ids, &scores, k_out, candidates.qid(), "mono-maxp")?,
        representatives,
        passages_scored: flat.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorer::{CountingScorer, StubScorer};

    /// Scores a text by the number parsed from it.
    struct Numeric;

    impl Scorer for Numeric {
        fn score_mono(&self, _: &str, texts: &[&str]) -> Result<Vec<f64>, ScorerError> {
            Ok(texts
                .iter()
                .map(|t| t.trim().parse().unwrap_or(0.0))
                .collect())
        }

        fn score_duo(&self, _: &str, pairs: &[(&str, &str)]) -> Result<Vec<f64>, ScorerError> {
            Ok(vec![0.5; pairs.len()])
        }
    }

    struct Flaky {
        failures_left: std::sync::Mutex<usize>,
    }

    impl Scorer for Flaky {
        fn score_mono(&self, _: &str, texts: &[&str]) -> Result<Vec<f64>, ScorerError> {
            let mut left = self.failures_left.lock().unwrap();
            if *left > 0 {
                *left -= 1;
                return Err(ScorerError::Transport("reset".into()));
            }
            Ok(vec![0.5; texts.len()])
        }

        fn score_duo(&self, _: &str, _: &[(&str, &str)]) -> Result<Vec<f64>, ScorerError> {
            unreachable!()
        }
    }

    fn candidates(n: usize) -> (RankedList, HashMap<String, String>) {
        let entries = (0..n)
            .map(|i| Scored::new(format!("d{i:04}"), (n - i) as f64))
            .collect();
        let texts = (0..n)
            .map(|i| (format!("d{i:04}"), "0.5".to_string()))
            .collect();
        (RankedList::new("q", "bm25", entries).unwrap(), texts)
    }

    #[test]
    fn prompt_template() {
        assert_eq!(
            render_mono_prompt("q1", "d1").unwrap().rendered,
            "Query: q1 Document: d1 Relevant:"
        );
        assert_eq!(
            render_mono_prompt("a\nb", "d").unwrap().rendered,
            "Query: a\nb Document: d Relevant:"
        );
        assert!(render_mono_prompt("", "d").is_err());
        assert!(render_mono_prompt("q", "").is_err());
    }

    #[test]
    fn sorts_by_probability() {
        let list = RankedList::new(
            "q",
            "bm25",
            vec![
                Scored::new("a", 3.0),
                Scored::new("b", 2.0),
                Scored::new("c", 1.0),
            ],
        )
        .unwrap();
        let texts = HashMap::from([
            ("a".to_string(), "0.1".to_string()),
            ("b".to_string(), "0.9".to_string()),
            ("c".to_string(), "0.4".to_string()),
        ]);
        let out =
            mono_rerank("q", &list, &texts, 10, &Numeric, &ScoringOptions::default()).unwrap();
        assert_eq!(out.ids().collect::<Vec<_>>(), ["b", "c", "a"]);
        assert_eq!(out.entries()[0].score, 0.9);
    }

    #[test]
    fn constant_scores_keep_input_order() {
        let (list, texts) = candidates(40);
        let out =
            mono_rerank("q", &list, &texts, 40, &Numeric, &ScoringOptions::default()).unwrap();
        assert_eq!(
            out.ids().collect::<Vec<_>>(),
            list.ids().collect::<Vec<_>>()
        );
    }

    #[test]
    fn every_candidate_scored_once() {
        let (list, texts) = candidates(1000);
        let scorer = CountingScorer::new(Numeric);
        let opts = ScoringOptions {
            max_in_flight: 4,
            ..ScoringOptions::default()
        };
        let out = mono_rerank("q", &list, &texts, 50, &scorer, &opts).unwrap();
        assert_eq!(out.len(), 50);
        assert_eq!(scorer.mono_evaluations(), 1000);
        assert_eq!(scorer.requests(), 1000u64.div_ceil(32));
    }

    #[test]
    fn transport_failures_are_retried() {
        let (list, texts) = candidates(3);
        let scorer = Flaky {
            failures_left: std::sync::Mutex::new(2),
        };
        assert!(mono_rerank("q", &list, &texts, 3, &scorer, &ScoringOptions::default()).is_ok());

        let scorer = Flaky {
            failures_left: std::sync::Mutex::new(5),
        };
        match mono_rerank("q", &list, &texts, 3, &scorer, &ScoringOptions::default()) {
            Err(Error::ScorerAborted { scored, total, .. }) => assert_eq!((scored, total), (0, 3)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_text_is_an_error() {
        let (list, _) = candidates(2);
        let err = mono_rerank(
            "q",
            &list,
            &HashMap::new(),
            2,
            &StubScorer::default(),
            &ScoringOptions::default(),
        );
        assert!(matches!(err, Err(Error::MissingText(_))));
    }

    #[test]
    fn maxp_takes_best_passage() {
        let list = RankedList::new(
            "q",
            "bm25",
            vec![Scored::new("d", 1.0), Scored::new("e", 0.5)],
        )
        .unwrap();
        let source = |docid: &str| -> Result<Vec<(String, String)>> {
            Ok(match docid {
                "d" => vec![
                    ("d#0".into(), "0.2".into()),
                    ("d#1".into(), "0.9".into()),
                    ("d#2".into(), "0.4".into()),
                ],
                _ => vec![("e#0".into(), "0.95".into())],
            })
        };
        let scorer = CountingScorer::new(Numeric);
        let out =
            mono_rerank_maxp("q", &list, &source, 10, &scorer, &ScoringOptions::default()).unwrap();
        assert_eq!(
            out.ranked.entries(),
            [Scored::new("e", 0.95), Scored::new("d", 0.9)]
        );
        assert_eq!(out.representatives["d"].passage_id, "d#1");
        assert_eq!(out.text("d").as_deref(), Some("0.9"));
        assert_eq!(out.passages_scored, 4);
        assert_eq!(scorer.mono_evaluations(), 4);
    }
}
