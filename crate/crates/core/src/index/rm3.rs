//! RM3 pseudo-relevance feedback.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::InvertedIndex;
use crate::error::{Error, Result};
use crate::ranked::RankedList;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Rm3Params {
    pub fb_docs: usize,
    pub fb_terms: usize,
    /// Mixing weight of the original query; `1 - original_weight` goes to the feedback model.
    pub original_weight: f64,
    /// Feedback terms shorter than this (in chars) are not candidates.
    pub min_term_length: usize,
}

impl Default for Rm3Params {
    fn default() -> Self {
        Self {
            fb_docs: 10,
            fb_terms: 10,
            original_weight: 0.5,
            min_term_length: 2,
        }
    }
}

impl Rm3Params {
    pub fn validate(&self) -> Result<()> {
        if self.fb_docs == 0 || self.fb_terms == 0 {
            return Err(Error::InvalidArgument(
                "rm3 fb_docs and fb_terms must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.original_weight) {
            return Err(Error::InvalidArgument(format!(
                "rm3 original_weight must be in [0, 1], got {}",
                self.original_weight
            )));
        }
        Ok(())
    }
}

/// Query terms with weights, ordered by weight descending then term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedQuery {
    terms: Vec<(String, f64)>,
}

impl WeightedQuery {
    pub fn from_weights(mut terms: Vec<(String, f64)>) -> Self {
        terms.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self { terms }
    }

    /// Equal weight on every distinct term, summing to one.
    pub fn uniform(terms: &[String]) -> Self {
        let distinct: BTreeSet<&String> = terms.iter().collect();
        let w = 1.0 / distinct.len().max(1) as f64;
        Self::from_weights(distinct.into_iter().map(|t| (t.clone(), w)).collect())
    }

    pub fn terms(&self) -> &[(String, f64)] {
        &self.terms
    }

    pub fn weight(&self, term: &str) -> f64 {
        self.terms
            .iter()
            .find(|(t, _)| t == term)
            .map_or(0.0, |(_, w)| *w)
    }

    pub fn total_weight(&self) -> f64 {
        self.terms.iter().map(|(_, w)| w).sum()
    }
}

fn is_feedback_candidate(term: &str, min_len: usize) -> bool {
    term.chars().count() >= min_len && !term.chars().all(|c| c.is_ascii_digit())
}

impl InvertedIndex {
    /// Estimates a relevance model from the top `fb_docs` units of `ranked`
    /// and interpolates it with the original query.
    ///
    /// Each feedback unit contributes its length-normalised term distribution,
    /// weighted by its share of the feedback scores.
    pub fn rm3_expand(
        &self,
        query_terms: &[String],
        ranked: &RankedList,
        params: &Rm3Params,
    ) -> Result<WeightedQuery> {
        params.validate()?;
        if ranked.is_empty() {
            return Err(Error::NoFeedbackDocuments);
        }
        let feedback: Vec<(u32, f64)> = ranked
            .entries()
            .iter()
            .take(params.fb_docs)
            .filter_map(|e| self.ordinal(&e.id).map(|o| (o, e.score)))
            .filter(|&(o, _)| self.doc_length(o) > 0)
            .collect();
        if feedback.is_empty() {
            return Err(Error::NoFeedbackDocuments);
        }
        let score_sum: f64 = feedback.iter().map(|&(_, s)| s).sum();
        let uniform = score_sum.is_nan() || score_sum <= 0.0;

        let mut model: HashMap<&str, f64> = HashMap::new();
        for &(ordinal, score) in &feedback {
            let doc_weight = if uniform {
                1.0 / feedback.len() as f64
            } else {
                score / score_sum
            };
            let len = f64::from(self.doc_length(ordinal));
            for (term, tf) in self.term_frequencies(ordinal) {
                if is_feedback_candidate(term, params.min_term_length) {
                    *model.entry(term).or_insert(0.0) += doc_weight * f64::from(tf) / len;
                }
            }
        }
        let mut model: Vec<(&str, f64)> = model.into_iter().collect();
        model.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        model.truncate(params.fb_terms);
        let model_sum: f64 = model.iter().map(|(_, w)| w).sum();

        let original = WeightedQuery::uniform(query_terms);
        let mut mixed: HashMap<String, f64> = HashMap::new();
        if !original.terms().is_empty() {
            for (term, w) in original.terms() {
                *mixed.entry(term.clone()).or_insert(0.0) += params.original_weight * w;
            }
        }
        let feedback_weight = if original.terms().is_empty() {
            1.0
        } else {
            1.0 - params.original_weight
        };
        if model_sum > 0.0 {
            for (term, w) in model {
                *mixed.entry(term.to_string()).or_insert(0.0) += feedback_weight * w / model_sum;
            }
        }
        mixed.retain(|_, w| *w > 0.0);
        Ok(WeightedQuery::from_weights(mixed.into_iter().collect()))
    }
}
