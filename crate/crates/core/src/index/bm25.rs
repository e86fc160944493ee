use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{InvertedIndex, WeightedQuery};
use crate::error::{Error, Result};
use crate::ranked::{by_score_then_id, RankedList, Scored};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self::DOCUMENT
    }
}

impl Bm25Params {
    /// Tuned for short passages.
    pub const PASSAGE: Self = Self { k1: 0.82, b: 0.68 };
    /// Toolkit defaults.
    pub const DOCUMENT: Self = Self { k1: 0.9, b: 0.4 };

    pub fn new(k1: f64, b: f64) -> Result<Self> {
        let params = Self { k1, b };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k1 > 0.0 && self.k1.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "bm25 k1 must be positive, got {}",
                self.k1
            )));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::InvalidArgument(format!(
                "bm25 b must be in [0, 1], got {}",
                self.b
            )));
        }
        Ok(())
    }
}

/// `ln(1 + (N - df + 0.5) / (df + 0.5))`, never negative.
pub fn bm25_idf(doc_count: usize, doc_freq: usize) -> f64 {
    let n = doc_count as f64;
    let df = doc_freq as f64;
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

pub fn bm25_term_score(
    idf: f64,
    tf: u32,
    doc_len: u32,
    avg_doc_len: f64,
    params: Bm25Params,
) -> f64 {
    let tf = f64::from(tf);
    let norm = 1.0 - params.b + params.b * f64::from(doc_len) / avg_doc_len;
    idf * tf * (params.k1 + 1.0) / (tf + params.k1 * norm)
}

impl InvertedIndex {
    /// Top-`k0` units by BM25 for a bag of query terms (repeated terms count
    /// once per occurrence). Only units matching at least one term are returned.
    pub fn bm25_search(
        &self,
        qid: &str,
        terms: &[String],
        k0: usize,
        params: Bm25Params,
    ) -> RankedList {
        let weighted: Vec<(&str, f64)> = terms.iter().map(|t| (t.as_str(), 1.0)).collect();
        self.search_weighted_terms(qid, &weighted, k0, params, false)
    }

    /// BM25 with each term's contribution multiplied by its query weight.
    /// Terms with non-positive weight are ignored.
    pub fn bm25_weighted_search(
        &self,
        qid: &str,
        query: &WeightedQuery,
        k0: usize,
        params: Bm25Params,
    ) -> RankedList {
        let weighted: Vec<(&str, f64)> = query
            .terms()
            .iter()
            .map(|(t, w)| (t.as_str(), *w))
            .collect();
        self.search_weighted_terms(qid, &weighted, k0, params, true)
    }

    fn search_weighted_terms(
        &self,
        qid: &str,
        terms: &[(&str, f64)],
        k0: usize,
        params: Bm25Params,
        scale: bool,
    ) -> RankedList {
        let mut acc: HashMap<u32, f64> = HashMap::new();
        for &(term, weight) in terms {
            if weight <= 0.0 {
                continue;
            }
            let postings = self.postings(term);
            if postings.is_empty() {
                continue;
            }
            let idf = bm25_idf(self.len(), postings.len());
            for p in postings {
                let s = bm25_term_score(
                    idf,
                    p.tf,
                    self.doc_length(p.unit),
                    self.avg_doc_length(),
                    params,
                );
                *acc.entry(p.unit).or_insert(0.0) += if scale { weight * s } else { s };
            }
        }
        let mut entries: Vec<Scored> = acc
            .into_iter()
            .map(|(unit, score)| Scored::new(self.unit_id(unit), score))
            .collect();
        top_k(&mut entries, k0);
        RankedList::new(qid, "bm25", entries).expect("bm25 scores are finite and ids unique")
    }
}

/// Keeps the best `k` entries, sorted by score descending then id.
pub(crate) fn top_k(entries: &mut Vec<Scored>, k: usize) {
    if k < entries.len() {
        if k > 0 {
            entries.select_nth_unstable_by(k - 1, by_score_then_id);
        }
        entries.truncate(k);
    }
    entries.sort_by(by_score_then_id);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::{build_index, tokenize, IndexUnit};

    fn tiny() -> InvertedIndex {
        build_index([
            IndexUnit::plain("d1", "a b"),
            IndexUnit::plain("d2", "a a"),
            IndexUnit::plain("d3", "c"),
        ])
        .unwrap()
    }

    fn q(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn idf_is_never_negative() {
        for n in 1..20 {
            for df in 0..=n {
                assert!(bm25_idf(n, df) >= 0.0);
            }
        }
    }

    #[test]
    fn absent_term_gives_empty_list() {
        assert!(tiny()
            .bm25_search("q", &q("zzz"), 10, Bm25Params::DOCUMENT)
            .is_empty());
        assert!(tiny()
            .bm25_search("q", &[], 10, Bm25Params::DOCUMENT)
            .is_empty());
    }

    #[test]
    fn k0_caps_output_and_larger_k0_returns_matches_only() {
        let index = tiny();
        let all = index.bm25_search("q", &q("a"), 100, Bm25Params::DOCUMENT);
        assert_eq!(all.ids().collect::<Vec<_>>(), ["d2", "d1"]);
        let one = index.bm25_search("q", &q("a"), 1, Bm25Params::DOCUMENT);
        assert_eq!(one.ids().collect::<Vec<_>>(), ["d2"]);
    }

    #[test]
    fn ties_break_by_id() {
        let index = build_index([
            IndexUnit::plain("z", "x y"),
            IndexUnit::plain("m", "x y"),
            IndexUnit::plain("a", "x y"),
        ])
        .unwrap();
        let list = index.bm25_search("q", &q("x"), 2, Bm25Params::DOCUMENT);
        assert_eq!(list.ids().collect::<Vec<_>>(), ["a", "m"]);
    }

    #[test]
    fn uniform_weights_preserve_order() {
        let index = build_index([
            IndexUnit::plain("d1", "apple banana cherry"),
            IndexUnit::plain("d2", "banana banana"),
            IndexUnit::plain("d3", "cherry apple apple pie"),
            IndexUnit::plain("d4", "pie"),
        ])
        .unwrap();
        let terms = q("apple banana pie");
        let plain = index.bm25_search("q", &terms, 10, Bm25Params::PASSAGE);
        let weighted = WeightedQuery::uniform(&terms);
        let scaled = index.bm25_weighted_search("q", &weighted, 10, Bm25Params::PASSAGE);
        assert_eq!(
            plain.ids().collect::<Vec<_>>(),
            scaled.ids().collect::<Vec<_>>()
        );
        for (a, b) in plain.entries().iter().zip(scaled.entries()) {
            assert!((a.score / 3.0 - b.score).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_weight_contributes_nothing() {
        let index = tiny();
        let query = WeightedQuery::from_weights(vec![("a".into(), 1.0), ("c".into(), 0.0)]);
        let list = index.bm25_weighted_search("q", &query, 10, Bm25Params::DOCUMENT);
        assert_eq!(list.ids().collect::<Vec<_>>(), ["d2", "d1"]);
    }

    #[test]
    fn invalid_params() {
        assert!(Bm25Params::new(0.0, 0.5).is_err());
        assert!(Bm25Params::new(1.2, 1.5).is_err());
        assert!(Bm25Params::new(1.2, 0.0).is_ok());
    }
}
