//! Reciprocal rank fusion and fusion-query construction.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::Topic;
use crate::error::{Error, Result};
use crate::index::tokenize;
use crate::ranked::{RankedList, Scored};

/// Words dropped by [`QueryMode::Keyword`].
pub const STOPWORDS: [&str; 30] = [
    "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "how", "in", "is", "it", "of",
    "on", "or", "that", "the", "this", "to", "was", "what", "when", "where", "which", "who", "why",
    "will", "with",
];

pub fn is_stopword(term: &str) -> bool {
    STOPWORDS.contains(&term)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub rrf_k: f64,
    /// Entries read from the head of each input list.
    pub depth: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            rrf_k: 60.0,
            depth: 1000,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rrf_k > 0.0 && self.rrf_k.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "rrf_k must be positive, got {}",
                self.rrf_k
            )));
        }
        if self.depth == 0 {
            return Err(Error::InvalidArgument(
                "fusion depth must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// `score(d) = Σ 1 / (rrf_k + rank)` over the lists containing `d`, ranks from 1.
///
/// Ties are broken by id. All lists must share one qid.
pub fn rrf_fuse(lists: &[RankedList], cfg: &FusionConfig) -> Result<RankedList> {
    cfg.validate()?;
    let first = lists
        .first()
        .ok_or_else(|| Error::InvalidArgument("rank fusion needs at least one list".into()))?;
    let mut scores: HashMap<&str, f64> = HashMap::new();
    for list in lists {
        if list.qid() != first.qid() {
            return Err(Error::MismatchedQid {
                expected: first.qid().to_string(),
                found: list.qid().to_string(),
            });
        }
        for (rank, id) in list.ids().take(cfg.depth).enumerate() {
            *scores.entry(id).or_insert(0.0) += 1.0 / (cfg.rrf_k + (rank + 1) as f64);
        }
    }
    let entries = scores
        .into_iter()
        .map(|(id, s)| Scored::new(id, s))
        .collect();
    RankedList::from_unsorted(first.qid(), "rrf", entries)
}

/// How a topic becomes a bag-of-words query.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueryMode {
    /// The query field alone.
    #[default]
    Query,
    /// Query and question fields concatenated.
    Concat,
    /// Stopword-filtered query field.
    Keyword,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FusionQuery {
    pub terms: Vec<String>,
    /// Set when [`QueryMode::Concat`] had no question to add.
    pub question_missing: bool,
}

pub fn build_fusion_query(topic: &Topic, mode: QueryMode) -> FusionQuery {
    match mode {
        QueryMode::Query => FusionQuery {
            terms: tokenize(&topic.query),
            question_missing: false,
        },
        QueryMode::Concat => match topic.question.as_deref().filter(|q| !q.trim().is_empty()) {
            Some(question) => FusionQuery {
                terms: tokenize(&format!("{} {}", topic.query, question)),
                question_missing: false,
            },
            None => FusionQuery {
                terms: tokenize(&topic.query),
                question_missing: true,
            },
        },
        QueryMode::Keyword => FusionQuery {
            terms: tokenize(&topic.query)
                .into_iter()
                .filter(|t| !is_stopword(t))
                .collect(),
            question_missing: false,
        },
    }
}
