//! The ranked list handed from one stage to the next.

use std::cmp::Ordering;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One scored unit in a [`RankedList`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub id: String,
    pub score: f64,
}

impl Scored {
    pub fn new(id: impl Into<String>, score: f64) -> Self {
        Self {
            id: id.into(),
            score,
        }
    }
}

/// Ordered `(id, score)` pairs for a single query.
///
/// Scores are non-increasing and ids are unique. The `tag` records which
/// stage produced the list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    qid: String,
    tag: String,
    entries: Vec<Scored>,
}

/// Score descending, then id ascending.
pub(crate) fn by_score_then_id(a: &Scored, b: &Scored) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id))
}

impl RankedList {
    /// Builds a list from entries that are already in rank order.
    pub fn new(
        qid: impl Into<String>,
        tag: impl Into<String>,
        entries: Vec<Scored>,
    ) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if e.score.is_nan() {
                return Err(Error::InvalidArgument(format!("NaN score for `{}`", e.id)));
            }
            if i > 0 && entries[i - 1].score < e.score {
                return Err(Error::InvalidArgument(format!(
                    "scores must be non-increasing (`{}` follows `{}` with a higher score)",
                    e.id,
                    entries[i - 1].id
                )));
            }
            if !seen.insert(e.id.as_str()) {
                return Err(Error::DuplicateId(e.id.clone()));
            }
        }
        Ok(Self {
            qid: qid.into(),
            tag: tag.into(),
            entries,
        })
    }

    /// Sorts arbitrary entries by score descending, ties by id ascending.
    pub fn from_unsorted(
        qid: impl Into<String>,
        tag: impl Into<String>,
        mut entries: Vec<Scored>,
    ) -> Result<Self> {
        entries.sort_by(by_score_then_id);
        Self::new(qid, tag, entries)
    }

    pub fn empty(qid: impl Into<String>, tag: impl Into<String>) -> Self {
        Self {
            qid: qid.into(),
            tag: tag.into(),
            entries: Vec::new(),
        }
    }

    pub fn qid(&self) -> &str {
        &self.qid
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.tag = tag.into();
        self
    }

    pub fn entries(&self) -> &[Scored] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<Scored> {
        self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.id.as_str())
    }

    pub fn truncate(&mut self, len: usize) {
        self.entries.truncate(len);
    }
}
