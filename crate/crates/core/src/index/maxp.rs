use std::collections::HashMap;

use crate::corpus::parse_passage_id;
use crate::error::Result;
use crate::ranked::{RankedList, Scored};

/// Collapses a passage ranking (`docid#n` ids) to one entry per document,
/// scored by its best passage.
pub fn max_passage_collapse(list: &RankedList) -> Result<RankedList> {
    let mut best: HashMap<&str, f64> = HashMap::new();
    for entry in list.entries() {
        let (docid, _) = parse_passage_id(&entry.id)?;
        best.entry(docid)
            .and_modify(|s| *s = s.max(entry.score))
            .or_insert(entry.score);
    }
    let entries = best
        .into_iter()
        .map(|(id, score)| Scored::new(id, score))
        .collect();
    RankedList::from_unsorted(list.qid(), list.tag(), entries)
}
