use std::collections::HashMap;

use super::{FusionStage, Pipeline};
use crate::corpus::Topic;
use crate::duo::{inference_count, merge_head, score_pairs, AggregationMethod};
use crate::error::{Error, Result};
use crate::eval::{evaluate, Metric, Qrels, Run};
use crate::ranked::RankedList;

/// One point of a pairwise-depth sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub k1: usize,
    pub method: AggregationMethod,
    pub metric: Metric,
    pub value: f64,
    /// Pairwise inferences per query at this depth.
    pub inference_count: usize,
}

impl Pipeline<'_> {
    /// Evaluates the pairwise stage at every `k1` and method.
    ///
    /// Pairs are scored once per query at the largest depth and every smaller
    /// depth reuses the leading block of that matrix. `k1 < 2` reports the
    /// pointwise ranking. Requires the pointwise stage to be enabled.
    pub fn sweep_k1(
        &self,
        topics: &[Topic],
        qrels: &Qrels,
        k1_values: &[usize],
        methods: &[AggregationMethod],
        metric: Metric,
        rel_threshold: u32,
    ) -> Result<Vec<SweepRow>> {
        if !self.config.mono.enabled {
            return Err(Error::InvalidArgument(
                "a k1 sweep needs the mono stage enabled".into(),
            ));
        }
        if self.fusion_at(FusionStage::Rerank) {
            return Err(Error::InvalidArgument(
                "a k1 sweep does not support fusion after reranking".into(),
            ));
        }
        if k1_values.is_empty() || methods.is_empty() {
            return Err(Error::InvalidArgument(
                "a k1 sweep needs at least one depth and one method".into(),
            ));
        }
        super::check_unique_qids(topics)?;
        let max_k1 = k1_values.iter().copied().max().unwrap_or(0);

        let mut lists: HashMap<(usize, AggregationMethod), Vec<RankedList>> = HashMap::new();
        for topic in topics {
            let h0 = self.first_stage(topic)?;
            let mono = self.mono_stage(topic, &h0)?.expect("mono enabled");
            let depth = max_k1.min(mono.list.len());
            let matrix = if depth >= 2 {
                let texts = self.duo_texts(&mono);
                let ids: Vec<&str> = mono.list.ids().take(depth).collect();
                let head_texts = ids
                    .iter()
                    .map(|id| {
                        texts
                            .text(id)
                            .ok_or_else(|| Error::MissingText(id.to_string()))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Some(score_pairs(
                    self.rerank_query(topic),
                    &ids,
                    &head_texts,
                    self.scorer,
                    &self.config.duo.scoring,
                )?)
            } else {
                None
            };
            for &k1 in k1_values {
                for &method in methods {
                    let list = match &matrix {
                        Some(m) if k1 >= 2 => {
                            merge_head(&mono.list, &m.leading(k1.min(m.len())), method)?
                        }
                        _ => mono.list.clone(),
                    };
                    lists.entry((k1, method)).or_default().push(list);
                }
            }
        }

        let mut rows = Vec::new();
        for &k1 in k1_values {
            for &method in methods {
                let run = Run::from_lists(lists.get(&(k1, method)).into_iter().flatten(), "sweep");
                let report = evaluate(&run, qrels, metric, rel_threshold);
                rows.push(SweepRow {
                    k1,
                    method,
                    metric,
                    value: report.mean,
                    inference_count: inference_count(k1),
                });
            }
        }
        Ok(rows)
    }
}
