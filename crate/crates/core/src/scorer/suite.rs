//! Bounded-concurrency scoring of a whole prompt suite.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    average_choices_orderings, reform_probability, AveragingSpace, ReformProbability, ScoreCache,
    ScoreError, ScoringBackend,
};
use crate::prompt::{cell_id_of, PromptItem};
use crate::stimulus::VariantSet;

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub concurrency_limit: usize,
    /// Abort on the first failing item instead of collecting failures.
    pub strict: bool,
    /// Model label recorded on every result.
    pub model: String,
    pub averaging: AveragingSpace,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            concurrency_limit: 8,
            strict: false,
            model: String::new(),
            averaging: AveragingSpace::Probability,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemFailure {
    pub item_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct SuiteReport {
    /// One result per logical cell, sorted by id.
    pub results: Vec<ReformProbability>,
    /// Failed items, sorted by id.
    pub failures: Vec<ItemFailure>,
    pub items_scored: usize,
    pub cache_hits: u64,
    pub backend_calls: u64,
}

impl SuiteReport {
    pub fn cache_hit_rate(&self) -> f64 {
        let total = self.cache_hits + self.backend_calls;
        if total == 0 {
            0.0
        } else {
            self.cache_hits as f64 / total as f64
        }
    }
}

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error("item `{item_id}` failed: {source}")]
    StrictAbort {
        item_id: String,
        #[source]
        source: ScoreError,
    },
}

/// Score every item against its variant set. Choice orderings of one cell
/// are averaged into a single result; a cell with a failed ordering is
/// reported as failed.
pub async fn run_suite(
    items: &[PromptItem],
    variant_sets: &[VariantSet],
    backend: &dyn ScoringBackend,
    cache: Option<&ScoreCache>,
    options: &SuiteOptions,
) -> Result<SuiteReport, SuiteError> {
    let sets: HashMap<(crate::stimulus::Domain, &str), &VariantSet> = variant_sets
        .iter()
        .map(|s| ((s.domain, s.id.as_str()), s))
        .collect();
    let hits_before = cache.map_or(0, |c| c.hits());
    let limit = options.concurrency_limit.max(1);
    let model = options.model.as_str();

    let mut scored = stream::iter(items.iter().map(|item| {
        let set = sets
            .get(&(item.domain, item.variant_set_id.as_str()))
            .copied();
        async move {
            let result = match set {
                Some(set) => reform_probability(item, set, backend, cache, model).await,
                None => Err(ScoreError::SetMismatch {
                    item: item.id.clone(),
                    set: item.variant_set_id.clone(),
                }),
            };
            (item, result)
        }
    }))
    .buffer_unordered(limit);

    let mut by_cell: BTreeMap<String, Vec<ReformProbability>> = BTreeMap::new();
    let mut failures: BTreeMap<String, String> = BTreeMap::new();
    let mut failed_cells: BTreeMap<String, ()> = BTreeMap::new();
    let mut backend_calls = 0u64;
    let mut items_scored = 0usize;
    while let Some((item, result)) = scored.next().await {
        match result {
            Ok(r) => {
                items_scored += 1;
                backend_calls += r.raw_log_probs.len() as u64;
                by_cell
                    .entry(item.cell_id().to_string())
                    .or_default()
                    .push(r);
            }
            Err(source) => {
                if options.strict {
                    return Err(SuiteError::StrictAbort {
                        item_id: item.id.clone(),
                        source,
                    });
                }
                tracing::warn!(item = %item.id, error = %source, "item failed");
                failures.insert(item.id.clone(), source.to_string());
                failed_cells.insert(item.cell_id().to_string(), ());
            }
        }
    }
    drop(scored);

    let cache_hits = cache.map_or(0, |c| c.hits()) - hits_before;
    let mut results = Vec::with_capacity(by_cell.len());
    for (cell, group) in by_cell {
        if failed_cells.contains_key(&cell) {
            continue;
        }
        if group.iter().any(|r| r.choices_ordering.is_some()) {
            match average_choices_orderings(&group, options.averaging) {
                Ok(r) => results.push(r),
                Err(source) => {
                    if options.strict {
                        return Err(SuiteError::StrictAbort {
                            item_id: cell,
                            source,
                        });
                    }
                    failures.insert(cell, source.to_string());
                }
            }
        } else {
            results.extend(group);
        }
    }
    debug_assert!(results.iter().all(|r| cell_id_of(&r.item_id) == r.item_id));

    Ok(SuiteReport {
        results,
        failures: failures
            .into_iter()
            .map(|(item_id, error)| ItemFailure { item_id, error })
            .collect(),
        items_scored,
        cache_hits,
        backend_calls: backend_calls.saturating_sub(cache_hits),
    })
}

pub fn write_results<W: Write>(results: &[ReformProbability], mut out: W) -> std::io::Result<()> {
    for r in results {
        serde_json::to_writer(&mut out, r).map_err(std::io::Error::other)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_results<R: BufRead>(input: R) -> Result<Vec<ReformProbability>, serde_json::Error> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line.map_err(serde_json::Error::io)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::build_suite;
    use crate::scorer::MockBackend;
    use crate::stimulus::{Domain, Experiment, StimulusBundle, StimulusSubset};

    fn block<F: std::future::Future>(f: F) -> F::Output {
        tokio::runtime::Builder::new_current_thread()
            .build()
            .unwrap()
            .block_on(f)
    }

    #[test]
    fn exp2_pronoun_suite_averages_orderings() {
        let b = StimulusBundle::shipped();
        let items =
            build_suite(&b, Experiment::Exp2, Domain::RoleNoun, StimulusSubset::Full).unwrap();
        let items: Vec<_> = items
            .into_iter()
            .filter(|i| i.variant_set_id == "congressperson")
            .collect();
        let cells = crate::prompt::logical_cell_count(&items);
        let mock = MockBackend::new(1);
        let report = block(run_suite(
            &items,
            &b.role_noun_sets,
            &mock,
            None,
            &SuiteOptions::default(),
        ))
        .unwrap();
        assert!(report.failures.is_empty());
        assert_eq!(report.results.len(), cells);
        assert!(report.results.iter().any(|r| r.orderings_averaged == 6));
        let mut ids: Vec<_> = report.results.iter().map(|r| r.item_id.clone()).collect();
        ids.sort();
        assert_eq!(
            ids,
            report
                .results
                .iter()
                .map(|r| r.item_id.clone())
                .collect::<Vec<_>>()
        );
    }

    #[test]
    fn missing_set_strict_and_lenient() {
        let b = StimulusBundle::shipped();
        let items = build_suite(
            &b,
            Experiment::Exp1,
            Domain::RoleNoun,
            StimulusSubset::GptSubset12,
        )
        .unwrap();
        let items = &items[..20];
        let sets: Vec<_> = b
            .role_noun_sets
            .iter()
            .filter(|s| s.id != items[3].variant_set_id)
            .cloned()
            .collect();
        let mock = MockBackend::new(1);
        let lenient = block(run_suite(
            items,
            &sets,
            &mock,
            None,
            &SuiteOptions::default(),
        ))
        .unwrap();
        assert!(lenient.failures.iter().any(|f| f.item_id == items[3].id));
        let strict = SuiteOptions {
            strict: true,
            ..Default::default()
        };
        let err = block(run_suite(items, &sets, &mock, None, &strict)).unwrap_err();
        assert!(err.to_string().contains("failed"));
    }

    #[test]
    fn results_roundtrip() {
        let b = StimulusBundle::shipped();
        let items =
            build_suite(&b, Experiment::Exp1, Domain::Pronoun, StimulusSubset::Full).unwrap();
        let mock = MockBackend::new(2);
        let report = block(run_suite(
            &items[..50],
            &b.pronoun_sets,
            &mock,
            None,
            &SuiteOptions::default(),
        ))
        .unwrap();
        let mut buf = Vec::new();
        write_results(&report.results, &mut buf).unwrap();
        let back = read_results(&buf[..]).unwrap();
        assert_eq!(back, report.results);
    }
}
