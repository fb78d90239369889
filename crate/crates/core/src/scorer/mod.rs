//! Variant scoring and reform-probability normalization.
//!
//! For an item `i` and variant set `V`, each variant `v` is scored as
//! `log p(v|i)` by a [`ScoringBackend`]; the reform probability is the share
//! of the reform variants after normalizing over all of `V`, computed with
//! log-sum-exp.

mod backend;
mod cache;
mod http;
mod mock;
mod suite;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backend::{
    select_mode, Architecture, BackendError, ScoreRequest, ScoringBackend, ScoringMode,
};
pub use cache::{prompt_sha256, CacheEntry, CacheKey, ScoreCache};
pub use http::{span_log_prob, HttpBackend, HttpBackendConfig, HttpSetupError, Logprobs};
pub use mock::MockBackend;
pub use suite::{
    read_results, run_suite, write_results, ItemFailure, SuiteError, SuiteOptions, SuiteReport,
};

use crate::prompt::{cell_id_of, PromptItem, WayOfAsking};
use crate::stimulus::{Domain, Experiment, GenderClass, VariantSet};

/// Tolerance on the `log_prob <= 0` contract.
const LOG_PROB_SLACK: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("empty variant for item `{0}`")]
    EmptyVariant(String),
    #[error("backend `{backend}` cannot score in {mode} mode")]
    Capability { backend: String, mode: ScoringMode },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("backend returned invalid log-probability {0}")]
    InvalidScore(f64),
    #[error("variants of item `{0}` were scored in different modes")]
    MixedModes(String),
    #[error("cell `{cell}` has orderings {found:?}; all six are required")]
    MissingOrdering { cell: String, found: Vec<usize> },
    #[error("variant set `{set}` does not match item `{item}`")]
    SetMismatch { item: String, set: String },
    #[error("cache write failed: {0}")]
    Cache(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantScore {
    pub item_id: String,
    pub variant: String,
    pub log_prob: f64,
    pub mode: ScoringMode,
    #[serde(skip)]
    pub cached: bool,
}

/// How the six choice orderings of one cell are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AveragingSpace {
    /// Mean of the normalized probabilities.
    #[default]
    Probability,
    /// Mean of the normalized log-probabilities, renormalized.
    LogProbability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReformProbability {
    pub item_id: String,
    pub model: String,
    pub experiment: Experiment,
    pub domain: Domain,
    pub template_id: String,
    pub name: String,
    pub name_class: GenderClass,
    pub preamble_id: String,
    pub way_of_asking: Option<WayOfAsking>,
    pub variant_set_id: String,
    pub mode: ScoringMode,
    pub choices_ordering: Option<usize>,
    pub orderings_averaged: usize,
    pub reform_variants: Vec<String>,
    pub p_reform: f64,
    pub log_p_reform: f64,
    pub per_variant: BTreeMap<String, f64>,
    pub log_per_variant: BTreeMap<String, f64>,
    /// Unnormalized `log p(v|i)`; empty for ordering-averaged cells.
    pub raw_log_probs: BTreeMap<String, f64>,
}

/// Score one variant in the mode implied by the item and backend, going
/// through the cache when one is given.
pub async fn score_variant(
    item: &PromptItem,
    variant: &str,
    backend: &dyn ScoringBackend,
    cache: Option<&ScoreCache>,
) -> Result<VariantScore, ScoreError> {
    if variant.is_empty() {
        return Err(ScoreError::EmptyVariant(item.id.clone()));
    }
    let mode = select_mode(item.slot_at_end, backend.architecture());
    if !backend.supports(mode) {
        return Err(ScoreError::Capability {
            backend: backend.backend_id().to_string(),
            mode,
        });
    }
    let key = cache.map(|_| CacheKey {
        backend_id: backend.backend_id().to_string(),
        mode,
        prompt_sha256: prompt_sha256(&item.text()),
        variant: variant.to_string(),
    });
    if let (Some(cache), Some(key)) = (cache, key.as_ref()) {
        if let Some(log_prob) = cache.get(key) {
            return Ok(VariantScore {
                item_id: item.id.clone(),
                variant: variant.to_string(),
                log_prob,
                mode,
                cached: true,
            });
        }
    }
    let request = ScoreRequest {
        mode,
        prefix: &item.rendered_prefix,
        variant,
        suffix: &item.rendered_suffix,
    };
    let log_prob = backend.log_prob(&request).await?;
    if !log_prob.is_finite() || log_prob > LOG_PROB_SLACK {
        return Err(ScoreError::InvalidScore(log_prob));
    }
    if let (Some(cache), Some(key)) = (cache, key) {
        cache.insert(key, log_prob)?;
    }
    Ok(VariantScore {
        item_id: item.id.clone(),
        variant: variant.to_string(),
        log_prob,
        mode,
        cached: false,
    })
}

/// Stable log-sum-exp.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Normalized shares (linear and log) of each variant.
pub fn normalize(log_probs: &[(String, f64)]) -> (BTreeMap<String, f64>, BTreeMap<String, f64>) {
    let values: Vec<f64> = log_probs.iter().map(|(_, v)| *v).collect();
    let lse = log_sum_exp(&values);
    let mut linear = BTreeMap::new();
    let mut logs = BTreeMap::new();
    for (variant, lp) in log_probs {
        let l = lp - lse;
        logs.insert(variant.clone(), l);
        linear.insert(variant.clone(), l.exp());
    }
    (linear, logs)
}

fn reform_share(per_variant: &BTreeMap<String, f64>, reform: &[String]) -> f64 {
    reform.iter().filter_map(|v| per_variant.get(v)).sum()
}

fn reform_log_share(log_per_variant: &BTreeMap<String, f64>, reform: &[String]) -> f64 {
    let logs: Vec<f64> = reform
        .iter()
        .filter_map(|v| log_per_variant.get(v).copied())
        .collect();
    log_sum_exp(&logs)
}

/// Build a reform probability from already-computed variant scores.
pub fn reform_probability_from_scores(
    item: &PromptItem,
    set: &VariantSet,
    scores: &[VariantScore],
    model: &str,
) -> Result<ReformProbability, ScoreError> {
    let mode = scores
        .first()
        .map(|s| s.mode)
        .ok_or_else(|| ScoreError::SetMismatch {
            item: item.id.clone(),
            set: set.id.clone(),
        })?;
    if scores.iter().any(|s| s.mode != mode) {
        return Err(ScoreError::MixedModes(item.id.clone()));
    }
    let pairs: Vec<(String, f64)> = scores
        .iter()
        .map(|s| (s.variant.clone(), s.log_prob))
        .collect();
    let (per_variant, log_per_variant) = normalize(&pairs);
    let reform_variants = set.reform_variants.clone();
    Ok(ReformProbability {
        item_id: item.id.clone(),
        model: model.to_string(),
        experiment: item.experiment,
        domain: item.domain,
        template_id: item.template_id.clone(),
        name: item.name.name.clone(),
        name_class: item.name.gender_class,
        preamble_id: item.preamble_id.clone(),
        way_of_asking: item.way_of_asking,
        variant_set_id: set.id.clone(),
        mode,
        choices_ordering: item.choices_ordering,
        orderings_averaged: 1,
        p_reform: reform_share(&per_variant, &reform_variants),
        log_p_reform: reform_log_share(&log_per_variant, &reform_variants),
        reform_variants,
        per_variant,
        log_per_variant,
        raw_log_probs: pairs.into_iter().collect(),
    })
}

/// Score every variant of the set for an item and normalize.
pub async fn reform_probability(
    item: &PromptItem,
    set: &VariantSet,
    backend: &dyn ScoringBackend,
    cache: Option<&ScoreCache>,
    model: &str,
) -> Result<ReformProbability, ScoreError> {
    if item.variant_set_id != set.id || item.domain != set.domain {
        return Err(ScoreError::SetMismatch {
            item: item.id.clone(),
            set: set.id.clone(),
        });
    }
    let mut scores = Vec::with_capacity(set.variants().len());
    for variant in set.variants() {
        scores.push(score_variant(item, variant, backend, cache).await?);
    }
    reform_probability_from_scores(item, set, &scores, model)
}

/// Combine the six ordering results of one choices cell.
pub fn average_choices_orderings(
    scores: &[ReformProbability],
    space: AveragingSpace,
) -> Result<ReformProbability, ScoreError> {
    let first = scores.first().ok_or_else(|| ScoreError::MissingOrdering {
        cell: String::new(),
        found: vec![],
    })?;
    let cell = cell_id_of(&first.item_id).to_string();
    let mut found: Vec<usize> = scores.iter().filter_map(|s| s.choices_ordering).collect();
    found.sort_unstable();
    let same_cell = scores.iter().all(|s| cell_id_of(&s.item_id) == cell);
    if found != [0, 1, 2, 3, 4, 5] || scores.len() != 6 || !same_cell {
        return Err(ScoreError::MissingOrdering { cell, found });
    }
    if scores.iter().any(|s| s.mode != first.mode) {
        return Err(ScoreError::MixedModes(cell));
    }
    let n = scores.len() as f64;
    let variants: Vec<String> = first.per_variant.keys().cloned().collect();

    let (per_variant, log_per_variant, p_reform) = match space {
        AveragingSpace::Probability => {
            let mut mean: BTreeMap<String, f64> = variants
                .iter()
                .map(|v| {
                    (
                        v.clone(),
                        scores.iter().map(|s| s.per_variant[v]).sum::<f64>() / n,
                    )
                })
                .collect();
            let total: f64 = mean.values().sum();
            mean.values_mut().for_each(|x| *x /= total);
            let logs = mean.iter().map(|(k, v)| (k.clone(), v.ln())).collect();
            let p = scores.iter().map(|s| s.p_reform).sum::<f64>() / n;
            (mean, logs, p)
        }
        AveragingSpace::LogProbability => {
            let pairs: Vec<(String, f64)> = variants
                .iter()
                .map(|v| {
                    (
                        v.clone(),
                        scores.iter().map(|s| s.log_per_variant[v]).sum::<f64>() / n,
                    )
                })
                .collect();
            let (lin, logs) = normalize(&pairs);
            let p = reform_share(&lin, &first.reform_variants);
            (lin, logs, p)
        }
    };

    Ok(ReformProbability {
        item_id: cell,
        choices_ordering: None,
        orderings_averaged: scores.len(),
        log_p_reform: p_reform.ln(),
        p_reform,
        per_variant,
        log_per_variant,
        raw_log_probs: BTreeMap::new(),
        ..first.clone()
    })
}
