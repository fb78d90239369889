//! Experiment 1: pre-test gate and the δ bias test.
//!
//! For every (template, name) key the reform probabilities are averaged
//! within each preamble group. δ for a group is the absolute distance of its
//! mean from the positive-metalinguistic mean; the bias test pairs δ of a
//! progressive-like group with δ of its conservative-like counterpart.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ttest::{bonferroni_adjust, paired_t_test, TTestError, TTestResult, Tails};
use super::StatsError;
use crate::scorer::ReformProbability;
use crate::stimulus::{Domain, Experiment, Preamble, PreambleGroup};

/// `(template_id, name)`.
pub type TemplateKey = (String, String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaSample {
    pub template_key: TemplateKey,
    pub mean_meta: f64,
    pub mean_group: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BiasDirection {
    Progressive,
    Conservative,
    NoBias,
}

impl BiasDirection {
    pub fn as_str(self) -> &'static str {
        match self {
            BiasDirection::Progressive => "progressive",
            BiasDirection::Conservative => "conservative",
            BiasDirection::NoBias => "no-bias",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasVerdict {
    pub direction: BiasDirection,
    pub adjusted_p: f64,
    pub mean_delta_prog: f64,
    pub mean_delta_cons: f64,
    /// `None` when every δ pair was identical.
    pub test: Option<TTestResult>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateVerdict {
    Pass,
    Exclude,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneSidedOutcome {
    /// `None` when the differences were degenerate.
    pub test: Option<TTestResult>,
    pub mean_difference: f64,
    pub adjusted_p: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretestOutcome {
    pub groups: OneSidedOutcome,
    pub stances: OneSidedOutcome,
    pub verdict: GateVerdict,
}

/// Per-key group means of one model's Experiment 1 results.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Exp1Cells {
    means: BTreeMap<TemplateKey, BTreeMap<PreambleGroup, f64>>,
}

/// Arithmetic mean of `p_reform` over a group's preambles.
pub fn group_mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

impl Exp1Cells {
    /// Group results by key and average within groups. Every key must have
    /// a result for every Experiment 1 preamble of the bank that applies to
    /// the results' domain.
    pub fn from_results(
        results: &[ReformProbability],
        preambles: &[Preamble],
    ) -> Result<Self, StatsError> {
        let Some(domain) = results.first().map(|r| r.domain) else {
            return Ok(Exp1Cells::default());
        };
        let bank: BTreeMap<&str, PreambleGroup> = preambles
            .iter()
            .filter(|p| p.experiment == Experiment::Exp1 && p.applies_to(domain))
            .map(|p| (p.id.as_str(), p.group))
            .collect();
        let mut by_key: BTreeMap<TemplateKey, BTreeMap<&str, f64>> = BTreeMap::new();
        for r in results {
            if r.experiment != Experiment::Exp1 || r.domain != domain {
                return Err(StatsError::Input(format!(
                    "result `{}` is not an Experiment 1 {} result",
                    r.item_id,
                    domain.as_str()
                )));
            }
            let Some((id, _)) = bank.get_key_value(r.preamble_id.as_str()) else {
                return Err(StatsError::Input(format!(
                    "unknown preamble `{}`",
                    r.preamble_id
                )));
            };
            by_key
                .entry((r.template_id.clone(), r.name.clone()))
                .or_default()
                .insert(id, r.p_reform);
        }
        let mut means = BTreeMap::new();
        for (key, values) in by_key {
            let mut groups: BTreeMap<PreambleGroup, Vec<f64>> = BTreeMap::new();
            for (id, group) in &bank {
                match values.get(id) {
                    Some(p) => groups.entry(*group).or_default().push(*p),
                    None => {
                        return Err(StatsError::MissingCell(format!(
                            "template `{}` name `{}` preamble `{id}`",
                            key.0, key.1
                        )))
                    }
                }
            }
            let g = groups
                .into_iter()
                .map(|(group, v)| (group, group_mean(&v).expect("non-empty")))
                .collect();
            means.insert(key, g);
        }
        Ok(Exp1Cells { means })
    }

    /// Build from already-aggregated group means.
    pub fn from_means(means: BTreeMap<TemplateKey, BTreeMap<PreambleGroup, f64>>) -> Self {
        Exp1Cells { means }
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &TemplateKey> {
        self.means.keys()
    }

    pub fn group_mean(&self, key: &TemplateKey, group: PreambleGroup) -> Result<f64, StatsError> {
        self.means
            .get(key)
            .and_then(|g| g.get(&group))
            .copied()
            .ok_or_else(|| {
                StatsError::MissingCell(format!(
                    "template `{}` name `{}` group {}",
                    key.0,
                    key.1,
                    group.as_str()
                ))
            })
    }

    /// Mean over keys of a group's per-key means.
    pub fn aggregate_mean(&self, group: PreambleGroup) -> Result<f64, StatsError> {
        let values = self
            .means
            .keys()
            .map(|k| self.group_mean(k, group))
            .collect::<Result<Vec<_>, _>>()?;
        group_mean(&values).ok_or_else(|| StatsError::Input("no Experiment 1 cells".to_string()))
    }

    fn series(&self, group: PreambleGroup) -> Result<Vec<f64>, StatsError> {
        self.means
            .keys()
            .map(|k| self.group_mean(k, group))
            .collect()
    }

    /// One δ sample per key.
    pub fn delta_series(
        &self,
        group: PreambleGroup,
        meta: PreambleGroup,
    ) -> Result<Vec<DeltaSample>, StatsError> {
        self.means
            .keys()
            .map(|k| {
                let mean_group = self.group_mean(k, group)?;
                let mean_meta = self.group_mean(k, meta)?;
                Ok(DeltaSample {
                    template_key: k.clone(),
                    mean_meta,
                    mean_group,
                    delta: (mean_group - mean_meta).abs(),
                })
            })
            .collect()
    }

    fn one_sided(
        &self,
        high: PreambleGroup,
        low: PreambleGroup,
        alpha: f64,
        m: usize,
    ) -> Result<OneSidedOutcome, StatsError> {
        let a = self.series(high)?;
        let b = self.series(low)?;
        let pairs: Vec<(f64, f64)> = a.into_iter().zip(b).collect();
        match paired_t_test(&pairs, Tails::One) {
            Ok(t) => {
                let adjusted_p = bonferroni_adjust(t.p_value, m);
                Ok(OneSidedOutcome {
                    mean_difference: t.mean_difference,
                    test: Some(t),
                    adjusted_p,
                    significant: adjusted_p < alpha,
                })
            }
            Err(TTestError::DegenerateVariance { mean_difference }) => Ok(OneSidedOutcome {
                test: None,
                mean_difference,
                adjusted_p: 1.0,
                significant: false,
            }),
            Err(e) => Err(e.into()),
        }
    }

    /// Both one-tailed tests (prog > cons, prog-stance > cons-stance) must be
    /// significant after Bonferroni adjustment by `m_models`. Degenerate
    /// differences cannot show the expected effect and count as failures.
    pub fn pretest_gate(&self, alpha: f64, m_models: usize) -> Result<PretestOutcome, StatsError> {
        let groups = self.one_sided(PreambleGroup::Prog, PreambleGroup::Cons, alpha, m_models)?;
        let stances = self.one_sided(
            PreambleGroup::ProgStance,
            PreambleGroup::ConsStance,
            alpha,
            m_models,
        )?;
        let verdict = if groups.significant && stances.significant {
            GateVerdict::Pass
        } else {
            GateVerdict::Exclude
        };
        Ok(PretestOutcome {
            groups,
            stances,
            verdict,
        })
    }

    /// Two-tailed paired test of δ(prog-like) against δ(cons-like).
    pub fn bias_test(
        &self,
        pair: (PreambleGroup, PreambleGroup),
        alpha: f64,
        m_models: usize,
    ) -> Result<BiasVerdict, StatsError> {
        let prog = self.delta_series(pair.0, PreambleGroup::PositiveMetaling)?;
        let cons = self.delta_series(pair.1, PreambleGroup::PositiveMetaling)?;
        let pairs: Vec<(f64, f64)> = prog
            .iter()
            .zip(&cons)
            .map(|(p, c)| (p.delta, c.delta))
            .collect();
        bias_test_on_deltas(&pairs, alpha, m_models)
    }
}

/// Bias verdict from `(δ_prog, δ_cons)` pairs. Identical δ series give
/// `NoBias` with p = 1; a constant non-zero shift has no defined p and is an
/// error.
pub fn bias_test_on_deltas(
    pairs: &[(f64, f64)],
    alpha: f64,
    m_models: usize,
) -> Result<BiasVerdict, StatsError> {
    let n = pairs.len().max(1) as f64;
    let mean_delta_prog = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_delta_cons = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let test = match paired_t_test(pairs, Tails::Two) {
        Ok(t) => t,
        Err(TTestError::DegenerateVariance {
            mean_difference: 0.0,
        }) => {
            return Ok(BiasVerdict {
                direction: BiasDirection::NoBias,
                adjusted_p: 1.0,
                mean_delta_prog,
                mean_delta_cons,
                test: None,
            })
        }
        Err(e) => return Err(e.into()),
    };
    let adjusted_p = bonferroni_adjust(test.p_value, m_models);
    let direction = if adjusted_p >= alpha {
        BiasDirection::NoBias
    } else if mean_delta_cons < mean_delta_prog {
        BiasDirection::Conservative
    } else {
        BiasDirection::Progressive
    };
    Ok(BiasVerdict {
        direction,
        adjusted_p,
        mean_delta_prog,
        mean_delta_cons,
        test: Some(test),
    })
}

/// The two political pairings tested in Experiment 1.
pub const GROUP_PAIR: (PreambleGroup, PreambleGroup) = (PreambleGroup::Prog, PreambleGroup::Cons);
pub const STANCE_PAIR: (PreambleGroup, PreambleGroup) =
    (PreambleGroup::ProgStance, PreambleGroup::ConsStance);

/// Domain of a result set, if it is uniform.
pub fn results_domain(results: &[ReformProbability]) -> Option<Domain> {
    let d = results.first()?.domain;
    results.iter().all(|r| r.domain == d).then_some(d)
}
