//! Statistical tests for both experiments.

pub mod beta_regression;
pub mod exp1;
pub mod special;
pub mod ttest;

use thiserror::Error;

pub use beta_regression::{
    exp2_design, fit_beta_regression, squeeze_unit_interval, BetaRegressionData, BetaRegressionFit,
    Coefficient, ConditionCode, FitOptions, LaplaceObjective, RandomFactor, PREDICTORS,
};
pub use exp1::{
    bias_test_on_deltas, group_mean, BiasDirection, BiasVerdict, DeltaSample, Exp1Cells,
    GateVerdict, OneSidedOutcome, PretestOutcome, TemplateKey, GROUP_PAIR, STANCE_PAIR,
};
pub use ttest::{
    bonferroni_adjust, paired_t_test, paired_t_test_slices, TTestError, TTestResult, Tails,
};

/// Significance threshold before Bonferroni adjustment.
pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error(transparent)]
    TTest(#[from] TTestError),
    #[error("missing cells: {0}")]
    MissingCell(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("numerical failure: {0}")]
    Numerical(String),
}
