//! The four pipeline commands.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use ideolens_core::prompt::{
    build_suite, logical_cell_count, read_manifest, write_manifest, PromptItem,
};
use ideolens_core::report::{
    emit_coefficient_table, emit_condition_means, emit_exp1_summary, emit_pretest_table,
    Exp1SummaryRow,
};
use ideolens_core::scorer::{
    read_results, run_suite, write_results, Architecture, HttpBackend, HttpSetupError, MockBackend,
    ReformProbability, ScoreCache, ScoringBackend, SuiteError, SuiteOptions,
};
use ideolens_core::stats::{
    bonferroni_adjust, exp2_design, fit_beta_regression, BetaRegressionFit, BiasVerdict, Exp1Cells,
    FitOptions, GateVerdict, OneSidedOutcome, PretestOutcome, StatsError, GROUP_PAIR, STANCE_PAIR,
};
use ideolens_core::stimulus::{Domain, Experiment, PreambleGroup};
use serde::{Deserialize, Serialize};

use crate::config::{BackendConfig, BonferroniM, MockArchitecture, RunConfig};
use crate::CliError;

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerateSummary {
    pub manifest: PathBuf,
    pub experiment: Experiment,
    pub domain: Domain,
    pub items: usize,
    pub logical_cells: usize,
    pub preambles: usize,
}

impl fmt::Display for GenerateSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "experiment {} {}: {} items, {} logical cells over {} preambles -> {}",
            self.experiment.number(),
            self.domain.as_str(),
            self.items,
            self.logical_cells,
            self.preambles,
            self.manifest.display()
        )
    }
}

pub fn cmd_generate(cfg: &RunConfig) -> Result<GenerateSummary, CliError> {
    let bundle = cfg.bundle()?;
    let items = build_suite(&bundle, cfg.experiment, cfg.domain, cfg.stimulus_subset)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let mut buf = Vec::new();
    write_manifest(&items, &mut buf)?;
    let manifest = cfg.manifest_path();
    write_file(&manifest, &buf)?;
    Ok(GenerateSummary {
        manifest,
        experiment: cfg.experiment,
        domain: cfg.domain,
        logical_cells: logical_cell_count(&items),
        items: items.len(),
        preambles: bundle.preambles_for(cfg.experiment, cfg.domain).len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSummary {
    pub results_path: PathBuf,
    pub items_scored: usize,
    pub results: usize,
    pub failures: usize,
    pub backend_calls: u64,
    pub cache_hits: u64,
    pub cache_hit_rate: f64,
}

impl fmt::Display for ScoreSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "scored {} items into {} results ({} failures); backend calls {}, cache hits {} (hit rate {:.1}%) -> {}",
            self.items_scored,
            self.results,
            self.failures,
            self.backend_calls,
            self.cache_hits,
            100.0 * self.cache_hit_rate,
            self.results_path.display()
        )
    }
}

pub fn build_backend(cfg: &RunConfig) -> Result<Box<dyn ScoringBackend>, CliError> {
    match &cfg.backend {
        BackendConfig::Mock {
            context_gain,
            architecture,
        } => {
            let arch = match architecture {
                MockArchitecture::Autoregressive => Architecture::Autoregressive,
                MockArchitecture::EncoderDecoder => Architecture::EncoderDecoder,
            };
            Ok(Box::new(
                MockBackend::new(cfg.seed)
                    .with_context_gain(*context_gain)
                    .with_architecture(arch),
            ))
        }
        BackendConfig::Http(http) => match HttpBackend::from_env(http.clone()) {
            Ok(b) => Ok(Box::new(b)),
            Err(HttpSetupError::MissingCredential(var)) => Err(CliError::Credential(format!(
                "environment variable `{var}` holding the API key is not set"
            ))),
            Err(e) => Err(CliError::Config(e.to_string())),
        },
    }
}

fn read_manifest_file(path: &Path) -> Result<Vec<PromptItem>, CliError> {
    let file = File::open(path).map_err(|_| {
        CliError::MissingInput(format!(
            "manifest `{}` not found; run `generate` first",
            path.display()
        ))
    })?;
    read_manifest(BufReader::new(file)).map_err(|e| {
        CliError::MissingInput(format!("unreadable manifest `{}`: {e}", path.display()))
    })
}

pub fn cmd_score(cfg: &RunConfig, strict: bool) -> Result<ScoreSummary, CliError> {
    let items = read_manifest_file(&cfg.manifest_path())?;
    let bundle = cfg.bundle()?;
    let backend = build_backend(cfg)?;
    let cache = ScoreCache::open(cfg.cache_path())?;
    let options = SuiteOptions {
        concurrency_limit: cfg.concurrency_limit,
        strict,
        model: cfg
            .model
            .clone()
            .unwrap_or_else(|| backend.backend_id().to_string()),
        averaging: cfg.averaging,
    };
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Other(e.to_string()))?;
    let report = runtime
        .block_on(run_suite(
            &items,
            bundle.variant_sets(cfg.domain),
            backend.as_ref(),
            Some(&cache),
            &options,
        ))
        .map_err(|e| match e {
            SuiteError::StrictAbort { .. } => CliError::Strict(e.to_string()),
        })?;

    let mut buf = Vec::new();
    write_results(&report.results, &mut buf)?;
    let results_path = cfg.results_path();
    write_file(&results_path, &buf)?;
    let failures_path = cfg.failures_path();
    if report.failures.is_empty() {
        if failures_path.exists() {
            fs::remove_file(&failures_path)?;
        }
    } else {
        let mut lines = String::new();
        for f in &report.failures {
            lines.push_str(&serde_json::to_string(f).map_err(|e| CliError::Other(e.to_string()))?);
            lines.push('\n');
        }
        write_file(&failures_path, lines.as_bytes())?;
        tracing::warn!(count = report.failures.len(), path = %failures_path.display(), "some items failed");
    }
    Ok(ScoreSummary {
        results_path,
        items_scored: report.items_scored,
        results: report.results.len(),
        failures: report.failures.len(),
        backend_calls: report.backend_calls,
        cache_hits: report.cache_hits,
        cache_hit_rate: report.cache_hit_rate(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exp1ModelAnalysis {
    pub model: String,
    pub group_means: BTreeMap<PreambleGroup, f64>,
    pub pretest: PretestOutcome,
    /// `None` when the pre-test excluded the model.
    pub bias_groups: Option<BiasVerdict>,
    pub bias_stances: Option<BiasVerdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exp2ModelAnalysis {
    pub model: String,
    pub fit: BetaRegressionFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis<M> {
    pub domain: Domain,
    pub alpha: f64,
    pub bonferroni_m: usize,
    pub results_files: Vec<PathBuf>,
    pub models: Vec<M>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyzeSummary {
    pub experiment: Experiment,
    pub models: usize,
    pub written: Vec<PathBuf>,
    pub notes: Vec<String>,
}

impl fmt::Display for AnalyzeSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "analysed experiment {} for {} model(s)",
            self.experiment.number(),
            self.models
        )?;
        for n in &self.notes {
            write!(f, "\n  {n}")?;
        }
        for p in &self.written {
            write!(f, "\n  wrote {}", p.display())?;
        }
        Ok(())
    }
}

fn load_results(paths: &[PathBuf]) -> Result<Vec<ReformProbability>, CliError> {
    let mut out = Vec::new();
    for p in paths {
        let file = File::open(p).map_err(|_| {
            CliError::MissingInput(format!("results file `{}` not found", p.display()))
        })?;
        let mut r = read_results(BufReader::new(file)).map_err(|e| {
            CliError::MissingInput(format!("unreadable results `{}`: {e}", p.display()))
        })?;
        out.append(&mut r);
    }
    Ok(out)
}

fn stats_error(e: StatsError) -> CliError {
    match e {
        StatsError::MissingCell(m) => {
            CliError::MissingInput(format!("incomplete results, missing cells: {m}"))
        }
        other => CliError::Other(other.to_string()),
    }
}

/// Shortest round-trip form; exponent notation at extreme magnitudes.
fn num(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e15).contains(&a) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

fn csv_string(header: &[&str], rows: &[Vec<String>]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Other(e.to_string());
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    Ok(
        String::from_utf8(w.into_inner().map_err(|e| CliError::Other(e.to_string()))?)
            .expect("utf-8"),
    )
}

fn exp1_json_path(cfg: &RunConfig) -> PathBuf {
    cfg.analysis_dir()
        .join(format!("exp1_{}.json", cfg.domain.as_str()))
}

fn exp2_json_path(cfg: &RunConfig) -> PathBuf {
    cfg.analysis_dir()
        .join(format!("exp2_{}.json", cfg.domain.as_str()))
}

pub fn cmd_analyze(cfg: &RunConfig, results_files: &[PathBuf]) -> Result<AnalyzeSummary, CliError> {
    let files: Vec<PathBuf> = if results_files.is_empty() {
        vec![cfg.results_path()]
    } else {
        results_files.to_vec()
    };
    let results = load_results(&files)?;
    let bundle = cfg.bundle()?;
    let results: Vec<ReformProbability> = results
        .into_iter()
        .filter(|r| r.experiment == cfg.experiment && r.domain == cfg.domain)
        .collect();
    if results.is_empty() {
        return Err(CliError::MissingInput(format!(
            "no experiment {} {} results in {}",
            cfg.experiment.number(),
            cfg.domain.as_str(),
            files
                .iter()
                .map(|p| p.display().to_string())
                .collect::<Vec<_>>()
                .join(", ")
        )));
    }
    let mut by_model: BTreeMap<String, Vec<ReformProbability>> = BTreeMap::new();
    for r in results {
        by_model.entry(r.model.clone()).or_default().push(r);
    }
    let m = match cfg.bonferroni_m {
        BonferroniM::Auto => by_model.len(),
        BonferroniM::Fixed(m) => m,
    };
    let mut written = Vec::new();
    let mut notes = Vec::new();
    let domain = cfg.domain.as_str().to_string();

    match cfg.experiment {
        Experiment::Exp1 => {
            let mut models = Vec::new();
            let mut test_rows = Vec::new();
            let mut mean_rows = Vec::new();
            for (model, rs) in &by_model {
                let cells = Exp1Cells::from_results(rs, &bundle.preambles).map_err(stats_error)?;
                let mut group_means = BTreeMap::new();
                for g in [
                    PreambleGroup::PositiveMetaling,
                    PreambleGroup::Prog,
                    PreambleGroup::Cons,
                    PreambleGroup::ProgStance,
                    PreambleGroup::ConsStance,
                ] {
                    let v = cells.aggregate_mean(g).map_err(stats_error)?;
                    mean_rows.push(vec![
                        model.clone(),
                        domain.clone(),
                        g.as_str().to_string(),
                        num(v),
                    ]);
                    group_means.insert(g, v);
                }
                let pretest = cells.pretest_gate(cfg.alpha, m).map_err(stats_error)?;
                for (name, side) in [
                    ("pretest_groups", &pretest.groups),
                    ("pretest_stances", &pretest.stances),
                ] {
                    test_rows.push(pretest_row(model, &domain, name, side));
                }
                let (bias_groups, bias_stances) = if pretest.verdict == GateVerdict::Pass {
                    (
                        Some(
                            cells
                                .bias_test(GROUP_PAIR, cfg.alpha, m)
                                .map_err(stats_error)?,
                        ),
                        Some(
                            cells
                                .bias_test(STANCE_PAIR, cfg.alpha, m)
                                .map_err(stats_error)?,
                        ),
                    )
                } else {
                    notes.push(format!("{model}: excluded by the pre-test"));
                    (None, None)
                };
                for (name, v) in [
                    ("bias_groups", &bias_groups),
                    ("bias_stances", &bias_stances),
                ] {
                    test_rows.push(bias_row(model, &domain, name, v.as_ref()));
                }
                models.push(Exp1ModelAnalysis {
                    model: model.clone(),
                    group_means,
                    pretest,
                    bias_groups,
                    bias_stances,
                });
            }
            let dir = cfg.analysis_dir();
            let tests = dir.join(format!("exp1_tests_{domain}.csv"));
            write_file(
                &tests,
                csv_string(
                    &[
                        "model",
                        "domain",
                        "test",
                        "t",
                        "df",
                        "p_raw",
                        "p_adjusted",
                        "direction",
                    ],
                    &test_rows,
                )?
                .as_bytes(),
            )?;
            let means = dir.join(format!("exp1_group_means_{domain}.csv"));
            write_file(
                &means,
                csv_string(&["model", "domain", "group", "mean_p_reform"], &mean_rows)?.as_bytes(),
            )?;
            let analysis = Analysis {
                domain: cfg.domain,
                alpha: cfg.alpha,
                bonferroni_m: m,
                results_files: files,
                models,
            };
            let json = exp1_json_path(cfg);
            write_file(&json, &to_json(&analysis)?)?;
            written.extend([tests, means, json]);
        }
        Experiment::Exp2 => {
            let mut models = Vec::new();
            let mut coef_rows = Vec::new();
            let mut fit_rows = Vec::new();
            for (model, rs) in &by_model {
                let data = exp2_design(rs, &bundle.preambles).map_err(stats_error)?;
                let fit =
                    fit_beta_regression(&data, &FitOptions::default()).map_err(stats_error)?;
                if !fit.converged {
                    notes.push(format!(
                        "{model}: regression did not converge (gradient norm {:e} after {} iterations)",
                        fit.gradient_norm, fit.iterations
                    ));
                }
                for c in &fit.coefficients {
                    let adj = bonferroni_adjust(c.p_value, m);
                    coef_rows.push(vec![
                        model.clone(),
                        domain.clone(),
                        c.predictor.clone(),
                        num(c.estimate),
                        num(c.std_error),
                        num(c.z),
                        num(c.p_value),
                        (adj < cfg.alpha).to_string(),
                    ]);
                }
                let var = |k: &str| {
                    fit.random_intercept_variances
                        .get(k)
                        .copied()
                        .unwrap_or(0.0)
                };
                fit_rows.push(vec![
                    model.clone(),
                    domain.clone(),
                    fit.n_obs.to_string(),
                    num(fit.dispersion_phi),
                    num(var("item")),
                    num(var("name")),
                    num(fit.log_likelihood),
                    fit.converged.to_string(),
                    fit.iterations.to_string(),
                    num(fit.gradient_norm),
                    fit.boundary_factors.join(";"),
                ]);
                models.push(Exp2ModelAnalysis {
                    model: model.clone(),
                    fit,
                });
            }
            let dir = cfg.analysis_dir();
            let coefs = dir.join(format!("exp2_regression_{domain}.csv"));
            write_file(
                &coefs,
                csv_string(
                    &[
                        "model",
                        "domain",
                        "predictor",
                        "coefficient",
                        "std_error",
                        "z",
                        "p",
                        "significant",
                    ],
                    &coef_rows,
                )?
                .as_bytes(),
            )?;
            let fits = dir.join(format!("exp2_fit_{domain}.csv"));
            write_file(
                &fits,
                csv_string(
                    &[
                        "model",
                        "domain",
                        "n_obs",
                        "phi",
                        "var_item",
                        "var_name",
                        "log_likelihood",
                        "converged",
                        "iterations",
                        "gradient_norm",
                        "boundary_factors",
                    ],
                    &fit_rows,
                )?
                .as_bytes(),
            )?;
            let analysis = Analysis {
                domain: cfg.domain,
                alpha: cfg.alpha,
                bonferroni_m: m,
                results_files: files,
                models,
            };
            let json = exp2_json_path(cfg);
            write_file(&json, &to_json(&analysis)?)?;
            written.extend([coefs, fits, json]);
        }
    }
    Ok(AnalyzeSummary {
        experiment: cfg.experiment,
        models: by_model.len(),
        written,
        notes,
    })
}

fn to_json<T: Serialize>(v: &T) -> Result<Vec<u8>, CliError> {
    let mut s = serde_json::to_vec_pretty(v).map_err(|e| CliError::Other(e.to_string()))?;
    s.push(b'\n');
    Ok(s)
}

fn pretest_row(model: &str, domain: &str, test: &str, side: &OneSidedOutcome) -> Vec<String> {
    let (t, df, p) = match &side.test {
        Some(t) => (
            num(t.t_statistic),
            t.degrees_of_freedom.to_string(),
            num(t.p_value),
        ),
        None => (String::new(), String::new(), String::new()),
    };
    let direction = if side.significant {
        "greater"
    } else {
        "not-greater"
    };
    vec![
        model.to_string(),
        domain.to_string(),
        test.to_string(),
        t,
        df,
        p,
        num(side.adjusted_p),
        direction.to_string(),
    ]
}

fn bias_row(model: &str, domain: &str, test: &str, verdict: Option<&BiasVerdict>) -> Vec<String> {
    match verdict {
        None => vec![
            model.to_string(),
            domain.to_string(),
            test.to_string(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            "excluded".to_string(),
        ],
        Some(v) => {
            let (t, df, p) = match &v.test {
                Some(t) => (
                    num(t.t_statistic),
                    t.degrees_of_freedom.to_string(),
                    num(t.p_value),
                ),
                None => (String::new(), String::new(), num(1.0)),
            };
            vec![
                model.to_string(),
                domain.to_string(),
                test.to_string(),
                t,
                df,
                p,
                num(v.adjusted_p),
                v.direction.as_str().to_string(),
            ]
        }
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Option<T>, CliError> {
    match fs::read(path) {
        Ok(bytes) => serde_json::from_slice(&bytes).map(Some).map_err(|e| {
            CliError::MissingInput(format!("unreadable analysis `{}`: {e}", path.display()))
        }),
        Err(_) => Ok(None),
    }
}

/// Write every report artifact for the configured domain from whichever
/// analyses exist.
pub fn cmd_report(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let exp1: Option<Analysis<Exp1ModelAnalysis>> = read_json(&exp1_json_path(cfg))?;
    let exp2: Option<Analysis<Exp2ModelAnalysis>> = read_json(&exp2_json_path(cfg))?;
    if exp1.is_none() && exp2.is_none() {
        return Err(CliError::MissingInput(format!(
            "no analyses for {} under `{}`; run `analyze` first",
            cfg.domain.as_str(),
            cfg.analysis_dir().display()
        )));
    }
    let bundle = cfg.bundle()?;
    let dir = cfg.report_dir();
    let domain = cfg.domain.as_str();
    let mut written = Vec::new();
    let mut results_files: Vec<PathBuf> = Vec::new();

    if let Some(a) = &exp1 {
        let mut rows = Vec::new();
        let mut pretest = Vec::new();
        for m in &a.models {
            let g = |k: PreambleGroup| m.group_means.get(&k).copied().unwrap_or(f64::NAN);
            rows.push(Exp1SummaryRow {
                model: m.model.clone(),
                domain: a.domain,
                comparison: "groups".into(),
                mean_meta: g(PreambleGroup::PositiveMetaling),
                mean_prog: g(PreambleGroup::Prog),
                mean_cons: g(PreambleGroup::Cons),
                verdict: m.bias_groups.clone(),
            });
            rows.push(Exp1SummaryRow {
                model: m.model.clone(),
                domain: a.domain,
                comparison: "stances".into(),
                mean_meta: g(PreambleGroup::PositiveMetaling),
                mean_prog: g(PreambleGroup::ProgStance),
                mean_cons: g(PreambleGroup::ConsStance),
                verdict: m.bias_stances.clone(),
            });
            pretest.push((m.model.clone(), a.domain, m.pretest.clone()));
        }
        let fig = emit_exp1_summary(&rows);
        let svg = dir.join(format!("exp1_summary_{domain}.svg"));
        let csv = dir.join(format!("exp1_summary_{domain}.csv"));
        write_file(&svg, fig.svg.as_bytes())?;
        write_file(&csv, fig.csv.as_bytes())?;
        let table = emit_pretest_table(&pretest);
        let md = dir.join(format!("exp1_pretest_{domain}.md"));
        write_file(&md, table.markdown.as_bytes())?;
        written.extend([svg, csv, md]);
        results_files.extend(a.results_files.iter().cloned());
    }
    if let Some(a) = &exp2 {
        let fits: Vec<(String, BetaRegressionFit)> = a
            .models
            .iter()
            .map(|m| (m.model.clone(), m.fit.clone()))
            .collect();
        let table = emit_coefficient_table(a.domain, &fits, a.alpha, a.bonferroni_m)
            .map_err(|e| CliError::Other(e.to_string()))?;
        let md = dir.join(format!("exp2_coefficients_{domain}.md"));
        let csv = dir.join(format!("exp2_coefficients_{domain}.csv"));
        write_file(&md, table.markdown.as_bytes())?;
        write_file(&csv, table.csv.as_bytes())?;
        written.extend([md, csv]);
        results_files.extend(a.results_files.iter().cloned());
    }

    results_files.sort();
    results_files.dedup();
    let results: Vec<ReformProbability> = load_results(&results_files)?
        .into_iter()
        .filter(|r| r.domain == cfg.domain)
        .collect();
    let (csv, svg) = emit_condition_means(&results, &bundle.preambles);
    let csv_path = dir.join(format!("condition_means_{domain}.csv"));
    write_file(&csv_path, csv.as_bytes())?;
    written.push(csv_path);
    let svg_path = dir.join(format!("condition_means_{domain}.svg"));
    match svg {
        Some(svg) => {
            write_file(&svg_path, svg.as_bytes())?;
            written.push(svg_path);
        }
        None => {
            if svg_path.exists() {
                fs::remove_file(&svg_path)?;
            }
        }
    }
    Ok(written)
}
