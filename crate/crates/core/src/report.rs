//! Tables and figures: coefficient tables, the Experiment 1 pre-test table
//! and bias summary, and per-condition means. Outputs are plain strings so
//! that the caller decides where they go; rendering is byte-deterministic.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::WayOfAsking;
use crate::scorer::ReformProbability;
use crate::stats::{
    bonferroni_adjust, BetaRegressionFit, BiasDirection, BiasVerdict, PretestOutcome,
};
use crate::stimulus::{Domain, Preamble};

pub const POSITIVE_COLOR: &str = "#bdffea";
pub const NEGATIVE_COLOR: &str = "#fac0dc";
pub const BASELINE_COLOR: &str = "#dbd9d9";
pub const PROGRESSIVE_LINE: &str = "#7b3294";
pub const CONSERVATIVE_LINE: &str = "#e66101";

/// Row order of the coefficient tables.
pub const TABLE_ROWS: [&str; 7] = [
    "Intercept",
    "indirect",
    "refer",
    "best",
    "choices",
    "ind_dec",
    "ideo_dec",
];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no fits to tabulate")]
    Empty,
    #[error("fit for `{model}` has predictors {found:?}, expected {expected:?}")]
    PredictorMismatch {
        model: String,
        found: Vec<String>,
        expected: Vec<String>,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Significance {
    Positive,
    Negative,
    Baseline,
    NotSignificant,
}

impl Significance {
    pub fn as_str(self) -> &'static str {
        match self {
            Significance::Positive => "positive",
            Significance::Negative => "negative",
            Significance::Baseline => "baseline",
            Significance::NotSignificant => "not-significant",
        }
    }

    pub fn color(self) -> Option<&'static str> {
        match self {
            Significance::Positive => Some(POSITIVE_COLOR),
            Significance::Negative => Some(NEGATIVE_COLOR),
            Significance::Baseline => Some(BASELINE_COLOR),
            Significance::NotSignificant => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellStyle {
    pub value: f64,
    pub significance: Significance,
}

impl CellStyle {
    /// Intercepts carry no prediction and are shaded gray when significant.
    pub fn classify(value: f64, adjusted_p: f64, is_intercept: bool, alpha: f64) -> Self {
        let significant = adjusted_p < alpha;
        let significance = match (significant, is_intercept) {
            (false, _) => Significance::NotSignificant,
            (true, true) => Significance::Baseline,
            (true, false) if value > 0.0 => Significance::Positive,
            (true, false) => Significance::Negative,
        };
        CellStyle {
            value,
            significance,
        }
    }

    fn markdown(&self) -> String {
        let v = format!("{:.2}", self.value);
        match self.significance.color() {
            Some(c) => format!("<span style=\"background:{c}\">{v}</span>"),
            None => v,
        }
    }
}

/// Six significant digits, trailing zeros trimmed.
pub fn fmt6(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() {
            "NaN".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    if x == 0.0 {
        return "0".into();
    }
    let magnitude = x.abs().log10().floor() as i32;
    if !(-5..=15).contains(&magnitude) {
        return format!("{x:.5e}");
    }
    let decimals = (5 - magnitude).max(0) as usize;
    let s = format!("{x:.decimals$}");
    let s = if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    };
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

fn display_predictor(p: &str) -> String {
    if p == "Intercept" {
        "(Intercept)".into()
    } else {
        p.into()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub markdown: String,
    pub csv: String,
}

/// One column per model, one row per predictor; p-values are Bonferroni
/// adjusted by `m` before the `alpha` threshold.
pub fn emit_coefficient_table(
    domain: Domain,
    fits: &[(String, BetaRegressionFit)],
    alpha: f64,
    m: usize,
) -> Result<Rendered, ReportError> {
    let (_, first) = fits.first().ok_or(ReportError::Empty)?;
    let mut expected: Vec<String> = first.predictors().iter().map(|s| s.to_string()).collect();
    expected.sort();
    for (model, fit) in fits {
        let mut found: Vec<String> = fit.predictors().iter().map(|s| s.to_string()).collect();
        found.sort();
        if found != expected {
            return Err(ReportError::PredictorMismatch {
                model: model.clone(),
                found,
                expected,
            });
        }
    }
    let mut rows: Vec<&str> = TABLE_ROWS
        .iter()
        .copied()
        .filter(|r| expected.iter().any(|e| e == r))
        .collect();
    let mut extra: Vec<&str> = expected
        .iter()
        .map(String::as_str)
        .filter(|e| !TABLE_ROWS.contains(e))
        .collect();
    extra.sort_by_key(|e| first.predictors().iter().position(|p| p == e));
    rows.extend(extra);

    let mut md = String::new();
    md.push('|');
    md.push_str(" |");
    for (model, _) in fits {
        let _ = write!(md, " {model} |");
    }
    md.push_str("\n|---|");
    for _ in fits {
        md.push_str("---:|");
    }
    md.push('\n');

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "model",
        "domain",
        "predictor",
        "coefficient",
        "std_error",
        "z",
        "p",
        "p_adjusted",
        "significance",
    ])?;
    let mut styles: BTreeMap<(usize, &str), CellStyle> = BTreeMap::new();
    for (mi, (_, fit)) in fits.iter().enumerate() {
        for row in &rows {
            let c = fit.coefficient(row).expect("checked above");
            let adj = bonferroni_adjust(c.p_value, m);
            styles.insert(
                (mi, row),
                CellStyle::classify(c.estimate, adj, *row == "Intercept", alpha),
            );
        }
    }
    for row in &rows {
        let _ = write!(md, "| `{}` |", display_predictor(row));
        for mi in 0..fits.len() {
            let _ = write!(md, " {} |", styles[&(mi, *row)].markdown());
        }
        md.push('\n');
    }
    for (mi, (model, fit)) in fits.iter().enumerate() {
        for row in &rows {
            let c = fit.coefficient(row).expect("checked above");
            let adj = bonferroni_adjust(c.p_value, m);
            w.write_record([
                model.as_str(),
                domain.as_str(),
                &display_predictor(row),
                &fmt6(c.estimate),
                &fmt6(c.std_error),
                &fmt6(c.z),
                &fmt6(c.p_value),
                &fmt6(adj),
                styles[&(mi, *row)].significance.as_str(),
            ])?;
        }
    }
    let csv = String::from_utf8(w.into_inner().expect("in-memory")).expect("utf-8");
    Ok(Rendered { markdown: md, csv })
}

/// Pre-test table: per domain two rows (groups, stances), one column per
/// model, cells hold the mean difference, green when significant.
pub fn emit_pretest_table(entries: &[(String, Domain, PretestOutcome)]) -> Rendered {
    let mut models: Vec<&str> = Vec::new();
    for (m, _, _) in entries {
        if !models.contains(&m.as_str()) {
            models.push(m);
        }
    }
    let mut md = String::from("| | |");
    for m in &models {
        let _ = write!(md, " {m} |");
    }
    md.push_str("\n|---|---|");
    for _ in &models {
        md.push_str("---:|");
    }
    md.push('\n');

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "model",
        "domain",
        "test",
        "mean_difference",
        "p_adjusted",
        "significant",
    ])
    .expect("in-memory write");
    for domain in [Domain::RoleNoun, Domain::Pronoun] {
        if !entries.iter().any(|(_, d, _)| *d == domain) {
            continue;
        }
        let label = match domain {
            Domain::RoleNoun => "role nouns",
            Domain::Pronoun => "singular pronouns",
        };
        for (k, test) in ["`prog` > `cons`?", "`prog-stance` > `cons-stance`?"]
            .iter()
            .enumerate()
        {
            let _ = write!(md, "| {} | {test} |", if k == 0 { label } else { "" });
            for m in &models {
                let found = entries.iter().find(|(mm, d, _)| mm == m && *d == domain);
                match found {
                    Some((_, _, o)) => {
                        let side = if k == 0 { &o.groups } else { &o.stances };
                        let style = CellStyle {
                            value: side.mean_difference,
                            significance: if side.significant {
                                Significance::Positive
                            } else {
                                Significance::NotSignificant
                            },
                        };
                        let _ = write!(md, " {} |", style.markdown());
                    }
                    None => md.push_str(" |"),
                }
            }
            md.push('\n');
        }
    }
    for (m, d, o) in entries {
        for (test, side) in [
            ("prog>cons", &o.groups),
            ("prog-stance>cons-stance", &o.stances),
        ] {
            w.write_record([
                m.as_str(),
                d.as_str(),
                test,
                &fmt6(side.mean_difference),
                &fmt6(side.adjusted_p),
                if side.significant { "true" } else { "false" },
            ])
            .expect("in-memory write");
        }
    }
    let csv = String::from_utf8(w.into_inner().expect("in-memory")).expect("utf-8");
    Rendered { markdown: md, csv }
}

/// One line of the Experiment 1 summary figure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exp1SummaryRow {
    pub model: String,
    pub domain: Domain,
    /// `groups` or `stances`.
    pub comparison: String,
    pub mean_meta: f64,
    pub mean_prog: f64,
    pub mean_cons: f64,
    /// `None` when the model was excluded by the pre-test.
    pub verdict: Option<BiasVerdict>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Figure {
    pub svg: String,
    pub csv: String,
}

const SVG_WIDTH: f64 = 640.0;
const PLOT_LEFT: f64 = 220.0;
const PLOT_RIGHT: f64 = 600.0;
const ROW_HEIGHT: f64 = 28.0;
const TOP: f64 = 40.0;

fn x_of(p: f64) -> f64 {
    PLOT_LEFT + p.clamp(0.0, 1.0) * (PLOT_RIGHT - PLOT_LEFT)
}

fn svg_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn axis(svg: &mut String, y: f64) {
    let _ = writeln!(
        svg,
        r##"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#000000"/>"##,
        x_of(0.0),
        x_of(1.0)
    );
    for k in 0..=4 {
        let v = k as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="middle">{}</text>"#,
            x_of(v),
            y + 14.0,
            fmt6(v)
        );
    }
}

/// Dot plot of mean reform probability per prompt group; a line joins meta
/// and the closer political group only when the bias test is significant.
pub fn emit_exp1_summary(rows: &[Exp1SummaryRow]) -> Figure {
    let height = TOP + ROW_HEIGHT * rows.len() as f64 + 40.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_WIDTH}" height="{height:.0}" viewBox="0 0 {SVG_WIDTH} {height:.0}" font-family="sans-serif">"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="20" font-size="12" text-anchor="middle">mean P(reform)</text>"#,
        x_of(0.5)
    );
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "model",
        "domain",
        "comparison",
        "mean_meta",
        "mean_prog",
        "mean_cons",
        "direction",
        "adjusted_p",
    ])
    .expect("in-memory write");
    for (r, row) in rows.iter().enumerate() {
        let y = TOP + ROW_HEIGHT * r as f64 + ROW_HEIGHT / 2.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{} {} {}</text>"#,
            PLOT_LEFT - 10.0,
            y + 4.0,
            svg_escape(&row.model),
            row.domain.short(),
            svg_escape(&row.comparison)
        );
        let _ = writeln!(
            svg,
            r##"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#e0e0e0"/>"##,
            x_of(0.0),
            x_of(1.0)
        );
        let direction = row.verdict.as_ref().map(|v| v.direction);
        if let Some(d) = direction {
            let target = match d {
                BiasDirection::Progressive => Some((row.mean_prog, PROGRESSIVE_LINE)),
                BiasDirection::Conservative => Some((row.mean_cons, CONSERVATIVE_LINE)),
                BiasDirection::NoBias => None,
            };
            if let Some((to, color)) = target {
                let _ = writeln!(
                    svg,
                    r#"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{color}" stroke-width="3"/>"#,
                    x_of(row.mean_meta),
                    x_of(to)
                );
            }
        }
        for (value, fill, label) in [
            (row.mean_prog, PROGRESSIVE_LINE, "prog"),
            (row.mean_cons, CONSERVATIVE_LINE, "cons"),
            (row.mean_meta, "#000000", "meta"),
        ] {
            let _ = writeln!(
                svg,
                r#"<circle cx="{:.2}" cy="{y:.2}" r="5" fill="{fill}"><title>{label} {}</title></circle>"#,
                x_of(value),
                fmt6(value)
            );
        }
        let (dir, p) = match &row.verdict {
            Some(v) => (v.direction.as_str(), fmt6(v.adjusted_p)),
            None => ("excluded", String::new()),
        };
        w.write_record([
            row.model.as_str(),
            row.domain.as_str(),
            row.comparison.as_str(),
            &fmt6(row.mean_meta),
            &fmt6(row.mean_prog),
            &fmt6(row.mean_cons),
            dir,
            &p,
        ])
        .expect("in-memory write");
    }
    axis(&mut svg, TOP + ROW_HEIGHT * rows.len() as f64 + 8.0);
    svg.push_str("</svg>\n");
    let csv = String::from_utf8(w.into_inner().expect("in-memory")).expect("utf-8");
    Figure { svg, csv }
}

/// Mean reform probability of one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionMean {
    pub domain: Domain,
    /// `cell`, `way_of_asking`, `preamble` or `preamble_group`.
    pub family: String,
    pub condition: String,
    pub mean_p_reform: f64,
    pub count: usize,
}

fn way_label(w: Option<WayOfAsking>) -> &'static str {
    w.map_or("none", |w| w.label())
}

/// Aggregate results per condition. Families: full cells (way of asking ×
/// preamble), ways of asking (Experiment 2 only), preambles and preamble
/// groups.
pub fn condition_means(
    results: &[ReformProbability],
    preambles: &[Preamble],
) -> Vec<ConditionMean> {
    let group_of: BTreeMap<&str, &str> = preambles
        .iter()
        .map(|p| (p.id.as_str(), p.group.as_str()))
        .collect();
    let mut acc: BTreeMap<(Domain, usize, String), (f64, usize)> = BTreeMap::new();
    let mut add = |domain: Domain, family: usize, condition: String, p: f64| {
        let e = acc.entry((domain, family, condition)).or_insert((0.0, 0));
        e.0 += p;
        e.1 += 1;
    };
    for r in results {
        let way = way_label(r.way_of_asking);
        add(r.domain, 0, format!("{way}|{}", r.preamble_id), r.p_reform);
        if r.way_of_asking.is_some() {
            add(r.domain, 1, way.to_string(), r.p_reform);
        }
        add(r.domain, 2, r.preamble_id.clone(), r.p_reform);
        let group = group_of
            .get(r.preamble_id.as_str())
            .copied()
            .unwrap_or("unknown");
        add(r.domain, 3, group.to_string(), r.p_reform);
    }
    const FAMILIES: [&str; 4] = ["cell", "way_of_asking", "preamble", "preamble_group"];
    acc.into_iter()
        .map(
            |((domain, family, condition), (sum, count))| ConditionMean {
                domain,
                family: FAMILIES[family].to_string(),
                condition,
                mean_p_reform: sum / count as f64,
                count,
            },
        )
        .collect()
}

/// CSV of all condition means, and a bar chart (ways of asking and
/// preambles) unless there is nothing to plot.
pub fn emit_condition_means(
    results: &[ReformProbability],
    preambles: &[Preamble],
) -> (String, Option<String>) {
    let means = condition_means(results, preambles);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["domain", "family", "condition", "mean_p_reform", "count"])
        .expect("in-memory write");
    for m in &means {
        w.write_record([
            m.domain.as_str(),
            m.family.as_str(),
            m.condition.as_str(),
            &fmt6(m.mean_p_reform),
            &m.count.to_string(),
        ])
        .expect("in-memory write");
    }
    let csv = String::from_utf8(w.into_inner().expect("in-memory")).expect("utf-8");
    if means.is_empty() {
        return (csv, None);
    }

    let panels: Vec<(&str, Vec<&ConditionMean>)> = ["way_of_asking", "preamble"]
        .into_iter()
        .map(|f| {
            (
                f,
                means.iter().filter(|m| m.family == f).collect::<Vec<_>>(),
            )
        })
        .filter(|(_, v)| !v.is_empty())
        .collect();
    let bar_h = 18.0;
    let gap = 30.0;
    let height: f64 = TOP
        + panels
            .iter()
            .map(|(_, v)| v.len() as f64 * bar_h + gap + 20.0)
            .sum::<f64>()
        + 20.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_WIDTH}" height="{height:.0}" viewBox="0 0 {SVG_WIDTH} {height:.0}" font-family="sans-serif">"#
    );
    let mut y = TOP;
    for (family, bars) in panels {
        let _ = writeln!(
            svg,
            r#"<text x="10" y="{:.2}" font-size="12" font-weight="bold">{}</text>"#,
            y - 8.0,
            family.replace('_', " ")
        );
        for m in &bars {
            let _ = writeln!(
                svg,
                r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{} {}</text>"#,
                PLOT_LEFT - 10.0,
                y + bar_h * 0.7,
                m.domain.short(),
                svg_escape(&m.condition)
            );
            let _ = writeln!(
                svg,
                r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#8da0cb"><title>{}</title></rect>"##,
                x_of(0.0),
                y + 2.0,
                x_of(m.mean_p_reform) - x_of(0.0),
                bar_h - 4.0,
                fmt6(m.mean_p_reform)
            );
            y += bar_h;
        }
        axis(&mut svg, y + 4.0);
        y += gap + 20.0;
    }
    svg.push_str("</svg>\n");
    (csv, Some(svg))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(fmt6(0.25), "0.25");
        assert_eq!(fmt6(0.123456789), "0.123457");
        assert_eq!(fmt6(-1.0), "-1");
        assert_eq!(fmt6(1234.5678), "1234.57");
        assert_eq!(fmt6(0.0), "0");
        assert_eq!(fmt6(-1e-9), "-1.00000e-9");
    }

    #[test]
    fn classification() {
        assert_eq!(
            CellStyle::classify(-0.78, 0.2, true, 0.05).significance,
            Significance::NotSignificant
        );
        assert_eq!(
            CellStyle::classify(-1.03, 0.001, true, 0.05).significance,
            Significance::Baseline
        );
        assert_eq!(
            CellStyle::classify(0.13, 0.001, false, 0.05).significance,
            Significance::Positive
        );
        assert_eq!(
            CellStyle::classify(-1.12, 0.001, false, 0.05).significance,
            Significance::Negative
        );
    }

    #[test]
    fn empty_fit_list_is_error() {
        assert!(matches!(
            emit_coefficient_table(Domain::RoleNoun, &[], 0.05, 1),
            Err(ReportError::Empty)
        ));
    }

    #[test]
    fn empty_condition_means() {
        let (csv, svg) = emit_condition_means(&[], &[]);
        assert_eq!(csv, "domain,family,condition,mean_p_reform,count\n");
        assert!(svg.is_none());
    }
}
