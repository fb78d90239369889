//! Stimulus store: role-noun sets, pronoun templates, names and preamble banks.
//!
//! Every loader reads a headed CSV file, checks the header verbatim and
//! validates each row before returning. The files shipped under `data/` are
//! compiled in and available through [`StimulusBundle::shipped`].

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NAME_PLACEHOLDER: &str = "[NAME]";
pub const SLOT_PLACEHOLDER: &str = "[SLOT]";

pub const ROLE_NOUN_HEADER: &[&str] = &[
    "id",
    "neutral",
    "feminine",
    "masculine",
    "determiner",
    "source",
    "in_gpt_subset",
];
pub const PRONOUN_TEMPLATE_HEADER: &[&str] = &["id", "form", "text"];
pub const NAMES_HEADER: &[&str] = &["name", "class"];
pub const PRONOUN_VARIANT_HEADER: &[&str] =
    &["form", "neutral1", "neutral2", "feminine", "masculine"];
pub const PREAMBLE_HEADER: &[&str] = &["id", "experiment", "group", "text"];

const SHIPPED_ROLE_NOUNS: &str = include_str!("../../../data/role_nouns.csv");
const SHIPPED_PRONOUN_TEMPLATES: &str = include_str!("../../../data/pronoun_templates.csv");
const SHIPPED_NAMES: &str = include_str!("../../../data/names.csv");
const SHIPPED_PRONOUN_VARIANTS: &str = include_str!("../../../data/pronoun_variants.csv");
const SHIPPED_PREAMBLES: &str = include_str!("../../../data/preambles.csv");

#[derive(Debug, Error)]
pub enum StimulusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: line {line}: {message}")]
    Parse {
        file: String,
        line: u64,
        message: String,
    },
    #[error("variant set `{id}` fails validation: {}", join_criteria(.violations))]
    InvalidVariantSet {
        id: String,
        violations: Vec<Violation>,
    },
    #[error("template `{id}`: {reason}")]
    InvalidTemplate { id: String, reason: String },
    #[error("duplicate {kind} `{value}`")]
    Duplicate { kind: &'static str, value: String },
}

fn join_criteria(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| format!("{} ({})", v.criterion, v.detail))
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Domain {
    #[serde(rename = "role-nouns")]
    RoleNoun,
    #[serde(rename = "pronouns")]
    Pronoun,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::RoleNoun => "role-nouns",
            Domain::Pronoun => "pronouns",
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            Domain::RoleNoun => "rn",
            Domain::Pronoun => "pr",
        }
    }

    pub fn parse(s: &str) -> Option<Domain> {
        match s {
            "role-nouns" | "role-noun" | "rn" => Some(Domain::RoleNoun),
            "pronouns" | "pronoun" | "pr" => Some(Domain::Pronoun),
            _ => None,
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PronounForm {
    Subject,
    Object,
    #[serde(rename = "reflexive")]
    ReflexiveObject,
    Possessive,
}

impl PronounForm {
    pub const ALL: [PronounForm; 4] = [
        PronounForm::Subject,
        PronounForm::Object,
        PronounForm::ReflexiveObject,
        PronounForm::Possessive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PronounForm::Subject => "subject",
            PronounForm::Object => "object",
            PronounForm::ReflexiveObject => "reflexive",
            PronounForm::Possessive => "possessive",
        }
    }

    pub fn parse(s: &str) -> Option<PronounForm> {
        PronounForm::ALL.into_iter().find(|f| f.as_str() == s)
    }

    /// Number of reform (gender-neutral) variants for this form.
    pub fn reform_count(self) -> usize {
        match self {
            PronounForm::ReflexiveObject => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenderClass {
    Neutral,
    Feminine,
    Masculine,
}

impl GenderClass {
    pub fn parse(s: &str) -> Option<GenderClass> {
        match s {
            "neutral" => Some(GenderClass::Neutral),
            "feminine" => Some(GenderClass::Feminine),
            "masculine" => Some(GenderClass::Masculine),
            _ => None,
        }
    }
}

/// A lexical paradigm: one or more reform variants against a feminine and a
/// masculine variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSet {
    pub id: String,
    pub domain: Domain,
    pub reform_variants: Vec<String>,
    pub feminine_variant: String,
    pub masculine_variant: String,
    /// Indefinite article shared by every variant (role nouns only).
    pub determiner: Option<String>,
    pub pronoun_form: Option<PronounForm>,
    pub in_gpt_subset: bool,
    pub source: Option<String>,
}

impl VariantSet {
    /// All variants, reform variants first, then feminine, then masculine.
    pub fn variants(&self) -> Vec<&str> {
        self.reform_variants
            .iter()
            .map(String::as_str)
            .chain([
                self.feminine_variant.as_str(),
                self.masculine_variant.as_str(),
            ])
            .collect()
    }

    pub fn is_reform(&self, variant: &str) -> bool {
        self.reform_variants.iter().any(|v| v == variant)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Criterion {
    ThreeVariants,
    SameDeterminer,
    ProperSubstring,
    Distinctness,
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Criterion::ThreeVariants => "three-variants",
            Criterion::SameDeterminer => "same-determiner",
            Criterion::ProperSubstring => "proper-substring",
            Criterion::Distinctness => "distinctness",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub criterion: Criterion,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ValidationVerdict {
    pub violations: Vec<Violation>,
}

impl ValidationVerdict {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn criteria(&self) -> Vec<Criterion> {
        let mut out: Vec<Criterion> = self.violations.iter().map(|v| v.criterion).collect();
        out.dedup();
        out
    }

    pub fn violates(&self, criterion: Criterion) -> bool {
        self.violations.iter().any(|v| v.criterion == criterion)
    }
}

/// English indefinite article for a word or multi-word phrase.
pub fn indefinite_article(phrase: &str) -> &'static str {
    let word = phrase.trim().to_lowercase();
    const A_EXCEPTIONS: &[&str] = &["uni", "use", "usu", "uti", "eu", "one", "once", "ewe"];
    const AN_EXCEPTIONS: &[&str] = &["hour", "honest", "honor", "honour", "heir"];
    if AN_EXCEPTIONS.iter().any(|p| word.starts_with(p)) {
        return "an";
    }
    if A_EXCEPTIONS.iter().any(|p| word.starts_with(p)) {
        return "a";
    }
    match word.chars().next() {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

/// Check a variant set against the role-noun selection criteria.
///
/// Role-noun sets must have three variants sharing one determiner with none a
/// proper substring of another. Pronoun sets are checked for the form's
/// variant count and distinctness only: their paradigms (`he`/`she`/`they`)
/// overlap as strings by nature, and each variant is scored at a known span.
pub fn validate_variant_set(set: &VariantSet) -> ValidationVerdict {
    let mut violations = Vec::new();
    let variants = set.variants();

    match set.domain {
        Domain::RoleNoun => {
            if set.reform_variants.len() != 1 {
                violations.push(Violation {
                    criterion: Criterion::ThreeVariants,
                    detail: format!(
                        "expected one neutral variant, found {}",
                        set.reform_variants.len()
                    ),
                });
            }
        }
        Domain::Pronoun => {
            let expected = set.pronoun_form.map(PronounForm::reform_count);
            if expected != Some(set.reform_variants.len()) {
                violations.push(Violation {
                    criterion: Criterion::ThreeVariants,
                    detail: format!(
                        "form {:?} expects {:?} neutral variants, found {}",
                        set.pronoun_form,
                        expected,
                        set.reform_variants.len()
                    ),
                });
            }
        }
    }

    let mut seen = HashSet::new();
    for v in &variants {
        if v.trim().is_empty() {
            violations.push(Violation {
                criterion: Criterion::Distinctness,
                detail: "empty variant".to_string(),
            });
        } else if !seen.insert(*v) {
            violations.push(Violation {
                criterion: Criterion::Distinctness,
                detail: format!("`{v}` appears more than once"),
            });
        }
    }

    if set.domain == Domain::RoleNoun {
        let declared = set.determiner.as_deref().unwrap_or("");
        let articles: Vec<&str> = variants.iter().map(|v| indefinite_article(v)).collect();
        let mismatched: Vec<String> = variants
            .iter()
            .zip(&articles)
            .filter(|(_, a)| **a != declared)
            .map(|(v, a)| format!("{a} {v}"))
            .collect();
        if !mismatched.is_empty() {
            violations.push(Violation {
                criterion: Criterion::SameDeterminer,
                detail: format!("declared `{declared}` but {}", mismatched.join(", ")),
            });
        }

        for a in &variants {
            for b in &variants {
                if !a.is_empty() && a != b && b.contains(a) {
                    violations.push(Violation {
                        criterion: Criterion::ProperSubstring,
                        detail: format!("`{a}` is a proper substring of `{b}`"),
                    });
                }
            }
        }
    }

    violations.sort_by_key(|v| v.criterion);
    ValidationVerdict { violations }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceTemplate {
    pub id: String,
    pub domain: Domain,
    pub text: String,
    pub pronoun_form: Option<PronounForm>,
    /// True when nothing but closing punctuation follows `[SLOT]`.
    pub slot_is_final_token_span: bool,
}

impl SentenceTemplate {
    pub fn new(
        id: impl Into<String>,
        domain: Domain,
        text: impl Into<String>,
        pronoun_form: Option<PronounForm>,
    ) -> Result<Self, StimulusError> {
        let id = id.into();
        let text = text.into();
        check_template_shape(&id, &text)?;
        if domain == Domain::RoleNoun
            && text != "[NAME] is a [SLOT]."
            && text != "[NAME] is an [SLOT]."
        {
            return Err(StimulusError::InvalidTemplate {
                id,
                reason: "role-noun templates must read `[NAME] is a [SLOT].`".to_string(),
            });
        }
        let tail = &text[text.find(SLOT_PLACEHOLDER).unwrap() + SLOT_PLACEHOLDER.len()..];
        Ok(SentenceTemplate {
            slot_is_final_token_span: is_closing_punctuation(tail),
            id,
            domain,
            text,
            pronoun_form,
        })
    }

    /// The role-noun core sentence for a variant set, using its determiner.
    pub fn for_role_noun_set(set: &VariantSet) -> Result<Self, StimulusError> {
        let det = set.determiner.as_deref().unwrap_or("a");
        SentenceTemplate::new(
            set.id.clone(),
            Domain::RoleNoun,
            format!("[NAME] is {det} [SLOT]."),
            None,
        )
    }
}

/// True for text made only of `.`, `"`, `'`, `!`, `?` (or empty).
pub fn is_closing_punctuation(s: &str) -> bool {
    s.chars().all(|c| matches!(c, '.' | '"' | '\'' | '!' | '?'))
}

fn check_template_shape(id: &str, text: &str) -> Result<(), StimulusError> {
    let err = |reason: String| StimulusError::InvalidTemplate {
        id: id.to_string(),
        reason,
    };
    let names = text.matches(NAME_PLACEHOLDER).count();
    let slots = text.matches(SLOT_PLACEHOLDER).count();
    if names != 1 {
        return Err(err(format!(
            "expected one {NAME_PLACEHOLDER}, found {names}"
        )));
    }
    if slots != 1 {
        return Err(err(format!(
            "expected one {SLOT_PLACEHOLDER}, found {slots}"
        )));
    }
    if text.trim_start().starts_with(SLOT_PLACEHOLDER) {
        return Err(err("slot-initial templates are not supported".to_string()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NameEntry {
    pub name: String,
    pub gender_class: GenderClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Experiment {
    #[serde(rename = "1")]
    Exp1,
    #[serde(rename = "2")]
    Exp2,
}

impl Experiment {
    pub fn number(self) -> u8 {
        match self {
            Experiment::Exp1 => 1,
            Experiment::Exp2 => 2,
        }
    }

    pub fn from_number(n: u8) -> Option<Experiment> {
        match n {
            1 => Some(Experiment::Exp1),
            2 => Some(Experiment::Exp2),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PreambleGroup {
    #[serde(rename = "positive-metaling")]
    PositiveMetaling,
    #[serde(rename = "prog")]
    Prog,
    #[serde(rename = "cons")]
    Cons,
    #[serde(rename = "prog-stance")]
    ProgStance,
    #[serde(rename = "cons-stance")]
    ConsStance,
    #[serde(rename = "choices")]
    Choices,
    #[serde(rename = "individual-declaration")]
    IndividualDeclaration,
    #[serde(rename = "ideology-declaration")]
    IdeologyDeclaration,
    #[serde(rename = "null")]
    Null,
}

impl PreambleGroup {
    pub const ALL: [PreambleGroup; 9] = [
        PreambleGroup::PositiveMetaling,
        PreambleGroup::Prog,
        PreambleGroup::Cons,
        PreambleGroup::ProgStance,
        PreambleGroup::ConsStance,
        PreambleGroup::Choices,
        PreambleGroup::IndividualDeclaration,
        PreambleGroup::IdeologyDeclaration,
        PreambleGroup::Null,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PreambleGroup::PositiveMetaling => "positive-metaling",
            PreambleGroup::Prog => "prog",
            PreambleGroup::Cons => "cons",
            PreambleGroup::ProgStance => "prog-stance",
            PreambleGroup::ConsStance => "cons-stance",
            PreambleGroup::Choices => "choices",
            PreambleGroup::IndividualDeclaration => "individual-declaration",
            PreambleGroup::IdeologyDeclaration => "ideology-declaration",
            PreambleGroup::Null => "null",
        }
    }

    pub fn parse(s: &str) -> Option<PreambleGroup> {
        PreambleGroup::ALL.into_iter().find(|g| g.as_str() == s)
    }

    pub fn experiment(self) -> Experiment {
        match self {
            PreambleGroup::PositiveMetaling
            | PreambleGroup::Prog
            | PreambleGroup::Cons
            | PreambleGroup::ProgStance
            | PreambleGroup::ConsStance => Experiment::Exp1,
            _ => Experiment::Exp2,
        }
    }
}

impl fmt::Display for PreambleGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preamble {
    pub id: String,
    pub group: PreambleGroup,
    /// May contain `[NAME]`, and `[V1]`..`[V3]` for role-noun choices.
    pub text_template: String,
    pub experiment: Experiment,
    /// `None` applies to both domains.
    pub domain: Option<Domain>,
}

impl Preamble {
    pub fn applies_to(&self, domain: Domain) -> bool {
        self.domain.is_none_or(|d| d == domain)
    }
}

/// Everything the prompt generator needs, loaded and validated.
#[derive(Debug, Clone)]
pub struct StimulusBundle {
    pub role_noun_sets: Vec<VariantSet>,
    pub pronoun_sets: Vec<VariantSet>,
    pub pronoun_templates: Vec<SentenceTemplate>,
    pub names: Vec<NameEntry>,
    pub preambles: Vec<Preamble>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum StimulusSubset {
    #[default]
    #[serde(rename = "full")]
    Full,
    #[serde(rename = "gpt-subset-12")]
    GptSubset12,
}

impl StimulusBundle {
    pub fn shipped() -> Self {
        StimulusBundle {
            role_noun_sets: parse_variant_sets(SHIPPED_ROLE_NOUNS, "role_nouns.csv")
                .expect("shipped role nouns are valid"),
            pronoun_sets: parse_pronoun_variants(SHIPPED_PRONOUN_VARIANTS, "pronoun_variants.csv")
                .expect("shipped pronoun variants are valid"),
            pronoun_templates: parse_pronoun_templates(
                SHIPPED_PRONOUN_TEMPLATES,
                "pronoun_templates.csv",
            )
            .expect("shipped pronoun templates are valid"),
            names: parse_names(SHIPPED_NAMES, "names.csv").expect("shipped names are valid"),
            preambles: parse_preambles(SHIPPED_PREAMBLES, "preambles.csv")
                .expect("shipped preambles are valid"),
        }
    }

    pub fn variant_sets(&self, domain: Domain) -> &[VariantSet] {
        match domain {
            Domain::RoleNoun => &self.role_noun_sets,
            Domain::Pronoun => &self.pronoun_sets,
        }
    }

    /// Core sentence templates for a domain. Role-noun templates are derived
    /// one per variant set; the subset filter applies to role nouns only.
    pub fn templates(&self, domain: Domain, subset: StimulusSubset) -> Vec<SentenceTemplate> {
        match domain {
            Domain::RoleNoun => self
                .role_noun_sets
                .iter()
                .filter(|s| subset == StimulusSubset::Full || s.in_gpt_subset)
                .map(|s| SentenceTemplate::for_role_noun_set(s).expect("validated set"))
                .collect(),
            Domain::Pronoun => self.pronoun_templates.clone(),
        }
    }

    /// The variant set a template ranges over.
    pub fn variant_set_for(&self, template: &SentenceTemplate) -> Option<&VariantSet> {
        match template.domain {
            Domain::RoleNoun => self.role_noun_sets.iter().find(|s| s.id == template.id),
            Domain::Pronoun => self
                .pronoun_sets
                .iter()
                .find(|s| s.pronoun_form == template.pronoun_form),
        }
    }

    pub fn preambles_for(&self, experiment: Experiment, domain: Domain) -> Vec<Preamble> {
        self.preambles
            .iter()
            .filter(|p| p.experiment == experiment && p.applies_to(domain))
            .cloned()
            .collect()
    }

    pub fn preamble(&self, id: &str) -> Option<&Preamble> {
        self.preambles.iter().find(|p| p.id == id)
    }

    pub fn name_class(&self, name: &str) -> Option<GenderClass> {
        self.names
            .iter()
            .find(|n| n.name == name)
            .map(|n| n.gender_class)
    }
}

// ---------------------------------------------------------------------------
// CSV loading

struct CsvRows {
    file: String,
    rows: Vec<(u64, csv::StringRecord)>,
}

fn read_csv(
    text: &str,
    file: &str,
    expected: &[&str],
    optional: &[&str],
) -> Result<CsvRows, StimulusError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| StimulusError::Parse {
        file: file.to_string(),
        line: 1,
        message: e.to_string(),
    })?;
    let got: Vec<&str> = headers.iter().collect();
    let full: Vec<&str> = expected.iter().chain(optional).copied().collect();
    if got != expected && got != full {
        return Err(StimulusError::Parse {
            file: file.to_string(),
            line: 1,
            message: format!(
                "expected header `{}`, found `{}`",
                expected.join(","),
                got.join(",")
            ),
        });
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| StimulusError::Parse {
            file: file.to_string(),
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        rows.push((line, record));
    }
    Ok(CsvRows {
        file: file.to_string(),
        rows,
    })
}

impl CsvRows {
    fn parse_err(&self, line: u64, message: impl Into<String>) -> StimulusError {
        StimulusError::Parse {
            file: self.file.clone(),
            line,
            message: message.into(),
        }
    }
}

fn read_file(path: &Path) -> Result<String, StimulusError> {
    std::fs::read_to_string(path).map_err(|source| StimulusError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn file_label(path: &Path) -> String {
    path.display().to_string()
}

pub fn load_variant_sets(path: &Path) -> Result<Vec<VariantSet>, StimulusError> {
    parse_variant_sets(&read_file(path)?, &file_label(path))
}

pub fn parse_variant_sets(text: &str, file: &str) -> Result<Vec<VariantSet>, StimulusError> {
    let csv = read_csv(text, file, ROLE_NOUN_HEADER, &[])?;
    let mut sets = Vec::with_capacity(csv.rows.len());
    let mut ids = HashSet::new();
    for (line, r) in &csv.rows {
        let in_gpt_subset = match &r[6] {
            "true" => true,
            "false" => false,
            other => {
                return Err(csv.parse_err(
                    *line,
                    format!("in_gpt_subset must be true or false, got `{other}`"),
                ))
            }
        };
        let set = VariantSet {
            id: r[0].to_string(),
            domain: Domain::RoleNoun,
            reform_variants: vec![r[1].to_string()],
            feminine_variant: r[2].to_string(),
            masculine_variant: r[3].to_string(),
            determiner: Some(r[4].to_string()),
            pronoun_form: None,
            in_gpt_subset,
            source: Some(r[5].to_string()).filter(|s| !s.is_empty()),
        };
        if set.id.is_empty() {
            return Err(csv.parse_err(*line, "empty id"));
        }
        if !ids.insert(set.id.clone()) {
            return Err(StimulusError::Duplicate {
                kind: "variant set id",
                value: set.id,
            });
        }
        let verdict = validate_variant_set(&set);
        if !verdict.is_ok() {
            return Err(StimulusError::InvalidVariantSet {
                id: set.id,
                violations: verdict.violations,
            });
        }
        sets.push(set);
    }
    Ok(sets)
}

pub fn load_pronoun_variants(path: &Path) -> Result<Vec<VariantSet>, StimulusError> {
    parse_pronoun_variants(&read_file(path)?, &file_label(path))
}

pub fn parse_pronoun_variants(text: &str, file: &str) -> Result<Vec<VariantSet>, StimulusError> {
    let csv = read_csv(text, file, PRONOUN_VARIANT_HEADER, &[])?;
    let mut sets = Vec::new();
    for (line, r) in &csv.rows {
        let form = PronounForm::parse(&r[0])
            .ok_or_else(|| csv.parse_err(*line, format!("unknown form `{}`", &r[0])))?;
        let mut reform = vec![r[1].to_string()];
        if !r[2].is_empty() {
            reform.push(r[2].to_string());
        }
        let set = VariantSet {
            id: form.as_str().to_string(),
            domain: Domain::Pronoun,
            reform_variants: reform,
            feminine_variant: r[3].to_string(),
            masculine_variant: r[4].to_string(),
            determiner: None,
            pronoun_form: Some(form),
            in_gpt_subset: true,
            source: None,
        };
        if sets
            .iter()
            .any(|s: &VariantSet| s.pronoun_form == Some(form))
        {
            return Err(StimulusError::Duplicate {
                kind: "pronoun form",
                value: form.as_str().to_string(),
            });
        }
        let verdict = validate_variant_set(&set);
        if !verdict.is_ok() {
            return Err(StimulusError::InvalidVariantSet {
                id: set.id,
                violations: verdict.violations,
            });
        }
        sets.push(set);
    }
    Ok(sets)
}

pub fn load_pronoun_templates(path: &Path) -> Result<Vec<SentenceTemplate>, StimulusError> {
    parse_pronoun_templates(&read_file(path)?, &file_label(path))
}

/// Parse pronoun templates, returned grouped by form (stable within a form).
pub fn parse_pronoun_templates(
    text: &str,
    file: &str,
) -> Result<Vec<SentenceTemplate>, StimulusError> {
    let csv = read_csv(text, file, PRONOUN_TEMPLATE_HEADER, &[])?;
    let mut by_form: BTreeMap<PronounForm, Vec<SentenceTemplate>> = BTreeMap::new();
    let mut ids = HashSet::new();
    for (line, r) in &csv.rows {
        let form = PronounForm::parse(&r[1])
            .ok_or_else(|| csv.parse_err(*line, format!("unknown form `{}`", &r[1])))?;
        if !ids.insert(r[0].to_string()) {
            return Err(StimulusError::Duplicate {
                kind: "template id",
                value: r[0].to_string(),
            });
        }
        let template = SentenceTemplate::new(&r[0], Domain::Pronoun, &r[2], Some(form))?;
        by_form.entry(form).or_default().push(template);
    }
    Ok(by_form.into_values().flatten().collect())
}

pub fn load_names(path: &Path) -> Result<Vec<NameEntry>, StimulusError> {
    parse_names(&read_file(path)?, &file_label(path))
}

pub fn parse_names(text: &str, file: &str) -> Result<Vec<NameEntry>, StimulusError> {
    let csv = read_csv(text, file, NAMES_HEADER, &[])?;
    let mut seen = HashSet::new();
    let mut names = Vec::new();
    for (line, r) in &csv.rows {
        let name = r[0].trim().to_string();
        if name.is_empty() {
            return Err(csv.parse_err(*line, "empty name"));
        }
        let gender_class = GenderClass::parse(&r[1])
            .ok_or_else(|| csv.parse_err(*line, format!("unknown class `{}`", &r[1])))?;
        if !seen.insert(name.clone()) {
            return Err(StimulusError::Duplicate {
                kind: "name",
                value: name,
            });
        }
        names.push(NameEntry { name, gender_class });
    }
    Ok(names)
}

pub fn load_preambles(path: &Path) -> Result<Vec<Preamble>, StimulusError> {
    parse_preambles(&read_file(path)?, &file_label(path))
}

/// Parse a preamble bank. A fifth `domain` column (`both`, `role-nouns`,
/// `pronouns`) is accepted after the four required ones.
pub fn parse_preambles(text: &str, file: &str) -> Result<Vec<Preamble>, StimulusError> {
    let csv = read_csv(text, file, PREAMBLE_HEADER, &["domain"])?;
    let mut ids = HashSet::new();
    let mut out = Vec::new();
    for (line, r) in &csv.rows {
        let experiment = r[1]
            .parse::<u8>()
            .ok()
            .and_then(Experiment::from_number)
            .ok_or_else(|| {
                csv.parse_err(*line, format!("experiment must be 1 or 2, got `{}`", &r[1]))
            })?;
        let group = PreambleGroup::parse(&r[2])
            .ok_or_else(|| csv.parse_err(*line, format!("unknown group `{}`", &r[2])))?;
        if group.experiment() != experiment {
            return Err(csv.parse_err(
                *line,
                format!(
                    "group `{group}` does not belong to experiment {}",
                    experiment.number()
                ),
            ));
        }
        let domain = match r.get(4) {
            None | Some("") | Some("both") => None,
            Some(d) => Some(
                Domain::parse(d)
                    .ok_or_else(|| csv.parse_err(*line, format!("unknown domain `{d}`")))?,
            ),
        };
        let text_template = r[3].to_string();
        if group == PreambleGroup::Null && !text_template.is_empty() {
            return Err(csv.parse_err(*line, "the null preamble must have empty text"));
        }
        if group != PreambleGroup::Null && text_template.is_empty() {
            return Err(csv.parse_err(*line, "empty preamble text"));
        }
        if !ids.insert(r[0].to_string()) {
            return Err(StimulusError::Duplicate {
                kind: "preamble id",
                value: r[0].to_string(),
            });
        }
        out.push(Preamble {
            id: r[0].to_string(),
            group,
            text_template,
            experiment,
            domain,
        });
    }
    Ok(out)
}
