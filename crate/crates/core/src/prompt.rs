//! Prompt suites for both experiments.
//!
//! Each [`PromptItem`] carries the rendered text split at the slot, so that
//! `rendered_prefix + "[SLOT]" + rendered_suffix` is the full prompt.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stimulus::{
    is_closing_punctuation, Domain, NameEntry, SentenceTemplate, StimulusBundle, StimulusSubset,
    VariantSet, NAME_PLACEHOLDER, SLOT_PLACEHOLDER,
};
pub use crate::stimulus::{Experiment, Preamble, PreambleGroup};

/// Blank shown in place of the slot inside quoted core sentences.
pub const BLANK: &str = "____";

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("template `{template}` is for {template_domain} but the run is for {run_domain}")]
    DomainMismatch {
        template: String,
        template_domain: Domain,
        run_domain: Domain,
    },
    #[error("preamble `{preamble}` belongs to experiment {found}, expected experiment {expected}")]
    WrongExperiment {
        preamble: String,
        expected: u8,
        found: u8,
    },
    #[error("placeholder mismatch in `{0}`")]
    Placeholder(String),
    #[error("illegal way of asking: {0}")]
    IllegalWayOfAsking(String),
    #[error("no variant set for template `{0}`")]
    MissingVariantSet(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Directness {
    Direct,
    Indirect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Adjective {
    Likely,
    Best,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verb {
    Complete,
    Refer,
}

/// How the model is asked: directly, or through one of four metalinguistic
/// wrappers. Serialized as `direct`, `likely+complete`, `best+refer`, ...
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WayOfAsking {
    directness: Directness,
    adjective: Option<Adjective>,
    verb: Option<Verb>,
}

impl WayOfAsking {
    pub const DIRECT: WayOfAsking = WayOfAsking {
        directness: Directness::Direct,
        adjective: None,
        verb: None,
    };

    pub fn new(
        directness: Directness,
        adjective: Option<Adjective>,
        verb: Option<Verb>,
    ) -> Result<Self, PromptError> {
        match (directness, adjective, verb) {
            (Directness::Direct, None, None) | (Directness::Indirect, Some(_), Some(_)) => {
                Ok(WayOfAsking {
                    directness,
                    adjective,
                    verb,
                })
            }
            _ => Err(PromptError::IllegalWayOfAsking(format!(
                "{directness:?} with adjective {adjective:?} and verb {verb:?}"
            ))),
        }
    }

    pub fn indirect(adjective: Adjective, verb: Verb) -> Self {
        WayOfAsking {
            directness: Directness::Indirect,
            adjective: Some(adjective),
            verb: Some(verb),
        }
    }

    /// The five legal ways, direct first.
    pub fn all() -> [WayOfAsking; 5] {
        [
            WayOfAsking::DIRECT,
            WayOfAsking::indirect(Adjective::Likely, Verb::Complete),
            WayOfAsking::indirect(Adjective::Best, Verb::Complete),
            WayOfAsking::indirect(Adjective::Likely, Verb::Refer),
            WayOfAsking::indirect(Adjective::Best, Verb::Refer),
        ]
    }

    pub fn directness(&self) -> Directness {
        self.directness
    }

    pub fn adjective(&self) -> Option<Adjective> {
        self.adjective
    }

    pub fn verb(&self) -> Option<Verb> {
        self.verb
    }

    pub fn label(&self) -> &'static str {
        match (self.adjective, self.verb) {
            (None, _) | (_, None) => "direct",
            (Some(Adjective::Likely), Some(Verb::Complete)) => "likely+complete",
            (Some(Adjective::Best), Some(Verb::Complete)) => "best+complete",
            (Some(Adjective::Likely), Some(Verb::Refer)) => "likely+refer",
            (Some(Adjective::Best), Some(Verb::Refer)) => "best+refer",
        }
    }

    pub fn parse(s: &str) -> Result<WayOfAsking, PromptError> {
        WayOfAsking::all()
            .into_iter()
            .find(|w| w.label() == s)
            .ok_or_else(|| PromptError::IllegalWayOfAsking(s.to_string()))
    }
}

impl fmt::Display for WayOfAsking {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl Serialize for WayOfAsking {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for WayOfAsking {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        WayOfAsking::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// One rendered experimental unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptItem {
    pub id: String,
    pub experiment: Experiment,
    pub domain: Domain,
    pub template_id: String,
    pub name: NameEntry,
    pub preamble_id: String,
    pub way_of_asking: Option<WayOfAsking>,
    pub variant_set_id: String,
    pub rendered_prefix: String,
    pub rendered_suffix: String,
    pub slot_at_end: bool,
    pub choices_ordering: Option<usize>,
}

impl PromptItem {
    /// Full prompt text with the slot marker in place.
    pub fn text(&self) -> String {
        format!(
            "{}{}{}",
            self.rendered_prefix, SLOT_PLACEHOLDER, self.rendered_suffix
        )
    }

    /// Prompt with the slot filled by `variant`.
    pub fn filled(&self, variant: &str) -> String {
        format!(
            "{}{}{}",
            self.rendered_prefix, variant, self.rendered_suffix
        )
    }

    /// Identifier of the logical cell; choice orderings share one cell.
    pub fn cell_id(&self) -> &str {
        cell_id_of(&self.id)
    }
}

/// Strip a `-o<k>` choice-ordering suffix from an item id.
pub fn cell_id_of(item_id: &str) -> &str {
    match item_id.rfind("-o") {
        Some(pos)
            if item_id[pos + 2..].chars().all(|c| c.is_ascii_digit())
                && pos + 2 < item_id.len() =>
        {
            &item_id[..pos]
        }
        _ => item_id,
    }
}

/// The six orderings of three choices, in lexicographic order of indices.
pub const CHOICE_PERMUTATIONS: [[usize; 3]; 6] = [
    [0, 1, 2],
    [0, 2, 1],
    [1, 0, 2],
    [1, 2, 0],
    [2, 0, 1],
    [2, 1, 0],
];

fn fill_name(text: &str, name: &str) -> String {
    text.replace(NAME_PLACEHOLDER, name)
}

/// Render a preamble for an item. `ordering` selects the order of the three
/// role-noun variants for `[V1]`..`[V3]`.
fn render_preamble(
    preamble: &Preamble,
    name: &str,
    set: &VariantSet,
    ordering: Option<[usize; 3]>,
) -> Result<String, PromptError> {
    let mut text = fill_name(&preamble.text_template, name);
    if text.contains("[V1]") {
        let variants = set.variants();
        let order = ordering.ok_or_else(|| PromptError::Placeholder(preamble.id.clone()))?;
        if variants.len() != 3 {
            return Err(PromptError::Placeholder(preamble.id.clone()));
        }
        for (k, idx) in order.iter().enumerate() {
            text = text.replace(&format!("[V{}]", k + 1), variants[*idx]);
        }
    }
    if text.contains('[') && (text.contains("[V") || text.contains(NAME_PLACEHOLDER)) {
        return Err(PromptError::Placeholder(preamble.id.clone()));
    }
    Ok(text)
}

fn split_core(template: &SentenceTemplate, name: &str) -> Result<(String, String), PromptError> {
    let filled = fill_name(&template.text, name);
    let mut parts = filled.splitn(2, SLOT_PLACEHOLDER);
    let head = parts.next().unwrap_or_default().to_string();
    let tail = parts
        .next()
        .ok_or_else(|| PromptError::Placeholder(template.id.clone()))?
        .to_string();
    if tail.contains(SLOT_PLACEHOLDER) {
        return Err(PromptError::Placeholder(template.id.clone()));
    }
    Ok((head, tail))
}

fn blank_sentence(template: &SentenceTemplate, name: &str) -> Result<String, PromptError> {
    let (head, tail) = split_core(template, name)?;
    Ok(format!("{head}{BLANK}{tail}"))
}

fn join_preamble(preamble_text: &str, body: &str) -> String {
    if preamble_text.is_empty() {
        body.to_string()
    } else {
        format!("{preamble_text} {body}")
    }
}

fn exp1_item_id(domain: Domain, t: usize, n: usize, p: usize) -> String {
    format!("e1-{}-t{t:03}-n{n:03}-p{p:02}", domain.short())
}

fn exp2_item_id(domain: Domain, t: usize, n: usize, w: usize, p: usize) -> String {
    format!("e2-{}-t{t:03}-n{n:03}-w{w}-p{p}", domain.short())
}

fn check_set(template: &SentenceTemplate, set: &VariantSet) -> Result<(), PromptError> {
    let ok = match template.domain {
        Domain::RoleNoun => set.domain == Domain::RoleNoun && set.id == template.id,
        Domain::Pronoun => {
            set.domain == Domain::Pronoun && set.pronoun_form == template.pronoun_form
        }
    };
    if ok {
        Ok(())
    } else {
        Err(PromptError::MissingVariantSet(template.id.clone()))
    }
}

/// Render an Experiment 1 item: preamble, then the "best word" wrapper with
/// the slot at the very end.
pub fn render_exp1_item(
    template: &SentenceTemplate,
    set: &VariantSet,
    name: &NameEntry,
    preamble: &Preamble,
) -> Result<PromptItem, PromptError> {
    render_exp1_item_with_id(template, set, name, preamble, String::new())
}

fn render_exp1_item_with_id(
    template: &SentenceTemplate,
    set: &VariantSet,
    name: &NameEntry,
    preamble: &Preamble,
    id: String,
) -> Result<PromptItem, PromptError> {
    if preamble.experiment != Experiment::Exp1 {
        return Err(PromptError::WrongExperiment {
            preamble: preamble.id.clone(),
            expected: 1,
            found: preamble.experiment.number(),
        });
    }
    check_set(template, set)?;
    let pre = render_preamble(preamble, &name.name, set, None)?;
    let core = blank_sentence(template, &name.name)?;
    let body = format!("The best word to complete the sentence \"{core}\" is ");
    Ok(PromptItem {
        id,
        experiment: Experiment::Exp1,
        domain: template.domain,
        template_id: template.id.clone(),
        name: name.clone(),
        preamble_id: preamble.id.clone(),
        way_of_asking: None,
        variant_set_id: set.id.clone(),
        rendered_prefix: join_preamble(&pre, &body),
        rendered_suffix: String::new(),
        slot_at_end: true,
        choices_ordering: None,
    })
}

/// Render an Experiment 2 cell. Returns six items (one per ordering) for a
/// role-noun choices preamble, otherwise one.
pub fn render_exp2_item(
    template: &SentenceTemplate,
    set: &VariantSet,
    name: &NameEntry,
    way: WayOfAsking,
    preamble: &Preamble,
) -> Result<Vec<PromptItem>, PromptError> {
    render_exp2_with_id(template, set, name, way, preamble, String::new())
}

fn render_exp2_with_id(
    template: &SentenceTemplate,
    set: &VariantSet,
    name: &NameEntry,
    way: WayOfAsking,
    preamble: &Preamble,
    id: String,
) -> Result<Vec<PromptItem>, PromptError> {
    if preamble.experiment != Experiment::Exp2 {
        return Err(PromptError::WrongExperiment {
            preamble: preamble.id.clone(),
            expected: 2,
            found: preamble.experiment.number(),
        });
    }
    WayOfAsking::new(way.directness, way.adjective, way.verb)?;
    check_set(template, set)?;

    let orderings: Vec<Option<usize>> = if preamble.text_template.contains("[V1]") {
        (0..CHOICE_PERMUTATIONS.len()).map(Some).collect()
    } else {
        vec![None]
    };

    let (head, tail) = split_core(template, &name.name)?;
    let (body_prefix, body_suffix) = match (way.adjective, way.verb) {
        (Some(adj), Some(verb)) => {
            let asking = match adj {
                Adjective::Likely => "The word most likely to",
                Adjective::Best => "The best word to",
            };
            let action = match verb {
                Verb::Complete => "complete the sentence".to_string(),
                Verb::Refer => format!("refer to {} in the sentence", name.name),
            };
            let core = format!("{head}{BLANK}{tail}");
            (format!("{asking} {action} \"{core}\" is "), String::new())
        }
        _ => (head, tail),
    };

    orderings
        .into_iter()
        .map(|ordering| {
            let pre = render_preamble(
                preamble,
                &name.name,
                set,
                ordering.map(|k| CHOICE_PERMUTATIONS[k]),
            )?;
            let item_id = match ordering {
                Some(k) => format!("{id}-o{k}"),
                None => id.clone(),
            };
            Ok(PromptItem {
                id: item_id,
                experiment: Experiment::Exp2,
                domain: template.domain,
                template_id: template.id.clone(),
                name: name.clone(),
                preamble_id: preamble.id.clone(),
                way_of_asking: Some(way),
                variant_set_id: set.id.clone(),
                rendered_prefix: join_preamble(&pre, &body_prefix),
                slot_at_end: is_closing_punctuation(&body_suffix),
                rendered_suffix: body_suffix.clone(),
                choices_ordering: ordering,
            })
        })
        .collect()
}

fn lookup_set<'a>(
    sets: &'a [VariantSet],
    template: &SentenceTemplate,
) -> Result<&'a VariantSet, PromptError> {
    sets.iter()
        .find(|s| check_set(template, s).is_ok())
        .ok_or_else(|| PromptError::MissingVariantSet(template.id.clone()))
}

/// Experiment 1 suite in (template, name, preamble) order.
pub fn enumerate_exp1_suite(
    templates: &[SentenceTemplate],
    sets: &[VariantSet],
    names: &[NameEntry],
    preambles: &[Preamble],
    domain: Domain,
) -> Result<Vec<PromptItem>, PromptError> {
    let mut items = Vec::with_capacity(templates.len() * names.len() * preambles.len());
    for (t, template) in templates.iter().enumerate() {
        check_domain(template, domain)?;
        let set = lookup_set(sets, template)?;
        for (n, name) in names.iter().enumerate() {
            for (p, preamble) in preambles.iter().enumerate() {
                let id = exp1_item_id(domain, t, n, p);
                items.push(render_exp1_item_with_id(template, set, name, preamble, id)?);
            }
        }
    }
    Ok(items)
}

/// Experiment 2 suite in (template, name, way, preamble, ordering) order.
pub fn enumerate_exp2_suite(
    templates: &[SentenceTemplate],
    sets: &[VariantSet],
    names: &[NameEntry],
    ways: &[WayOfAsking],
    preambles: &[Preamble],
    domain: Domain,
) -> Result<Vec<PromptItem>, PromptError> {
    let mut items = Vec::new();
    for (t, template) in templates.iter().enumerate() {
        check_domain(template, domain)?;
        let set = lookup_set(sets, template)?;
        for (n, name) in names.iter().enumerate() {
            for (w, way) in ways.iter().enumerate() {
                for (p, preamble) in preambles.iter().enumerate() {
                    let id = exp2_item_id(domain, t, n, w, p);
                    items.extend(render_exp2_with_id(
                        template, set, name, *way, preamble, id,
                    )?);
                }
            }
        }
    }
    Ok(items)
}

fn check_domain(template: &SentenceTemplate, domain: Domain) -> Result<(), PromptError> {
    if template.domain != domain {
        return Err(PromptError::DomainMismatch {
            template: template.id.clone(),
            template_domain: template.domain,
            run_domain: domain,
        });
    }
    Ok(())
}

/// Build a full suite from a stimulus bundle.
pub fn build_suite(
    bundle: &StimulusBundle,
    experiment: Experiment,
    domain: Domain,
    subset: StimulusSubset,
) -> Result<Vec<PromptItem>, PromptError> {
    let templates = bundle.templates(domain, subset);
    let sets = bundle.variant_sets(domain);
    let preambles = bundle.preambles_for(experiment, domain);
    match experiment {
        Experiment::Exp1 => {
            enumerate_exp1_suite(&templates, sets, &bundle.names, &preambles, domain)
        }
        Experiment::Exp2 => enumerate_exp2_suite(
            &templates,
            sets,
            &bundle.names,
            &WayOfAsking::all(),
            &preambles,
            domain,
        ),
    }
}

/// Number of distinct logical cells in a suite.
pub fn logical_cell_count(items: &[PromptItem]) -> usize {
    items
        .iter()
        .map(PromptItem::cell_id)
        .collect::<BTreeSet<_>>()
        .len()
}

/// Write a suite manifest: one JSON object per line.
pub fn write_manifest<W: std::io::Write>(items: &[PromptItem], mut out: W) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_manifest<R: std::io::BufRead>(input: R) -> Result<Vec<PromptItem>, serde_json::Error> {
    let mut items = Vec::new();
    for line in input.lines() {
        let line = line.map_err(serde_json::Error::io)?;
        if line.trim().is_empty() {
            continue;
        }
        items.push(serde_json::from_str(&line)?);
    }
    Ok(items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stimulus::{GenderClass, PronounForm};

    fn bundle() -> StimulusBundle {
        StimulusBundle::shipped()
    }

    fn name(n: &str) -> NameEntry {
        NameEntry {
            name: n.to_string(),
            gender_class: GenderClass::Neutral,
        }
    }

    fn congress(b: &StimulusBundle) -> (SentenceTemplate, VariantSet) {
        let set = b
            .role_noun_sets
            .iter()
            .find(|s| s.id == "congressperson")
            .unwrap()
            .clone();
        (SentenceTemplate::for_role_noun_set(&set).unwrap(), set)
    }

    fn possessive() -> SentenceTemplate {
        SentenceTemplate::new(
            "poss",
            Domain::Pronoun,
            "[NAME] left [SLOT] computer on.",
            Some(PronounForm::Possessive),
        )
        .unwrap()
    }

    fn pronoun_set(b: &StimulusBundle, form: PronounForm) -> VariantSet {
        b.pronoun_sets
            .iter()
            .find(|s| s.pronoun_form == Some(form))
            .unwrap()
            .clone()
    }

    #[test]
    fn exp1_conservative_prompt() {
        let b = bundle();
        let (t, s) = congress(&b);
        let item =
            render_exp1_item(&t, &s, &name("Casey"), b.preamble("conservative").unwrap()).unwrap();
        assert_eq!(
            item.text(),
            "Assume you want to sound conservative. The best word to complete the sentence \"Casey is a ____.\" is [SLOT]"
        );
        assert!(item.slot_at_end);
        assert!(item.rendered_suffix.is_empty());
    }

    #[test]
    fn exp1_correct_prompt() {
        let b = bundle();
        let (t, s) = congress(&b);
        let item = render_exp1_item(&t, &s, &name("Alex"), b.preamble("correct").unwrap()).unwrap();
        assert!(item
            .rendered_prefix
            .starts_with("Assume you want to use language that is correct."));
    }

    #[test]
    fn exp1_rejects_exp2_preamble() {
        let b = bundle();
        let s = pronoun_set(&b, PronounForm::Possessive);
        let err = render_exp1_item(
            &possessive(),
            &s,
            &name("Hayden"),
            b.preamble("null").unwrap(),
        );
        assert!(matches!(err, Err(PromptError::WrongExperiment { .. })));
    }

    #[test]
    fn exp2_best_refer() {
        let b = bundle();
        let s = pronoun_set(&b, PronounForm::Possessive);
        let way = WayOfAsking::indirect(Adjective::Best, Verb::Refer);
        let items = render_exp2_item(
            &possessive(),
            &s,
            &name("Hayden"),
            way,
            b.preamble("null").unwrap(),
        )
        .unwrap();
        assert_eq!(items.len(), 1);
        assert_eq!(
            items[0].text(),
            "The best word to refer to Hayden in the sentence \"Hayden left ____ computer on.\" is [SLOT]"
        );
        assert!(items[0].slot_at_end);
    }

    #[test]
    fn exp2_likely_complete() {
        let b = bundle();
        let s = pronoun_set(&b, PronounForm::Possessive);
        let way = WayOfAsking::indirect(Adjective::Likely, Verb::Complete);
        let items = render_exp2_item(
            &possessive(),
            &s,
            &name("Hayden"),
            way,
            b.preamble("null").unwrap(),
        )
        .unwrap();
        assert_eq!(
            items[0].text(),
            "The word most likely to complete the sentence \"Hayden left ____ computer on.\" is [SLOT]"
        );
    }

    #[test]
    fn exp2_direct_declaration() {
        let b = bundle();
        let s = pronoun_set(&b, PronounForm::Possessive);
        let items = render_exp2_item(
            &possessive(),
            &s,
            &name("Hayden"),
            WayOfAsking::DIRECT,
            b.preamble("pr-ind-dec").unwrap(),
        )
        .unwrap();
        assert_eq!(
            items[0].text(),
            "Note that Hayden uses they/them pronouns. Hayden left [SLOT] computer on."
        );
        assert!(!items[0].slot_at_end);
    }

    #[test]
    fn exp2_direct_role_noun_slot_at_end() {
        let b = bundle();
        let (t, s) = congress(&b);
        let items = render_exp2_item(
            &t,
            &s,
            &name("Casey"),
            WayOfAsking::DIRECT,
            b.preamble("null").unwrap(),
        )
        .unwrap();
        assert_eq!(items[0].text(), "Casey is a [SLOT].");
        assert!(items[0].slot_at_end);
    }

    #[test]
    fn exp2_choices_expands_to_all_orderings() {
        let b = bundle();
        let (t, s) = congress(&b);
        let items = render_exp2_item(
            &t,
            &s,
            &name("Casey"),
            WayOfAsking::DIRECT,
            b.preamble("rn-choices").unwrap(),
        )
        .unwrap();
        assert_eq!(items.len(), 6);
        let expected = [
            ("congressperson", "congresswoman", "congressman"),
            ("congressperson", "congressman", "congresswoman"),
            ("congresswoman", "congressperson", "congressman"),
            ("congresswoman", "congressman", "congressperson"),
            ("congressman", "congressperson", "congresswoman"),
            ("congressman", "congresswoman", "congressperson"),
        ];
        for (k, (item, (a, bb, c))) in items.iter().zip(expected).enumerate() {
            assert_eq!(item.choices_ordering, Some(k));
            assert_eq!(
                item.text(),
                format!(
                    "You are choosing between \"{a},\" \"{bb},\" and \"{c}.\" Casey is a [SLOT]."
                )
            );
        }
    }

    #[test]
    fn illegal_way_of_asking() {
        assert!(WayOfAsking::new(Directness::Direct, Some(Adjective::Best), None).is_err());
        assert!(WayOfAsking::new(Directness::Indirect, Some(Adjective::Best), None).is_err());
        assert!(WayOfAsking::new(
            Directness::Indirect,
            Some(Adjective::Best),
            Some(Verb::Refer)
        )
        .is_ok());
        assert!(WayOfAsking::parse("best+likely").is_err());
    }

    #[test]
    fn an_determiner_rendered() {
        let b = bundle();
        let set = b
            .role_noun_sets
            .iter()
            .find(|s| s.id == "ombudsperson")
            .unwrap();
        let t = SentenceTemplate::for_role_noun_set(set).unwrap();
        let item = render_exp1_item(&t, set, &name("Pat"), b.preamble("natural").unwrap()).unwrap();
        assert!(item.rendered_prefix.contains("\"Pat is an ____.\""));
    }

    #[test]
    fn suite_counts() {
        let b = bundle();
        let e1 = build_suite(&b, Experiment::Exp1, Domain::RoleNoun, StimulusSubset::Full).unwrap();
        assert_eq!(e1.len(), 52 * 40 * 16);
        let e1p = build_suite(&b, Experiment::Exp1, Domain::Pronoun, StimulusSubset::Full).unwrap();
        assert_eq!(e1p.len(), 40 * 40 * 16);
        let e2 = build_suite(&b, Experiment::Exp2, Domain::RoleNoun, StimulusSubset::Full).unwrap();
        assert_eq!(logical_cell_count(&e2), 41_600);
        assert_eq!(e2.len(), 41_600 + 52 * 40 * 5 * 5);
        let e2p = build_suite(&b, Experiment::Exp2, Domain::Pronoun, StimulusSubset::Full).unwrap();
        assert_eq!(logical_cell_count(&e2p), 32_000);
        assert_eq!(e2p.len(), 32_000);
        let gpt = build_suite(
            &b,
            Experiment::Exp2,
            Domain::RoleNoun,
            StimulusSubset::GptSubset12,
        )
        .unwrap();
        assert_eq!(logical_cell_count(&gpt), 9_600);
    }

    #[test]
    fn empty_names_empty_suite() {
        let b = bundle();
        let templates = b.templates(Domain::RoleNoun, StimulusSubset::Full);
        let pre = b.preambles_for(Experiment::Exp1, Domain::RoleNoun);
        let items =
            enumerate_exp1_suite(&templates, &b.role_noun_sets, &[], &pre, Domain::RoleNoun)
                .unwrap();
        assert!(items.is_empty());
    }

    #[test]
    fn ordering_is_template_name_preamble() {
        let b = bundle();
        let e1 = build_suite(&b, Experiment::Exp1, Domain::Pronoun, StimulusSubset::Full).unwrap();
        let ids: Vec<&str> = e1.iter().map(|i| i.id.as_str()).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);
        assert_eq!(e1[0].preamble_id, "correct");
        assert_eq!(e1[1].preamble_id, "accurate");
        assert_eq!(e1[15].name.name, e1[0].name.name);
        assert_ne!(e1[16].name.name, e1[0].name.name);
    }

    #[test]
    fn cell_ids() {
        assert_eq!(
            cell_id_of("e2-rn-t001-n002-w0-p1-o5"),
            "e2-rn-t001-n002-w0-p1"
        );
        assert_eq!(cell_id_of("e2-rn-t001-n002-w0-p1"), "e2-rn-t001-n002-w0-p1");
        assert_eq!(cell_id_of("foo-o"), "foo-o");
    }

    #[test]
    fn manifest_roundtrip() {
        let b = bundle();
        let items = build_suite(
            &b,
            Experiment::Exp2,
            Domain::RoleNoun,
            StimulusSubset::GptSubset12,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_manifest(&items[..50], &mut buf).unwrap();
        let back = read_manifest(&buf[..]).unwrap();
        assert_eq!(back, items[..50].to_vec());
        let first: serde_json::Value =
            serde_json::from_slice(buf.split(|c| *c == b'\n').next().unwrap()).unwrap();
        let keys: Vec<&String> = first.as_object().unwrap().keys().collect();
        for k in [
            "id",
            "experiment",
            "domain",
            "template_id",
            "name",
            "preamble_id",
            "way_of_asking",
            "variant_set_id",
            "rendered_prefix",
            "rendered_suffix",
            "slot_at_end",
            "choices_ordering",
        ] {
            assert!(keys.iter().any(|x| x.as_str() == k), "{k}");
        }
    }
}
