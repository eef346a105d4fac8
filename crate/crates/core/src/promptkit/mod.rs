//! Every prompt the system sends: the four cell-simulation strategies, the
//! self-correction prompt, the hypothesis-stage meta-prompts, entity-list
//! prompts, and direct coefficient elicitation.
//!
//! Templates live as plain-text resources under `src/promptkit/templates/`
//! with `{{placeholder}}` slots; values are interpolated verbatim, so
//! property names containing braces, quotes, or percent signs survive
//! unchanged. Rendering is pure: identical inputs give byte-identical
//! prompts.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Cell, EntityRef, PropertySpec, ValueDomain};

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("entity name is empty")]
    EmptyEntity,
    #[error("property name is empty")]
    EmptyProperty,
    #[error("hypothesis text is empty")]
    EmptyHypothesis,
    #[error("requested entity count must be at least 1")]
    ZeroEntities,
    #[error("proposed cell has no value to review")]
    MissingProposedValue,
    #[error("matthews elicitation requires a binary property, {0:?} is not")]
    NonBinaryMatthews(String),
}

/// Prompt style: ask for the value directly, or frame an expert report to
/// complete.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptStyle {
    Direct,
    Report,
}

/// Output format: structured `{feature: value}` JSON, or natural language.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptFormat {
    Structured,
    Descriptive,
}

/// One of the four cell-simulation strategies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptStrategy {
    pub style: PromptStyle,
    pub format: PromptFormat,
}

impl PromptStrategy {
    pub const DIRECT_STRUCTURED: PromptStrategy =
        PromptStrategy { style: PromptStyle::Direct, format: PromptFormat::Structured };
    pub const DIRECT_DESCRIPTIVE: PromptStrategy =
        PromptStrategy { style: PromptStyle::Direct, format: PromptFormat::Descriptive };
    pub const REPORT_STRUCTURED: PromptStrategy =
        PromptStrategy { style: PromptStyle::Report, format: PromptFormat::Structured };
    pub const REPORT_DESCRIPTIVE: PromptStrategy =
        PromptStrategy { style: PromptStyle::Report, format: PromptFormat::Descriptive };

    pub const ALL: [PromptStrategy; 4] = [
        Self::DIRECT_STRUCTURED,
        Self::DIRECT_DESCRIPTIVE,
        Self::REPORT_STRUCTURED,
        Self::REPORT_DESCRIPTIVE,
    ];

    pub fn id(&self) -> &'static str {
        match (self.style, self.format) {
            (PromptStyle::Direct, PromptFormat::Structured) => "direct-structured",
            (PromptStyle::Direct, PromptFormat::Descriptive) => "direct-descriptive",
            (PromptStyle::Report, PromptFormat::Structured) => "report-structured",
            (PromptStyle::Report, PromptFormat::Descriptive) => "report-descriptive",
        }
    }

    pub fn parse(id: &str) -> Option<PromptStrategy> {
        Self::ALL.into_iter().find(|s| s.id() == id)
    }
}

impl Default for PromptStrategy {
    fn default() -> Self {
        Self::DIRECT_STRUCTURED
    }
}

/// A system prompt plus a user prompt, ready to send to a chat model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPair {
    pub system: String,
    pub user: String,
}

/// Domain framing interpolated into the cell templates.
///
/// The countries framing reproduces the canonical wording exactly (so
/// recorded caches stay valid); [`PromptContext::for_class`] generalizes the
/// same templates to any entity class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptContext {
    /// Indefinite noun phrase, e.g. "a country".
    pub subject_indef: String,
    /// Definite noun phrase, e.g. "the country".
    pub subject_def: String,
    /// Label prefixed to the entity name, e.g. "Country".
    pub subject_label: String,
    /// Time qualifier with leading space, e.g. " in 2022"; empty when none.
    pub time_suffix: String,
    /// Report-style document preamble.
    pub report_preamble: String,
}

impl PromptContext {
    /// The canonical countries/2022 framing.
    pub fn countries_2022() -> Self {
        PromptContext {
            subject_indef: "a country".into(),
            subject_def: "the country".into(),
            subject_label: "Country".into(),
            time_suffix: " in 2022".into(),
            report_preamble: "This document contains demographics and other variables of countries in 2022. \
                              It is documented by an expert historian and socio-political expert."
                .into(),
        }
    }

    /// Generic framing for an arbitrary entity class.
    pub fn for_class(entity_class: &str) -> Self {
        let class = entity_class.trim();
        let class = if class.is_empty() { "entity" } else { class };
        let article = match class.chars().next().map(|c| c.to_ascii_lowercase()) {
            Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
            _ => "a",
        };
        let mut label: String = class.to_string();
        if let Some(first) = label.get_mut(0..1) {
            first.make_ascii_uppercase();
        }
        PromptContext {
            subject_indef: format!("{article} {class}"),
            subject_def: format!("the {class}"),
            subject_label: label,
            time_suffix: String::new(),
            report_preamble: format!(
                "This document contains measured properties of each {class}. It is documented by a domain expert."
            ),
        }
    }
}

macro_rules! template {
    ($name:literal) => {
        include_str!(concat!("templates/", $name, ".txt")).trim_end_matches('\n')
    };
}

/// Literal slot substitution; values are inserted verbatim.
fn fill(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (slot, value) in slots {
        out = out.replace(&format!("{{{{{slot}}}}}"), value);
    }
    out
}

fn extras_for(prop: &PropertySpec) -> String {
    let mut extras = String::new();
    if !prop.description.trim().is_empty() {
        extras.push_str("\nDescription: ");
        extras.push_str(prop.description.trim());
    }
    // Value sets matter for parseability; continuous ranges are left out of
    // the ask so the model's estimate is not anchored to the bounds.
    match &prop.domain {
        ValueDomain::Binary | ValueDomain::Categorical { .. } => {
            extras.push_str("\nPossible values: ");
            extras.push_str(&prop.domain.describe());
        }
        ValueDomain::Continuous { .. } => {}
    }
    extras
}

/// Renders the cell-simulation prompt for one (entity, property) pair.
pub fn render_cell_prompt(
    strategy: PromptStrategy,
    entity: &EntityRef,
    prop: &PropertySpec,
    context: &PromptContext,
) -> Result<PromptPair, PromptError> {
    if entity.name.trim().is_empty() {
        return Err(PromptError::EmptyEntity);
    }
    if prop.name.trim().is_empty() {
        return Err(PromptError::EmptyProperty);
    }
    let mut entity_name = entity.name.clone();
    if let Some(note) = entity.note.as_deref().filter(|n| !n.trim().is_empty()) {
        entity_name = format!("{entity_name} ({note})");
    }
    let extras = extras_for(prop);
    let slots: Vec<(&str, &str)> = vec![
        ("subject_indef", context.subject_indef.as_str()),
        ("subject_def", context.subject_def.as_str()),
        ("subject_label", context.subject_label.as_str()),
        ("time_suffix", context.time_suffix.as_str()),
        ("preamble", context.report_preamble.as_str()),
        ("entity", entity_name.as_str()),
        ("property", prop.name.as_str()),
        ("extras", extras.as_str()),
    ];
    let system = match (strategy.style, strategy.format) {
        (PromptStyle::Direct, PromptFormat::Structured) => fill(template!("cell_direct_sys"), &slots),
        (PromptStyle::Direct, PromptFormat::Descriptive) => fill(template!("cell_direct_descriptive_sys"), &slots),
        (PromptStyle::Report, _) => fill(template!("cell_report_sys"), &slots),
    };
    let user = match (strategy.style, strategy.format) {
        (PromptStyle::Direct, PromptFormat::Structured) => fill(template!("cell_direct_structured_user"), &slots),
        (PromptStyle::Direct, PromptFormat::Descriptive) => fill(template!("cell_direct_descriptive_user"), &slots),
        (PromptStyle::Report, PromptFormat::Structured) => fill(template!("cell_report_structured_user"), &slots),
        (PromptStyle::Report, PromptFormat::Descriptive) => fill(template!("cell_report_descriptive_user"), &slots),
    };
    Ok(PromptPair { system, user })
}

/// Renders the review prompt for one simulated cell. The response format is
/// fixed to a JSON object `{"reasoning": ..., "value": ...}`.
pub fn render_self_correction_prompt(
    entity: &EntityRef,
    prop: &PropertySpec,
    proposed: &Cell,
) -> Result<PromptPair, PromptError> {
    let value = proposed.value.as_ref().ok_or(PromptError::MissingProposedValue)?;
    if entity.name.trim().is_empty() {
        return Err(PromptError::EmptyEntity);
    }
    if prop.name.trim().is_empty() {
        return Err(PromptError::EmptyProperty);
    }
    let description_line = if prop.description.trim().is_empty() {
        String::new()
    } else {
        format!("\nDescription: {}", prop.description.trim())
    };
    let domain = prop.domain.describe();
    let proposed_text = value.to_string();
    let user = fill(
        template!("self_correction_user"),
        &[
            ("entity", entity.name.as_str()),
            ("class", entity.entity_class.as_str()),
            ("property", prop.name.as_str()),
            ("description_line", description_line.as_str()),
            ("domain", domain.as_str()),
            ("proposed", proposed_text.as_str()),
        ],
    );
    Ok(PromptPair { system: template!("self_correction_sys").to_string(), user })
}

/// Renders the meta-prompt that asks a model to write the prompts for
/// property generation. Ships with a fixed one-shot example.
pub fn render_hypothesis_meta_prompt(hypothesis: &str, k: Option<usize>) -> Result<PromptPair, PromptError> {
    if hypothesis.trim().is_empty() {
        return Err(PromptError::EmptyHypothesis);
    }
    let k_phrase = match k {
        Some(k) => format!("{k} "),
        None => String::new(),
    };
    let system = fill(template!("hypothesis_meta_sys"), &[("k_phrase", k_phrase.as_str())]);
    let user = fill(
        template!("hypothesis_meta_user"),
        &[("one_shot", template!("hypothesis_one_shot")), ("hypothesis", hypothesis.trim())],
    );
    Ok(PromptPair { system, user })
}

/// Renders the prompt requesting a JSON array of exactly `n` entity names.
pub fn render_entity_list_prompt(entity_class: &str, n: usize, criteria: &str) -> Result<PromptPair, PromptError> {
    if n == 0 {
        return Err(PromptError::ZeroEntities);
    }
    let n_text = n.to_string();
    let user = fill(
        template!("entity_list_user"),
        &[("n", n_text.as_str()), ("criteria", criteria.trim()), ("class", entity_class.trim())],
    );
    // Collapse the doubled space a blank criteria leaves behind.
    let user = user.replace("  ", " ");
    Ok(PromptPair { system: template!("entity_list_sys").to_string(), user })
}

/// Renders the control prompt asking for a single coefficient in [-1, 1].
pub fn render_direct_correlation_prompt(
    prop: &PropertySpec,
    target: &PropertySpec,
    metric: crate::stats::CorrMetric,
) -> Result<PromptPair, PromptError> {
    use crate::stats::CorrMetric;
    let context_line = match (&prop.description.trim().is_empty(), metric) {
        (false, _) => format!(" Property description: {}", prop.description.trim()),
        (true, _) => String::new(),
    };
    let slots = [
        ("property", prop.name.as_str()),
        ("target", target.name.as_str()),
        ("context_line", context_line.as_str()),
    ];
    let user = match metric {
        CorrMetric::Matthews => {
            if prop.domain != ValueDomain::Binary {
                return Err(PromptError::NonBinaryMatthews(prop.name.clone()));
            }
            fill(template!("direct_corr_matthews_user"), &slots)
        }
        CorrMetric::Pearson => fill(template!("direct_corr_pearson_user"), &slots),
    };
    Ok(PromptPair { system: template!("direct_corr_sys").to_string(), user })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::CorrMetric;

    fn namibia() -> EntityRef {
        EntityRef::new("Namibia", "country")
    }

    fn pop_prop() -> PropertySpec {
        PropertySpec::new(
            "Population ages 45-49, male (% of male population)",
            "",
            ValueDomain::continuous(0.0, 100.0).unwrap(),
        )
    }

    #[test]
    fn direct_structured_matches_canonical_countries_wording() {
        let pair = render_cell_prompt(
            PromptStrategy::DIRECT_STRUCTURED,
            &namibia(),
            &pop_prop(),
            &PromptContext::countries_2022(),
        )
        .unwrap();
        assert_eq!(
            pair.system,
            "You will be asked to make your best guess about the value a country had for a particular \
             feature in 2022. Respond in the following json format: {feature: value}. Where feature is \
             the characteristic about the country, and value is your numeric guess. If you don't know, \
             make your best guess"
        );
        assert_eq!(pair.user, "Country: Namibia, Population ages 45-49, male (% of male population)");
    }

    #[test]
    fn report_structured_uses_historian_framing() {
        let pair = render_cell_prompt(
            PromptStrategy::REPORT_STRUCTURED,
            &namibia(),
            &pop_prop(),
            &PromptContext::countries_2022(),
        )
        .unwrap();
        assert_eq!(pair.system, "You are an expert historian. Please complete the following document.");
        assert!(pair.user.starts_with("This document contains demographics and other variables of countries in 2022."));
        assert!(pair.user.ends_with("Country: Namibia, Population ages 45-49, male (% of male population):"));
    }

    #[test]
    fn four_strategies_render_distinct_pairs() {
        let mut seen = Vec::new();
        for strategy in PromptStrategy::ALL {
            let pair = render_cell_prompt(strategy, &namibia(), &pop_prop(), &PromptContext::countries_2022())
                .unwrap();
            assert!(!pair.system.is_empty() && !pair.user.is_empty());
            assert!(!seen.contains(&pair), "strategy {} duplicates another", strategy.id());
            seen.push(pair);
        }
        assert_eq!(seen.len(), 4);
    }

    #[test]
    fn empty_entity_name_is_rejected() {
        let entity = EntityRef::new(" ", "country");
        let err = render_cell_prompt(
            PromptStrategy::DIRECT_STRUCTURED,
            &entity,
            &pop_prop(),
            &PromptContext::countries_2022(),
        );
        assert!(matches!(err, Err(PromptError::EmptyEntity)));
    }

    #[test]
    fn braces_and_quotes_survive_interpolation() {
        let entity = EntityRef::new("We{ir}d \"name\"", "thing");
        let prop = PropertySpec::new("odd {{prop}} 100%", "", ValueDomain::Binary);
        let pair = render_cell_prompt(
            PromptStrategy::DIRECT_STRUCTURED,
            &entity,
            &prop,
            &PromptContext::for_class("thing"),
        )
        .unwrap();
        assert!(pair.user.contains("We{ir}d \"name\""));
        assert!(pair.user.contains("odd {{prop}} 100%"));
    }

    #[test]
    fn self_correction_states_bounds_and_format() {
        let prop = PropertySpec::new("injuries", "major injuries", ValueDomain::continuous(0.0, 10.0).unwrap());
        let cell = Cell::of(crate::model::Value::Number(4.0));
        let pair = render_self_correction_prompt(&namibia(), &prop, &cell).unwrap();
        assert!(pair.user.contains("a number in [0, 10]"));
        assert!(pair.user.contains("Proposed value: 4"));
        assert!(pair.user.contains("{\"reasoning\": \"...\", \"value\": ...}"));

        let binary = PropertySpec::new("hair", "", ValueDomain::Binary);
        let pair = render_self_correction_prompt(&namibia(), &binary, &Cell::of(crate::model::Value::Binary(1)))
            .unwrap();
        assert!(pair.user.contains("binary (0 or 1)"));

        assert!(matches!(
            render_self_correction_prompt(&namibia(), &binary, &Cell::missing("", 1)),
            Err(PromptError::MissingProposedValue)
        ));
    }

    #[test]
    fn meta_prompt_embeds_count_and_one_shot() {
        let pair = render_hypothesis_meta_prompt("injuries vs peak age in athletes", Some(5)).unwrap();
        assert!(pair.system.contains("a list of 5 key"));
        assert!(pair.user.contains("Egalitarian Democracy Index"));
        assert!(pair.user.contains("injuries vs peak age in athletes"));
        assert!(render_hypothesis_meta_prompt("  ", None).is_err());
    }

    #[test]
    fn entity_list_prompt_contains_count_and_criteria() {
        let pair = render_entity_list_prompt("soccer player", 20, "well-known").unwrap();
        assert!(pair.user.contains("20"));
        assert!(pair.user.contains("well-known"));
        let pair = render_entity_list_prompt("soccer player", 20, "less-known").unwrap();
        assert!(pair.user.contains("less-known"));
        assert!(matches!(render_entity_list_prompt("x", 0, "y"), Err(PromptError::ZeroEntities)));
    }

    #[test]
    fn direct_correlation_names_the_metric() {
        let hair = PropertySpec::new("hair", "", ValueDomain::Binary);
        let animal_type =
            PropertySpec::new("type", "", ValueDomain::categorical(["mammal", "bird"]).unwrap()).target();
        let pair = render_direct_correlation_prompt(&hair, &animal_type, CorrMetric::Matthews).unwrap();
        assert!(pair.user.contains("Matthews correlation coefficient"));

        let pop = pop_prop();
        let edi = PropertySpec::new("EDI", "", ValueDomain::continuous(0.0, 1.0).unwrap()).target();
        let pair = render_direct_correlation_prompt(&pop, &edi, CorrMetric::Pearson).unwrap();
        assert!(pair.user.contains("Pearson correlation coefficient"));

        assert!(matches!(
            render_direct_correlation_prompt(&pop, &edi, CorrMetric::Matthews),
            Err(PromptError::NonBinaryMatthews(_))
        ));
    }

    #[test]
    fn rendering_is_deterministic() {
        let a = render_cell_prompt(
            PromptStrategy::DIRECT_DESCRIPTIVE,
            &namibia(),
            &pop_prop(),
            &PromptContext::countries_2022(),
        )
        .unwrap();
        let b = render_cell_prompt(
            PromptStrategy::DIRECT_DESCRIPTIVE,
            &namibia(),
            &pop_prop(),
            &PromptContext::countries_2022(),
        )
        .unwrap();
        assert_eq!(a, b);
    }
}
