//! Hypothesis-driven simulation: free-text hypothesis → generated prompts →
//! simulated property descriptions → parsed specs → (optionally generated)
//! entities → simulated dataset → self-correction → analysis.
//!
//! A [`PipelineRun`] is an append-only audit trail: each stage records its
//! output, the whole run persists as `run.json`, and re-running any stage
//! with the same inputs and cache yields identical output.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extract::{parse_entity_list, parse_prompt_pair, parse_property_list, ParseError};
use crate::gateway::{ChatRequest, Gateway, GatewayError};
use crate::model::{AnalysisReport, Cell, Dataset, EntityRef, ModelError, PropertySpec, Provenance};
use crate::promptkit::{render_entity_list_prompt, render_hypothesis_meta_prompt, PromptError, PromptPair};
use crate::simulator::{self_correct, simulate_grid, ProgressFn, SimError, SimulationConfig};
use crate::stats::{analyze_datasets, AnalysisTask, RegressionScore, SplitSpec, StatsError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("prompt generation stage: {0}")]
    PromptGeneration(ParseError),
    #[error("property simulation stage: {0}")]
    PropertySimulation(ParseError),
    #[error("entity generation stage: {0}")]
    EntityGeneration(ParseError),
    #[error("simulation stage: {0}")]
    Simulation(#[from] SimError),
    #[error("analysis stage: {0}")]
    Analysis(#[from] StatsError),
    #[error("ground truth is missing entities: {0:?}")]
    TruthMissingEntities(Vec<String>),
    #[error("ground truth is missing properties: {0:?}")]
    TruthMissingProperties(Vec<String>),
    #[error("no entities provided and no generation parameters set")]
    NoEntities,
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("persisting run: {0}")]
    Io(#[from] std::io::Error),
}

/// The experimenter's input: a qualitative statement plus framing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_properties: Option<usize>,
    pub entity_class: String,
    /// Name of the dependent variable among the generated properties, when
    /// known. Unset means no property is marked target and analysis is
    /// correlation-only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_hint: Option<String>,
}

/// Parameters for generating the entity list with the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntityGeneration {
    pub n: usize,
    pub criteria: String,
}

/// How the optional analysis stage scores the analysis model.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AnalysisSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub regression_score: RegressionScore,
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        AnalysisSpec { train_fraction: 0.8, seed: 7, regression_score: RegressionScore::Mae }
    }
}

/// Everything one pipeline invocation may need beyond the hypothesis.
#[derive(Clone, Debug, Default)]
pub struct PipelineOptions {
    pub entities: Option<Vec<EntityRef>>,
    pub generate_entities: Option<EntityGeneration>,
    pub ground_truth: Option<Dataset>,
    pub analysis: AnalysisSpec,
    /// When set, the run (complete or aborted) is written here as JSON.
    pub persist_to: Option<PathBuf>,
}

/// Audit trail of one hypothesis-driven run. Stages are append-only: every
/// stage output stays present once the stage has run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct PipelineRun {
    pub hypothesis: Option<Hypothesis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated_prompts: Option<PromptPair>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_property_text: Option<String>,
    #[serde(default)]
    pub properties: Vec<PropertySpec>,
    #[serde(default)]
    pub property_warnings: Vec<String>,
    #[serde(default)]
    pub entities: Vec<EntityRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<Dataset>,
    /// Pre-correction dataset, kept when self-correction ran.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uncorrected_dataset: Option<Dataset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<AnalysisReport>,
}

impl PipelineRun {
    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("run serializes");
        out.push('\n');
        out
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

fn ask(gateway: &Gateway, cfg: &SimulationConfig, pair: &PromptPair) -> Result<String, GatewayError> {
    let req = ChatRequest::from_pair(&cfg.model, pair, cfg.temperature);
    Ok(gateway.complete_cached(&req)?.content)
}

/// Stage 1: have the model write the prompts that will generate properties.
/// Unparseable responses are re-asked up to `cfg.max_parse_retries` times
/// with a format reminder appended.
pub fn generate_property_prompts(
    hypothesis: &Hypothesis,
    cfg: &SimulationConfig,
    gateway: &Gateway,
) -> Result<PromptPair, PipelineError> {
    let meta = render_hypothesis_meta_prompt(&hypothesis.text, hypothesis.k_properties)?;
    let mut user = meta.user.clone();
    let mut last_err = ParseError::PromptPairMissing;
    for _ in 0..=cfg.max_parse_retries {
        let pair = PromptPair { system: meta.system.clone(), user: user.clone() };
        let content = ask(gateway, cfg, &pair)?;
        match parse_prompt_pair(&content) {
            Ok(generated) => return Ok(generated),
            Err(e) => {
                last_err = e;
                user.push_str(
                    "\n\nRespond ONLY with a JSON object {\"system_prompt\": \"...\", \"user_prompt\": \"...\"}.",
                );
            }
        }
    }
    Err(PipelineError::PromptGeneration(last_err))
}

/// Stage 2: run the generated prompts and parse the property descriptions.
/// Returns the specs, the raw text, and per-item warnings.
pub fn generate_properties(
    hypothesis: &Hypothesis,
    prompts: &PromptPair,
    cfg: &SimulationConfig,
    gateway: &Gateway,
) -> Result<(Vec<PropertySpec>, String, Vec<String>), PipelineError> {
    let raw = ask(gateway, cfg, prompts)?;
    let (mut specs, warnings) = parse_property_list(&raw).map_err(PipelineError::PropertySimulation)?;
    if let Some(hint) = &hypothesis.target_hint {
        let lowered = hint.to_lowercase();
        if let Some(spec) = specs.iter_mut().find(|s| s.name.to_lowercase() == lowered) {
            spec.role = crate::model::PropertyRole::Target;
        }
    }
    Ok((specs, raw, warnings))
}

/// Stage 3 (optional): have the model produce the entity list itself.
pub fn generate_entities(
    hypothesis: &Hypothesis,
    n: usize,
    criteria: &str,
    cfg: &SimulationConfig,
    gateway: &Gateway,
) -> Result<Vec<EntityRef>, PipelineError> {
    let pair = render_entity_list_prompt(&hypothesis.entity_class, n, criteria)?;
    let content = ask(gateway, cfg, &pair)?;
    parse_entity_list(&content, n, &hypothesis.entity_class).map_err(PipelineError::EntityGeneration)
}

/// Aligns a ground-truth dataset to the simulated one: same entity order
/// (matched by name, case-insensitive) and same property order. Entities or
/// properties absent from the truth are reported by name.
pub fn align_ground_truth(sim: &Dataset, truth: &Dataset) -> Result<Dataset, PipelineError> {
    let mut missing_props = Vec::new();
    let mut prop_map = Vec::with_capacity(sim.properties().len());
    for prop in sim.properties() {
        match truth.property_index(&prop.name) {
            Some(pi) => prop_map.push(pi),
            None => missing_props.push(prop.name.clone()),
        }
    }
    if !missing_props.is_empty() {
        return Err(PipelineError::TruthMissingProperties(missing_props));
    }
    let mut missing_entities: Vec<String> = Vec::new();
    let mut entity_map = Vec::with_capacity(sim.entities().len());
    for entity in sim.entities() {
        match truth.entity_index(&entity.name) {
            Some(ei) => entity_map.push(ei),
            None => missing_entities.push(entity.name.clone()),
        }
    }
    if !missing_entities.is_empty() {
        return Err(PipelineError::TruthMissingEntities(missing_entities));
    }
    let mut cells = Vec::with_capacity(sim.cells().len());
    for &ei in &entity_map {
        for &pi in &prop_map {
            cells.push(truth.cell(ei, pi).clone());
        }
    }
    Ok(Dataset::new(sim.entities().to_vec(), sim.properties().to_vec(), cells, Provenance::GroundTruth)?)
}

/// Executes the full pipeline. On a fatal stage error the audit trail up to
/// that point is persisted (when a path is set) before the error returns.
pub fn run_pipeline(
    hypothesis: &Hypothesis,
    options: &PipelineOptions,
    cfg: &SimulationConfig,
    gateway: &Gateway,
    progress: Option<ProgressFn<'_>>,
) -> Result<PipelineRun, PipelineError> {
    let mut run = PipelineRun { hypothesis: Some(hypothesis.clone()), ..PipelineRun::default() };
    let outcome = run_stages(hypothesis, options, cfg, gateway, progress, &mut run);
    if let Some(path) = &options.persist_to {
        persist(path, &run)?;
    }
    outcome.map(|()| run)
}

fn run_stages(
    hypothesis: &Hypothesis,
    options: &PipelineOptions,
    cfg: &SimulationConfig,
    gateway: &Gateway,
    progress: Option<ProgressFn<'_>>,
    run: &mut PipelineRun,
) -> Result<(), PipelineError> {
    if options.entities.is_none() && options.generate_entities.is_none() {
        return Err(PipelineError::NoEntities);
    }

    let prompts = generate_property_prompts(hypothesis, cfg, gateway)?;
    run.generated_prompts = Some(prompts.clone());

    let (properties, raw, warnings) = generate_properties(hypothesis, &prompts, cfg, gateway)?;
    run.raw_property_text = Some(raw);
    run.properties = properties.clone();
    run.property_warnings = warnings;

    let entities = match &options.entities {
        Some(list) => list.clone(),
        None => {
            let gen = options.generate_entities.as_ref().expect("checked above");
            generate_entities(hypothesis, gen.n, &gen.criteria, cfg, gateway)?
        }
    };
    run.entities = entities.clone();

    let mut dataset = simulate_grid(&entities, &properties, cfg, gateway, progress)?;
    if cfg.self_correction {
        run.uncorrected_dataset = Some(dataset.clone());
        dataset = self_correct(&dataset, cfg, gateway, progress)?;
    }
    run.dataset = Some(dataset.clone());

    if let Some(truth) = &options.ground_truth {
        let aligned = align_ground_truth(&dataset, truth)?;
        let task = dataset
            .target_index()
            .map(|_| AnalysisTask::Regression(options.analysis.regression_score));
        let split = SplitSpec { train_fraction: options.analysis.train_fraction, seed: options.analysis.seed };
        let config_echo = serde_json::json!({
            "simulation": cfg,
            "analysis": options.analysis,
        });
        run.report = Some(analyze_datasets(&dataset, &aligned, task, split, config_echo)?);
    }
    Ok(())
}

fn persist(path: &Path, run: &PipelineRun) -> Result<(), std::io::Error> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, run.to_json())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ChatResponse, ScriptedTransport, Transport, TransportError};
    use crate::model::{Value, ValueDomain};
    use crate::promptkit::PromptContext;
    use std::sync::Arc;

    fn hypothesis() -> Hypothesis {
        Hypothesis {
            text: "Athletes in team sports peak later and accumulate more injuries".into(),
            k_properties: Some(2),
            entity_class: "athlete".into(),
            target_hint: Some("peak_age".into()),
        }
    }

    fn cfg() -> SimulationConfig {
        SimulationConfig {
            parallelism: 1,
            max_parse_retries: 1,
            context: PromptContext::for_class("athlete"),
            ..SimulationConfig::default()
        }
    }

    /// Answers each pipeline stage by matching on prompt content.
    struct StagedTransport;

    impl Transport for StagedTransport {
        fn send(&self, req: &ChatRequest) -> Result<ChatResponse, TransportError> {
            let system = &req.messages[0].content;
            let user = &req.messages[1].content;
            let content = if system.contains("design prompts") {
                "{\"system_prompt\": \"You are a sports scientist.\", \"user_prompt\": \"List 2 key \
                 quantitative properties for the hypothesis.\"}"
                    .to_string()
            } else if user.contains("List 2 key quantitative properties") {
                "Property Name: injuries\nDescription: total major injuries lasting over two months\n\
                 Possible Values: [0-30]\n\nProperty Name: peak_age\nDescription: age of peak performance\n\
                 Possible Values: [18-40]"
                    .to_string()
            } else if user.contains("Generate a list of exactly") {
                "[\"Ava\", \"Bo\", \"Cy\"]".to_string()
            } else if user.contains("injuries") {
                "{\"injuries\": 3}".to_string()
            } else {
                "{\"peak_age\": 27}".to_string()
            };
            Ok(ChatResponse::text(content))
        }
    }

    fn staged_gateway() -> Gateway {
        Gateway::direct(Arc::new(StagedTransport), 2)
    }

    #[test]
    fn prompt_generation_stage_parses_pair() {
        let gateway = staged_gateway();
        let pair = generate_property_prompts(&hypothesis(), &cfg(), &gateway).unwrap();
        assert_eq!(pair.system, "You are a sports scientist.");
        assert!(pair.user.contains("2 key"));
    }

    #[test]
    fn prompt_generation_prose_fails_after_retries() {
        let transport = Arc::new(ScriptedTransport::always("I would love to help but here is prose."));
        let gateway = Gateway::direct(transport.clone(), 1);
        let err = generate_property_prompts(&hypothesis(), &cfg(), &gateway);
        assert!(matches!(err, Err(PipelineError::PromptGeneration(_))));
        assert_eq!(transport.calls(), 2); // initial + one retry
    }

    #[test]
    fn property_stage_marks_target_from_hint() {
        let gateway = staged_gateway();
        let prompts = generate_property_prompts(&hypothesis(), &cfg(), &gateway).unwrap();
        let (specs, raw, warnings) = generate_properties(&hypothesis(), &prompts, &cfg(), &gateway).unwrap();
        assert_eq!(specs.len(), 2);
        assert!(raw.contains("Property Name"));
        assert!(warnings.is_empty());
        assert_eq!(specs[0].name, "injuries");
        assert_eq!(specs[0].role, crate::model::PropertyRole::Predictor);
        assert_eq!(specs[1].name, "peak_age");
        assert_eq!(specs[1].role, crate::model::PropertyRole::Target);
        assert_eq!(specs[1].domain, ValueDomain::continuous(18.0, 40.0).unwrap());
    }

    #[test]
    fn entity_stage_copies_class_and_checks_count() {
        let gateway = staged_gateway();
        let entities = generate_entities(&hypothesis(), 3, "well-known", &cfg(), &gateway).unwrap();
        assert_eq!(entities.len(), 3);
        assert!(entities.iter().all(|e| e.entity_class == "athlete"));

        let err = generate_entities(&hypothesis(), 5, "well-known", &cfg(), &gateway);
        assert!(matches!(err, Err(PipelineError::EntityGeneration(ParseError::TooFewEntities { .. }))));
    }

    fn truth_dataset(names: &[&str]) -> Dataset {
        let properties = vec![
            PropertySpec::new("injuries", "", ValueDomain::continuous(0.0, 30.0).unwrap()),
            PropertySpec::new("peak_age", "", ValueDomain::continuous(18.0, 40.0).unwrap()).target(),
        ];
        let entities: Vec<EntityRef> = names.iter().map(|n| EntityRef::new(*n, "athlete")).collect();
        let mut cells = Vec::new();
        for (i, _) in names.iter().enumerate() {
            cells.push(Cell::of(Value::Number(2.0 + i as f64)));
            cells.push(Cell::of(Value::Number(26.0 + i as f64)));
        }
        Dataset::new(entities, properties, cells, Provenance::GroundTruth).unwrap()
    }

    #[test]
    fn full_run_produces_audit_trail_and_report() {
        let gateway = staged_gateway();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        let names: Vec<String> = (0..10).map(|i| format!("athlete{i}")).collect();
        let entities: Vec<EntityRef> = names.iter().map(|n| EntityRef::new(n, "athlete")).collect();
        let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let options = PipelineOptions {
            entities: Some(entities),
            ground_truth: Some(truth_dataset(&name_refs)),
            persist_to: Some(path.clone()),
            ..PipelineOptions::default()
        };
        let run = run_pipeline(&hypothesis(), &options, &cfg(), &gateway, None).unwrap();
        assert!(run.generated_prompts.is_some());
        assert!(run.raw_property_text.is_some());
        assert_eq!(run.properties.len(), 2);
        assert_eq!(run.entities.len(), 10);
        let ds = run.dataset.as_ref().unwrap();
        assert_eq!(ds.cells().len(), 20);
        let report = run.report.as_ref().unwrap();
        assert_eq!(report.per_property.len(), 2);
        assert!(report.sim_error_gap.is_some());

        // Persisted audit trail round-trips.
        let loaded = PipelineRun::from_json(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(loaded, run);
    }

    #[test]
    fn missing_entities_and_generation_params_is_an_error() {
        let gateway = staged_gateway();
        let err = run_pipeline(&hypothesis(), &PipelineOptions::default(), &cfg(), &gateway, None);
        assert!(matches!(err, Err(PipelineError::NoEntities)));
    }

    #[test]
    fn truth_missing_an_entity_is_named() {
        let gateway = staged_gateway();
        let entities = vec![EntityRef::new("known", "athlete"), EntityRef::new("ghost", "athlete")];
        let options = PipelineOptions {
            entities: Some(entities),
            ground_truth: Some(truth_dataset(&["known"])),
            ..PipelineOptions::default()
        };
        match run_pipeline(&hypothesis(), &options, &cfg(), &gateway, None) {
            Err(PipelineError::TruthMissingEntities(names)) => assert_eq!(names, vec!["ghost".to_string()]),
            other => panic!("expected TruthMissingEntities, got {other:?}"),
        }
    }

    #[test]
    fn aborted_run_persists_partial_trail() {
        let transport = Arc::new(ScriptedTransport::always("prose, no prompts"));
        let gateway = Gateway::direct(transport, 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        let options = PipelineOptions {
            entities: Some(vec![EntityRef::new("a", "athlete")]),
            persist_to: Some(path.clone()),
            ..PipelineOptions::default()
        };
        assert!(run_pipeline(&hypothesis(), &options, &cfg(), &gateway, None).is_err());
        let loaded = PipelineRun::from_json(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert!(loaded.hypothesis.is_some());
        assert!(loaded.generated_prompts.is_none());
        assert!(loaded.dataset.is_none());
    }

    #[test]
    fn stage_purity_same_cache_same_output() {
        // Two runs against a shared live cache give identical run JSON.
        let dir = tempfile::tempdir().unwrap();
        let cache = dir.path().join("cache");
        let names: Vec<String> = (0..6).map(|i| format!("athlete{i}")).collect();
        let entities: Vec<EntityRef> = names.iter().map(|n| EntityRef::new(n, "athlete")).collect();
        let options = PipelineOptions { entities: Some(entities), ..PipelineOptions::default() };
        let run_once = || {
            let gateway = Gateway::live(Arc::new(StagedTransport), &cache, 2).unwrap();
            run_pipeline(&hypothesis(), &options, &cfg(), &gateway, None).unwrap()
        };
        let a = run_once();
        let b = run_once();
        assert_eq!(a.to_json(), b.to_json());
    }
}
