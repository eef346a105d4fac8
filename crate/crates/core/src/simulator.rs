//! Grid simulation: for each (entity, property) cell, render prompt → call
//! the gateway → parse → optional self-correction → assemble a dataset.
//!
//! Cells are computed independently (one model call per cell) and may be
//! evaluated concurrently up to the configured parallelism; assembly order
//! is row-major by input order regardless of completion order, so the
//! resulting dataset is deterministic under replay.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extract::{extract_json_object, parse_cell_value};
use crate::gateway::{ChatRequest, Gateway, GatewayError};
use crate::model::{
    coerce_value, Cell, Dataset, EntityRef, MissingPolicy, ModelError, PropertySpec, Provenance, Scalar,
};
use crate::promptkit::{
    render_cell_prompt, render_self_correction_prompt, PromptContext, PromptError, PromptPair, PromptStrategy,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("cell ({entity}, {property}): {source}")]
    Cell {
        entity: String,
        property: String,
        #[source]
        source: GatewayError,
    },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("entities and properties must be non-empty")]
    EmptyGrid,
    #[error("self-correction expects a simulated dataset")]
    WrongProvenance,
}

/// Everything one simulation run depends on.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub strategy: PromptStrategy,
    pub model: String,
    pub temperature: f64,
    pub self_correction: bool,
    /// Property names excluded from the self-correction pass.
    #[serde(default)]
    pub skip_correction: Vec<String>,
    pub max_parse_retries: u32,
    pub parallelism: usize,
    /// Governs any sampling downstream (splits, subsampling); the simulator
    /// itself is deterministic at temperature 0.
    pub seed: u64,
    pub missing_policy: MissingPolicy,
    pub context: PromptContext,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            strategy: PromptStrategy::DIRECT_STRUCTURED,
            model: "gpt-4o-mini".into(),
            temperature: 0.0,
            self_correction: false,
            skip_correction: Vec::new(),
            max_parse_retries: 1,
            parallelism: 4,
            seed: 7,
            missing_policy: MissingPolicy::DropRow,
            context: PromptContext::countries_2022(),
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.parallelism == 0 {
            return Err(SimError::Model(ModelError::InvalidDataset("parallelism must be >= 1".into())));
        }
        Ok(())
    }
}

/// Progress observer: called with (cells done, total).
pub type ProgressFn<'a> = &'a (dyn Fn(usize, usize) + Sync);

fn cell_error(entity: &EntityRef, prop: &PropertySpec, source: GatewayError) -> SimError {
    SimError::Cell { entity: entity.name.clone(), property: prop.name.clone(), source }
}

/// Simulates one cell: renders the strategy prompt, asks the model, parses.
/// Unparseable output re-asks up to `max_parse_retries` times with a format
/// reminder appended to the user prompt (cumulatively, so each retry is a
/// distinct request); exhausted retries yield a missing value, not an error.
pub fn simulate_cell(
    entity: &EntityRef,
    prop: &PropertySpec,
    cfg: &SimulationConfig,
    gateway: &Gateway,
) -> Result<Cell, SimError> {
    cfg.validate()?;
    let pair = render_cell_prompt(cfg.strategy, entity, prop, &cfg.context)?;
    let reminder = format!("Respond ONLY with a JSON object {{\"{}\": value}}.", prop.name);
    let mut user = pair.user.clone();
    let mut last_raw = String::new();
    for attempt in 0..=cfg.max_parse_retries {
        let attempt_pair = PromptPair { system: pair.system.clone(), user: user.clone() };
        let req = ChatRequest::from_pair(&cfg.model, &attempt_pair, cfg.temperature);
        let resp = gateway.complete_cached(&req).map_err(|e| cell_error(entity, prop, e))?;
        last_raw = resp.content;
        match parse_cell_value(&last_raw, prop, cfg.strategy.format) {
            Ok(coerced) => {
                let mut cell = Cell::of(coerced.value);
                cell.raw_text = last_raw;
                cell.attempts = attempt + 1;
                return Ok(cell);
            }
            Err(_) => {
                user.push_str("\n\n");
                user.push_str(&reminder);
            }
        }
    }
    Ok(Cell::missing(last_raw, cfg.max_parse_retries + 1))
}

/// Runs `f(0..total)` across up to `parallelism` worker threads, keeping
/// results in job order. The first error (by job index) aborts the run once
/// in-flight jobs finish.
fn run_jobs<T, F>(
    total: usize,
    parallelism: usize,
    progress: Option<ProgressFn<'_>>,
    f: F,
) -> Result<Vec<T>, SimError>
where
    T: Send,
    F: Fn(usize) -> Result<T, SimError> + Sync,
{
    let results: Mutex<Vec<Option<Result<T, SimError>>>> = Mutex::new((0..total).map(|_| None).collect());
    let state = Mutex::new((0usize, 0usize, false)); // (next job, done count, abort)

    let next_job = || -> Option<usize> {
        let mut s = state.lock().expect("job state lock");
        if s.2 || s.0 >= total {
            return None;
        }
        let job = s.0;
        s.0 += 1;
        Some(job)
    };
    let finish = |job: usize, outcome: Result<T, SimError>| {
        let failed = outcome.is_err();
        results.lock().expect("results lock")[job] = Some(outcome);
        let mut s = state.lock().expect("job state lock");
        s.1 += 1;
        if failed {
            s.2 = true;
        }
        let done = s.1;
        drop(s);
        if let Some(cb) = progress {
            cb(done, total);
        }
    };

    let workers = parallelism.min(total).max(1);
    if workers == 1 {
        while let Some(job) = next_job() {
            let outcome = f(job);
            finish(job, outcome);
        }
    } else {
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| {
                    while let Some(job) = next_job() {
                        let outcome = f(job);
                        finish(job, outcome);
                    }
                });
            }
        });
    }

    // Return the first error by job index for a deterministic report.
    let slots = results.into_inner().expect("results lock");
    let mut out = Vec::with_capacity(total);
    for slot in slots {
        match slot {
            Some(Ok(value)) => out.push(value),
            Some(Err(e)) => return Err(e),
            None => unreachable!("gaps only follow an error, which returned above"),
        }
    }
    Ok(out)
}

/// Simulates the full entity × property grid.
pub fn simulate_grid(
    entities: &[EntityRef],
    properties: &[PropertySpec],
    cfg: &SimulationConfig,
    gateway: &Gateway,
    progress: Option<ProgressFn<'_>>,
) -> Result<Dataset, SimError> {
    cfg.validate()?;
    if entities.is_empty() || properties.is_empty() {
        return Err(SimError::EmptyGrid);
    }
    let n_props = properties.len();
    let total = entities.len() * n_props;
    let cells = run_jobs(total, cfg.parallelism, progress, |job| {
        simulate_cell(&entities[job / n_props], &properties[job % n_props], cfg, gateway)
    })?;
    Ok(Dataset::new(entities.to_vec(), properties.to_vec(), cells, Provenance::Simulated)?)
}

/// Reviews every non-missing cell with the self-correction prompt and
/// returns a new dataset holding the confirmed or corrected values.
///
/// Cells whose correction response fails to parse keep their original value
/// with `corrected = false`. Entities, properties, and grid shape never
/// change; missing cells are untouched (no model call).
pub fn self_correct(
    ds: &Dataset,
    cfg: &SimulationConfig,
    gateway: &Gateway,
    progress: Option<ProgressFn<'_>>,
) -> Result<Dataset, SimError> {
    cfg.validate()?;
    if ds.provenance() != Provenance::Simulated {
        return Err(SimError::WrongProvenance);
    }
    let n_props = ds.properties().len();
    let total = ds.entities().len() * n_props;
    let cells = run_jobs(total, cfg.parallelism, progress, |job| {
        let (entity, prop) = (&ds.entities()[job / n_props], &ds.properties()[job % n_props]);
        let cell = ds.cell(job / n_props, job % n_props);
        if cell.is_missing() || cfg.skip_correction.iter().any(|p| p.eq_ignore_ascii_case(&prop.name)) {
            return Ok(cell.clone());
        }
        let pair = render_self_correction_prompt(entity, prop, cell)?;
        let req = ChatRequest::from_pair(&cfg.model, &pair, cfg.temperature);
        let resp = gateway.complete_cached(&req).map_err(|e| cell_error(entity, prop, e))?;
        Ok(apply_correction(cell, &resp.content, prop))
    })?;
    Ok(ds.with_cells(cells, Provenance::Simulated)?)
}

/// Parses a `{"reasoning": ..., "value": ...}` response and folds it into
/// the cell. Any parse or coercion failure leaves the original value.
fn apply_correction(cell: &Cell, response: &str, prop: &PropertySpec) -> Cell {
    let Ok(object) = extract_json_object(response) else {
        return cell.clone();
    };
    let reasoning = object
        .iter()
        .find(|(k, _)| k.to_lowercase().contains("reason"))
        .and_then(|(_, v)| v.as_str())
        .map(str::trim)
        .filter(|s| !s.is_empty());
    let value = object.iter().find(|(k, _)| k.to_lowercase().contains("value")).map(|(_, v)| v);
    let (Some(reasoning), Some(value)) = (reasoning, value) else {
        return cell.clone();
    };
    let scalar = match value {
        serde_json::Value::Number(n) => n.as_f64().map(Scalar::Num),
        serde_json::Value::Bool(b) => Some(Scalar::Bool(*b)),
        serde_json::Value::String(s) => Some(Scalar::Text(s.clone())),
        _ => None,
    };
    let Some(coerced) = scalar.and_then(|s| coerce_value(&s, &prop.domain).ok()) else {
        return cell.clone();
    };
    Cell {
        value: Some(coerced.value),
        raw_text: response.to_string(),
        corrected: true,
        correction_reasoning: Some(reasoning.to_string()),
        attempts: cell.attempts,
    }
}
