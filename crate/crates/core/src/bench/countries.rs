//! Countries domain: indicator preprocessing, seeded sampling, and the
//! strategy/model experiment runner.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BenchError, ExperimentConfig, SampleSpec};
use crate::gateway::{ChatRequest, Gateway};
use crate::model::{
    Cell, Dataset, EntityRef, PropertySpec, Provenance, Scalar, Value, ValueDomain,
};
use crate::promptkit::{render_direct_correlation_prompt, PromptStrategy};
use crate::simulator::{simulate_grid, ProgressFn, SimulationConfig};
use crate::stats::{
    direct_vs_simulated_correlations, mae, pearson, simulation_error_gap, AnalysisTask, CorrComparison,
    CorrMetric, GapReport, RegressionScore, SplitMix64, SplitSpec, StatsError,
};

/// Name of the target column built from the index file.
pub const EDI_PROPERTY: &str = "Egalitarian Democracy Index";

const TARGET_YEAR: i64 = 2022;

fn domain_for_feature(name: &str) -> ValueDomain {
    // Percent-of-population style features are bounded; rates per 1,000 are
    // bounded by construction; everything else stays effectively unbounded
    // so honest out-of-range estimates survive (clamping happens per cell).
    if name.contains("(%") || name.contains("(% ") {
        ValueDomain::continuous(0.0, 100.0).expect("static bounds")
    } else if name.contains("per 1,000") {
        ValueDomain::continuous(0.0, 1000.0).expect("static bounds")
    } else {
        ValueDomain::continuous(-1e15, 1e15).expect("static bounds")
    }
}

/// Applies the preprocessing steps to the raw inputs, in order: keep the
/// target year, drop features whose name contains "Standard Error",
/// intersect countries across both sources, drop features not present for
/// all remaining countries. The index joins as the target, validated to
/// [0, 1].
pub fn preprocess_countries(features_path: &Path, edi_path: &Path) -> Result<Dataset, BenchError> {
    let schema_err = |path: &Path, detail: String| BenchError::SchemaMismatch {
        path: path.display().to_string(),
        detail,
    };

    // Index file: country,value.
    let edi_text = std::fs::read_to_string(edi_path).map_err(|e| schema_err(edi_path, e.to_string()))?;
    let mut edi_rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(edi_text.as_bytes());
    let mut edi: Vec<(String, f64)> = Vec::new();
    for (line, record) in edi_rdr.records().enumerate() {
        let record = record.map_err(|e| schema_err(edi_path, format!("row {}: {e}", line + 2)))?;
        let country = record.get(0).unwrap_or("").trim().to_string();
        let value: f64 = record
            .get(1)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|e| schema_err(edi_path, format!("row {}: {e}", line + 2)))?;
        if !(0.0..=1.0).contains(&value) {
            return Err(schema_err(
                edi_path,
                format!("{country}: index value {value} outside [0, 1]"),
            ));
        }
        edi.push((country, value));
    }

    // Indicator file: Country,Year,<feature...> (wide).
    let wb_text =
        std::fs::read_to_string(features_path).map_err(|e| schema_err(features_path, e.to_string()))?;
    let mut wb_rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(wb_text.as_bytes());
    let headers = wb_rdr.headers().map_err(|e| schema_err(features_path, e.to_string()))?.clone();
    if headers.get(0).map(str::trim) != Some("Country") || headers.get(1).map(str::trim) != Some("Year") {
        return Err(schema_err(features_path, "expected leading columns Country,Year".into()));
    }

    // Step 1: filter for the target year. Step 2: drop standard-error columns.
    let feature_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .skip(2)
        .filter(|(_, name)| !name.contains("Standard Error"))
        .map(|(idx, name)| (idx, name.trim().to_string()))
        .collect();

    let mut rows: Vec<(String, Vec<Option<f64>>)> = Vec::new();
    let mut saw_year = false;
    for (line, record) in wb_rdr.records().enumerate() {
        let record = record.map_err(|e| schema_err(features_path, format!("row {}: {e}", line + 2)))?;
        let year: i64 = record
            .get(1)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|e| schema_err(features_path, format!("row {}: bad year: {e}", line + 2)))?;
        if year != TARGET_YEAR {
            continue;
        }
        saw_year = true;
        let country = record.get(0).unwrap_or("").trim().to_string();
        let values = feature_cols
            .iter()
            .map(|(idx, _)| {
                let field = record.get(*idx).unwrap_or("").trim();
                if field.is_empty() {
                    None
                } else {
                    field.parse::<f64>().ok()
                }
            })
            .collect();
        rows.push((country, values));
    }
    if !saw_year {
        return Err(BenchError::YearAbsent(TARGET_YEAR));
    }

    // Step 3: common countries, in indicator-file order.
    let edi_names: BTreeSet<String> = edi.iter().map(|(c, _)| c.to_lowercase()).collect();
    rows.retain(|(country, _)| edi_names.contains(&country.to_lowercase()));
    if rows.is_empty() {
        return Err(BenchError::NoCommonCountries);
    }

    // Step 4: drop features absent for any remaining country.
    let keep: Vec<usize> = (0..feature_cols.len())
        .filter(|&fi| rows.iter().all(|(_, values)| values[fi].is_some()))
        .collect();

    let mut properties: Vec<PropertySpec> = keep
        .iter()
        .map(|&fi| {
            let name = &feature_cols[fi].1;
            PropertySpec::new(name.clone(), "", domain_for_feature(name))
        })
        .collect();
    properties.push(
        PropertySpec::new(
            EDI_PROPERTY,
            "an index of egalitarian democracy combining suffrage, election fairness, civil liberty, \
             and equal distribution of resources and rights; 0 is least democratic, 1 is most",
            ValueDomain::continuous(0.0, 1.0).expect("static bounds"),
        )
        .target(),
    );

    let edi_value = |country: &str| -> f64 {
        edi.iter()
            .find(|(c, _)| c.eq_ignore_ascii_case(country))
            .map(|(_, v)| *v)
            .expect("country intersected above")
    };

    let mut entities = Vec::with_capacity(rows.len());
    let mut cells = Vec::with_capacity(rows.len() * properties.len());
    for (country, values) in &rows {
        entities.push(EntityRef::new(country.clone(), "country"));
        for &fi in &keep {
            cells.push(Cell::of(Value::Number(values[fi].expect("kept features are complete"))));
        }
        cells.push(Cell::of(Value::Number(edi_value(country))));
    }
    Ok(Dataset::new(entities, properties, cells, Provenance::GroundTruth)?)
}

/// Seeded sampling without replacement of `n` countries and `k` predictor
/// properties from the pool; the index target is always retained (last
/// column). One generator drives both draws: countries first, then
/// properties.
pub fn sample_countries(pool: &Dataset, spec: SampleSpec) -> Result<Dataset, BenchError> {
    let n_pool = pool.entities().len();
    let target = pool.target_index().expect("pool carries the index target");
    let predictor_count = pool.properties().len() - 1;
    if spec.n_entities > n_pool {
        return Err(BenchError::PoolTooSmall { requested: spec.n_entities, available: n_pool });
    }
    if spec.k_properties > predictor_count {
        return Err(BenchError::PoolTooSmall { requested: spec.k_properties, available: predictor_count });
    }
    let mut rng = SplitMix64::new(spec.seed);
    let countries = crate::stats::split::sample_indices(n_pool, spec.n_entities, &mut rng);
    let predictors: Vec<usize> = (0..pool.properties().len()).filter(|&pi| pi != target).collect();
    let chosen = crate::stats::split::sample_indices(predictors.len(), spec.k_properties, &mut rng);
    let mut prop_indices: Vec<usize> = chosen.into_iter().map(|ci| predictors[ci]).collect();
    prop_indices.push(target);

    let entities: Vec<EntityRef> = countries.iter().map(|&ei| pool.entities()[ei].clone()).collect();
    let properties: Vec<PropertySpec> = prop_indices.iter().map(|&pi| pool.properties()[pi].clone()).collect();
    let mut cells = Vec::with_capacity(entities.len() * properties.len());
    for &ei in &countries {
        for &pi in &prop_indices {
            cells.push(pool.cell(ei, pi).clone());
        }
    }
    Ok(Dataset::new(entities, properties, cells, Provenance::GroundTruth)?)
}

/// One row of the strategy table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyRow {
    pub strategy: String,
    pub avg_correlation: f64,
    pub edi_mae: f64,
    pub gap: GapReport,
    pub per_property: Vec<PropertyCorrelation>,
    pub missing_cells: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropertyCorrelation {
    pub property: String,
    pub correlation: f64,
    pub target_accuracy_note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountriesReport {
    pub domain: String,
    pub rows: Vec<StrategyRow>,
    pub control: CorrComparison,
    pub sampled_countries: Vec<String>,
    pub sampled_properties: Vec<String>,
    pub config_echo: serde_json::Value,
}

fn paired_numeric(sim: &Dataset, real: &Dataset, pi: usize) -> (Vec<f64>, Vec<f64>) {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for ei in 0..sim.entities().len() {
        if let (Some(s), Some(r)) = (
            sim.cell(ei, pi).value.as_ref().and_then(Value::as_f64),
            real.cell(ei, pi).value.as_ref().and_then(Value::as_f64),
        ) {
            xs.push(s);
            ys.push(r);
        }
    }
    (xs, ys)
}

fn strategy_row(
    strategy: PromptStrategy,
    sim: &Dataset,
    real: &Dataset,
    split: SplitSpec,
) -> Result<StrategyRow, BenchError> {
    let target = real.target_index().expect("sample carries target");
    let mut per_property = Vec::new();
    let mut sum = 0.0;
    for pi in 0..real.properties().len() {
        if pi == target {
            continue;
        }
        let (xs, ys) = paired_numeric(sim, real, pi);
        let r = pearson(&xs, &ys)?;
        sum += r;
        per_property.push(PropertyCorrelation {
            property: real.properties()[pi].name.clone(),
            correlation: r,
            target_accuracy_note: None,
        });
    }
    let (edi_sim, edi_real) = paired_numeric(sim, real, target);
    let edi_mae = mae(&edi_sim, &edi_real)?;
    let gap = simulation_error_gap(sim, real, AnalysisTask::Regression(RegressionScore::MedAe), split)?;
    Ok(StrategyRow {
        strategy: strategy.id().to_string(),
        avg_correlation: sum / per_property.len() as f64,
        edi_mae,
        gap,
        per_property,
        missing_cells: sim.missing_count(),
    })
}

fn elicit_correlations(
    real: &Dataset,
    cfg: &ExperimentConfig,
    gateway: &Gateway,
) -> Result<Vec<(String, f64)>, BenchError> {
    let target = real.target_index().expect("sample carries target");
    let target_prop = &real.properties()[target];
    let mut estimates = Vec::new();
    for (pi, prop) in real.properties().iter().enumerate() {
        if pi == target {
            continue;
        }
        let pair = render_direct_correlation_prompt(prop, target_prop, CorrMetric::Pearson)
            .map_err(crate::simulator::SimError::Prompt)?;
        let req = ChatRequest::from_pair(&cfg.sim.model, &pair, cfg.sim.temperature);
        let content = gateway.complete_cached(&req)?.content;
        let value = crate::extract::parse_coefficient(&content).map_err(|e| {
            BenchError::Stats(StatsError::SchemaMismatch(format!(
                "direct estimate for {:?}: {e}",
                prop.name
            )))
        })?;
        estimates.push((prop.name.clone(), value));
    }
    Ok(estimates)
}

/// Runs the countries experiment: sampled grid per strategy, per-property
/// correlations, index MAE, the 80/20 regression gap scored by median
/// absolute error, and the direct-elicitation control.
pub fn run_countries(
    cfg: &ExperimentConfig,
    gateway: &Gateway,
    progress: Option<ProgressFn<'_>>,
) -> Result<CountriesReport, BenchError> {
    let pool = preprocess_countries(&cfg.paths.wb_csv, &cfg.paths.edi_csv)?;
    let sample = sample_countries(&pool, cfg.sample)?;

    let strategies: Vec<PromptStrategy> =
        if cfg.sweep_strategies { PromptStrategy::ALL.to_vec() } else { vec![cfg.sim.strategy] };

    let mut rows = Vec::new();
    let mut control_sim: Option<Dataset> = None;
    for strategy in strategies {
        let sim_cfg = SimulationConfig { strategy, ..cfg.sim.clone() };
        let sim = simulate_grid(sample.entities(), sample.properties(), &sim_cfg, gateway, progress)?;
        if strategy == PromptStrategy::DIRECT_STRUCTURED || control_sim.is_none() {
            control_sim = Some(sim.clone());
        }
        rows.push(strategy_row(strategy, &sim, &sample, cfg.split)?);
    }

    let estimates = elicit_correlations(&sample, cfg, gateway)?;
    let control = direct_vs_simulated_correlations(
        &estimates,
        control_sim.as_ref().expect("at least one strategy ran"),
        &sample,
        CorrMetric::Pearson,
    )?;

    Ok(CountriesReport {
        domain: "countries".into(),
        rows,
        control,
        sampled_countries: sample.entities().iter().map(|e| e.name.clone()).collect(),
        sampled_properties: sample.properties().iter().map(|p| p.name.clone()).collect(),
        config_echo: serde_json::json!({
            "sim": cfg.sim,
            "split": cfg.split,
            "sample": cfg.sample,
            "mode": cfg.mode,
            "sweep_strategies": cfg.sweep_strategies,
        }),
    })
}

// column_exact_accuracy is only used by the zoo runner today; keep the
// import graph honest if that changes.
#[allow(unused_imports)]
use column_exact_accuracy as _column_exact_accuracy;
