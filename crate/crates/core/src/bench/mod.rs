//! Experiment harness for the three reference domains: dataset loaders,
//! countries preprocessing, experiment runners, and report emission
//! (tables plus plot-data CSVs).
//!
//! Replay runs resolve every model call from the shipped fixture cache and
//! are bit-reproducible: the same cache and config give byte-identical
//! `report.json`.

mod athletes;
mod countries;
mod data;
mod report;
mod zoo;

pub use athletes::{run_athletes, ArmReport, AthletesReport};
pub use countries::{preprocess_countries, run_countries, sample_countries, CountriesReport, StrategyRow};
pub use data::{load_entities_csv, load_properties_json, load_zoo};
pub use report::{emit_report, DomainReport};
pub use zoo::{run_zoo, ZooReport};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Gateway, GatewayError, Mode};
use crate::model::ModelError;
use crate::promptkit::PromptContext;
use crate::simulator::{SimError, SimulationConfig};
use crate::stats::{SplitSpec, StatsError};

/// Default on-disk locations, relative to the repository root.
pub const DEFAULT_FIXTURE_CACHE: &str = "fixtures/cache";
pub const DEFAULT_ZOO_CSV: &str = "data/zoo/zoo.csv";
pub const DEFAULT_WB_CSV: &str = "data/countries/world_bank_2022.csv";
pub const DEFAULT_EDI_CSV: &str = "data/countries/edi_2022.csv";
pub const DEFAULT_ATHLETES_CSV: &str = "data/athletes/athletes.csv";
pub const DEFAULT_ATHLETES_TRUTH_CSV: &str = "data/athletes/athletes_truth.csv";
pub const DEFAULT_HYPOTHESIS_TXT: &str = "data/athletes/hypothesis.txt";

/// Split seeds the shipped fixtures were recorded under. Overriding the seed
/// changes the splits, so fixture-derived numbers hold only at the defaults.
pub const ZOO_SPLIT_SEED: u64 = 7;
pub const COUNTRIES_SAMPLE_SEED: u64 = 7;
pub const COUNTRIES_SPLIT_SEED: u64 = 7;
pub const ATHLETES_SPLIT_SEED: u64 = 7;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("schema mismatch in {path}: {detail}")]
    SchemaMismatch { path: String, detail: String },
    #[error("no common countries between the indicator and index files")]
    NoCommonCountries,
    #[error("year {0} absent from the indicator file")]
    YearAbsent(i64),
    #[error("sampling pool too small: requested {requested}, pool holds {available}")]
    PoolTooSmall { requested: usize, available: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Pipeline(#[from] crate::pipeline::PipelineError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Zoo,
    Countries,
    Athletes,
}

impl Domain {
    pub fn parse(s: &str) -> Option<Domain> {
        match s.to_lowercase().as_str() {
            "zoo" => Some(Domain::Zoo),
            "countries" => Some(Domain::Countries),
            "athletes" => Some(Domain::Athletes),
            _ => None,
        }
    }
}

/// Countries sampling parameters.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SampleSpec {
    pub n_entities: usize,
    pub k_properties: usize,
    pub seed: u64,
}

/// Input/output locations for one experiment.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DomainPaths {
    pub zoo_csv: PathBuf,
    pub wb_csv: PathBuf,
    pub edi_csv: PathBuf,
    pub athletes_csv: PathBuf,
    pub athletes_truth_csv: PathBuf,
    pub hypothesis_txt: PathBuf,
}

impl Default for DomainPaths {
    fn default() -> Self {
        DomainPaths {
            zoo_csv: DEFAULT_ZOO_CSV.into(),
            wb_csv: DEFAULT_WB_CSV.into(),
            edi_csv: DEFAULT_EDI_CSV.into(),
            athletes_csv: DEFAULT_ATHLETES_CSV.into(),
            athletes_truth_csv: DEFAULT_ATHLETES_TRUTH_CSV.into(),
            hypothesis_txt: DEFAULT_HYPOTHESIS_TXT.into(),
        }
    }
}

/// Full configuration of one experiment run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub domain: Domain,
    pub sim: SimulationConfig,
    pub split: SplitSpec,
    pub sample: SampleSpec,
    pub paths: DomainPaths,
    pub mode: Mode,
    pub cache_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Run all four prompting strategies instead of just `sim.strategy`.
    pub sweep_strategies: bool,
}

impl ExperimentConfig {
    pub fn for_domain(domain: Domain) -> Self {
        let (context, split) = match domain {
            Domain::Zoo => {
                (PromptContext::for_class("animal"), SplitSpec { train_fraction: 0.7, seed: ZOO_SPLIT_SEED })
            }
            Domain::Countries => {
                (PromptContext::countries_2022(), SplitSpec { train_fraction: 0.8, seed: COUNTRIES_SPLIT_SEED })
            }
            Domain::Athletes => {
                (PromptContext::for_class("athlete"), SplitSpec { train_fraction: 0.8, seed: ATHLETES_SPLIT_SEED })
            }
        };
        ExperimentConfig {
            domain,
            sim: SimulationConfig { context, missing_policy: crate::model::MissingPolicy::Error, ..SimulationConfig::default() },
            split,
            sample: SampleSpec { n_entities: 50, k_properties: 10, seed: COUNTRIES_SAMPLE_SEED },
            paths: DomainPaths::default(),
            mode: Mode::Replay,
            cache_dir: DEFAULT_FIXTURE_CACHE.into(),
            out_dir: "out".into(),
            sweep_strategies: false,
        }
    }

    /// Builds the gateway this config calls for. Replay mode never touches
    /// the network; live mode requires the `net` feature and an API key.
    pub fn gateway(&self, base_url: &str) -> Result<Gateway, BenchError> {
        match self.mode {
            Mode::Replay => Ok(Gateway::replay(&self.cache_dir)?),
            Mode::Live => {
                #[cfg(feature = "net")]
                {
                    let transport = std::sync::Arc::new(crate::gateway::HttpTransport::new(base_url)?);
                    Ok(Gateway::live(transport, &self.cache_dir, self.sim.parallelism)?)
                }
                #[cfg(not(feature = "net"))]
                {
                    let _ = base_url;
                    Err(BenchError::Gateway(GatewayError::Transport(
                        "live mode requires the `net` feature".into(),
                    )))
                }
            }
        }
    }
}

/// Exact-match accuracy between one property column of two aligned
/// datasets, excluding pairs where either side is missing.
pub(crate) fn column_exact_accuracy(
    sim: &crate::model::Dataset,
    real: &crate::model::Dataset,
    property: usize,
) -> (f64, usize) {
    let mut hits = 0usize;
    let mut total = 0usize;
    let mut excluded = 0usize;
    for ei in 0..sim.entities().len() {
        match (&sim.cell(ei, property).value, &real.cell(ei, property).value) {
            (Some(s), Some(r)) => {
                total += 1;
                if s == r {
                    hits += 1;
                }
            }
            _ => excluded += 1,
        }
    }
    let accuracy = if total == 0 { f64::NAN } else { hits as f64 / total as f64 };
    (accuracy, excluded)
}
