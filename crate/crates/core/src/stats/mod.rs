//! Evaluation mathematics: fidelity metrics, analysis models, the simulation
//! error gap, direct-elicitation comparison, and Fisher's exact test.

mod fisher;
mod linear;
mod logistic;
pub mod split;

pub use fisher::fisher_exact_2x2;
pub use linear::{ols_fit, ols_predict, LinearModel};
pub use logistic::{logistic_fit, logistic_predict, logistic_proba, LogisticHyper, LogisticModel};
pub use split::{split_indices, train_test_split, SplitMix64};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{dataset_to_matrix, Dataset, MissingPolicy, TargetColumn, Value, ValueDomain};

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("constant input has no defined correlation")]
    ConstantInput,
    #[error("contingency table has a zero marginal")]
    DegenerateTable,
    #[error("labels contain a single class")]
    SingleClass,
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("dataset has no target property")]
    TargetMissing,
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("empty contingency table")]
    EmptyTable,
    #[error("at least {needed} observations required, got {got}")]
    TooFewObservations { needed: usize, got: usize },
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

fn check_lengths(a: usize, b: usize) -> Result<(), StatsError> {
    if a != b {
        return Err(StatsError::LengthMismatch { left: a, right: b });
    }
    Ok(())
}

/// Fraction of exact matches.
pub fn accuracy<T: PartialEq>(pred: &[T], truth: &[T]) -> Result<f64, StatsError> {
    check_lengths(pred.len(), truth.len())?;
    if pred.is_empty() {
        return Err(StatsError::TooFewObservations { needed: 1, got: 0 });
    }
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Sample Pearson correlation. Errors on constant input rather than
/// fabricating a value.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    check_lengths(x.len(), y.len())?;
    if x.len() < 2 {
        return Err(StatsError::TooFewObservations { needed: 2, got: x.len() });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (xi, yi) in x.iter().zip(y) {
        let dx = xi - mx;
        let dy = yi - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::ConstantInput);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Mean absolute error.
pub fn mae(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    check_lengths(x.len(), y.len())?;
    if x.is_empty() {
        return Err(StatsError::TooFewObservations { needed: 1, got: 0 });
    }
    Ok(x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum::<f64>() / x.len() as f64)
}

/// Median absolute error; the median of an even count is the midpoint of the
/// central pair.
pub fn medae(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    check_lengths(x.len(), y.len())?;
    if x.is_empty() {
        return Err(StatsError::TooFewObservations { needed: 1, got: 0 });
    }
    let mut errs: Vec<f64> = x.iter().zip(y).map(|(a, b)| (a - b).abs()).collect();
    errs.sort_by(|a, b| a.partial_cmp(b).expect("absolute errors are not NaN"));
    let n = errs.len();
    Ok(if n % 2 == 1 { errs[n / 2] } else { (errs[n / 2 - 1] + errs[n / 2]) / 2.0 })
}

/// Association between a binary feature and a categorical target, from the
/// 2xK contingency table.
///
/// For a two-class target this is exactly the classical (signed) Matthews
/// correlation coefficient, with the 0/1 orientation given by the target
/// labels in ascending order. For K > 2 classes it is the nonnegative
/// multi-category generalization `sqrt(chi^2 / n)` of the same statistic
/// (for 2x2 tables `MCC^2 = chi^2/n` identically). One-vs-rest per-class
/// coefficients are a documented alternative reading; this function reports
/// one coefficient per feature.
pub fn mcc(feature: &[u8], classes: &[String]) -> Result<f64, StatsError> {
    check_lengths(feature.len(), classes.len())?;
    if feature.len() < 2 {
        return Err(StatsError::TooFewObservations { needed: 2, got: feature.len() });
    }
    let mut labels: Vec<&String> = classes.iter().collect();
    labels.sort();
    labels.dedup();
    let k = labels.len();
    let mut table = vec![[0u64; 2]; k];
    for (f, c) in feature.iter().zip(classes) {
        let row = labels.binary_search(&c).expect("label present by construction");
        table[row][usize::from(*f != 0)] += 1;
    }
    let n: u64 = feature.len() as u64;
    let col0: u64 = table.iter().map(|r| r[0]).sum();
    let col1: u64 = table.iter().map(|r| r[1]).sum();
    if col0 == 0 || col1 == 0 || k < 2 {
        return Err(StatsError::DegenerateTable);
    }
    if k == 2 {
        let (a, b) = (table[0][0] as f64, table[0][1] as f64);
        let (c, d) = (table[1][0] as f64, table[1][1] as f64);
        let denom = ((a + b) * (c + d) * (a + c) * (b + d)).sqrt();
        if denom == 0.0 {
            return Err(StatsError::DegenerateTable);
        }
        return Ok(((a * d - b * c) / denom).clamp(-1.0, 1.0));
    }
    let nf = n as f64;
    let mut chi2 = 0.0;
    for row in &table {
        let row_total = (row[0] + row[1]) as f64;
        if row_total == 0.0 {
            continue;
        }
        for (col, &col_total) in [col0, col1].iter().enumerate() {
            let expected = row_total * col_total as f64 / nf;
            let observed = row[col] as f64;
            chi2 += (observed - expected).powi(2) / expected;
        }
    }
    Ok((chi2 / nf).sqrt().clamp(0.0, 1.0))
}

/// Which analysis model scores a simulation error gap.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalysisTask {
    /// Logistic regression scored by accuracy.
    Classification,
    /// Linear regression scored by the given error.
    Regression(RegressionScore),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressionScore {
    MedAe,
    Mae,
}

/// Split parameters shared by both sides of a gap computation.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

/// Generalization scores of models trained on simulated vs. real data, both
/// evaluated against real validation labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub score: String,
    pub sim_trained_score: f64,
    pub real_trained_score: f64,
    /// Nonnegative `|real - sim|` for accuracy-type scores; signed
    /// `sim_error - real_error` for error-type scores, so larger always
    /// reads as worse simulation.
    pub gap: f64,
}

fn schemas_match(sim: &Dataset, real: &Dataset) -> Result<(), StatsError> {
    if sim.entities().len() != real.entities().len() {
        return Err(StatsError::SchemaMismatch(format!(
            "{} vs {} entities",
            sim.entities().len(),
            real.entities().len()
        )));
    }
    for (a, b) in sim.entities().iter().zip(real.entities()) {
        if a.name.to_lowercase() != b.name.to_lowercase() {
            return Err(StatsError::SchemaMismatch(format!("entity {:?} vs {:?}", a.name, b.name)));
        }
    }
    if sim.properties().len() != real.properties().len() {
        return Err(StatsError::SchemaMismatch(format!(
            "{} vs {} properties",
            sim.properties().len(),
            real.properties().len()
        )));
    }
    for (a, b) in sim.properties().iter().zip(real.properties()) {
        if a.name.to_lowercase() != b.name.to_lowercase() || a.role != b.role {
            return Err(StatsError::SchemaMismatch(format!("property {:?} vs {:?}", a.name, b.name)));
        }
    }
    Ok(())
}

fn rows_subset(full: &Dataset, keep: &[usize]) -> Result<Dataset, StatsError> {
    let entities = keep.iter().map(|&ei| full.entities()[ei].clone()).collect();
    let mut cells = Vec::with_capacity(keep.len() * full.properties().len());
    for &ei in keep {
        for pi in 0..full.properties().len() {
            cells.push(full.cell(ei, pi).clone());
        }
    }
    Ok(Dataset::new(entities, full.properties().to_vec(), cells, full.provenance())?)
}

/// Difference in generalization performance between an analysis model
/// trained on simulated data and one trained on real data.
///
/// Both models are evaluated on the held-out rows: features come from the
/// respective source, labels always from the real dataset. Identical inputs
/// give a gap of exactly zero.
pub fn simulation_error_gap(
    sim: &Dataset,
    real: &Dataset,
    task: AnalysisTask,
    split: SplitSpec,
) -> Result<GapReport, StatsError> {
    schemas_match(sim, real)?;
    let target = sim.target_index().ok_or(StatsError::TargetMissing)?;
    if real.target_index() != Some(target) {
        return Err(StatsError::SchemaMismatch("target property differs".into()));
    }

    let (train_idx, test_idx) = split_indices(sim.entities().len(), split.train_fraction, split.seed);
    let sim_train = rows_subset(sim, &train_idx)?;
    let sim_test = rows_subset(sim, &test_idx)?;
    let real_train = rows_subset(real, &train_idx)?;
    let real_test = rows_subset(real, &test_idx)?;

    let (sim_train_x, sim_train_y) = dataset_to_matrix(&sim_train, MissingPolicy::Error)?;
    let (sim_test_x, _) = dataset_to_matrix(&sim_test, MissingPolicy::Error)?;
    let (real_train_x, real_train_y) = dataset_to_matrix(&real_train, MissingPolicy::Error)?;
    let (real_test_x, real_test_y) = dataset_to_matrix(&real_test, MissingPolicy::Error)?;

    match task {
        AnalysisTask::Classification => {
            let labels = |t: Option<TargetColumn>| match t {
                Some(TargetColumn::Labels(l)) => Ok(l),
                Some(TargetColumn::Numeric(v)) => Ok(v.iter().map(f64::to_string).collect()),
                None => Err(StatsError::TargetMissing),
            };
            let sim_model = logistic_fit(&sim_train_x, &labels(sim_train_y)?, LogisticHyper::default())?;
            let real_model = logistic_fit(&real_train_x, &labels(real_train_y)?, LogisticHyper::default())?;
            let truth = labels(real_test_y)?;
            let sim_score = accuracy(&logistic_predict(&sim_model, &sim_test_x), &truth)?;
            let real_score = accuracy(&logistic_predict(&real_model, &real_test_x), &truth)?;
            Ok(GapReport {
                score: "accuracy".into(),
                sim_trained_score: sim_score,
                real_trained_score: real_score,
                gap: (real_score - sim_score).abs(),
            })
        }
        AnalysisTask::Regression(score) => {
            let numeric = |t: Option<TargetColumn>| match t {
                Some(TargetColumn::Numeric(v)) => Ok(v),
                Some(TargetColumn::Labels(_)) => {
                    Err(StatsError::SchemaMismatch("regression task over a categorical target".into()))
                }
                None => Err(StatsError::TargetMissing),
            };
            let sim_model = ols_fit(&sim_train_x, &numeric(sim_train_y)?)?;
            let real_model = ols_fit(&real_train_x, &numeric(real_train_y)?)?;
            let truth = numeric(real_test_y)?;
            let (scorer, name): (fn(&[f64], &[f64]) -> Result<f64, StatsError>, _) = match score {
                RegressionScore::MedAe => (medae, "medae"),
                RegressionScore::Mae => (mae, "mae"),
            };
            let sim_score = scorer(&ols_predict(&sim_model, &sim_test_x), &truth)?;
            let real_score = scorer(&ols_predict(&real_model, &real_test_x), &truth)?;
            Ok(GapReport {
                score: name.into(),
                sim_trained_score: sim_score,
                real_trained_score: real_score,
                gap: sim_score - real_score,
            })
        }
    }
}

/// Builds the per-property fidelity section of an analysis report, plus the
/// simulation error gap when a target and task are given.
///
/// Every property (target included) gets an entry: exact-match accuracy for
/// binary and categorical domains, Pearson correlation plus MAE for
/// continuous ones. Pairs where either side is missing are excluded and
/// counted rather than scored; a correlation over constant input is reported
/// as absent, not fabricated.
pub fn analyze_datasets(
    sim: &Dataset,
    real: &Dataset,
    task: Option<AnalysisTask>,
    split: SplitSpec,
    config_echo: serde_json::Value,
) -> Result<crate::model::AnalysisReport, StatsError> {
    use crate::model::{AnalysisReport, FidelityMetric, PropertyFidelity, TargetScore};
    schemas_match(sim, real)?;
    let mut per_property = Vec::with_capacity(sim.properties().len());
    for (pi, prop) in sim.properties().iter().enumerate() {
        let mut excluded = 0usize;
        let mut pairs: Vec<(&crate::model::Value, &crate::model::Value)> = Vec::new();
        for ei in 0..sim.entities().len() {
            match (&sim.cell(ei, pi).value, &real.cell(ei, pi).value) {
                (Some(s), Some(r)) => pairs.push((s, r)),
                _ => excluded += 1,
            }
        }
        let metric = match &prop.domain {
            ValueDomain::Binary | ValueDomain::Categorical { .. } => {
                let sims: Vec<String> = pairs.iter().map(|(s, _)| s.to_string()).collect();
                let reals: Vec<String> = pairs.iter().map(|(_, r)| r.to_string()).collect();
                FidelityMetric::Accuracy { accuracy: accuracy(&sims, &reals)? }
            }
            ValueDomain::Continuous { .. } => {
                let sims: Vec<f64> = pairs.iter().filter_map(|(s, _)| s.as_f64()).collect();
                let reals: Vec<f64> = pairs.iter().filter_map(|(_, r)| r.as_f64()).collect();
                let correlation = match pearson(&sims, &reals) {
                    Ok(r) => Some(r),
                    Err(StatsError::ConstantInput) => None,
                    Err(e) => return Err(e),
                };
                FidelityMetric::Correlation { correlation, mae: mae(&sims, &reals)? }
            }
        };
        per_property.push(PropertyFidelity { property: prop.name.clone(), metric, excluded });
    }

    let (target_metric, sim_error_gap) = match (task, sim.target_index()) {
        (Some(task), Some(_)) => {
            let gap = simulation_error_gap(sim, real, task, split)?;
            (
                Some(TargetScore {
                    score: gap.score.clone(),
                    sim_trained: gap.sim_trained_score,
                    real_trained: gap.real_trained_score,
                }),
                Some(gap.gap),
            )
        }
        _ => (None, None),
    };

    Ok(AnalysisReport {
        per_property,
        target_metric,
        sim_error_gap,
        missing_cells: sim.missing_count(),
        config_echo,
    })
}

/// Correlation metric used for direct elicitation comparisons.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrMetric {
    Matthews,
    Pearson,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrComparisonRow {
    pub property: String,
    pub real: f64,
    pub simulated: f64,
    pub direct: f64,
    pub abs_diff_direct: f64,
    pub abs_diff_simulated: f64,
}

/// Per-property table of real, simulated-data, and directly elicited
/// coefficients against the target, with mean absolute differences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrComparison {
    pub metric: CorrMetric,
    pub rows: Vec<CorrComparisonRow>,
    pub mean_abs_diff_direct: f64,
    pub mean_abs_diff_simulated: f64,
}

/// Coefficient between one predictor column and the target column, with
/// pairwise exclusion of rows where either cell is missing.
pub fn property_target_coefficient(
    ds: &Dataset,
    property: usize,
    metric: CorrMetric,
) -> Result<f64, StatsError> {
    let target = ds.target_index().ok_or(StatsError::TargetMissing)?;
    match metric {
        CorrMetric::Matthews => {
            if ds.properties()[property].domain != ValueDomain::Binary {
                return Err(StatsError::SchemaMismatch(format!(
                    "matthews requires a binary property, {:?} is not",
                    ds.properties()[property].name
                )));
            }
            let mut feature = Vec::new();
            let mut classes = Vec::new();
            for ei in 0..ds.entities().len() {
                let (f, t) = (ds.cell(ei, property), ds.cell(ei, target));
                if let (Some(Value::Binary(b)), Some(tv)) = (&f.value, &t.value) {
                    feature.push(*b);
                    classes.push(tv.to_string());
                }
            }
            mcc(&feature, &classes)
        }
        CorrMetric::Pearson => {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for ei in 0..ds.entities().len() {
                let (f, t) = (ds.cell(ei, property), ds.cell(ei, target));
                if let (Some(fx), Some(ty)) =
                    (f.value.as_ref().and_then(Value::as_f64), t.value.as_ref().and_then(Value::as_f64))
                {
                    xs.push(fx);
                    ys.push(ty);
                }
            }
            pearson(&xs, &ys)
        }
    }
}

/// Compares directly elicited coefficients with those measured in the real
/// and simulated datasets.
pub fn direct_vs_simulated_correlations(
    estimates: &[(String, f64)],
    sim: &Dataset,
    real: &Dataset,
    metric: CorrMetric,
) -> Result<CorrComparison, StatsError> {
    schemas_match(sim, real)?;
    let mut rows = Vec::with_capacity(estimates.len());
    for (name, direct) in estimates {
        let pi = real
            .property_index(name)
            .ok_or_else(|| StatsError::SchemaMismatch(format!("no property named {name:?}")))?;
        let real_coef = property_target_coefficient(real, pi, metric)?;
        let sim_coef = property_target_coefficient(sim, pi, metric)?;
        rows.push(CorrComparisonRow {
            property: name.clone(),
            real: real_coef,
            simulated: sim_coef,
            direct: *direct,
            abs_diff_direct: (direct - real_coef).abs(),
            abs_diff_simulated: (sim_coef - real_coef).abs(),
        });
    }
    if rows.is_empty() {
        return Err(StatsError::TooFewObservations { needed: 1, got: 0 });
    }
    let n = rows.len() as f64;
    Ok(CorrComparison {
        metric,
        mean_abs_diff_direct: rows.iter().map(|r| r.abs_diff_direct).sum::<f64>() / n,
        mean_abs_diff_simulated: rows.iter().map(|r| r.abs_diff_simulated).sum::<f64>() / n,
        rows,
    })
}
