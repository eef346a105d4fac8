//! Domain data model shared by all modules: entities, property
//! specifications, datasets, typed values, and provenance.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unparseable value {0:?} for domain {1}")]
    Unparseable(String, String),
    #[error("unknown label {0:?}; expected one of {1:?}")]
    LabelUnknown(String, Vec<String>),
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("missing values present under missing policy `error` ({0} cells)")]
    MissingValuesPresent(usize),
    #[error("dataset has no target property")]
    TargetMissing,
    #[error("csv error: {0}")]
    Csv(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// The value domain a property draws from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValueDomain {
    Binary,
    Categorical { labels: Vec<String> },
    Continuous { range: [f64; 2] },
}

impl ValueDomain {
    pub fn categorical<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self, ModelError> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        let domain = ValueDomain::Categorical { labels };
        domain.validate()?;
        Ok(domain)
    }

    pub fn continuous(low: f64, high: f64) -> Result<Self, ModelError> {
        let domain = ValueDomain::Continuous { range: [low, high] };
        domain.validate()?;
        Ok(domain)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            ValueDomain::Binary => Ok(()),
            ValueDomain::Categorical { labels } => {
                if labels.is_empty() {
                    return Err(ModelError::InvalidDomain("categorical domain needs at least one label".into()));
                }
                let mut seen = BTreeSet::new();
                for label in labels {
                    if !seen.insert(label.to_lowercase()) {
                        return Err(ModelError::InvalidDomain(format!("duplicate label {label:?}")));
                    }
                }
                Ok(())
            }
            ValueDomain::Continuous { range: [low, high] } => {
                if !low.is_finite() || !high.is_finite() {
                    return Err(ModelError::InvalidDomain("continuous bounds must be finite".into()));
                }
                if low > high {
                    return Err(ModelError::InvalidDomain(format!("low {low} exceeds high {high}")));
                }
                Ok(())
            }
        }
    }

    /// Short human-readable form used in prompts and error messages.
    pub fn describe(&self) -> String {
        match self {
            ValueDomain::Binary => "binary (0 or 1)".to_string(),
            ValueDomain::Categorical { labels } => format!("one of {{{}}}", labels.join(", ")),
            ValueDomain::Continuous { range } => format!("a number in [{}, {}]", range[0], range[1]),
        }
    }
}

impl fmt::Display for ValueDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.describe())
    }
}

/// Whether a property acts as an independent or the dependent variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PropertyRole {
    #[default]
    Predictor,
    Target,
}

/// A column definition: name, semantics, value domain, role.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropertySpec {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub domain: ValueDomain,
    #[serde(default)]
    pub role: PropertyRole,
}

impl PropertySpec {
    pub fn new(name: impl Into<String>, description: impl Into<String>, domain: ValueDomain) -> Self {
        PropertySpec { name: name.into(), description: description.into(), domain, role: PropertyRole::Predictor }
    }

    pub fn target(mut self) -> Self {
        self.role = PropertyRole::Target;
        self
    }

    /// A property without a semantic description is ambiguous: the model has
    /// nothing but the bare name to go on (the "catsize" failure mode).
    pub fn is_ambiguous(&self) -> bool {
        self.description.trim().is_empty()
    }
}

/// A row: a plain-text entity name plus its class and optional disambiguator.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRef {
    pub name: String,
    #[serde(rename = "class")]
    pub entity_class: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl EntityRef {
    pub fn new(name: impl Into<String>, entity_class: impl Into<String>) -> Self {
        EntityRef { name: name.into(), entity_class: entity_class.into(), note: None }
    }
}

/// A typed cell value. Serialized as a bare JSON scalar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Binary(u8),
    Label(String),
    Number(f64),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Binary(b) => Some(f64::from(*b)),
            Value::Number(x) => Some(*x),
            Value::Label(_) => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Binary(b) => write!(f, "{b}"),
            Value::Label(s) => f.write_str(s),
            Value::Number(x) => write!(f, "{x}"),
        }
    }
}

/// A scalar as produced by the parsers, before domain coercion.
#[derive(Clone, Debug, PartialEq)]
pub enum Scalar {
    Num(f64),
    Bool(bool),
    Text(String),
}

impl From<&Value> for Scalar {
    fn from(v: &Value) -> Scalar {
        match v {
            Value::Binary(b) => Scalar::Num(f64::from(*b)),
            Value::Number(x) => Scalar::Num(*x),
            Value::Label(s) => Scalar::Text(s.clone()),
        }
    }
}

/// Result of coercing a scalar into a domain. `clamped` is set when a
/// continuous value fell outside the range and was moved to the nearest bound.
#[derive(Clone, Debug, PartialEq)]
pub struct Coerced {
    pub value: Value,
    pub clamped: bool,
}

/// Strips percent signs and thousands separators, then parses a number.
/// Parenthesized negatives are not recognized.
pub fn parse_numeric_token(token: &str) -> Option<f64> {
    let cleaned: String = token.trim().trim_end_matches('%').replace(',', "");
    let cleaned = cleaned.trim();
    if cleaned.is_empty() {
        return None;
    }
    cleaned.parse::<f64>().ok().filter(|x| x.is_finite())
}

fn binary_from_token(token: &str) -> Option<u8> {
    match token.trim().to_lowercase().as_str() {
        "1" | "true" | "yes" => Some(1),
        "0" | "false" | "no" => Some(0),
        _ => None,
    }
}

/// Coerces a parsed scalar into a typed value satisfying the domain.
///
/// Binary accepts {0, 1, true, false, yes, no} case-insensitively.
/// Continuous values outside the range clamp to the nearest bound with
/// `clamped` set. Coercion is idempotent: feeding a coerced value back in
/// returns it unchanged.
pub fn coerce_value(raw: &Scalar, domain: &ValueDomain) -> Result<Coerced, ModelError> {
    let unparseable = |raw: &Scalar| {
        let shown = match raw {
            Scalar::Num(x) => x.to_string(),
            Scalar::Bool(b) => b.to_string(),
            Scalar::Text(s) => s.clone(),
        };
        ModelError::Unparseable(shown, domain.describe())
    };
    match domain {
        ValueDomain::Binary => {
            let bit = match raw {
                Scalar::Bool(b) => Some(u8::from(*b)),
                Scalar::Num(x) if *x == 0.0 => Some(0),
                Scalar::Num(x) if *x == 1.0 => Some(1),
                Scalar::Num(_) => None,
                Scalar::Text(s) => binary_from_token(s),
            };
            bit.map(|b| Coerced { value: Value::Binary(b), clamped: false }).ok_or_else(|| unparseable(raw))
        }
        ValueDomain::Categorical { labels } => {
            let candidate = match raw {
                Scalar::Text(s) => s.trim().to_string(),
                Scalar::Num(x) if x.fract() == 0.0 => format!("{}", *x as i64),
                Scalar::Num(x) => x.to_string(),
                Scalar::Bool(b) => b.to_string(),
            };
            let lowered = candidate.to_lowercase();
            labels
                .iter()
                .find(|label| label.to_lowercase() == lowered)
                .map(|label| Coerced { value: Value::Label(label.clone()), clamped: false })
                .ok_or_else(|| ModelError::LabelUnknown(candidate, labels.clone()))
        }
        ValueDomain::Continuous { range: [low, high] } => {
            let x = match raw {
                Scalar::Num(x) => Some(*x),
                Scalar::Text(s) => parse_numeric_token(s),
                Scalar::Bool(_) => None,
            }
            .filter(|x| x.is_finite())
            .ok_or_else(|| unparseable(raw))?;
            let clamped = x < *low || x > *high;
            let x = x.clamp(*low, *high);
            Ok(Coerced { value: Value::Number(x), clamped })
        }
    }
}

/// One cell of a dataset: the typed value (or missing), the verbatim model
/// output that produced it, and correction provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub value: Option<Value>,
    #[serde(default)]
    pub raw_text: String,
    #[serde(default)]
    pub corrected: bool,
    #[serde(rename = "reasoning", default, skip_serializing_if = "Option::is_none")]
    pub correction_reasoning: Option<String>,
    #[serde(default)]
    pub attempts: u32,
}

impl Cell {
    pub fn missing(raw_text: impl Into<String>, attempts: u32) -> Self {
        Cell { value: None, raw_text: raw_text.into(), corrected: false, correction_reasoning: None, attempts }
    }

    pub fn of(value: Value) -> Self {
        Cell { value: Some(value), raw_text: String::new(), corrected: false, correction_reasoning: None, attempts: 0 }
    }

    pub fn is_missing(&self) -> bool {
        self.value.is_none()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    GroundTruth,
    Simulated,
    Hybrid,
}

/// A dense entity × property grid of cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDataset", into = "RawDataset")]
pub struct Dataset {
    entities: Vec<EntityRef>,
    properties: Vec<PropertySpec>,
    /// Row-major: cell (e, p) lives at index `e * properties.len() + p`.
    cells: Vec<Cell>,
    provenance: Provenance,
}

/// Serde mirror carrying the published JSON layout; `Dataset` revalidates on
/// the way in so a deserialized grid always satisfies the invariants.
#[derive(Serialize, Deserialize)]
struct RawDataset {
    entities: Vec<EntityRef>,
    properties: Vec<PropertySpec>,
    cells: Vec<Cell>,
    provenance: Provenance,
}

impl From<Dataset> for RawDataset {
    fn from(ds: Dataset) -> RawDataset {
        RawDataset { entities: ds.entities, properties: ds.properties, cells: ds.cells, provenance: ds.provenance }
    }
}

impl TryFrom<RawDataset> for Dataset {
    type Error = ModelError;
    fn try_from(raw: RawDataset) -> Result<Dataset, ModelError> {
        Dataset::new(raw.entities, raw.properties, raw.cells, raw.provenance)
    }
}

impl Dataset {
    pub fn new(
        entities: Vec<EntityRef>,
        properties: Vec<PropertySpec>,
        cells: Vec<Cell>,
        provenance: Provenance,
    ) -> Result<Self, ModelError> {
        if cells.len() != entities.len() * properties.len() {
            return Err(ModelError::InvalidDataset(format!(
                "grid holds {} cells for {} entities x {} properties",
                cells.len(),
                entities.len(),
                properties.len()
            )));
        }
        let mut names = BTreeSet::new();
        for prop in &properties {
            if prop.name.trim().is_empty() {
                return Err(ModelError::InvalidDataset("property with empty name".into()));
            }
            prop.domain.validate()?;
            if !names.insert(prop.name.to_lowercase()) {
                return Err(ModelError::InvalidDataset(format!("duplicate property {:?}", prop.name)));
            }
        }
        let targets = properties.iter().filter(|p| p.role == PropertyRole::Target).count();
        if targets > 1 {
            return Err(ModelError::InvalidDataset(format!("{targets} target properties; at most one allowed")));
        }
        let mut keys = BTreeSet::new();
        for entity in &entities {
            if entity.name.trim().is_empty() {
                return Err(ModelError::InvalidDataset("entity with empty name".into()));
            }
            if !keys.insert((entity.name.to_lowercase(), entity.entity_class.to_lowercase())) {
                return Err(ModelError::InvalidDataset(format!("duplicate entity {:?}", entity.name)));
            }
        }
        let n_props = properties.len();
        for (idx, cell) in cells.iter().enumerate() {
            let prop = &properties[idx % n_props];
            if let Some(value) = &cell.value {
                check_in_domain(value, &prop.domain).map_err(|e| {
                    ModelError::InvalidDataset(format!(
                        "cell ({}, {}): {e}",
                        entities[idx / n_props].name, prop.name
                    ))
                })?;
            }
            if cell.corrected && cell.correction_reasoning.as_deref().map_or(true, |r| r.trim().is_empty()) {
                return Err(ModelError::InvalidDataset(format!(
                    "corrected cell ({}, {}) lacks reasoning",
                    entities[idx / n_props].name, prop.name
                )));
            }
        }
        Ok(Dataset { entities, properties, cells, provenance })
    }

    pub fn entities(&self) -> &[EntityRef] {
        &self.entities
    }

    pub fn properties(&self) -> &[PropertySpec] {
        &self.properties
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn cell(&self, entity: usize, property: usize) -> &Cell {
        &self.cells[entity * self.properties.len() + property]
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn target_index(&self) -> Option<usize> {
        self.properties.iter().position(|p| p.role == PropertyRole::Target)
    }

    pub fn property_index(&self, name: &str) -> Option<usize> {
        let lowered = name.to_lowercase();
        self.properties.iter().position(|p| p.name.to_lowercase() == lowered)
    }

    pub fn entity_index(&self, name: &str) -> Option<usize> {
        let lowered = name.to_lowercase();
        self.entities.iter().position(|e| e.name.to_lowercase() == lowered)
    }

    /// Column of values for one property, in entity order.
    pub fn column(&self, property: usize) -> impl Iterator<Item = &Cell> + '_ {
        let stride = self.properties.len();
        self.cells.iter().skip(property).step_by(stride)
    }

    pub fn missing_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_missing()).count()
    }

    /// Replaces the full cell grid, revalidating. Shape must be unchanged.
    pub fn with_cells(&self, cells: Vec<Cell>, provenance: Provenance) -> Result<Dataset, ModelError> {
        Dataset::new(self.entities.clone(), self.properties.clone(), cells, provenance)
    }

    pub fn to_json(&self) -> Result<String, ModelError> {
        let mut out = serde_json::to_string_pretty(self)?;
        out.push('\n');
        Ok(out)
    }

    pub fn from_json(text: &str) -> Result<Dataset, ModelError> {
        Ok(serde_json::from_str(text)?)
    }

    /// CSV carries values only (no provenance): header `entity,<prop1>,...`,
    /// one row per entity, missing rendered as an empty field.
    pub fn to_csv(&self) -> Result<String, ModelError> {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["entity".to_string()];
        header.extend(self.properties.iter().map(|p| p.name.clone()));
        wtr.write_record(&header).map_err(|e| ModelError::Csv(e.to_string()))?;
        for (ei, entity) in self.entities.iter().enumerate() {
            let mut record = vec![entity.name.clone()];
            for pi in 0..self.properties.len() {
                record.push(match &self.cell(ei, pi).value {
                    Some(v) => v.to_string(),
                    None => String::new(),
                });
            }
            wtr.write_record(&record).map_err(|e| ModelError::Csv(e.to_string()))?;
        }
        let bytes = wtr.into_inner().map_err(|e| ModelError::Csv(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| ModelError::Csv(e.to_string()))
    }

    /// Reads the CSV value format back into a grid. The property specs supply
    /// the typing the CSV does not carry; header names must match them.
    pub fn from_csv(
        text: &str,
        properties: Vec<PropertySpec>,
        entity_class: &str,
        provenance: Provenance,
    ) -> Result<Dataset, ModelError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let headers = rdr.headers().map_err(|e| ModelError::Csv(e.to_string()))?.clone();
        if headers.len() != properties.len() + 1 {
            return Err(ModelError::Csv(format!(
                "expected {} columns (entity + {} properties), found {}",
                properties.len() + 1,
                properties.len(),
                headers.len()
            )));
        }
        for (pi, prop) in properties.iter().enumerate() {
            let header = headers.get(pi + 1).unwrap_or("");
            if header.trim().to_lowercase() != prop.name.trim().to_lowercase() {
                return Err(ModelError::Csv(format!(
                    "column {} is {header:?}, expected {:?}",
                    pi + 1,
                    prop.name
                )));
            }
        }
        let mut entities = Vec::new();
        let mut cells = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| ModelError::Csv(e.to_string()))?;
            let name = record.get(0).unwrap_or("").trim().to_string();
            if name.is_empty() {
                return Err(ModelError::Csv(format!("row {}: empty entity name", line + 2)));
            }
            entities.push(EntityRef::new(name, entity_class));
            for (pi, prop) in properties.iter().enumerate() {
                let field = record.get(pi + 1).unwrap_or("").trim();
                if field.is_empty() {
                    cells.push(Cell::missing("", 0));
                } else {
                    let coerced = coerce_value(&Scalar::Text(field.to_string()), &prop.domain)?;
                    let mut cell = Cell::of(coerced.value);
                    cell.raw_text = field.to_string();
                    cells.push(cell);
                }
            }
        }
        Dataset::new(entities, properties, cells, provenance)
    }
}

fn check_in_domain(value: &Value, domain: &ValueDomain) -> Result<(), ModelError> {
    match (value, domain) {
        (Value::Binary(b), ValueDomain::Binary) if *b <= 1 => Ok(()),
        (Value::Label(label), ValueDomain::Categorical { labels }) => {
            let lowered = label.to_lowercase();
            if labels.iter().any(|l| l.to_lowercase() == lowered) {
                Ok(())
            } else {
                Err(ModelError::LabelUnknown(label.clone(), labels.clone()))
            }
        }
        (Value::Number(x), ValueDomain::Continuous { range: [low, high] }) if *x >= *low && *x <= *high => Ok(()),
        _ => Err(ModelError::Unparseable(value.to_string(), domain.describe())),
    }
}

/// What to do with missing cells when building a design matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    Error,
    DropRow,
    ImputeColumnMedian,
}

/// A dense row-major numeric matrix with named columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    pub col_names: Vec<String>,
    /// Entity index each kept row came from (rows may be dropped).
    pub row_entities: Vec<usize>,
}

impl Matrix {
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Target column extracted alongside the design matrix.
#[derive(Clone, Debug, PartialEq)]
pub enum TargetColumn {
    Numeric(Vec<f64>),
    Labels(Vec<String>),
}

/// Numeric encoding of the predictor grid plus the target column, if any.
///
/// Binary properties map to a single {0,1} column, categorical properties to
/// one-hot columns in label order, continuous properties to the raw value.
/// Column layout is deterministic: dataset property order, labels in spec
/// order.
pub fn dataset_to_matrix(ds: &Dataset, policy: MissingPolicy) -> Result<(Matrix, Option<TargetColumn>), ModelError> {
    let target_idx = ds.target_index();
    let predictors: Vec<usize> = (0..ds.properties().len()).filter(|pi| Some(*pi) != target_idx).collect();

    let missing = ds.missing_count();
    if missing > 0 && policy == MissingPolicy::Error {
        return Err(ModelError::MissingValuesPresent(missing));
    }

    // Rows kept: under drop_row, any missing cell (predictor or target)
    // drops the row; a missing target always drops the row since labels
    // cannot be imputed.
    let mut kept: Vec<usize> = Vec::with_capacity(ds.entities().len());
    for ei in 0..ds.entities().len() {
        let row_missing = |pi: &usize| ds.cell(ei, *pi).is_missing();
        let target_missing = target_idx.map(|ti| ds.cell(ei, ti).is_missing()).unwrap_or(false);
        let drop = match policy {
            MissingPolicy::Error => false,
            MissingPolicy::DropRow => predictors.iter().any(row_missing) || target_missing,
            MissingPolicy::ImputeColumnMedian => target_missing,
        };
        if !drop {
            kept.push(ei);
        }
    }

    let mut col_names = Vec::new();
    let mut col_specs: Vec<(usize, Option<usize>)> = Vec::new(); // (property, one-hot label index)
    for &pi in &predictors {
        let prop = &ds.properties()[pi];
        match &prop.domain {
            ValueDomain::Binary | ValueDomain::Continuous { .. } => {
                col_names.push(prop.name.clone());
                col_specs.push((pi, None));
            }
            ValueDomain::Categorical { labels } => {
                for (li, label) in labels.iter().enumerate() {
                    col_names.push(format!("{}={}", prop.name, label));
                    col_specs.push((pi, Some(li)));
                }
            }
        }
    }

    let cols = col_specs.len();
    let mut data = vec![0.0; kept.len() * cols];
    let mut missing_slots: Vec<(usize, usize)> = Vec::new();
    for (r, &ei) in kept.iter().enumerate() {
        for (c, &(pi, label_idx)) in col_specs.iter().enumerate() {
            let cell = ds.cell(ei, pi);
            let x = match (&cell.value, label_idx) {
                (Some(Value::Binary(b)), None) => f64::from(*b),
                (Some(Value::Number(x)), None) => *x,
                (Some(Value::Label(label)), Some(li)) => {
                    let labels = match &ds.properties()[pi].domain {
                        ValueDomain::Categorical { labels } => labels,
                        _ => unreachable!("one-hot column over non-categorical domain"),
                    };
                    if labels[li].to_lowercase() == label.to_lowercase() {
                        1.0
                    } else {
                        0.0
                    }
                }
                (None, _) => {
                    missing_slots.push((r, c));
                    f64::NAN
                }
                (Some(v), _) => {
                    return Err(ModelError::InvalidDataset(format!(
                        "value {v} does not fit encoding of {}",
                        ds.properties()[pi].name
                    )))
                }
            };
            data[r * cols + c] = x;
        }
    }

    // Median imputation per column; one-hot blocks of a missing categorical
    // cell impute to all zeros.
    if !missing_slots.is_empty() {
        for c in 0..cols {
            let slots: Vec<usize> = missing_slots.iter().filter(|(_, mc)| *mc == c).map(|(r, _)| *r).collect();
            if slots.is_empty() {
                continue;
            }
            let fill = if col_specs[c].1.is_some() {
                0.0
            } else {
                let mut known: Vec<f64> =
                    (0..kept.len()).map(|r| data[r * cols + c]).filter(|x| !x.is_nan()).collect();
                known.sort_by(|a, b| a.partial_cmp(b).expect("no NaN after filter"));
                match known.len() {
                    0 => 0.0,
                    n if n % 2 == 1 => known[n / 2],
                    n => (known[n / 2 - 1] + known[n / 2]) / 2.0,
                }
            };
            for r in slots {
                data[r * cols + c] = fill;
            }
        }
    }

    let target = match target_idx {
        None => None,
        Some(ti) => {
            let prop = &ds.properties()[ti];
            match &prop.domain {
                ValueDomain::Categorical { .. } => {
                    let labels = kept
                        .iter()
                        .map(|&ei| match &ds.cell(ei, ti).value {
                            Some(Value::Label(l)) => Ok(l.clone()),
                            Some(v) => Ok(v.to_string()),
                            None => Err(ModelError::MissingValuesPresent(1)),
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    Some(TargetColumn::Labels(labels))
                }
                _ => {
                    let ys = kept
                        .iter()
                        .map(|&ei| {
                            ds.cell(ei, ti)
                                .value
                                .as_ref()
                                .and_then(Value::as_f64)
                                .ok_or(ModelError::MissingValuesPresent(1))
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    Some(TargetColumn::Numeric(ys))
                }
            }
        }
    };

    Ok((Matrix { rows: kept.len(), cols, data, col_names, row_entities: kept }, target))
}

/// Per-property fidelity entry of an analysis report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropertyFidelity {
    pub property: String,
    #[serde(flatten)]
    pub metric: FidelityMetric,
    /// Entity pairs excluded because either side was missing.
    pub excluded: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FidelityMetric {
    Accuracy { accuracy: f64 },
    Correlation { correlation: Option<f64>, mae: f64 },
}

/// Generalization score of the analysis model trained on each source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetScore {
    pub score: String,
    pub sim_trained: f64,
    pub real_trained: f64,
}

/// Fidelity metrics for a simulated dataset against ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub per_property: Vec<PropertyFidelity>,
    pub target_metric: Option<TargetScore>,
    pub sim_error_gap: Option<f64>,
    /// Simulated cells recorded as missing and excluded pairwise.
    pub missing_cells: usize,
    pub config_echo: serde_json::Value,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zoo_like(n_props: usize) -> (Vec<EntityRef>, Vec<PropertySpec>) {
        let entities = vec![EntityRef::new("aardvark", "animal"), EntityRef::new("bee", "animal")];
        let properties: Vec<PropertySpec> =
            (0..n_props).map(|i| PropertySpec::new(format!("f{i}"), "a feature", ValueDomain::Binary)).collect();
        (entities, properties)
    }

    #[test]
    fn coerce_binary_synonyms() {
        for (token, expected) in [("yes", 1), ("NO", 0), ("True", 1), ("false", 0), ("1", 1), ("0", 0)] {
            let got = coerce_value(&Scalar::Text(token.into()), &ValueDomain::Binary).unwrap();
            assert_eq!(got.value, Value::Binary(expected), "token {token}");
        }
        let got = coerce_value(&Scalar::Num(1.0), &ValueDomain::Binary).unwrap();
        assert_eq!(got.value, Value::Binary(1));
        assert!(coerce_value(&Scalar::Num(0.4), &ValueDomain::Binary).is_err());
    }

    #[test]
    fn coerce_clamps_out_of_range() {
        let domain = ValueDomain::continuous(0.0, 10.0).unwrap();
        let got = coerce_value(&Scalar::Num(12.4), &domain).unwrap();
        assert_eq!(got.value, Value::Number(10.0));
        assert!(got.clamped);
        let got = coerce_value(&Scalar::Num(-3.0), &domain).unwrap();
        assert_eq!(got.value, Value::Number(0.0));
        assert!(got.clamped);
    }

    #[test]
    fn coerce_categorical_label() {
        let domain = ValueDomain::categorical(["mammal", "bird", "insect"]).unwrap();
        let got = coerce_value(&Scalar::Text("Mammal".into()), &domain).unwrap();
        assert_eq!(got.value, Value::Label("mammal".into()));
        match coerce_value(&Scalar::Text("fungus".into()), &domain) {
            Err(ModelError::LabelUnknown(tok, _)) => assert_eq!(tok, "fungus"),
            other => panic!("expected LabelUnknown, got {other:?}"),
        }
    }

    #[test]
    fn coerce_numeric_token_handles_percent_and_separators() {
        assert_eq!(parse_numeric_token("3.1%"), Some(3.1));
        assert_eq!(parse_numeric_token("1,234.5"), Some(1234.5));
        assert_eq!(parse_numeric_token("(3)"), None);
    }

    #[test]
    fn coerce_is_idempotent() {
        let domains = [
            ValueDomain::Binary,
            ValueDomain::categorical(["a", "b"]).unwrap(),
            ValueDomain::continuous(-1.0, 5.0).unwrap(),
        ];
        let values = [Value::Binary(1), Value::Label("b".into()), Value::Number(3.25)];
        for (v, d) in values.iter().zip(&domains) {
            let again = coerce_value(&Scalar::from(v), d).unwrap();
            assert_eq!(&again.value, v);
            assert!(!again.clamped);
        }
    }

    #[test]
    fn dataset_shape_validated() {
        let (entities, properties) = zoo_like(2);
        let cells = vec![Cell::of(Value::Binary(1)); 3];
        assert!(Dataset::new(entities, properties, cells, Provenance::GroundTruth).is_err());
    }

    #[test]
    fn dataset_rejects_two_targets() {
        let (entities, mut properties) = zoo_like(2);
        properties[0].role = PropertyRole::Target;
        properties[1].role = PropertyRole::Target;
        let cells = vec![Cell::of(Value::Binary(0)); 4];
        assert!(Dataset::new(entities, properties, cells, Provenance::GroundTruth).is_err());
    }

    #[test]
    fn dataset_rejects_corrected_without_reasoning() {
        let (entities, properties) = zoo_like(2);
        let mut cells = vec![Cell::of(Value::Binary(0)); 4];
        cells[1].corrected = true;
        assert!(Dataset::new(entities, properties, cells, Provenance::Simulated).is_err());
    }

    #[test]
    fn json_round_trip_identical() {
        let (entities, properties) = zoo_like(2);
        let mut cells = vec![
            Cell::of(Value::Binary(1)),
            Cell::of(Value::Binary(0)),
            Cell::missing("no answer", 2),
            Cell::of(Value::Binary(1)),
        ];
        cells[0].raw_text = "{\"f0\": 1}".into();
        cells[3].corrected = true;
        cells[3].correction_reasoning = Some("confirmed".into());
        let ds = Dataset::new(entities, properties, cells, Provenance::Simulated).unwrap();
        let json = ds.to_json().unwrap();
        let back = Dataset::from_json(&json).unwrap();
        assert_eq!(ds, back);
        assert_eq!(json, back.to_json().unwrap());
    }

    #[test]
    fn csv_round_trip_values() {
        let entities = vec![EntityRef::new("x", "thing"), EntityRef::new("y", "thing")];
        let properties = vec![
            PropertySpec::new("size", "", ValueDomain::continuous(0.0, 100.0).unwrap()),
            PropertySpec::new("kind", "", ValueDomain::categorical(["red", "blue"]).unwrap()),
        ];
        let cells = vec![
            Cell::of(Value::Number(4.5)),
            Cell::of(Value::Label("red".into())),
            Cell::missing("", 0),
            Cell::of(Value::Label("blue".into())),
        ];
        let ds = Dataset::new(entities, properties.clone(), cells, Provenance::GroundTruth).unwrap();
        let csv_text = ds.to_csv().unwrap();
        let back = Dataset::from_csv(&csv_text, properties, "thing", Provenance::GroundTruth).unwrap();
        assert_eq!(back.cell(0, 0).value, Some(Value::Number(4.5)));
        assert!(back.cell(1, 0).is_missing());
        assert_eq!(back.cell(1, 1).value, Some(Value::Label("blue".into())));
    }

    #[test]
    fn matrix_encodes_one_hot_in_label_order() {
        let entities = vec![EntityRef::new("x", "t"), EntityRef::new("y", "t")];
        let properties = vec![PropertySpec::new("kind", "", ValueDomain::categorical(["a", "b", "c"]).unwrap())];
        let cells = vec![Cell::of(Value::Label("b".into())), Cell::of(Value::Label("c".into()))];
        let ds = Dataset::new(entities, properties, cells, Provenance::GroundTruth).unwrap();
        let (m, target) = dataset_to_matrix(&ds, MissingPolicy::Error).unwrap();
        assert!(target.is_none());
        assert_eq!(m.col_names, vec!["kind=a", "kind=b", "kind=c"]);
        assert_eq!(m.row(0), &[0.0, 1.0, 0.0]);
        assert_eq!(m.row(1), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn matrix_missing_policies() {
        let (entities, properties) = zoo_like(2);
        let cells = vec![
            Cell::of(Value::Binary(1)),
            Cell::of(Value::Binary(0)),
            Cell::missing("", 1),
            Cell::of(Value::Binary(1)),
        ];
        let ds = Dataset::new(entities, properties, cells, Provenance::Simulated).unwrap();

        match dataset_to_matrix(&ds, MissingPolicy::Error) {
            Err(ModelError::MissingValuesPresent(1)) => {}
            other => panic!("expected MissingValuesPresent, got {other:?}"),
        }

        let (m, _) = dataset_to_matrix(&ds, MissingPolicy::DropRow).unwrap();
        assert_eq!(m.rows, 1);
        assert_eq!(m.row_entities, vec![0]);

        let (m, _) = dataset_to_matrix(&ds, MissingPolicy::ImputeColumnMedian).unwrap();
        assert_eq!(m.rows, 2);
        assert_eq!(m.at(1, 0), 1.0); // median of the single known value
    }

    #[test]
    fn matrix_extracts_target() {
        let entities = vec![EntityRef::new("x", "t"), EntityRef::new("y", "t")];
        let properties = vec![
            PropertySpec::new("f", "", ValueDomain::Binary),
            PropertySpec::new("type", "", ValueDomain::categorical(["m", "b"]).unwrap()).target(),
        ];
        let cells = vec![
            Cell::of(Value::Binary(1)),
            Cell::of(Value::Label("m".into())),
            Cell::of(Value::Binary(0)),
            Cell::of(Value::Label("b".into())),
        ];
        let ds = Dataset::new(entities, properties, cells, Provenance::GroundTruth).unwrap();
        let (m, target) = dataset_to_matrix(&ds, MissingPolicy::Error).unwrap();
        assert_eq!(m.cols, 1);
        assert_eq!(target, Some(TargetColumn::Labels(vec!["m".into(), "b".into()])));
    }

    #[test]
    fn ambiguous_property_is_flagged() {
        let p = PropertySpec::new("catsize", "", ValueDomain::Binary);
        assert!(p.is_ambiguous());
        let p = PropertySpec::new("hair", "whether the animal has hair", ValueDomain::Binary);
        assert!(!p.is_ambiguous());
    }
}
