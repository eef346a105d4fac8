//! Dataset loaders: the zoo table, entity lists, and property files.

use std::path::Path;

use super::BenchError;
use crate::model::{
    coerce_value, Cell, Dataset, EntityRef, PropertySpec, Provenance, Scalar, ValueDomain,
};

/// Canonical zoo class labels, in one-hot order.
pub const ZOO_TYPES: [&str; 7] = ["mammal", "bird", "reptile", "fish", "amphibian", "insect", "invertebrate"];

/// Zoo feature columns with their semantic descriptions. "catsize" ships
/// without a description: it is the ambiguous property whose meaning the
/// model has to guess from the bare name.
const ZOO_FEATURES: [(&str, &str); 16] = [
    ("hair", "whether the animal has hair or fur"),
    ("feathers", "whether the animal has feathers"),
    ("eggs", "whether the animal lays eggs"),
    ("milk", "whether the animal produces milk to feed its young"),
    ("airborne", "whether the animal can fly"),
    ("aquatic", "whether the animal lives in water"),
    ("predator", "whether the animal preys on other animals"),
    ("toothed", "whether the animal has teeth"),
    ("backbone", "whether the animal has a backbone"),
    ("breathes", "whether the animal breathes air"),
    ("venomous", "whether the animal is venomous"),
    ("fins", "whether the animal has fins"),
    ("legs", "number of legs the animal has"),
    ("tail", "whether the animal has a tail"),
    ("domestic", "whether the animal is commonly domesticated"),
    ("catsize", ""),
];

/// Property specs for the zoo table: 15 binary features, "legs" carried as
/// continuous [0, 8], and the categorical type target.
pub fn zoo_properties() -> Vec<PropertySpec> {
    let mut props: Vec<PropertySpec> = ZOO_FEATURES
        .iter()
        .map(|(name, description)| {
            let domain = if *name == "legs" {
                ValueDomain::continuous(0.0, 8.0).expect("static bounds")
            } else {
                ValueDomain::Binary
            };
            PropertySpec::new(*name, *description, domain)
        })
        .collect();
    props.push(
        PropertySpec::new(
            "type",
            "the taxonomic class of the animal",
            ValueDomain::categorical(ZOO_TYPES).expect("static labels"),
        )
        .target(),
    );
    props
}

/// Loads the zoo ground-truth CSV: header
/// `animal_name,hair,...,catsize,type`, one row per animal.
pub fn load_zoo(path: &Path) -> Result<Dataset, BenchError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| BenchError::SchemaMismatch { path: path.display().to_string(), detail: e.to_string() })?;
    let schema_err = |detail: String| BenchError::SchemaMismatch { path: path.display().to_string(), detail };
    let properties = zoo_properties();

    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| schema_err(e.to_string()))?.clone();
    if headers.len() != properties.len() + 1 {
        return Err(schema_err(format!(
            "expected {} columns (animal_name + {} properties), found {}",
            properties.len() + 1,
            properties.len(),
            headers.len()
        )));
    }
    for (pi, prop) in properties.iter().enumerate() {
        let header = headers.get(pi + 1).unwrap_or("");
        if !header.trim().eq_ignore_ascii_case(&prop.name) {
            return Err(schema_err(format!("column {} is {header:?}, expected {:?}", pi + 1, prop.name)));
        }
    }

    let mut entities = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    let mut cells = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| schema_err(format!("row {}: {e}", line + 2)))?;
        if record.len() != properties.len() + 1 {
            return Err(schema_err(format!(
                "row {}: {} fields, expected {}",
                line + 2,
                record.len(),
                properties.len() + 1
            )));
        }
        let name = record.get(0).unwrap_or("").trim().to_string();
        if name.is_empty() {
            return Err(schema_err(format!("row {}: empty animal name", line + 2)));
        }
        if !seen.insert(name.to_lowercase()) {
            return Err(schema_err(format!("duplicate animal {name:?}")));
        }
        entities.push(EntityRef::new(name.clone(), "animal"));
        for (pi, prop) in properties.iter().enumerate() {
            let field = record.get(pi + 1).unwrap_or("").trim();
            let coerced = coerce_value(&Scalar::Text(field.to_string()), &prop.domain)
                .map_err(|e| schema_err(format!("animal {name:?}, column {:?}: {e}", prop.name)))?;
            cells.push(Cell::of(coerced.value));
        }
    }
    Ok(Dataset::new(entities, properties, cells, Provenance::GroundTruth)?)
}

/// Loads an entity list CSV with header `name,class,note` (note optional).
pub fn load_entities_csv(path: &Path) -> Result<Vec<EntityRef>, BenchError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| BenchError::SchemaMismatch { path: path.display().to_string(), detail: e.to_string() })?;
    let schema_err = |detail: String| BenchError::SchemaMismatch { path: path.display().to_string(), detail };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| schema_err(e.to_string()))?.clone();
    if headers.get(0).map(str::trim) != Some("name") {
        return Err(schema_err("first column must be `name`".into()));
    }
    let mut entities = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| schema_err(format!("row {}: {e}", line + 2)))?;
        let name = record.get(0).unwrap_or("").trim();
        if name.is_empty() {
            return Err(schema_err(format!("row {}: empty name", line + 2)));
        }
        let class = record.get(1).unwrap_or("").trim();
        let note = record.get(2).map(str::trim).filter(|s| !s.is_empty()).map(String::from);
        let mut entity = EntityRef::new(name, class);
        entity.note = note;
        entities.push(entity);
    }
    Ok(entities)
}

/// Loads property specs from a JSON array file.
pub fn load_properties_json(path: &Path) -> Result<Vec<PropertySpec>, BenchError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| BenchError::SchemaMismatch { path: path.display().to_string(), detail: e.to_string() })?;
    let specs: Vec<PropertySpec> = serde_json::from_str(&text)?;
    for spec in &specs {
        spec.domain.validate()?;
    }
    Ok(specs)
}
