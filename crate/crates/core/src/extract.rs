//! Parsers that turn messy model output into typed values, property lists,
//! prompt pairs, entity lists, and coefficients.
//!
//! All parsers are total over arbitrary byte strings: they return errors,
//! never panic.

use serde_json::{Map, Value as Json};
use thiserror::Error;

use crate::model::{
    coerce_value, parse_numeric_token, Coerced, EntityRef, ModelError, PropertySpec, Scalar, ValueDomain,
};
use crate::promptkit::{PromptFormat, PromptPair};

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("no JSON object found in the text")]
    NoObjectFound,
    #[error("braces never balance in the text")]
    UnbalancedBraces,
    #[error("unparseable: {0}")]
    Unparseable(String),
    #[error("no properties found in the text")]
    NoPropertiesFound,
    #[error("no (system prompt, user prompt) pair found in the text")]
    PromptPairMissing,
    #[error("too few entities: expected {expected}, found {found}")]
    TooFewEntities { expected: usize, found: usize },
    #[error("coefficient {0} lies outside [-1, 1]")]
    OutOfRange(f64),
}

impl From<ModelError> for ParseError {
    fn from(e: ModelError) -> ParseError {
        ParseError::Unparseable(e.to_string())
    }
}

/// A scalar token extracted from raw text, with its byte span.
#[derive(Clone, Debug, PartialEq)]
pub struct RawScalar {
    pub token: String,
    pub source_span: (usize, usize),
}

// ---------------------------------------------------------------------------
// JSON-ish object extraction
// ---------------------------------------------------------------------------

/// Finds the first balanced `{...}` region starting at or after `from`,
/// honoring single- and double-quoted strings. Returns byte offsets.
fn balanced_region(text: &str, from: usize) -> Option<(usize, usize)> {
    let bytes = text.as_bytes();
    let start = bytes[from..].iter().position(|&b| b == b'{')? + from;
    let mut depth = 0usize;
    let mut quote: Option<u8> = None;
    let mut escape = false;
    for (offset, &b) in bytes[start..].iter().enumerate() {
        if let Some(q) = quote {
            if escape {
                escape = false;
            } else if b == b'\\' {
                escape = true;
            } else if b == q {
                quote = None;
            }
            continue;
        }
        match b {
            b'"' | b'\'' => quote = Some(b),
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some((start, start + offset + 1));
                }
            }
            _ => {}
        }
    }
    None
}

#[derive(Clone, Copy, PartialEq)]
enum Ctx {
    Object,
    Array,
}

/// Rewrites a JSON-ish region into strict JSON: single quotes to double
/// quotes, unquoted keys and bare words quoted, Python literals lowered,
/// trailing commas dropped.
fn normalize_jsonish(region: &str) -> String {
    let mut out = String::with_capacity(region.len() + 16);
    let mut stack: Vec<Ctx> = Vec::new();
    let mut in_key = false;
    let chars: Vec<char> = region.chars().collect();
    let mut i = 0;

    let flush_trailing_comma = |out: &mut String| {
        let trimmed = out.trim_end();
        if trimmed.ends_with(',') {
            let keep = trimmed.len() - 1;
            out.truncate(keep);
        }
    };

    while i < chars.len() {
        let c = chars[i];
        match c {
            '{' => {
                stack.push(Ctx::Object);
                in_key = true;
                out.push(c);
                i += 1;
            }
            '[' => {
                stack.push(Ctx::Array);
                in_key = false;
                out.push(c);
                i += 1;
            }
            '}' | ']' => {
                flush_trailing_comma(&mut out);
                stack.pop();
                in_key = false;
                out.push(c);
                i += 1;
            }
            ':' => {
                in_key = false;
                out.push(c);
                i += 1;
            }
            ',' => {
                in_key = stack.last() == Some(&Ctx::Object);
                out.push(c);
                i += 1;
            }
            '"' | '\'' => {
                // Copy the quoted string, normalizing to double quotes.
                let quote = c;
                let mut content = String::new();
                i += 1;
                let mut escape = false;
                while i < chars.len() {
                    let d = chars[i];
                    if escape {
                        match d {
                            '\'' => content.push('\''),
                            _ => {
                                content.push('\\');
                                content.push(d);
                            }
                        }
                        escape = false;
                    } else if d == '\\' {
                        escape = true;
                    } else if d == quote {
                        break;
                    } else if d == '"' {
                        content.push_str("\\\"");
                    } else {
                        content.push(d);
                    }
                    i += 1;
                }
                i += 1; // past the closing quote
                out.push('"');
                out.push_str(&content);
                out.push('"');
            }
            c if c.is_whitespace() => {
                out.push(c);
                i += 1;
            }
            _ => {
                // Bare token: runs to the next structural delimiter. Keys
                // additionally stop at ':'.
                let stop =
                    |d: char| -> bool { matches!(d, ',' | '}' | ']' | '\n') || (in_key && d == ':') };
                let mut token = String::new();
                while i < chars.len() && !stop(chars[i]) {
                    token.push(chars[i]);
                    i += 1;
                }
                let trimmed = token.trim();
                let lowered = trimmed.to_ascii_lowercase();
                if trimmed.parse::<f64>().is_ok() {
                    out.push_str(trimmed);
                } else if lowered == "true" || lowered == "false" || lowered == "null" {
                    out.push_str(&lowered);
                } else if lowered == "none" {
                    out.push_str("null");
                } else {
                    out.push('"');
                    for d in trimmed.chars() {
                        match d {
                            '"' => out.push_str("\\\""),
                            '\\' => out.push_str("\\\\"),
                            _ => out.push(d),
                        }
                    }
                    out.push('"');
                }
            }
        }
    }
    out
}

/// Extracts the first parseable JSON-ish `{...}` object from the text,
/// tolerating markdown fences, single quotes, unquoted keys, trailing
/// commas, and surrounding prose.
pub fn extract_json_object(text: &str) -> Result<Map<String, Json>, ParseError> {
    if !text.contains('{') {
        return Err(ParseError::NoObjectFound);
    }
    let mut from = 0;
    let mut saw_balanced = false;
    while let Some((start, end)) = balanced_region(text, from) {
        saw_balanced = true;
        let normalized = normalize_jsonish(&text[start..end]);
        if let Ok(Json::Object(map)) = serde_json::from_str::<Json>(&normalized) {
            return Ok(map);
        }
        from = start + 1;
        if from >= text.len() {
            break;
        }
    }
    if saw_balanced {
        Err(ParseError::NoObjectFound)
    } else {
        Err(ParseError::UnbalancedBraces)
    }
}

// ---------------------------------------------------------------------------
// Scalar extraction from free text
// ---------------------------------------------------------------------------

/// All numeric tokens in the text, in order. Handles signs, decimals,
/// thousands separators, and trailing percent signs; a '-' glued to a
/// preceding digit reads as a range dash, not a sign.
pub fn find_numbers(text: &str) -> Vec<RawScalar> {
    let bytes = text.as_bytes();
    let mut numbers = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        let is_sign = (b == b'-' || b == b'+')
            && i + 1 < bytes.len()
            && (bytes[i + 1].is_ascii_digit() || bytes[i + 1] == b'.')
            && (i == 0 || !bytes[i - 1].is_ascii_digit());
        if b.is_ascii_digit() || is_sign || (b == b'.' && i + 1 < bytes.len() && bytes[i + 1].is_ascii_digit())
        {
            let start = i;
            if is_sign {
                i += 1;
            }
            let mut seen_dot = false;
            while i < bytes.len() {
                let d = bytes[i];
                if d.is_ascii_digit() {
                    i += 1;
                } else if d == b'.' && !seen_dot && i + 1 < bytes.len() && bytes[i + 1].is_ascii_digit() {
                    seen_dot = true;
                    i += 1;
                } else if d == b',' && i + 1 < bytes.len() && bytes[i + 1].is_ascii_digit() {
                    i += 1;
                } else {
                    break;
                }
            }
            let mut end = i;
            if end < bytes.len() && bytes[end] == b'%' {
                end += 1;
                i = end;
            }
            let token = &text[start..end];
            if parse_numeric_token(token).is_some() {
                numbers.push(RawScalar { token: token.to_string(), source_span: (start, end) });
            }
        } else {
            i += 1;
        }
    }
    numbers
}

fn last_number(text: &str) -> Option<RawScalar> {
    find_numbers(text).into_iter().last()
}

/// Word tokens (alphabetic runs), lowercased, with spans.
fn words(text: &str) -> Vec<RawScalar> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (idx, c) in text.char_indices() {
        if c.is_alphabetic() {
            if start.is_none() {
                start = Some(idx);
            }
        } else if let Some(s) = start.take() {
            out.push(RawScalar { token: text[s..idx].to_lowercase(), source_span: (s, idx) });
        }
    }
    if let Some(s) = start {
        out.push(RawScalar { token: text[s..].to_lowercase(), source_span: (s, text.len()) });
    }
    out
}

/// Last binary-ish token: yes/no/true/false words or standalone 0/1.
fn last_binary_token(text: &str) -> Option<Scalar> {
    let mut best: Option<(usize, Scalar)> = None;
    for w in words(text) {
        if matches!(w.token.as_str(), "yes" | "no" | "true" | "false") {
            best = Some((w.source_span.0, Scalar::Text(w.token)));
        }
    }
    for n in find_numbers(text) {
        if n.token == "0" || n.token == "1" {
            let pos = n.source_span.0;
            if best.as_ref().map_or(true, |(p, _)| pos > *p) {
                best = Some((pos, Scalar::Text(n.token)));
            }
        }
    }
    best.map(|(_, s)| s)
}

/// Last occurrence of any label in the text (case-insensitive, longest label
/// winning at equal positions).
fn last_label<'a>(text: &str, labels: &'a [String]) -> Option<&'a str> {
    let lowered = text.to_lowercase();
    let mut best: Option<(usize, &str)> = None;
    for label in labels {
        let needle = label.to_lowercase();
        if needle.is_empty() {
            continue;
        }
        let mut from = 0;
        while let Some(pos) = lowered[from..].find(&needle) {
            let at = from + pos;
            match &best {
                Some((p, l)) if *p > at || (*p == at && l.len() >= label.len()) => {}
                _ => best = Some((at, label.as_str())),
            }
            from = at + needle.len().max(1);
        }
    }
    best.map(|(_, l)| l)
}

fn json_to_scalar(value: &Json) -> Option<Scalar> {
    match value {
        Json::Number(n) => n.as_f64().map(Scalar::Num),
        Json::Bool(b) => Some(Scalar::Bool(*b)),
        Json::String(s) => Some(Scalar::Text(s.clone())),
        _ => None,
    }
}

/// Fuzzy key lookup: exact (case-insensitive) beats prefix, prefix beats a
/// lone key. A tie within a tier is ambiguous and fails rather than guesses.
fn match_key<'a>(object: &'a Map<String, Json>, name: &str) -> Result<&'a Json, ParseError> {
    let target = name.trim().to_lowercase();
    let exact: Vec<&String> = object.keys().filter(|k| k.trim().to_lowercase() == target).collect();
    match exact.len() {
        1 => return Ok(&object[exact[0]]),
        n if n > 1 => return Err(ParseError::Unparseable(format!("ambiguous keys for {name:?}"))),
        _ => {}
    }
    let prefixed: Vec<&String> = object
        .keys()
        .filter(|k| {
            let key = k.trim().to_lowercase();
            key.len() >= 3 && (target.starts_with(&key) || key.starts_with(&target))
        })
        .collect();
    match prefixed.len() {
        1 => return Ok(&object[prefixed[0]]),
        n if n > 1 => return Err(ParseError::Unparseable(format!("ambiguous keys for {name:?}"))),
        _ => {}
    }
    if object.len() == 1 {
        return Ok(object.values().next().expect("single entry"));
    }
    Err(ParseError::Unparseable(format!("no key matching {name:?}")))
}

/// Parses one simulated cell value out of model text.
///
/// Structured responses go through [`extract_json_object`] with fuzzy key
/// matching against the property name; descriptive responses take the last
/// number (or binary/label token) in the text, where models put their
/// conclusion. Each path falls back to the other before giving up.
pub fn parse_cell_value(text: &str, prop: &PropertySpec, format: PromptFormat) -> Result<Coerced, ParseError> {
    let structured = |text: &str| -> Result<Coerced, ParseError> {
        let object = extract_json_object(text)?;
        let value = match_key(&object, &prop.name)?;
        let scalar = json_to_scalar(value)
            .ok_or_else(|| ParseError::Unparseable(format!("non-scalar value {value}")))?;
        Ok(coerce_value(&scalar, &prop.domain)?)
    };
    let descriptive = |text: &str| -> Result<Coerced, ParseError> {
        let scalar = match &prop.domain {
            ValueDomain::Binary => last_binary_token(text),
            ValueDomain::Categorical { labels } => last_label(text, labels).map(|l| Scalar::Text(l.to_string())),
            ValueDomain::Continuous { .. } => last_number(text).map(|n| Scalar::Text(n.token)),
        }
        .ok_or_else(|| ParseError::Unparseable(format!("no parsable token for {:?}", prop.name)))?;
        Ok(coerce_value(&scalar, &prop.domain)?)
    };
    match format {
        // No object at all falls back to the free-text heuristic; an object
        // with ambiguous or uncoercible content stays an error, never a
        // guess.
        PromptFormat::Structured => match extract_json_object(text) {
            Ok(_) => structured(text),
            Err(_) => descriptive(text),
        },
        PromptFormat::Descriptive => descriptive(text).or_else(|first| structured(text).map_err(|_| first)),
    }
}

// ---------------------------------------------------------------------------
// Property lists
// ---------------------------------------------------------------------------

/// Infers a value domain from a free-form "possible values" phrase.
fn infer_domain(values_text: &str) -> Option<ValueDomain> {
    let cleaned = values_text.trim().trim_matches(|c| c == '[' || c == ']' || c == '(' || c == ')').trim();
    let lowered = cleaned.to_lowercase();
    if lowered.is_empty() {
        return None;
    }
    if lowered.contains("binary")
        || (lowered.contains("yes") && lowered.contains("no"))
        || lowered == "0/1"
        || lowered == "0 or 1"
        || lowered == "0,1"
        || lowered == "0, 1"
    {
        return Some(ValueDomain::Binary);
    }
    // Range: "a-b", "a - b", "a to b" with numeric ends.
    for separator in [" to ", "-", "\u{2013}"] {
        if let Some(idx) = cleaned.rfind(separator) {
            let (lo, hi) = (cleaned[..idx].trim(), cleaned[idx + separator.len()..].trim());
            if let (Some(lo), Some(hi)) = (parse_numeric_token(lo), parse_numeric_token(hi)) {
                if lo <= hi {
                    return ValueDomain::continuous(lo, hi).ok();
                }
            }
        }
    }
    // Label set: comma or slash separated non-numeric words.
    let parts: Vec<String> = cleaned
        .split(|c| c == ',' || c == '/' || c == ';')
        .map(|p| p.trim().trim_matches(|c| c == '"' || c == '\'').to_string())
        .filter(|p| !p.is_empty())
        .collect();
    if parts.len() >= 2 && parts.iter().all(|p| parse_numeric_token(p).is_none()) {
        let mut unique = parts.clone();
        unique.sort_by_key(|s| s.to_lowercase());
        unique.dedup_by_key(|s| s.to_lowercase());
        if unique.len() == parts.len() {
            return ValueDomain::categorical(parts).ok();
        }
    }
    None
}

fn strip_outer_quotes(s: &str) -> &str {
    let t = s.trim();
    let t = t.strip_prefix('"').and_then(|x| x.strip_suffix('"')).unwrap_or(t);
    t.strip_prefix('\'').and_then(|x| x.strip_suffix('\'')).unwrap_or(t).trim()
}

fn find_marker(text: &str, markers: &[&str]) -> Option<(usize, usize)> {
    let lowered = text.to_lowercase();
    markers.iter().filter_map(|m| lowered.find(m).map(|at| (at, at + m.len()))).min_by_key(|(at, _)| *at)
}

/// Segment of `text` from `start` until the next of any `stop` markers.
fn until_marker<'a>(text: &'a str, start: usize, stops: &[&str]) -> &'a str {
    let lowered = text.to_lowercase();
    let mut end = text.len();
    for stop in stops {
        if let Some(at) = lowered[start..].find(stop) {
            end = end.min(start + at);
        }
    }
    &text[start..end]
}

/// Parses free-form or structured property descriptions.
///
/// Accepts labeled blocks ("Property Name: ... Description: ... Possible
/// Values: ...") and one-line `name: [description, values]` entries. Items
/// whose value domain cannot be inferred are skipped with a warning.
pub fn parse_property_list(text: &str) -> Result<(Vec<PropertySpec>, Vec<String>), ParseError> {
    let mut specs: Vec<PropertySpec> = Vec::new();
    let mut warnings: Vec<String> = Vec::new();

    let lowered = text.to_lowercase();
    let block_marker = "property name:";
    if lowered.contains(block_marker) {
        let mut offsets: Vec<usize> = Vec::new();
        let mut from = 0;
        while let Some(at) = lowered[from..].find(block_marker) {
            offsets.push(from + at);
            from += at + block_marker.len();
        }
        for (bi, &start) in offsets.iter().enumerate() {
            let end = offsets.get(bi + 1).copied().unwrap_or(text.len());
            let block = &text[start + block_marker.len()..end];
            let name_part = until_marker(block, 0, &["description:", "possible values:", "values:", "\n"]);
            let name = strip_outer_quotes(name_part.trim().trim_end_matches([',', ';'])).to_string();
            let description = match find_marker(block, &["description:"]) {
                Some((_, after)) => strip_outer_quotes(
                    until_marker(block, after, &["possible values:", "values:", "\n"])
                        .trim()
                        .trim_end_matches([',', ';']),
                )
                .to_string(),
                None => String::new(),
            };
            let values_text = match find_marker(block, &["possible values:", "values:", "range:"]) {
                Some((_, after)) => until_marker(block, after, &["\n\n"]).trim().to_string(),
                None => String::new(),
            };
            if name.is_empty() {
                warnings.push("skipped a property block with an empty name".into());
                continue;
            }
            match infer_domain(&values_text) {
                Some(domain) => specs.push(PropertySpec::new(name, description, domain)),
                None => warnings.push(format!("domain unrecognized for {name:?} (values: {values_text:?})")),
            }
        }
    }

    if specs.is_empty() {
        // Structured one-liners: `name: [description, values]`.
        for line in text.lines() {
            let line = line.trim().trim_start_matches(['-', '*', '\u{2022}']).trim();
            let Some(colon) = line.find(':') else { continue };
            let (name_part, rest) = line.split_at(colon);
            let rest = rest[1..].trim();
            let Some(inner) = rest.strip_prefix('[').and_then(|r| r.strip_suffix(']')) else { continue };
            let Some(comma) = inner.rfind(',') else { continue };
            let (description, values_text) = inner.split_at(comma);
            let name = strip_outer_quotes(name_part).to_string();
            if name.is_empty() {
                continue;
            }
            match infer_domain(&values_text[1..]) {
                Some(domain) => {
                    specs.push(PropertySpec::new(name, strip_outer_quotes(description).to_string(), domain))
                }
                None => warnings.push(format!("domain unrecognized for {name:?}")),
            }
        }
    }

    if specs.is_empty() {
        return Err(ParseError::NoPropertiesFound);
    }
    Ok((specs, warnings))
}

// ---------------------------------------------------------------------------
// Prompt pairs
// ---------------------------------------------------------------------------

/// Reads `{system_prompt, user_prompt}` from JSON, falling back to labeled
/// "System prompt:" / "User prompt:" sections.
pub fn parse_prompt_pair(text: &str) -> Result<PromptPair, ParseError> {
    if let Ok(object) = extract_json_object(text) {
        let get = |needle: &str| -> Option<String> {
            object
                .iter()
                .find(|(k, _)| k.to_lowercase().contains(needle))
                .and_then(|(_, v)| v.as_str().map(str::to_string))
                .filter(|s| !s.trim().is_empty())
        };
        if let (Some(system), Some(user)) = (get("system"), get("user")) {
            return Ok(PromptPair { system, user });
        }
    }
    let sys_markers = ["system prompt:", "system_prompt:", "sys_prompt ="];
    let user_markers = ["user prompt:", "user_prompt:", "user_prompt ="];
    if let (Some((sys_start, sys_after)), Some((user_start, user_after))) =
        (find_marker(text, &sys_markers), find_marker(text, &user_markers))
    {
        let (system, user) = if user_start > sys_start {
            (until_marker(text, sys_after, &user_markers).trim(), text[user_after..].trim())
        } else {
            (text[sys_after..].trim(), until_marker(text, user_after, &sys_markers).trim())
        };
        if !system.is_empty() && !user.is_empty() {
            return Ok(PromptPair { system: system.to_string(), user: user.to_string() });
        }
    }
    Err(ParseError::PromptPairMissing)
}

// ---------------------------------------------------------------------------
// Entity lists
// ---------------------------------------------------------------------------

fn balanced_array(text: &str) -> Option<&str> {
    let start = text.find('[')?;
    let bytes = text.as_bytes();
    let mut depth = 0usize;
    let mut quote: Option<u8> = None;
    let mut escape = false;
    for (offset, &b) in bytes[start..].iter().enumerate() {
        if let Some(q) = quote {
            if escape {
                escape = false;
            } else if b == b'\\' {
                escape = true;
            } else if b == q {
                quote = None;
            }
            continue;
        }
        match b {
            b'"' | b'\'' => quote = Some(b),
            b'[' => depth += 1,
            b']' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..start + offset + 1]);
                }
            }
            _ => {}
        }
    }
    None
}

/// Parses a list of entity names from a JSON array or numbered/bulleted
/// lines. Deduplicates case-insensitively preserving first occurrence;
/// truncates past `expected_n`, errors when fewer remain.
pub fn parse_entity_list(text: &str, expected_n: usize, entity_class: &str) -> Result<Vec<EntityRef>, ParseError> {
    let mut names: Vec<String> = Vec::new();

    if let Some(region) = balanced_array(text) {
        if let Ok(Json::Array(items)) = serde_json::from_str::<Json>(&normalize_jsonish(region)) {
            for item in items {
                match item {
                    Json::String(s) => names.push(s),
                    Json::Object(o) => {
                        if let Some(Json::String(s)) = o.get("name") {
                            names.push(s.clone());
                        }
                    }
                    _ => {}
                }
            }
        }
    }

    if names.is_empty() {
        for line in text.lines() {
            let trimmed = line.trim();
            let without_number = trimmed
                .strip_prefix(|c: char| c.is_ascii_digit())
                .map(|rest| rest.trim_start_matches(|c: char| c.is_ascii_digit()))
                .and_then(|rest| rest.strip_prefix(['.', ')', ':']))
                .map(str::trim);
            let without_bullet =
                trimmed.strip_prefix(['-', '*', '\u{2022}']).map(str::trim).filter(|s| !s.is_empty());
            if let Some(name) = without_number.or(without_bullet) {
                let name = strip_outer_quotes(name.trim_end_matches(',')).to_string();
                if !name.is_empty() {
                    names.push(name);
                }
            }
        }
    }

    let mut seen = std::collections::BTreeSet::new();
    let mut entities = Vec::new();
    for name in names {
        let name = name.trim().to_string();
        if name.is_empty() || !seen.insert(name.to_lowercase()) {
            continue;
        }
        entities.push(EntityRef::new(name, entity_class));
        if entities.len() == expected_n {
            break;
        }
    }
    if entities.len() < expected_n {
        return Err(ParseError::TooFewEntities { expected: expected_n, found: entities.len() });
    }
    Ok(entities)
}

// ---------------------------------------------------------------------------
// Coefficients
// ---------------------------------------------------------------------------

/// Extracts a correlation coefficient: `{"coefficient": v}` or the last
/// number in the text. Values outside [-1, 1] are errors.
pub fn parse_coefficient(text: &str) -> Result<f64, ParseError> {
    let from_object = extract_json_object(text).ok().and_then(|object| {
        let key = object
            .keys()
            .find(|k| k.to_lowercase().contains("coef"))
            .cloned()
            .or_else(|| (object.len() == 1).then(|| object.keys().next().expect("single entry").clone()))?;
        json_to_scalar(&object[&key]).and_then(|s| match s {
            Scalar::Num(x) => Some(x),
            Scalar::Text(t) => parse_numeric_token(&t),
            Scalar::Bool(_) => None,
        })
    });
    let value = from_object
        .or_else(|| last_number(text).and_then(|n| parse_numeric_token(&n.token)))
        .ok_or_else(|| ParseError::Unparseable("no coefficient found".into()))?;
    if !value.is_finite() || value.abs() > 1.0 {
        return Err(ParseError::OutOfRange(value));
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Value;

    fn continuous(lo: f64, hi: f64) -> PropertySpec {
        PropertySpec::new("Population", "", ValueDomain::continuous(lo, hi).unwrap())
    }

    #[test]
    fn extracts_fenced_json() {
        let map = extract_json_object("```json\n{\"Population\": 3.2}\n```").unwrap();
        assert_eq!(map["Population"], Json::from(3.2));
    }

    #[test]
    fn extracts_single_quoted_python_dict() {
        let map = extract_json_object("Sure! {'hair': 1}").unwrap();
        assert_eq!(map["hair"].as_f64(), Some(1.0));
    }

    #[test]
    fn extracts_unquoted_keys_and_python_literals() {
        let map = extract_json_object("{hair: True, legs: 4, note: unknown value,}").unwrap();
        assert_eq!(map["hair"], Json::Bool(true));
        assert_eq!(map["legs"].as_f64(), Some(4.0));
        assert_eq!(map["note"], Json::from("unknown value"));
    }

    #[test]
    fn reports_missing_and_unbalanced() {
        assert!(matches!(
            extract_json_object("The value is about three percent."),
            Err(ParseError::NoObjectFound)
        ));
        assert!(matches!(extract_json_object("oops { never closes"), Err(ParseError::UnbalancedBraces)));
    }

    #[test]
    fn cell_structured_exact_key() {
        let prop = PropertySpec::new("hair", "", ValueDomain::Binary);
        let got = parse_cell_value("{\"hair\": 1}", &prop, PromptFormat::Structured).unwrap();
        assert_eq!(got.value, Value::Binary(1));
    }

    #[test]
    fn cell_structured_fuzzy_key_for_long_names() {
        let long = PropertySpec::new(
            "Population ages 45-49, male (% of male population)",
            "",
            ValueDomain::continuous(0.0, 100.0).unwrap(),
        );
        // Model abbreviates the long property name.
        let got =
            parse_cell_value("{\"Population ages 45-49, male\": 3.1}", &long, PromptFormat::Structured).unwrap();
        assert_eq!(got.value, Value::Number(3.1));
        // A lone key also matches.
        let got = parse_cell_value("{\"value\": 42.0}", &continuous(0.0, 100.0), PromptFormat::Structured)
            .unwrap();
        assert_eq!(got.value, Value::Number(42.0));
    }

    #[test]
    fn cell_structured_ambiguity_is_error_not_guess() {
        let prop = continuous(0.0, 100.0);
        let text = "{\"Population a\": 1, \"Population b\": 2}";
        assert!(parse_cell_value(text, &prop, PromptFormat::Structured).is_err());
    }

    #[test]
    fn cell_descriptive_takes_last_number() {
        let prop = continuous(0.0, 100.0);
        let got = parse_cell_value(
            "The range is 0 to 100. I estimate roughly 3.1% of the male population.",
            &prop,
            PromptFormat::Descriptive,
        )
        .unwrap();
        assert_eq!(got.value, Value::Number(3.1));
    }

    #[test]
    fn cell_descriptive_binary_and_label() {
        let hair = PropertySpec::new("hair", "", ValueDomain::Binary);
        let got = parse_cell_value("Hmm, I would say yes.", &hair, PromptFormat::Descriptive).unwrap();
        assert_eq!(got.value, Value::Binary(1));

        let kind = PropertySpec::new("type", "", ValueDomain::categorical(["mammal", "bird"]).unwrap());
        let got = parse_cell_value("It lays eggs but it is a mammal.", &kind, PromptFormat::Descriptive).unwrap();
        assert_eq!(got.value, Value::Label("mammal".into()));
    }

    #[test]
    fn cell_refusal_is_unparseable() {
        let prop = PropertySpec::new("hair", "", ValueDomain::Binary);
        assert!(parse_cell_value("As an AI I cannot know this, sorry.", &prop, PromptFormat::Structured).is_err());
    }

    #[test]
    fn cell_clamps_out_of_range_numbers() {
        let prop = continuous(0.0, 10.0);
        let got = parse_cell_value("{\"Population\": 12.4}", &prop, PromptFormat::Structured).unwrap();
        assert_eq!(got.value, Value::Number(10.0));
        assert!(got.clamped);
    }

    #[test]
    fn property_list_labeled_blocks() {
        let text = "Property Name: \"Average Happiness Level\"\nDescription: \"The average self-reported \
                    happiness level of individuals in this entity.\"\nPossible Values: [0-10]";
        let (specs, warnings) = parse_property_list(text).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(specs.len(), 1);
        assert_eq!(specs[0].name, "Average Happiness Level");
        assert_eq!(specs[0].domain, ValueDomain::continuous(0.0, 10.0).unwrap());
        assert!(specs[0].description.starts_with("The average"));
    }

    #[test]
    fn property_list_structured_lines() {
        let text = "injuries: [total major injuries lasting over two months, 0-30]\n\
                    peak_age: [age of peak performance, 18-40]";
        let (specs, _) = parse_property_list(text).unwrap();
        assert_eq!(specs.len(), 2);
        assert_eq!(specs[0].name, "injuries");
        assert_eq!(specs[0].description, "total major injuries lasting over two months");
        assert_eq!(specs[0].domain, ValueDomain::continuous(0.0, 30.0).unwrap());
    }

    #[test]
    fn property_list_infers_binary_and_categorical() {
        let text = "Property Name: lays_eggs\nPossible Values: yes/no\n\n\
                    Property Name: diet\nPossible Values: herbivore, carnivore, omnivore";
        let (specs, _) = parse_property_list(text).unwrap();
        assert_eq!(specs[0].domain, ValueDomain::Binary);
        assert_eq!(specs[1].domain, ValueDomain::categorical(["herbivore", "carnivore", "omnivore"]).unwrap());
    }

    #[test]
    fn property_list_unrecognized_domain_warns_and_skips() {
        let text = "Property Name: vibe\nPossible Values: immeasurable\n\n\
                    Property Name: mass\nPossible Values: [0-100]";
        let (specs, warnings) = parse_property_list(text).unwrap();
        assert_eq!(specs.len(), 1);
        assert_eq!(specs[0].name, "mass");
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("vibe"));
    }

    #[test]
    fn property_list_empty_errors() {
        assert!(matches!(parse_property_list("no properties here"), Err(ParseError::NoPropertiesFound)));
    }

    #[test]
    fn prompt_pair_from_json_and_sections() {
        let pair = parse_prompt_pair("{\"system_prompt\": \"You are...\", \"user_prompt\": \"List...\"}").unwrap();
        assert_eq!(pair.system, "You are...");
        assert_eq!(pair.user, "List...");

        let pair = parse_prompt_pair("System prompt: X\nUser prompt: Y").unwrap();
        assert_eq!(pair.system, "X");
        assert_eq!(pair.user, "Y");

        assert!(matches!(parse_prompt_pair("just one prompt"), Err(ParseError::PromptPairMissing)));
    }

    #[test]
    fn entity_list_json_array() {
        let names: Vec<String> = (0..20).map(|i| format!("\"Player {i}\"")).collect();
        let text = format!("[{}]", names.join(", "));
        let got = parse_entity_list(&text, 20, "soccer player").unwrap();
        assert_eq!(got.len(), 20);
        assert_eq!(got[0].name, "Player 0");
        assert_eq!(got[0].entity_class, "soccer player");
    }

    #[test]
    fn entity_list_numbered_dedup_preserves_order() {
        let got = parse_entity_list("1. A\n2. B\n2. b", 2, "x").unwrap();
        assert_eq!(got.iter().map(|e| e.name.as_str()).collect::<Vec<_>>(), vec!["A", "B"]);
    }

    #[test]
    fn entity_list_too_few() {
        let err = parse_entity_list("1. A\n2. B", 20, "x");
        assert!(matches!(err, Err(ParseError::TooFewEntities { expected: 20, found: 2 })));
    }

    #[test]
    fn coefficient_paths() {
        assert_eq!(parse_coefficient("{\"coefficient\": -0.42}").unwrap(), -0.42);
        assert_eq!(parse_coefficient("around 0.7 I'd say").unwrap(), 0.7);
        assert!(matches!(parse_coefficient("{\"coefficient\": 3}"), Err(ParseError::OutOfRange(_))));
        assert!(parse_coefficient("no numbers at all").is_err());
    }

    #[test]
    fn find_numbers_handles_ranges_and_separators() {
        let text = "ages 45-49 total 1,234.5 about -0.3";
        let nums = find_numbers(text);
        let tokens: Vec<&str> = nums.iter().map(|n| n.token.as_str()).collect();
        assert_eq!(tokens, vec!["45", "49", "1,234.5", "-0.3"]);
        for n in &nums {
            assert_eq!(&text[n.source_span.0..n.source_span.1], n.token);
        }
    }

    #[test]
    fn parsers_are_total_over_junk() {
        let junk = ["", "{", "}", "{{{{", "[[[", "\u{0}\u{1}weird", "{'a: }", "1.", "..", "{\"a\":", "%%%,,,"];
        let prop = PropertySpec::new("x", "", ValueDomain::Binary);
        for text in junk {
            let _ = extract_json_object(text);
            let _ = parse_cell_value(text, &prop, PromptFormat::Structured);
            let _ = parse_property_list(text);
            let _ = parse_prompt_pair(text);
            let _ = parse_entity_list(text, 3, "t");
            let _ = parse_coefficient(text);
        }
    }
}
