//! Comma-separated dataset files.
//!
//! Layout: a header row, then one row per case. Booleans are `true` /
//! `false`; an empty field means an absent optional value (an unobserved
//! outcome, a missing protected attribute, or the whole PSA block).
//! Feature values are mandatory.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use crate::psa::FactorVector;

use super::record::{CaseRecord, FeatureValue, Outcome, Outcomes};
use super::schema::{DatasetSchema, FeatureDecl, FeatureKind, PSA_COLUMNS, PSA_PREFIX, RESERVED_COLUMNS};
use super::DataError;

fn invalid(row: u64, column: &str, message: impl Into<String>) -> DataError {
    DataError::Invalid { row, column: column.to_string(), message: message.into() }
}

fn parse_bool(raw: &str, row: u64, column: &str) -> Result<bool, DataError> {
    match raw {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(invalid(row, column, format!("expected true or false, got {other:?}"))),
    }
}

fn parse_feature(decl: &FeatureDecl, raw: &str, row: u64) -> Result<FeatureValue, DataError> {
    if raw.is_empty() {
        return Err(invalid(row, &decl.name, "missing value (feature values are mandatory)"));
    }
    match &decl.kind {
        FeatureKind::Numeric { min, max } => {
            let x: f64 = raw
                .parse()
                .map_err(|_| invalid(row, &decl.name, format!("expected a number, got {raw:?}")))?;
            if !x.is_finite() {
                return Err(invalid(row, &decl.name, "value must be finite"));
            }
            if min.is_some_and(|m| x < m) || max.is_some_and(|m| x > m) {
                return Err(invalid(
                    row,
                    &decl.name,
                    format!("{x} outside [{}, {}]", fmt_bound(*min), fmt_bound(*max)),
                ));
            }
            Ok(FeatureValue::Numeric(x))
        }
        FeatureKind::Categorical { levels } => {
            if !levels.is_empty() && !levels.iter().any(|l| l == raw) {
                return Err(invalid(row, &decl.name, format!("level {raw:?} not in {levels:?}")));
            }
            Ok(FeatureValue::Categorical(raw.to_string()))
        }
    }
}

fn fmt_bound(b: Option<f64>) -> String {
    b.map_or_else(|| "-".to_string(), |x| x.to_string())
}

fn parse_psa(fields: &[&str], row: u64) -> Result<Option<FactorVector>, DataError> {
    if fields.iter().all(|f| f.is_empty()) {
        return Ok(None);
    }
    let uint = |i: usize| -> Result<u32, DataError> {
        fields[i]
            .parse()
            .map_err(|_| invalid(row, PSA_COLUMNS[i], format!("expected a count, got {:?}", fields[i])))
    };
    let flag = |i: usize| parse_bool(fields[i], row, PSA_COLUMNS[i]);
    let f = FactorVector {
        age_at_arrest: uint(0)?,
        current_violent_offense: flag(1)?,
        violent_and_20_or_younger: flag(2)?,
        pending_charge: flag(3)?,
        prior_misdemeanor_conviction: flag(4)?,
        prior_felony_conviction: flag(5)?,
        prior_conviction: flag(6)?,
        prior_violent_convictions: uint(7)?,
        prior_fta_past_2y: uint(8)?,
        prior_fta_older_2y: flag(9)?,
        prior_sentence_incarceration: flag(10)?,
    };
    f.validate().map_err(|e| invalid(row, "psa_*", e.to_string()))?;
    Ok(Some(f))
}

/// Reads and validates every row against `schema`.
pub fn parse_dataset<R: Read>(reader: R, schema: &DatasetSchema) -> Result<Vec<CaseRecord>, DataError> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers().map_err(|e| DataError::Io(e.to_string()))?.clone();
    let mut index: HashMap<&str, usize> = HashMap::new();
    let declared = schema.columns();
    for (i, name) in header.iter().enumerate() {
        if !declared.iter().any(|d| d == name) {
            return Err(invalid(1, name, "column not declared in schema"));
        }
        if index.insert(name, i).is_some() {
            return Err(invalid(1, name, "duplicate column"));
        }
    }
    if let Some(missing) = declared.iter().find(|d| !index.contains_key(d.as_str())) {
        return Err(invalid(1, missing, "declared column missing from header"));
    }

    let mut out = Vec::new();
    for result in rdr.records() {
        let rec = result.map_err(|e| DataError::Io(e.to_string()))?;
        let row = rec.position().map_or(0, |p| p.line());
        let get = |name: &str| rec.get(index[name]).unwrap_or("");

        let case_id = get("case_id");
        if case_id.is_empty() {
            return Err(invalid(row, "case_id", "missing case id"));
        }
        let mut features = BTreeMap::new();
        for decl in &schema.features {
            features.insert(decl.name.clone(), parse_feature(decl, get(&decl.name), row)?);
        }
        let mut protected = BTreeMap::new();
        for decl in &schema.protected {
            let raw = get(&decl.name);
            if !raw.is_empty() {
                if let FeatureValue::Categorical(v) = parse_feature(decl, raw, row)? {
                    protected.insert(decl.name.clone(), v);
                }
            }
        }
        let released = parse_bool(get("released"), row, "released")?;
        let mut outcomes = Outcomes::default();
        for &o in &schema.outcomes {
            let raw = get(o.column());
            if !raw.is_empty() {
                outcomes.set(o, Some(parse_bool(raw, row, o.column())?));
            }
        }
        let psa_factors = if schema.psa_factors {
            let fields: Vec<&str> = PSA_COLUMNS.iter().map(|c| get(c)).collect();
            parse_psa(&fields, row)?
        } else {
            None
        };
        let record = CaseRecord { case_id: case_id.to_string(), features, protected, released, outcomes, psa_factors };
        record
            .check_released_invariant()
            .map_err(|msg| invalid(row, "released", msg))?;
        out.push(record);
    }
    Ok(out)
}

fn psa_fields(f: &Option<FactorVector>) -> Vec<String> {
    match f {
        None => vec![String::new(); PSA_COLUMNS.len()],
        Some(f) => vec![
            f.age_at_arrest.to_string(),
            f.current_violent_offense.to_string(),
            f.violent_and_20_or_younger.to_string(),
            f.pending_charge.to_string(),
            f.prior_misdemeanor_conviction.to_string(),
            f.prior_felony_conviction.to_string(),
            f.prior_conviction.to_string(),
            f.prior_violent_convictions.to_string(),
            f.prior_fta_past_2y.to_string(),
            f.prior_fta_older_2y.to_string(),
            f.prior_sentence_incarceration.to_string(),
        ],
    }
}

/// Writes records in the column order of `schema`.
pub fn write_dataset<W: Write>(records: &[CaseRecord], schema: &DatasetSchema, writer: W) -> Result<(), DataError> {
    schema.validate()?;
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(schema.columns()).map_err(|e| DataError::Io(e.to_string()))?;
    for r in records {
        let mut row = vec![r.case_id.clone()];
        for decl in &schema.features {
            let v = r.features.get(&decl.name).ok_or_else(|| {
                DataError::Config(format!("case {}: feature {:?} missing", r.case_id, decl.name))
            })?;
            row.push(v.to_string());
        }
        for decl in &schema.protected {
            row.push(r.protected.get(&decl.name).cloned().unwrap_or_default());
        }
        row.push(r.released.to_string());
        for &o in &schema.outcomes {
            row.push(r.outcomes.get(o).map(|b| b.to_string()).unwrap_or_default());
        }
        if schema.psa_factors {
            row.extend(psa_fields(&r.psa_factors));
        }
        wtr.write_record(&row).map_err(|e| DataError::Io(e.to_string()))?;
    }
    wtr.flush().map_err(|e| DataError::Io(e.to_string()))?;
    Ok(())
}

/// Column names treated as protected attributes when inferring a schema.
pub const PROTECTED_NAMES: [&str; 2] = ["gender", "race"];

/// Guesses a schema from file contents: reserved columns keep their
/// meaning, `race`/`gender` become protected attributes, and every other
/// column is numeric if all its values parse as numbers, else categorical.
pub fn infer_schema(text: &str) -> Result<DatasetSchema, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| DataError::Io(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if !header.iter().any(|h| h == "case_id") {
        return Err(invalid(1, "case_id", "header has no case_id column"));
    }
    let rows: Vec<csv::StringRecord> = rdr
        .records()
        .collect::<Result<_, _>>()
        .map_err(|e| DataError::Io(e.to_string()))?;
    let mut features = Vec::new();
    let mut protected = Vec::new();
    let mut outcomes = Vec::new();
    let mut psa_cols = 0;
    for (i, name) in header.iter().enumerate() {
        if let Some(o) = Outcome::ALL.iter().find(|o| o.column() == name) {
            outcomes.push(*o);
            continue;
        }
        if RESERVED_COLUMNS.contains(&name.as_str()) {
            continue;
        }
        if name.starts_with(PSA_PREFIX) {
            psa_cols += 1;
            continue;
        }
        if PROTECTED_NAMES.contains(&name.as_str()) {
            protected.push(FeatureDecl::categorical(name, &[]));
            continue;
        }
        let numeric = rows.iter().all(|r| r.get(i).is_some_and(|v| v.parse::<f64>().is_ok()));
        features.push(if numeric { FeatureDecl::numeric(name, None, None) } else { FeatureDecl::categorical(name, &[]) });
    }
    let psa_factors = match psa_cols {
        0 => false,
        n if n == PSA_COLUMNS.len() => true,
        _ => return Err(invalid(1, "psa_*", "partial PSA factor block")),
    };
    let mut schema = DatasetSchema::new(features, protected, psa_factors);
    schema.outcomes = outcomes;
    schema.validate()?;
    Ok(schema)
}
