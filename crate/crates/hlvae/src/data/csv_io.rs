//! CSV ingestion and emission.
//!
//! UTF-8 with a header row; the empty string denotes a missing feature cell;
//! `.` is the decimal separator. Covariates must be fully observed.

use std::path::Path;

use super::{CovValue, CovariateKind, DataError, DatasetTable, Schema};

/// Loads a typed table, deriving the observation mask from empty cells.
pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<DatasetTable, DataError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path.as_ref())?;
    let headers = reader.headers()?.clone();

    // Resolve every schema column in the header, and reject unknown columns.
    let mut cov_pos = Vec::with_capacity(schema.covariates.len());
    for c in &schema.covariates {
        let pos = headers
            .iter()
            .position(|h| h == c.name)
            .ok_or_else(|| DataError::SchemaMismatch(format!("missing column {}", c.name)))?;
        cov_pos.push(pos);
    }
    let mut feat_pos = Vec::with_capacity(schema.features.len());
    for f in &schema.features {
        let pos = headers
            .iter()
            .position(|h| h == f.name)
            .ok_or_else(|| DataError::SchemaMismatch(format!("missing column {}", f.name)))?;
        feat_pos.push(pos);
    }
    for h in headers.iter() {
        if schema.feature_index(h).is_none() && schema.covariate_index(h).is_none() {
            return Err(DataError::SchemaMismatch(format!("unknown column {h}")));
        }
    }

    let mut covariates = Vec::new();
    let mut covariate_levels: Vec<Vec<String>> = vec![Vec::new(); schema.covariates.len()];
    let mut values = Vec::new();
    let mut mask = Vec::new();

    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let mut cov_row = Vec::with_capacity(schema.covariates.len());
        for (q, spec) in schema.covariates.iter().enumerate() {
            let cell = record.get(cov_pos[q]).unwrap_or("");
            if cell.is_empty() {
                return Err(DataError::MissingCovariate(format!(
                    "covariate {} empty at row {row_idx}",
                    spec.name
                )));
            }
            match spec.kind {
                CovariateKind::Continuous => {
                    let v: f64 = cell.parse().map_err(|_| {
                        DataError::DomainViolation(format!(
                            "covariate {} row {row_idx}: cannot parse {cell:?} as a number",
                            spec.name
                        ))
                    })?;
                    cov_row.push(CovValue::Continuous(v));
                }
                CovariateKind::Categorical | CovariateKind::Binary => {
                    let levels = &mut covariate_levels[q];
                    let level = match levels.iter().position(|l| l == cell) {
                        Some(i) => i,
                        None => {
                            levels.push(cell.to_string());
                            levels.len() - 1
                        }
                    };
                    if spec.kind == CovariateKind::Binary && levels.len() > 2 {
                        return Err(DataError::DomainViolation(format!(
                            "binary covariate {} has more than two levels",
                            spec.name
                        )));
                    }
                    cov_row.push(CovValue::Level(level as u32));
                }
            }
        }
        let mut val_row = Vec::with_capacity(schema.features.len());
        let mut mask_row = Vec::with_capacity(schema.features.len());
        for (d, spec) in schema.features.iter().enumerate() {
            let cell = record.get(feat_pos[d]).unwrap_or("");
            if cell.is_empty() {
                val_row.push(0.0);
                mask_row.push(false);
            } else {
                let v: f64 = cell.parse().map_err(|_| {
                    DataError::DomainViolation(format!(
                        "feature {} row {row_idx}: cannot parse {cell:?} as a number",
                        spec.name
                    ))
                })?;
                val_row.push(v);
                mask_row.push(true);
            }
        }
        covariates.push(cov_row);
        values.push(val_row);
        mask.push(mask_row);
    }

    DatasetTable::from_parts(schema.clone(), covariates, covariate_levels, values, mask)
}

/// Writes a table back out; missing cells become empty strings.
pub fn write_csv(table: &DatasetTable, path: impl AsRef<Path>) -> Result<(), DataError> {
    let text = write_csv_to_string(table);
    std::fs::write(path, text)?;
    Ok(())
}

/// CSV text of a table, columns ordered covariates-then-features.
pub fn write_csv_to_string(table: &DatasetTable) -> String {
    let schema = table.schema();
    let mut out = String::new();
    let header: Vec<&str> = schema
        .covariates
        .iter()
        .map(|c| c.name.as_str())
        .chain(schema.features.iter().map(|f| f.name.as_str()))
        .collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for n in 0..table.n_rows() {
        let mut cells: Vec<String> = Vec::with_capacity(header.len());
        for (q, _spec) in schema.covariates.iter().enumerate() {
            match table.covariate_row(n)[q] {
                CovValue::Continuous(v) => cells.push(format!("{v}")),
                CovValue::Level(l) => cells.push(table.covariate_levels()[q][l as usize].clone()),
            }
        }
        for d in 0..schema.features.len() {
            match table.value(n, d) {
                Some(v) => cells.push(format!("{v}")),
                None => cells.push(String::new()),
            }
        }
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}
