//! Heterogeneous dataset representation.
//!
//! A [`Schema`] pairs feature specifications (name + likelihood) with
//! auxiliary covariate specifications (instance id, time axis, extra
//! grouping variables). A [`DatasetTable`] holds typed covariate rows, raw
//! feature values, and a per-cell observation mask; tables are immutable
//! after construction and safe to share across threads.

mod csv_io;
mod encode;
mod split;

pub use csv_io::{load_csv, write_csv, write_csv_to_string};
pub use encode::{encode_inputs, encoded_width, EncodedMatrix, FeatureStats, NormStats};
pub use split::{inject_mcar, split_longitudinal, HeldOutCell, SplitTables};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::likelihood::{Likelihood, LikelihoodError};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("domain violation: {0}")]
    DomainViolation(String),
    #[error("missing covariate: {0}")]
    MissingCovariate(String),
    #[error("instance {instance} has {rows} rows but {disclosed} disclosed visits were requested")]
    TooFewVisits { instance: String, rows: usize, disclosed: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl From<LikelihoodError> for DataError {
    fn from(e: LikelihoodError) -> Self {
        DataError::DomainViolation(e.to_string())
    }
}

/// How a feature is presented to the inference network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EncoderTransform {
    Standardize,
    LogStandardize,
    Log1pStandardize,
    OneHot,
    Thermometer,
}

impl EncoderTransform {
    /// Encoded width of a feature with cardinality `r` (1 for numeric kinds).
    pub fn width(&self, r: usize) -> usize {
        match self {
            EncoderTransform::OneHot => r,
            EncoderTransform::Thermometer => r - 1,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub likelihood: Likelihood,
    pub transform: EncoderTransform,
}

impl FeatureSpec {
    /// Feature with the default transform for its likelihood: standardize for
    /// Gaussian kinds, log-standardize for log-normal, log1p-standardize for
    /// counts, one-hot for categorical, thermometer for ordinal.
    pub fn new(name: impl Into<String>, likelihood: Likelihood) -> Self {
        let transform = match &likelihood {
            Likelihood::Gaussian { .. } | Likelihood::GaussianFreeVariance => {
                EncoderTransform::Standardize
            }
            Likelihood::LogNormal => EncoderTransform::LogStandardize,
            Likelihood::Poisson => EncoderTransform::Log1pStandardize,
            Likelihood::Categorical { .. } => EncoderTransform::OneHot,
            Likelihood::Ordinal { .. } => EncoderTransform::Thermometer,
        };
        FeatureSpec { name: name.into(), likelihood, transform }
    }

    pub fn encoded_width(&self) -> usize {
        self.transform.width(self.likelihood.cardinality().unwrap_or(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CovariateKind {
    Continuous,
    Categorical,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    pub kind: CovariateKind,
    pub is_instance_id: bool,
    pub is_time_axis: bool,
    /// Strict covariates reject unseen levels at prediction time instead of
    /// falling back to the prior.
    pub strict: bool,
}

impl CovariateSpec {
    pub fn continuous(name: impl Into<String>) -> Self {
        CovariateSpec {
            name: name.into(),
            kind: CovariateKind::Continuous,
            is_instance_id: false,
            is_time_axis: false,
            strict: false,
        }
    }

    pub fn instance_id(name: impl Into<String>) -> Self {
        CovariateSpec {
            name: name.into(),
            kind: CovariateKind::Categorical,
            is_instance_id: true,
            is_time_axis: false,
            strict: false,
        }
    }

    pub fn time_axis(name: impl Into<String>) -> Self {
        CovariateSpec {
            name: name.into(),
            kind: CovariateKind::Continuous,
            is_instance_id: false,
            is_time_axis: true,
            strict: false,
        }
    }

    pub fn categorical(name: impl Into<String>) -> Self {
        CovariateSpec {
            name: name.into(),
            kind: CovariateKind::Categorical,
            is_instance_id: false,
            is_time_axis: false,
            strict: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub features: Vec<FeatureSpec>,
    pub covariates: Vec<CovariateSpec>,
}

impl Schema {
    pub fn new(features: Vec<FeatureSpec>, covariates: Vec<CovariateSpec>) -> Result<Self, DataError> {
        let schema = Schema { features, covariates };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.features.is_empty() {
            return Err(DataError::InvalidSchema("no features".into()));
        }
        let ids = self.covariates.iter().filter(|c| c.is_instance_id).count();
        let times = self.covariates.iter().filter(|c| c.is_time_axis).count();
        if ids != 1 {
            return Err(DataError::InvalidSchema(format!(
                "exactly one covariate must be the instance id, found {ids}"
            )));
        }
        if times != 1 {
            return Err(DataError::InvalidSchema(format!(
                "exactly one covariate must be the time axis, found {times}"
            )));
        }
        for c in &self.covariates {
            if c.is_instance_id && c.kind == CovariateKind::Continuous {
                return Err(DataError::InvalidSchema(format!(
                    "instance id covariate {} must be categorical",
                    c.name
                )));
            }
            if c.is_time_axis && c.kind != CovariateKind::Continuous {
                return Err(DataError::InvalidSchema(format!(
                    "time covariate {} must be continuous",
                    c.name
                )));
            }
        }
        for f in &self.features {
            match (&f.likelihood, f.transform) {
                (Likelihood::Categorical { cardinality }, EncoderTransform::OneHot)
                | (Likelihood::Ordinal { cardinality }, EncoderTransform::Thermometer) => {
                    if *cardinality < 2 {
                        return Err(DataError::InvalidSchema(format!(
                            "feature {} needs cardinality >= 2",
                            f.name
                        )));
                    }
                }
                (Likelihood::Categorical { .. }, _) | (Likelihood::Ordinal { .. }, _) => {
                    return Err(DataError::InvalidSchema(format!(
                        "feature {} has an incompatible encoder transform",
                        f.name
                    )));
                }
                (_, EncoderTransform::OneHot) | (_, EncoderTransform::Thermometer) => {
                    return Err(DataError::InvalidSchema(format!(
                        "feature {} has an incompatible encoder transform",
                        f.name
                    )));
                }
                _ => {}
            }
        }
        let mut names: Vec<&str> = self
            .features
            .iter()
            .map(|f| f.name.as_str())
            .chain(self.covariates.iter().map(|c| c.name.as_str()))
            .collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(DataError::InvalidSchema("duplicate column names".into()));
        }
        Ok(())
    }

    pub fn instance_id_index(&self) -> usize {
        self.covariates.iter().position(|c| c.is_instance_id).expect("validated schema")
    }

    pub fn time_index(&self) -> usize {
        self.covariates.iter().position(|c| c.is_time_axis).expect("validated schema")
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariates.iter().position(|c| c.name == name)
    }

    /// Parses the structured-text schema format:
    /// `{"features": [{"name", "likelihood", "cardinality"?, "bounded"?}],
    ///   "covariates": [{"name", "kind", "id"?, "time"?, "strict"?}]}`.
    pub fn from_json_str(text: &str) -> Result<Self, DataError> {
        let parsed: JsonSchema = serde_json::from_str(text)?;
        parsed.into_schema()
    }

    pub fn to_json_string(&self) -> String {
        JsonSchema::from_schema(self).to_string()
    }

    /// Same pipeline with every feature head forced to a plain Gaussian on
    /// the raw values (levels treated as reals, standardized inputs).
    pub fn all_gaussian(&self) -> Schema {
        Schema {
            features: self
                .features
                .iter()
                .map(|f| FeatureSpec::new(f.name.clone(), Likelihood::Gaussian { bounded: false }))
                .collect(),
            covariates: self.covariates.clone(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct JsonFeature {
    name: String,
    likelihood: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    cardinality: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bounded: Option<bool>,
}

#[derive(Serialize, Deserialize)]
struct JsonCovariate {
    name: String,
    kind: String,
    #[serde(default, skip_serializing_if = "is_false")]
    id: bool,
    #[serde(default, skip_serializing_if = "is_false")]
    time: bool,
    #[serde(default, skip_serializing_if = "is_false")]
    strict: bool,
}

fn is_false(b: &bool) -> bool {
    !b
}

#[derive(Serialize, Deserialize)]
struct JsonSchema {
    features: Vec<JsonFeature>,
    covariates: Vec<JsonCovariate>,
}

impl JsonSchema {
    fn into_schema(self) -> Result<Schema, DataError> {
        let mut features = Vec::new();
        for f in self.features {
            let need_card = matches!(f.likelihood.as_str(), "categorical" | "ordinal");
            if need_card != f.cardinality.is_some() {
                return Err(DataError::InvalidSchema(format!(
                    "feature {}: cardinality must be present iff categorical/ordinal",
                    f.name
                )));
            }
            let likelihood = match f.likelihood.as_str() {
                "gaussian" => Likelihood::Gaussian { bounded: f.bounded.unwrap_or(false) },
                "gaussian-free-variance" => Likelihood::GaussianFreeVariance,
                "lognormal" => Likelihood::LogNormal,
                "poisson" => Likelihood::Poisson,
                "categorical" => Likelihood::Categorical { cardinality: f.cardinality.unwrap() },
                "ordinal" => Likelihood::Ordinal { cardinality: f.cardinality.unwrap() },
                other => {
                    return Err(DataError::InvalidSchema(format!(
                        "feature {}: unknown likelihood {other}",
                        f.name
                    )))
                }
            };
            features.push(FeatureSpec::new(f.name, likelihood));
        }
        let mut covariates = Vec::new();
        for c in self.covariates {
            let kind = match c.kind.as_str() {
                "continuous" => CovariateKind::Continuous,
                "categorical" => CovariateKind::Categorical,
                "binary" => CovariateKind::Binary,
                other => {
                    return Err(DataError::InvalidSchema(format!(
                        "covariate {}: unknown kind {other}",
                        c.name
                    )))
                }
            };
            covariates.push(CovariateSpec {
                name: c.name,
                kind,
                is_instance_id: c.id,
                is_time_axis: c.time,
                strict: c.strict,
            });
        }
        Schema::new(features, covariates)
    }

    fn from_schema(schema: &Schema) -> Self {
        JsonSchema {
            features: schema
                .features
                .iter()
                .map(|f| JsonFeature {
                    name: f.name.clone(),
                    likelihood: match &f.likelihood {
                        Likelihood::Gaussian { .. } => "gaussian".into(),
                        Likelihood::GaussianFreeVariance => "gaussian-free-variance".into(),
                        Likelihood::LogNormal => "lognormal".into(),
                        Likelihood::Poisson => "poisson".into(),
                        Likelihood::Categorical { .. } => "categorical".into(),
                        Likelihood::Ordinal { .. } => "ordinal".into(),
                    },
                    cardinality: f.likelihood.cardinality(),
                    bounded: match &f.likelihood {
                        Likelihood::Gaussian { bounded: true } => Some(true),
                        _ => None,
                    },
                })
                .collect(),
            covariates: schema
                .covariates
                .iter()
                .map(|c| JsonCovariate {
                    name: c.name.clone(),
                    kind: match c.kind {
                        CovariateKind::Continuous => "continuous".into(),
                        CovariateKind::Categorical => "categorical".into(),
                        CovariateKind::Binary => "binary".into(),
                    },
                    id: c.is_instance_id,
                    time: c.is_time_axis,
                    strict: c.strict,
                })
                .collect(),
        }
    }

    fn to_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }
}

/// One covariate cell: a real number or a dense level index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CovValue {
    Continuous(f64),
    Level(u32),
}

impl CovValue {
    pub fn continuous(&self) -> f64 {
        match self {
            CovValue::Continuous(v) => *v,
            CovValue::Level(l) => *l as f64,
        }
    }

    pub fn level(&self) -> u32 {
        match self {
            CovValue::Level(l) => *l,
            CovValue::Continuous(_) => panic!("continuous covariate used as level"),
        }
    }
}

pub type CovariateRow = Vec<CovValue>;

/// Typed longitudinal table: N rows of covariates, raw feature values, and a
/// per-cell observation mask.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetTable {
    schema: Schema,
    covariates: Vec<CovariateRow>,
    /// Level labels per covariate (empty for continuous covariates).
    covariate_levels: Vec<Vec<String>>,
    values: Vec<Vec<f64>>,
    mask: Vec<Vec<bool>>,
}

impl DatasetTable {
    /// Validates feature domains, covariate typing, and mask shape.
    pub fn from_parts(
        schema: Schema,
        covariates: Vec<CovariateRow>,
        covariate_levels: Vec<Vec<String>>,
        values: Vec<Vec<f64>>,
        mask: Vec<Vec<bool>>,
    ) -> Result<Self, DataError> {
        schema.validate()?;
        let n = covariates.len();
        let d = schema.features.len();
        if values.len() != n || mask.len() != n {
            return Err(DataError::SchemaMismatch(format!(
                "row counts disagree: {} covariate rows, {} value rows, {} mask rows",
                n,
                values.len(),
                mask.len()
            )));
        }
        if covariate_levels.len() != schema.covariates.len() {
            return Err(DataError::SchemaMismatch("level table width mismatch".into()));
        }
        for (i, row) in covariates.iter().enumerate() {
            if row.len() != schema.covariates.len() {
                return Err(DataError::SchemaMismatch(format!("covariate row {i} width")));
            }
            for (q, (cell, spec)) in row.iter().zip(&schema.covariates).enumerate() {
                match (cell, spec.kind) {
                    (CovValue::Continuous(v), CovariateKind::Continuous) => {
                        if !v.is_finite() {
                            return Err(DataError::DomainViolation(format!(
                                "covariate {} row {i} is not finite",
                                spec.name
                            )));
                        }
                    }
                    (CovValue::Level(l), CovariateKind::Categorical)
                    | (CovValue::Level(l), CovariateKind::Binary) => {
                        if (*l as usize) >= covariate_levels[q].len() {
                            return Err(DataError::DomainViolation(format!(
                                "covariate {} row {i} has level {} outside the level table",
                                spec.name, l
                            )));
                        }
                    }
                    _ => {
                        return Err(DataError::SchemaMismatch(format!(
                            "covariate {} row {i} has the wrong type",
                            spec.name
                        )))
                    }
                }
            }
        }
        for i in 0..n {
            if values[i].len() != d || mask[i].len() != d {
                return Err(DataError::SchemaMismatch(format!("feature row {i} width")));
            }
            for (j, spec) in schema.features.iter().enumerate() {
                if mask[i][j] {
                    spec.likelihood.check_domain(values[i][j]).map_err(|e| {
                        DataError::DomainViolation(format!("feature {} row {i}: {e}", spec.name))
                    })?;
                }
            }
        }
        Ok(DatasetTable { schema, covariates, covariate_levels, values, mask })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn n_rows(&self) -> usize {
        self.covariates.len()
    }

    pub fn n_features(&self) -> usize {
        self.schema.features.len()
    }

    pub fn covariate_row(&self, n: usize) -> &CovariateRow {
        &self.covariates[n]
    }

    pub fn covariate_rows(&self) -> &[CovariateRow] {
        &self.covariates
    }

    pub fn covariate_levels(&self) -> &[Vec<String>] {
        &self.covariate_levels
    }

    pub fn is_observed(&self, n: usize, d: usize) -> bool {
        self.mask[n][d]
    }

    /// Raw stored value; 0.0 placeholder at masked cells.
    pub fn raw_value(&self, n: usize, d: usize) -> f64 {
        self.values[n][d]
    }

    pub fn value(&self, n: usize, d: usize) -> Option<f64> {
        self.mask[n][d].then_some(self.values[n][d])
    }

    pub fn observed_cell_count(&self) -> usize {
        self.mask.iter().map(|row| row.iter().filter(|m| **m).count()).sum()
    }

    /// Dense instance ordinal of a row (index into the id covariate levels).
    pub fn instance_of(&self, n: usize) -> usize {
        self.covariates[n][self.schema.instance_id_index()].level() as usize
    }

    pub fn instance_label(&self, ordinal: usize) -> &str {
        &self.covariate_levels[self.schema.instance_id_index()][ordinal]
    }

    pub fn time_of(&self, n: usize) -> f64 {
        self.covariates[n][self.schema.time_index()].continuous()
    }

    /// Distinct instance ordinals present, in first-appearance order.
    pub fn present_instances(&self) -> Vec<usize> {
        let mut seen = Vec::new();
        for n in 0..self.n_rows() {
            let p = self.instance_of(n);
            if !seen.contains(&p) {
                seen.push(p);
            }
        }
        seen
    }

    pub fn rows_of_instance(&self, ordinal: usize) -> Vec<usize> {
        (0..self.n_rows()).filter(|n| self.instance_of(*n) == ordinal).collect()
    }

    /// Rows grouped contiguously by instance (first-appearance order), with
    /// the permutation mapping new row index -> original row index.
    pub fn sorted_by_instance(&self) -> (DatasetTable, Vec<usize>) {
        let mut order: Vec<usize> = Vec::with_capacity(self.n_rows());
        for p in self.present_instances() {
            order.extend(self.rows_of_instance(p));
        }
        (self.subset(&order), order)
    }

    pub fn is_instance_sorted(&self) -> bool {
        let mut seen = Vec::new();
        for n in 0..self.n_rows() {
            let p = self.instance_of(n);
            match seen.last() {
                Some(last) if *last == p => {}
                _ => {
                    if seen.contains(&p) {
                        return false;
                    }
                    seen.push(p);
                }
            }
        }
        true
    }

    /// New table holding the given rows (in the given order); level tables
    /// are carried over unchanged.
    pub fn subset(&self, rows: &[usize]) -> DatasetTable {
        DatasetTable {
            schema: self.schema.clone(),
            covariates: rows.iter().map(|&n| self.covariates[n].clone()).collect(),
            covariate_levels: self.covariate_levels.clone(),
            values: rows.iter().map(|&n| self.values[n].clone()).collect(),
            mask: rows.iter().map(|&n| self.mask[n].clone()).collect(),
        }
    }

    /// Same rows under a different schema (used by the all-Gaussian baseline);
    /// feature names must match.
    pub fn with_schema(&self, schema: Schema) -> Result<DatasetTable, DataError> {
        if schema.features.len() != self.schema.features.len()
            || schema
                .features
                .iter()
                .zip(&self.schema.features)
                .any(|(a, b)| a.name != b.name)
        {
            return Err(DataError::SchemaMismatch("feature names differ".into()));
        }
        DatasetTable::from_parts(
            schema,
            self.covariates.clone(),
            self.covariate_levels.clone(),
            self.values.clone(),
            self.mask.clone(),
        )
    }

    /// Clears a cell (used by hole injection).
    pub(crate) fn clear_cell(&mut self, n: usize, d: usize) {
        self.mask[n][d] = false;
        self.values[n][d] = 0.0;
    }

    /// Fills a cell with a value (used by imputation output assembly).
    pub(crate) fn fill_cell(&mut self, n: usize, d: usize, value: f64) {
        self.mask[n][d] = true;
        self.values[n][d] = value;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy_schema() -> Schema {
        Schema::new(
            vec![
                FeatureSpec::new("g1", Likelihood::Gaussian { bounded: false }),
                FeatureSpec::new("count", Likelihood::Poisson),
                FeatureSpec::new("cat", Likelihood::Categorical { cardinality: 3 }),
                FeatureSpec::new("ord", Likelihood::Ordinal { cardinality: 4 }),
            ],
            vec![CovariateSpec::instance_id("id"), CovariateSpec::time_axis("time")],
        )
        .unwrap()
    }

    #[test]
    fn schema_requires_exactly_one_id_and_time() {
        let err = Schema::new(
            vec![FeatureSpec::new("x", Likelihood::Poisson)],
            vec![CovariateSpec::continuous("time")],
        )
        .unwrap_err();
        assert!(matches!(err, DataError::InvalidSchema(_)));
    }

    #[test]
    fn schema_json_roundtrip() {
        let schema = toy_schema();
        let text = schema.to_json_string();
        let back = Schema::from_json_str(&text).unwrap();
        assert_eq!(schema, back);
    }

    #[test]
    fn cardinality_must_match_likelihood() {
        let text = r#"{"features":[{"name":"x","likelihood":"gaussian","cardinality":3}],
                       "covariates":[{"name":"id","kind":"categorical","id":true},
                                     {"name":"t","kind":"continuous","time":true}]}"#;
        assert!(Schema::from_json_str(text).is_err());
    }

    #[test]
    fn domain_checks_reject_bad_cells() {
        let schema = toy_schema();
        let cov = vec![vec![CovValue::Level(0), CovValue::Continuous(0.0)]];
        let levels = vec![vec!["a".into()], vec![]];
        // Categorical level 7 with cardinality 3.
        let err = DatasetTable::from_parts(
            schema,
            cov,
            levels,
            vec![vec![0.0, 1.0, 7.0, 0.0]],
            vec![vec![true; 4]],
        )
        .unwrap_err();
        assert!(matches!(err, DataError::DomainViolation(_)));
    }

    #[test]
    fn instance_sorting_and_grouping() {
        let schema = toy_schema();
        let mk_row = |id: u32, t: f64| vec![CovValue::Level(id), CovValue::Continuous(t)];
        let table = DatasetTable::from_parts(
            schema,
            vec![mk_row(0, 0.0), mk_row(1, 0.0), mk_row(0, 1.0)],
            vec![vec!["a".into(), "b".into()], vec![]],
            vec![vec![0.0; 4]; 3],
            vec![vec![false; 4]; 3],
        )
        .unwrap();
        assert!(!table.is_instance_sorted());
        let (sorted, order) = table.sorted_by_instance();
        assert!(sorted.is_instance_sorted());
        assert_eq!(order, vec![0, 2, 1]);
        assert_eq!(sorted.present_instances(), vec![0, 1]);
    }
}
