//! Encoder-input construction with missing-value zero fill.

use serde::{Deserialize, Serialize};

use super::{DataError, DatasetTable, EncoderTransform, Schema};
use crate::tensor::Tensor;

/// Per-feature normalization statistics frozen from the training split.
///
/// `mean`/`std` live on the transform scale (log for log-standardize,
/// log1p for counts); `min`/`max` are raw observed training values, kept for
/// range-normalized error metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    /// Observed training column was constant; std was replaced by 1.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub per_feature: Vec<FeatureStats>,
}

impl NormStats {
    /// Computes statistics over the observed cells of a training table.
    pub fn from_table(table: &DatasetTable) -> Self {
        let schema = table.schema();
        let mut per_feature = Vec::with_capacity(schema.features.len());
        for (d, spec) in schema.features.iter().enumerate() {
            let observed: Vec<f64> =
                (0..table.n_rows()).filter_map(|n| table.value(n, d)).collect();
            let transformed: Vec<f64> = observed
                .iter()
                .map(|v| match spec.transform {
                    EncoderTransform::LogStandardize => v.ln(),
                    EncoderTransform::Log1pStandardize => v.ln_1p(),
                    _ => *v,
                })
                .collect();
            let count = transformed.len().max(1) as f64;
            let mean = transformed.iter().sum::<f64>() / count;
            let var = transformed.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
            let std = var.sqrt();
            let degenerate = !observed.is_empty() && std == 0.0;
            let min = observed.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = observed.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            per_feature.push(FeatureStats {
                mean,
                std: if std > 0.0 { std } else { 1.0 },
                min: if min.is_finite() { min } else { 0.0 },
                max: if max.is_finite() { max } else { 0.0 },
                degenerate,
            });
        }
        NormStats { per_feature }
    }

    /// Names of features whose observed training column was constant.
    pub fn degenerate_features(&self, schema: &Schema) -> Vec<String> {
        self.per_feature
            .iter()
            .zip(&schema.features)
            .filter(|(s, _)| s.degenerate)
            .map(|(_, f)| f.name.clone())
            .collect()
    }

    /// Inverts the numeric standardization of one feature.
    pub fn invert(&self, schema: &Schema, d: usize, encoded: f64) -> f64 {
        let s = &self.per_feature[d];
        match schema.features[d].transform {
            EncoderTransform::Standardize => encoded * s.std + s.mean,
            EncoderTransform::LogStandardize => (encoded * s.std + s.mean).exp(),
            EncoderTransform::Log1pStandardize => (encoded * s.std + s.mean).exp_m1(),
            _ => encoded,
        }
    }
}

/// Dense N×width inference-network input with per-feature column ranges.
#[derive(Debug, Clone)]
pub struct EncodedMatrix {
    pub data: Tensor,
    /// Column span of each feature's block.
    pub ranges: Vec<(usize, usize)>,
}

/// Total encoded width of a schema (plus one mask column per feature when
/// `append_mask` is on).
pub fn encoded_width(schema: &Schema, append_mask: bool) -> usize {
    let base: usize = schema.features.iter().map(|f| f.encoded_width()).sum();
    base + if append_mask { schema.features.len() } else { 0 }
}

/// Encodes raw feature values for the inference network; missing cells are
/// exactly zero after the transform.
pub fn encode_inputs(
    table: &DatasetTable,
    stats: &NormStats,
    append_mask: bool,
) -> Result<EncodedMatrix, DataError> {
    let schema = table.schema();
    if stats.per_feature.len() != schema.features.len() {
        return Err(DataError::SchemaMismatch(format!(
            "{} features but {} normalization entries",
            schema.features.len(),
            stats.per_feature.len()
        )));
    }
    let n = table.n_rows();
    let width = encoded_width(schema, append_mask);
    let mut data = Tensor::zeros(&[n, width]);
    let mut ranges = Vec::with_capacity(schema.features.len());
    let mut offset = 0usize;
    for (d, spec) in schema.features.iter().enumerate() {
        let w = spec.encoded_width();
        ranges.push((offset, offset + w));
        let fs = &stats.per_feature[d];
        for row in 0..n {
            let Some(y) = table.value(row, d) else { continue };
            match spec.transform {
                EncoderTransform::Standardize => {
                    data.set2(row, offset, (y - fs.mean) / fs.std);
                }
                EncoderTransform::LogStandardize => {
                    data.set2(row, offset, (y.ln() - fs.mean) / fs.std);
                }
                EncoderTransform::Log1pStandardize => {
                    data.set2(row, offset, (y.ln_1p() - fs.mean) / fs.std);
                }
                EncoderTransform::OneHot => {
                    data.set2(row, offset + y as usize, 1.0);
                }
                EncoderTransform::Thermometer => {
                    for j in 0..w {
                        if y > j as f64 {
                            data.set2(row, offset + j, 1.0);
                        }
                    }
                }
            }
        }
        offset += w;
    }
    if append_mask {
        for (d, _) in schema.features.iter().enumerate() {
            for row in 0..n {
                if table.is_observed(row, d) {
                    data.set2(row, offset + d, 1.0);
                }
            }
        }
    }
    Ok(EncodedMatrix { data, ranges })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{CovValue, CovariateSpec, FeatureSpec};
    use crate::likelihood::Likelihood;
    use approx::assert_relative_eq;

    fn table_with(values: Vec<Vec<f64>>, mask: Vec<Vec<bool>>) -> DatasetTable {
        let schema = Schema::new(
            vec![
                FeatureSpec::new("g", Likelihood::Gaussian { bounded: false }),
                FeatureSpec::new("ln", Likelihood::LogNormal),
                FeatureSpec::new("cnt", Likelihood::Poisson),
                FeatureSpec::new("cat", Likelihood::Categorical { cardinality: 3 }),
                FeatureSpec::new("ord", Likelihood::Ordinal { cardinality: 4 }),
            ],
            vec![CovariateSpec::instance_id("id"), CovariateSpec::time_axis("t")],
        )
        .unwrap();
        let n = values.len();
        DatasetTable::from_parts(
            schema,
            (0..n).map(|i| vec![CovValue::Level(0), CovValue::Continuous(i as f64)]).collect(),
            vec![vec!["p0".into()], vec![]],
            values,
            mask,
        )
        .unwrap()
    }

    #[test]
    fn training_mean_encodes_to_zero() {
        let table = table_with(
            vec![
                vec![1.0, 1.0, 0.0, 0.0, 0.0],
                vec![3.0, 1.0, 0.0, 0.0, 0.0],
                vec![2.0, 1.0, 0.0, 0.0, 0.0],
            ],
            vec![vec![true; 5]; 3],
        );
        let stats = NormStats::from_table(&table);
        let enc = encode_inputs(&table, &stats, false).unwrap();
        // Mean of g over training is 2.0, so the third row's g encodes to 0.
        assert_relative_eq!(enc.data.at2(2, 0), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn thermometer_and_one_hot_layout() {
        let table = table_with(
            vec![vec![0.0, 1.0, 0.0, 0.0, 2.0], vec![1.0, 1.0, 0.0, 2.0, 0.0]],
            vec![vec![true; 5]; 2],
        );
        let stats = NormStats::from_table(&table);
        let enc = encode_inputs(&table, &stats, false).unwrap();
        // cat block spans 3 columns, ord block 3 columns.
        let (cat_lo, cat_hi) = enc.ranges[3];
        assert_eq!(cat_hi - cat_lo, 3);
        assert_eq!(enc.data.at2(0, cat_lo), 1.0); // category 0 -> [1,0,0]
        assert_eq!(enc.data.at2(1, cat_lo + 2), 1.0); // category 2 -> [0,0,1]
        let (ord_lo, ord_hi) = enc.ranges[4];
        assert_eq!(ord_hi - ord_lo, 3);
        // y = 2 of R = 4 -> thermometer [1,1,0]
        assert_eq!(enc.data.at2(0, ord_lo), 1.0);
        assert_eq!(enc.data.at2(0, ord_lo + 1), 1.0);
        assert_eq!(enc.data.at2(0, ord_lo + 2), 0.0);
    }

    #[test]
    fn missing_cells_encode_to_exact_zero() {
        let table = table_with(
            vec![vec![5.0, 2.0, 3.0, 1.0, 3.0], vec![7.0, 4.0, 1.0, 2.0, 1.0]],
            vec![vec![true; 5], vec![false; 5]],
        );
        let stats = NormStats::from_table(&table);
        let enc = encode_inputs(&table, &stats, false).unwrap();
        let width = enc.data.shape()[1];
        for j in 0..width {
            assert_eq!(enc.data.at2(1, j), 0.0);
        }
    }

    #[test]
    fn degenerate_column_reported_and_std_replaced() {
        let table = table_with(
            vec![vec![2.0, 1.0, 0.0, 0.0, 0.0], vec![2.0, 1.0, 0.0, 0.0, 0.0]],
            vec![vec![true; 5]; 2],
        );
        let stats = NormStats::from_table(&table);
        assert!(stats.per_feature[0].degenerate);
        assert_eq!(stats.per_feature[0].std, 1.0);
        let names = stats.degenerate_features(table.schema());
        assert!(names.contains(&"g".to_string()));
    }

    #[test]
    fn inverting_standardization_recovers_raw_values() {
        let table = table_with(
            vec![
                vec![1.25, 0.5, 2.0, 1.0, 3.0],
                vec![-3.5, 2.5, 7.0, 0.0, 1.0],
                vec![0.75, 1.1, 4.0, 2.0, 0.0],
            ],
            vec![vec![true; 5]; 3],
        );
        let stats = NormStats::from_table(&table);
        let enc = encode_inputs(&table, &stats, false).unwrap();
        let schema = table.schema();
        for n in 0..3 {
            for d in 0..3 {
                let back = stats.invert(schema, d, enc.data.at2(n, enc.ranges[d].0));
                assert_relative_eq!(back, table.value(n, d).unwrap(), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn mask_columns_appended_when_requested() {
        let table = table_with(
            vec![vec![1.0, 1.0, 0.0, 0.0, 0.0]],
            vec![vec![true, false, true, false, true]],
        );
        let stats = NormStats::from_table(&table);
        let enc = encode_inputs(&table, &stats, true).unwrap();
        let base = encoded_width(table.schema(), false);
        assert_eq!(enc.data.shape()[1], base + 5);
        assert_eq!(enc.data.at2(0, base), 1.0);
        assert_eq!(enc.data.at2(0, base + 1), 0.0);
    }
}
