//! Longitudinal splitting and synthetic missingness.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::{DataError, DatasetTable};

#[derive(Debug, Clone)]
pub struct SplitTables {
    pub train: DatasetTable,
    pub validation: DatasetTable,
    pub test: DatasetTable,
}

/// Splits by instance, never by row. Each validation/test instance discloses
/// `disclosed` randomly chosen rows to the training table; its remaining rows
/// become held-out prediction targets. Deterministic under `seed`.
pub fn split_longitudinal(
    table: &DatasetTable,
    fractions: [f64; 3],
    seed: u64,
    disclosed: usize,
) -> Result<SplitTables, DataError> {
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 || fractions.iter().any(|f| *f < 0.0) {
        return Err(DataError::DomainViolation(format!(
            "fractions must be non-negative and sum to 1, got {fractions:?}"
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut instances = table.present_instances();
    instances.shuffle(&mut rng);
    let p = instances.len();
    let n_train = (p as f64 * fractions[0]).round() as usize;
    let n_val = ((p as f64 * fractions[1]).round() as usize).min(p - n_train);
    let train_instances = &instances[..n_train];
    let val_instances = &instances[n_train..n_train + n_val];
    let test_instances = &instances[n_train + n_val..];

    let mut train_rows: Vec<usize> = Vec::new();
    for &p in train_instances {
        train_rows.extend(table.rows_of_instance(p));
    }
    let mut val_rows: Vec<usize> = Vec::new();
    let mut test_rows: Vec<usize> = Vec::new();
    for (held_rows, held_instances) in
        [(&mut val_rows, val_instances), (&mut test_rows, test_instances)]
    {
        for &p in held_instances {
            let mut rows = table.rows_of_instance(p);
            if disclosed > 0 {
                if rows.len() <= disclosed {
                    return Err(DataError::TooFewVisits {
                        instance: table.instance_label(p).to_string(),
                        rows: rows.len(),
                        disclosed,
                    });
                }
                rows.shuffle(&mut rng);
                let (to_train, held) = rows.split_at(disclosed);
                let mut to_train = to_train.to_vec();
                to_train.sort_unstable();
                train_rows.extend(to_train);
                let mut held = held.to_vec();
                held.sort_unstable();
                held_rows.extend(held);
            } else {
                held_rows.extend(rows);
            }
        }
    }
    train_rows.sort_unstable();
    val_rows.sort_unstable();
    test_rows.sort_unstable();
    Ok(SplitTables {
        train: table.subset(&train_rows),
        validation: table.subset(&val_rows),
        test: table.subset(&test_rows),
    })
}

/// A cell removed by [`inject_mcar`], with its original value.
#[derive(Debug, Clone, PartialEq)]
pub struct HeldOutCell {
    pub row: usize,
    pub feature: usize,
    pub value: f64,
}

/// Removes exactly ⌊ratio · observed-cells⌋ observed cells completely at
/// random, returning the holey table and the ground truth for evaluation.
pub fn inject_mcar(
    table: &DatasetTable,
    ratio: f64,
    seed: u64,
) -> Result<(DatasetTable, Vec<HeldOutCell>), DataError> {
    if !(0.0..1.0).contains(&ratio) || ratio <= 0.0 {
        return Err(DataError::DomainViolation(format!(
            "missingness ratio must lie strictly between 0 and 1, got {ratio}"
        )));
    }
    let mut observed: Vec<(usize, usize)> = Vec::new();
    for n in 0..table.n_rows() {
        for d in 0..table.n_features() {
            if table.is_observed(n, d) {
                observed.push((n, d));
            }
        }
    }
    let k = (ratio * observed.len() as f64).floor() as usize;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    // Partial Fisher-Yates: the first k entries are a uniform sample.
    let len = observed.len();
    for i in 0..k {
        let j = rng.gen_range(i..len);
        observed.swap(i, j);
    }
    let mut holes: Vec<HeldOutCell> = observed[..k]
        .iter()
        .map(|&(row, feature)| HeldOutCell {
            row,
            feature,
            value: table.raw_value(row, feature),
        })
        .collect();
    holes.sort_by_key(|h| (h.row, h.feature));
    let mut holey = table.clone();
    for h in &holes {
        holey.clear_cell(h.row, h.feature);
    }
    Ok((holey, holes))
}
