//! Additive Gaussian-process covariance structure over auxiliary covariates.
//!
//! Each latent dimension carries the same additive structure — a sum of
//! components, each a product of squared-exponential and categorical factors
//! over a small covariate subset — with its own hyperparameters. Magnitudes
//! and lengthscales are log-parameterized; an interaction component holds one
//! trainable magnitude and its factors' magnitudes are pinned to 1.
//!
//! The component whose factors include the instance-id covariate (as part of
//! an interaction) is the individual-specific random component; it supplies
//! the block-diagonal part of the prior covariance that the mini-batch KL
//! bound exploits.

mod parse;

pub use parse::parse_structure;

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{CovValue, CovariateKind, CovariateRow, Schema};
use crate::params::{Lifted, ParamStore};
use crate::tensor::{Tape, Tensor, TensorError, Var};

/// Lower bound on the latent noise variance.
pub const NOISE_VARIANCE_FLOOR: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("unknown covariate {0}")]
    UnknownCovariate(String),
    #[error("kernel structure parse error at {token:?}: {detail}")]
    Parse { token: String, detail: String },
    #[error("invalid kernel structure: {0}")]
    Invalid(String),
    #[error("rows are not sorted by instance")]
    NotSorted,
    #[error("kernel structure has no individual-specific (id x time) interaction component")]
    MissingIndividualComponent,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FactorKind {
    SquaredExponential,
    Categorical,
}

/// One multiplicative factor of a component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    pub kind: FactorKind,
    /// Covariate index into the schema.
    pub covariate: usize,
    pub name: String,
}

/// An additive covariance component: the product of its factors' kernels
/// under a single trainable magnitude.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelComponent {
    pub factors: Vec<Factor>,
    /// True for the instance×time interaction whose block-diagonal covariance
    /// the mini-batch bound separates out.
    pub individual: bool,
}

impl KernelComponent {
    pub fn continuous_factor_indices(&self) -> Vec<usize> {
        self.factors
            .iter()
            .enumerate()
            .filter(|(_, f)| f.kind == FactorKind::SquaredExponential)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Shared additive structure applied to every latent dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelStructure {
    pub components: Vec<KernelComponent>,
}

impl KernelStructure {
    pub fn individual_index(&self) -> Option<usize> {
        self.components.iter().position(|c| c.individual)
    }

    /// Components of the low-rank part (everything but the individual one).
    pub fn shared_indices(&self) -> Vec<usize> {
        (0..self.components.len())
            .filter(|i| !self.components[*i].individual)
            .collect()
    }

    /// Covariate indices referenced by the non-individual components.
    pub fn shared_covariates(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for i in self.shared_indices() {
            for f in &self.components[i].factors {
                if !out.contains(&f.covariate) {
                    out.push(f.covariate);
                }
            }
        }
        out.sort_unstable();
        out
    }
}

// ---- parameter naming and initialization ----

pub fn mag_name(l: usize, r: usize) -> String {
    format!("gp.{l}.{r}.mag")
}

pub fn ls_name(l: usize, r: usize, factor: usize) -> String {
    format!("gp.{l}.{r}.ls.{factor}")
}

pub fn noise_name(l: usize) -> String {
    format!("gp.{l}.noise")
}

pub fn inducing_name(covariate: usize) -> String {
    format!("ind.{covariate}")
}

/// Span (max − min) of each continuous covariate over the given rows; 1.0
/// for categorical covariates and degenerate spans.
pub fn covariate_spans(schema: &Schema, rows: &[CovariateRow]) -> Vec<f64> {
    schema
        .covariates
        .iter()
        .enumerate()
        .map(|(q, spec)| {
            if spec.kind != CovariateKind::Continuous {
                return 1.0;
            }
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for row in rows {
                let v = row[q].continuous();
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if hi > lo {
                hi - lo
            } else {
                1.0
            }
        })
        .collect()
}

/// Registers per-dimension hyperparameters: log-lengthscale = log(span/2),
/// log-magnitude = log(1/R) so components start with comparable shares of
/// unit prior variance, and a raw noise parameter placing the initial latent
/// noise variance at `init_noise`.
pub fn init_gp_params(
    store: &mut ParamStore,
    structure: &KernelStructure,
    latent_dim: usize,
    spans: &[f64],
    init_noise: f64,
) {
    let r_components = structure.components.len().max(1) as f64;
    let raw_noise = inverse_softplus((init_noise - NOISE_VARIANCE_FLOOR).max(1e-8));
    for l in 0..latent_dim {
        for (r, comp) in structure.components.iter().enumerate() {
            store.insert(mag_name(l, r), Tensor::scalar((1.0 / r_components).ln()));
            for (fi, factor) in comp.factors.iter().enumerate() {
                if factor.kind == FactorKind::SquaredExponential {
                    let span = spans[factor.covariate];
                    store.insert(ls_name(l, r, fi), Tensor::scalar((span / 2.0).ln()));
                }
            }
        }
        store.insert(noise_name(l), Tensor::scalar(raw_noise));
    }
}

/// Inverse of softplus: log(e^y − 1), stable for small and large y.
pub fn inverse_softplus(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// Tape handles for one latent dimension's kernel hyperparameters.
pub struct DimKernelVars<'t> {
    pub components: Vec<ComponentVars<'t>>,
    pub noise_raw: Var<'t>,
}

pub struct ComponentVars<'t> {
    pub log_mag: Var<'t>,
    /// Per factor: Some(log lengthscale) for squared-exponential factors.
    pub log_ls: Vec<Option<Var<'t>>>,
}

pub fn lift_dim_vars<'t>(
    lifted: &Lifted<'t>,
    structure: &KernelStructure,
    l: usize,
) -> DimKernelVars<'t> {
    let components = structure
        .components
        .iter()
        .enumerate()
        .map(|(r, comp)| ComponentVars {
            log_mag: lifted.var(&mag_name(l, r)),
            log_ls: comp
                .factors
                .iter()
                .enumerate()
                .map(|(fi, f)| {
                    (f.kind == FactorKind::SquaredExponential).then(|| lifted.var(&ls_name(l, r, fi)))
                })
                .collect(),
        })
        .collect();
    DimKernelVars { components, noise_raw: lifted.var(&noise_name(l)) }
}

/// Latent noise variance σ²_z = floor + softplus(raw).
pub fn noise_variance<'t>(noise_raw: Var<'t>) -> Result<Var<'t>, TensorError> {
    noise_raw.softplus()?.add_scalar(NOISE_VARIANCE_FLOOR)
}

// ---- kernel matrix evaluation ----

/// One side of a kernel matrix: fixed data rows, or the inducing-point set
/// whose continuous coordinates are trainable tape variables.
pub enum Side<'a, 't> {
    Rows(&'a [CovariateRow]),
    Inducing(&'a InducingVars<'t>),
}

impl<'a, 't> Side<'a, 't> {
    fn len(&self) -> usize {
        match self {
            Side::Rows(rows) => rows.len(),
            Side::Inducing(iv) => iv.m,
        }
    }
}

/// Inducing-point coordinates: trainable rows for continuous covariates,
/// fixed levels for categorical ones.
pub struct InducingVars<'t> {
    pub m: usize,
    pub cont: BTreeMap<usize, Var<'t>>,
    pub cat: BTreeMap<usize, Vec<u32>>,
}

/// Covariance matrix of one component between two row sets.
pub fn component_matrix<'t>(
    tape: &'t Tape,
    comp: &KernelComponent,
    vars: &ComponentVars<'t>,
    a: &Side<'_, 't>,
    b: &Side<'_, 't>,
) -> Result<Var<'t>, KernelError> {
    let (na, nb) = (a.len(), b.len());
    // Product of categorical indicator factors is a single constant mask.
    let mut indicator: Option<Tensor> = None;
    // Squared-distance term accumulated across SE factors, scaled per factor
    // by exp(-2·log lengthscale).
    let mut scaled_d2: Option<Var<'t>> = None;

    for (fi, factor) in comp.factors.iter().enumerate() {
        match factor.kind {
            FactorKind::Categorical => {
                let mask = indicator_matrix(factor.covariate, a, b)?;
                indicator = Some(match indicator {
                    None => mask,
                    Some(prev) => {
                        let mut out = prev;
                        for (o, m) in out.values_mut().iter_mut().zip(mask.values()) {
                            *o *= m;
                        }
                        out
                    }
                });
            }
            FactorKind::SquaredExponential => {
                let d2 = squared_distance(tape, factor.covariate, a, b)?;
                let inv_sq_ls = vars.log_ls[fi]
                    .expect("SE factor has a lengthscale")
                    .scale(-2.0)?
                    .exp()?;
                let term = d2.mul(inv_sq_ls)?;
                scaled_d2 = Some(match scaled_d2 {
                    None => term,
                    Some(acc) => acc.add(term)?,
                });
            }
        }
    }

    let magnitude = vars.log_mag.exp()?;
    let mut k = match scaled_d2 {
        Some(acc) => acc.scale(-0.5)?.exp()?.mul(magnitude)?,
        None => tape.constant(Tensor::ones(&[na, nb])).mul(magnitude)?,
    };
    if let Some(ind) = indicator {
        k = k.mul(tape.constant(ind))?;
    }
    Ok(k)
}

fn indicator_matrix(
    covariate: usize,
    a: &Side<'_, '_>,
    b: &Side<'_, '_>,
) -> Result<Tensor, KernelError> {
    let levels_a = side_levels(covariate, a)?;
    let levels_b = side_levels(covariate, b)?;
    let mut out = Tensor::zeros(&[levels_a.len(), levels_b.len()]);
    for (i, la) in levels_a.iter().enumerate() {
        for (j, lb) in levels_b.iter().enumerate() {
            if la == lb {
                out.set2(i, j, 1.0);
            }
        }
    }
    Ok(out)
}

fn side_levels(covariate: usize, side: &Side<'_, '_>) -> Result<Vec<u32>, KernelError> {
    match side {
        Side::Rows(rows) => Ok(rows.iter().map(|r| r[covariate].level()).collect()),
        Side::Inducing(iv) => iv
            .cat
            .get(&covariate)
            .cloned()
            .ok_or_else(|| KernelError::UnknownCovariate(format!("inducing covariate {covariate}"))),
    }
}

fn squared_distance<'t>(
    tape: &'t Tape,
    covariate: usize,
    a: &Side<'_, 't>,
    b: &Side<'_, 't>,
) -> Result<Var<'t>, KernelError> {
    let col = |side: &Side<'_, 't>, as_row: bool| -> Result<Var<'t>, KernelError> {
        match side {
            Side::Rows(rows) => {
                let vals: Vec<f64> = rows.iter().map(|r| r[covariate].continuous()).collect();
                Ok(tape.constant(if as_row { Tensor::row(vals) } else { Tensor::column(vals) }))
            }
            Side::Inducing(iv) => {
                let v = *iv.cont.get(&covariate).ok_or_else(|| {
                    KernelError::UnknownCovariate(format!("inducing covariate {covariate}"))
                })?;
                // Stored as 1×M rows; transpose for the column orientation.
                if as_row {
                    Ok(v)
                } else {
                    Ok(v.transpose()?)
                }
            }
        }
    };
    let ca = col(a, false)?;
    let rb = col(b, true)?;
    Ok(ca.sub(rb)?.square()?)
}

/// Full prior covariance Σ_l = Σ_r K^(r) + σ²_z·I over `rows`.
pub fn prior_covariance<'t>(
    tape: &'t Tape,
    structure: &KernelStructure,
    vars: &DimKernelVars<'t>,
    rows: &[CovariateRow],
) -> Result<Var<'t>, KernelError> {
    let n = rows.len();
    let side = Side::Rows(rows);
    let mut total: Option<Var<'t>> = None;
    for (r, comp) in structure.components.iter().enumerate() {
        let k = component_matrix(tape, comp, &vars.components[r], &side, &side)?;
        total = Some(match total {
            None => k,
            Some(acc) => acc.add(k)?,
        });
    }
    let noise_diag = tape.constant(Tensor::eye(n)).mul(noise_variance(vars.noise_raw)?)?;
    Ok(match total {
        None => noise_diag,
        Some(acc) => acc.add(noise_diag)?,
    })
}

/// Sum of the non-individual components between two row sets (the low-rank
/// eligible part of the prior).
pub fn low_rank_part<'t>(
    tape: &'t Tape,
    structure: &KernelStructure,
    vars: &DimKernelVars<'t>,
    a: &Side<'_, 't>,
    b: &Side<'_, 't>,
) -> Result<Var<'t>, KernelError> {
    let mut total: Option<Var<'t>> = None;
    for r in structure.shared_indices() {
        let k = component_matrix(tape, &structure.components[r], &vars.components[r], a, b)?;
        total = Some(match total {
            None => k,
            Some(acc) => acc.add(k)?,
        });
    }
    total.ok_or_else(|| KernelError::Invalid("no non-individual components".into()))
}

/// One instance's block Σ̂_p = K^(ind) over the block rows + σ²_z·I.
pub fn instance_block<'t>(
    tape: &'t Tape,
    structure: &KernelStructure,
    vars: &DimKernelVars<'t>,
    rows: &[CovariateRow],
) -> Result<Var<'t>, KernelError> {
    let noise_diag =
        tape.constant(Tensor::eye(rows.len())).mul(noise_variance(vars.noise_raw)?)?;
    match structure.individual_index() {
        None => Ok(noise_diag),
        Some(r) => {
            let side = Side::Rows(rows);
            let k =
                component_matrix(tape, &structure.components[r], &vars.components[r], &side, &side)?;
            Ok(k.add(noise_diag)?)
        }
    }
}

/// Splits the prior covariance over instance-sorted rows into the low-rank
/// part and the per-instance blocks; `blocks` gives (start, end) row ranges.
pub fn split_covariance<'t>(
    tape: &'t Tape,
    structure: &KernelStructure,
    vars: &DimKernelVars<'t>,
    rows: &[CovariateRow],
    blocks: &[(usize, usize)],
) -> Result<(Var<'t>, Vec<Var<'t>>), KernelError> {
    let k_a = low_rank_part(tape, structure, vars, &Side::Rows(rows), &Side::Rows(rows))?;
    let mut per_instance = Vec::with_capacity(blocks.len());
    for &(start, end) in blocks {
        per_instance.push(instance_block(tape, structure, vars, &rows[start..end])?);
    }
    Ok((k_a, per_instance))
}

/// Prior variance k(x, x) of one latent dimension: the sum of component
/// magnitudes (every factor evaluates to 1 at zero distance).
pub fn prior_variance_at_point(store: &ParamStore, structure: &KernelStructure, l: usize) -> f64 {
    (0..structure.components.len())
        .map(|r| store.get(&mag_name(l, r)).values()[0].exp())
        .sum()
}

/// Latent noise variance of dimension `l` from stored parameters.
pub fn noise_variance_value(store: &ParamStore, l: usize) -> f64 {
    NOISE_VARIANCE_FLOOR + crate::tensor::raw::softplus(store.get(&noise_name(l)).values()[0])
}

/// Value-mode prior covariance from stored hyperparameters.
pub fn prior_covariance_value(
    store: &ParamStore,
    structure: &KernelStructure,
    l: usize,
    rows: &[CovariateRow],
) -> Result<Tensor, KernelError> {
    let tape = Tape::new();
    let lifted = store.lift(&tape);
    let vars = lift_dim_vars(&lifted, structure, l);
    Ok(prior_covariance(&tape, structure, &vars, rows)?.to_tensor())
}

/// Value-mode cross covariance (all components) between two row sets.
pub fn cross_covariance_value(
    store: &ParamStore,
    structure: &KernelStructure,
    l: usize,
    rows_a: &[CovariateRow],
    rows_b: &[CovariateRow],
) -> Result<Tensor, KernelError> {
    let tape = Tape::new();
    let lifted = store.lift(&tape);
    let vars = lift_dim_vars(&lifted, structure, l);
    let a = Side::Rows(rows_a);
    let b = Side::Rows(rows_b);
    let mut total: Option<Var<'_>> = None;
    for (r, comp) in structure.components.iter().enumerate() {
        let k = component_matrix(&tape, comp, &vars.components[r], &a, &b)?;
        total = Some(match total {
            None => k,
            Some(acc) => acc.add(k)?,
        });
    }
    Ok(total.expect("at least one component").to_tensor())
}

// ---- inducing points ----

/// Inducing-point set over the covariates of the low-rank part. Continuous
/// coordinates are trainable (stored in the parameter store); categorical
/// coordinates are fixed at selection time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InducingPoints {
    pub m: usize,
    pub cont_covariates: Vec<usize>,
    pub cat: BTreeMap<usize, Vec<u32>>,
}

impl InducingPoints {
    /// Greedy farthest-point selection over the distinct covariate
    /// configurations of the training rows (k-means++–style seeding),
    /// restricted to the low-rank part's covariates. Registers one trainable
    /// 1×M row per continuous covariate.
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        structure: &KernelStructure,
        schema: &Schema,
        rows: &[CovariateRow],
        m_requested: usize,
        rng: &mut R,
    ) -> Result<InducingPoints, KernelError> {
        let covs = structure.shared_covariates();
        if covs.is_empty() {
            return Err(KernelError::Invalid(
                "low-rank part references no covariates; cannot place inducing points".into(),
            ));
        }
        let spans = covariate_spans(schema, rows);

        // Distinct configurations, first-appearance order.
        let mut configs: Vec<Vec<CovValue>> = Vec::new();
        for row in rows {
            let cfg: Vec<CovValue> = covs.iter().map(|&q| row[q]).collect();
            if !configs.iter().any(|c| c == &cfg) {
                configs.push(cfg);
            }
        }
        let m = m_requested.max(1).min(configs.len());

        let dist = |a: &[CovValue], b: &[CovValue]| -> f64 {
            covs.iter()
                .enumerate()
                .map(|(i, &q)| match (a[i], b[i]) {
                    (CovValue::Continuous(x), CovValue::Continuous(y)) => {
                        let d = (x - y) / spans[q];
                        d * d
                    }
                    (CovValue::Level(x), CovValue::Level(y)) => {
                        if x == y {
                            0.0
                        } else {
                            1.0
                        }
                    }
                    _ => 1.0,
                })
                .sum()
        };

        let mut chosen: Vec<usize> = vec![rng.gen_range(0..configs.len())];
        while chosen.len() < m {
            let mut best = 0usize;
            let mut best_d = -1.0;
            for (i, cfg) in configs.iter().enumerate() {
                if chosen.contains(&i) {
                    continue;
                }
                let d = chosen
                    .iter()
                    .map(|&c| dist(cfg, &configs[c]))
                    .fold(f64::INFINITY, f64::min);
                if d > best_d {
                    best_d = d;
                    best = i;
                }
            }
            chosen.push(best);
        }

        let mut cont_covariates = Vec::new();
        let mut cat = BTreeMap::new();
        for (i, &q) in covs.iter().enumerate() {
            match schema.covariates[q].kind {
                CovariateKind::Continuous => {
                    let coords: Vec<f64> =
                        chosen.iter().map(|&c| configs[c][i].continuous()).collect();
                    store.insert(inducing_name(q), Tensor::row(coords));
                    cont_covariates.push(q);
                }
                _ => {
                    let levels: Vec<u32> = chosen.iter().map(|&c| configs[c][i].level()).collect();
                    cat.insert(q, levels);
                }
            }
        }
        Ok(InducingPoints { m, cont_covariates, cat })
    }

    pub fn lift<'t>(&self, lifted: &Lifted<'t>) -> InducingVars<'t> {
        let mut cont = BTreeMap::new();
        for &q in &self.cont_covariates {
            cont.insert(q, lifted.var(&inducing_name(q)));
        }
        InducingVars { m: self.m, cont, cat: self.cat.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{CovariateSpec, FeatureSpec};
    use crate::likelihood::Likelihood;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn test_schema() -> Schema {
        Schema::new(
            vec![FeatureSpec::new("y", Likelihood::Gaussian { bounded: false })],
            vec![
                CovariateSpec::instance_id("id"),
                CovariateSpec::time_axis("age"),
                CovariateSpec::categorical("sex"),
            ],
        )
        .unwrap()
    }

    fn row(id: u32, age: f64, sex: u32) -> CovariateRow {
        vec![CovValue::Level(id), CovValue::Continuous(age), CovValue::Level(sex)]
    }

    fn store_for(structure: &KernelStructure) -> ParamStore {
        let mut store = ParamStore::new();
        init_gp_params(&mut store, structure, 1, &[1.0, 8.0, 1.0], 0.25);
        store
    }

    fn se_structure() -> KernelStructure {
        parse_structure("se(age)", &test_schema()).unwrap()
    }

    fn full_structure() -> KernelStructure {
        parse_structure("se(age) + ca(id)*se(age) + ca(sex)*se(age)", &test_schema()).unwrap()
    }

    fn eval_component(
        structure: &KernelStructure,
        store: &ParamStore,
        r: usize,
        a: &[CovariateRow],
        b: &[CovariateRow],
    ) -> Tensor {
        let tape = Tape::new();
        let lifted = store.lift(&tape);
        let vars = lift_dim_vars(&lifted, structure, 0);
        component_matrix(&tape, &structure.components[r], &vars.components[r], &Side::Rows(a), &Side::Rows(b))
            .unwrap()
            .to_tensor()
    }

    #[test]
    fn se_kernel_at_zero_distance_is_magnitude() {
        let structure = se_structure();
        let store = store_for(&structure);
        let rows = vec![row(0, 3.0, 0)];
        let k = eval_component(&structure, &store, 0, &rows, &rows);
        let mag = store.get(&mag_name(0, 0)).values()[0].exp();
        assert_relative_eq!(k.values()[0], mag, max_relative = 1e-12);
    }

    #[test]
    fn categorical_kernel_matches_identity_of_levels() {
        let schema = test_schema();
        let structure = parse_structure("ca(id)", &schema).unwrap();
        let store = store_for(&structure);
        let rows = vec![row(3, 0.0, 0), row(5, 0.0, 0), row(3, 9.0, 0)];
        let k = eval_component(&structure, &store, 0, &rows, &rows);
        let mag = store.get(&mag_name(0, 0)).values()[0].exp();
        assert_relative_eq!(k.at2(0, 1), 0.0);
        assert_relative_eq!(k.at2(0, 2), mag, max_relative = 1e-12);
        assert_relative_eq!(k.at2(0, 0), mag, max_relative = 1e-12);
    }

    #[test]
    fn interaction_multiplies_factors() {
        let schema = test_schema();
        let structure = parse_structure("ca(id)*se(age)", &schema).unwrap();
        let store = store_for(&structure);
        let a = 1.0;
        let b = 3.5;
        let rows = vec![row(0, a, 0), row(0, b, 0), row(1, a, 0)];
        let k = eval_component(&structure, &store, 0, &rows, &rows);
        let mag = store.get(&mag_name(0, 0)).values()[0].exp();
        let ls = store.get(&ls_name(0, 0, 1)).values()[0].exp();
        let expect = mag * (-(a - b) * (a - b) / (2.0 * ls * ls)).exp();
        assert_relative_eq!(k.at2(0, 1), expect, max_relative = 1e-12);
        // Different ids: zero regardless of ages.
        assert_relative_eq!(k.at2(0, 2), 0.0);
    }

    #[test]
    fn prior_covariance_single_row_is_magnitude_plus_noise() {
        let structure = se_structure();
        let store = store_for(&structure);
        let rows = vec![row(0, 2.0, 0)];
        let sigma = prior_covariance_value(&store, &structure, 0, &rows).unwrap();
        let mag = store.get(&mag_name(0, 0)).values()[0].exp();
        let noise = noise_variance_value(&store, 0);
        assert_relative_eq!(sigma.values()[0], mag + noise, max_relative = 1e-9);
    }

    #[test]
    fn vanishing_magnitudes_leave_noise_only() {
        let structure = full_structure();
        let mut store = store_for(&structure);
        for r in 0..structure.components.len() {
            store.get_mut(&mag_name(0, r)).values_mut()[0] = -80.0;
        }
        let rows: Vec<_> = (0..4).map(|i| row(i % 2, i as f64, 0)).collect();
        let sigma = prior_covariance_value(&store, &structure, 0, &rows).unwrap();
        let noise = noise_variance_value(&store, 0);
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { noise } else { 0.0 };
                assert_relative_eq!(sigma.at2(i, j), expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn random_prior_covariance_is_positive_definite() {
        let structure = full_structure();
        let mut store = store_for(&structure);
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for name in store.names().to_vec() {
            if name.starts_with("gp.") {
                store.get_mut(&name).values_mut()[0] = rng.gen_range(-1.5..1.5);
            }
        }
        let rows: Vec<_> = (0..20).map(|i| row(i as u32 % 5, (i / 5) as f64, i as u32 % 2)).collect();
        let sigma = prior_covariance_value(&store, &structure, 0, &rows).unwrap();
        // Jacobi eigenvalue check: all eigenvalues strictly positive.
        let eigs = symmetric_eigenvalues(&sigma);
        assert!(eigs.iter().all(|e| *e > 0.0), "eigenvalues {eigs:?}");
    }

    #[test]
    fn kernel_matrices_are_symmetric_and_transpose_consistent() {
        let structure = full_structure();
        let store = store_for(&structure);
        let rows_a: Vec<_> = (0..5).map(|i| row(i as u32 % 2, i as f64, i as u32 % 2)).collect();
        let rows_b: Vec<_> = (0..3).map(|i| row(i as u32, 0.5 + i as f64, 0)).collect();
        for r in 0..structure.components.len() {
            let kab = eval_component(&structure, &store, r, &rows_a, &rows_b);
            let kba = eval_component(&structure, &store, r, &rows_b, &rows_a);
            for i in 0..5 {
                for j in 0..3 {
                    assert_relative_eq!(kab.at2(i, j), kba.at2(j, i), max_relative = 1e-12);
                }
            }
            let kaa = eval_component(&structure, &store, r, &rows_a, &rows_a);
            for i in 0..5 {
                for j in 0..5 {
                    assert_relative_eq!(kaa.at2(i, j), kaa.at2(j, i), max_relative = 1e-12);
                }
            }
        }
    }

    #[test]
    fn se_kernel_is_stationary() {
        let structure = se_structure();
        let store = store_for(&structure);
        let rows: Vec<_> = (0..4).map(|i| row(0, i as f64 * 1.3, 0)).collect();
        let shifted: Vec<_> = (0..4).map(|i| row(0, i as f64 * 1.3 + 17.0, 0)).collect();
        let k0 = eval_component(&structure, &store, 0, &rows, &rows);
        let k1 = eval_component(&structure, &store, 0, &shifted, &shifted);
        for (a, b) in k0.values().iter().zip(k1.values()) {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
    }

    #[test]
    fn split_covariance_reassembles_exactly() {
        let structure = full_structure();
        let store = store_for(&structure);
        // 2 instances x 2 visits, instance-sorted.
        let rows = vec![row(0, 0.0, 0), row(0, 1.0, 0), row(1, 0.0, 1), row(1, 1.0, 1)];
        let blocks = vec![(0usize, 2usize), (2, 4)];
        let tape = Tape::new();
        let lifted = store.lift(&tape);
        let vars = lift_dim_vars(&lifted, &structure, 0);
        let (k_a, per_block) =
            split_covariance(&tape, &structure, &vars, &rows, &blocks).unwrap();
        let sigma = prior_covariance(&tape, &structure, &vars, &rows).unwrap().to_tensor();
        let k_a = k_a.to_tensor();
        // Assemble K^A + blockdiag(blocks) and compare entrywise.
        let mut assembled = k_a.clone();
        for (bi, &(s, e)) in blocks.iter().enumerate() {
            let block = per_block[bi].to_tensor();
            for i in s..e {
                for j in s..e {
                    let v = assembled.at2(i, j) + block.at2(i - s, j - s);
                    assembled.set2(i, j, v);
                }
            }
        }
        for i in 0..4 {
            for j in 0..4 {
                assert_relative_eq!(assembled.at2(i, j), sigma.at2(i, j), epsilon = 1e-12);
            }
        }
        // Off-blocks of the individual part are zero: K^A alone carries them.
        assert_relative_eq!(
            k_a.at2(0, 2),
            sigma.at2(0, 2),
            epsilon = 1e-12
        );
    }

    #[test]
    fn no_individual_component_gives_noise_blocks() {
        let structure = se_structure();
        let store = store_for(&structure);
        let rows = vec![row(0, 0.0, 0), row(0, 1.0, 0)];
        let tape = Tape::new();
        let lifted = store.lift(&tape);
        let vars = lift_dim_vars(&lifted, &structure, 0);
        let block = instance_block(&tape, &structure, &vars, &rows).unwrap().to_tensor();
        let noise = noise_variance_value(&store, 0);
        assert_relative_eq!(block.at2(0, 0), noise, max_relative = 1e-12);
        assert_relative_eq!(block.at2(0, 1), 0.0);
    }

    #[test]
    fn inducing_points_subsample_distinct_configs() {
        let schema = test_schema();
        let structure = parse_structure("se(age) + ca(id)*se(age)", &schema).unwrap();
        let mut store = store_for(&structure);
        let rows: Vec<_> = (0..12).map(|i| row(i as u32 % 3, (i % 4) as f64, 0)).collect();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let ind =
            InducingPoints::init(&mut store, &structure, &schema, &rows, 32, &mut rng).unwrap();
        // Only 4 distinct ages exist, so m clamps to 4.
        assert_eq!(ind.m, 4);
        let coords = store.get(&inducing_name(schema.time_index()));
        let mut ages: Vec<f64> = coords.values().to_vec();
        ages.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(ages, vec![0.0, 1.0, 2.0, 3.0]);
    }

    fn symmetric_eigenvalues(a: &Tensor) -> Vec<f64> {
        // Jacobi rotations; fine for small symmetric matrices in tests.
        let (n, _) = a.dims2().unwrap();
        let mut m: Vec<f64> = a.values().to_vec();
        for _ in 0..100 {
            let mut off = 0.0;
            let mut p = 0;
            let mut q = 1;
            for i in 0..n {
                for j in (i + 1)..n {
                    if m[i * n + j].abs() > off {
                        off = m[i * n + j].abs();
                        p = i;
                        q = j;
                    }
                }
            }
            if off < 1e-14 {
                break;
            }
            let app = m[p * n + p];
            let aqq = m[q * n + q];
            let apq = m[p * n + q];
            let theta = 0.5 * (aqq - app) / apq;
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            for k in 0..n {
                let akp = m[k * n + p];
                let akq = m[k * n + q];
                m[k * n + p] = c * akp - s * akq;
                m[k * n + q] = s * akp + c * akq;
            }
            for k in 0..n {
                let apk = m[p * n + k];
                let aqk = m[q * n + k];
                m[p * n + k] = c * apk - s * aqk;
                m[q * n + k] = s * apk + c * aqk;
            }
        }
        (0..n).map(|i| m[i * n + i]).collect()
    }
}
