//! GP-conditioned prediction and missing-value imputation.
//!
//! The latent predictive distribution at query covariates x* conditions the
//! additive GP prior on the cached training encodings: μ* = K_{*X} Σ⁻¹ μ̄ and
//! σ*² = k(x*,x*) − K_{*X}Σ⁻¹K_{X*} + K_{*X}Σ⁻¹WΣ⁻¹K_{X*} + σ²_z, evaluated
//! with Cholesky solves. Decoded predictions average each head's sufficient
//! statistics over latent samples; per-cell predictive NLL is the negative
//! log of the sample-averaged likelihood.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::data::{CovValue, CovariateRow, DatasetTable};
use crate::kernel;
use crate::likelihood::{log_prob, Likelihood, LikelihoodParams};
use crate::model::{derive_seed, ModelError, TrainedModel};
use crate::nn;
use crate::tensor::{raw, Tensor};

/// Per-dimension latent predictive means and variances for query rows.
#[derive(Debug, Clone)]
pub struct PredictiveLatent {
    pub mean: Tensor,
    pub var: Tensor,
}

/// Which latent distribution imputation draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatentSource {
    /// The row's own amortized posterior from its observed cells.
    Amortized,
    /// The GP predictive from the row's covariates and the training cache.
    GpConditioned,
    /// Amortized when the row has observed cells, GP otherwise.
    Auto,
}

#[derive(Debug, Clone)]
pub struct PredictOptions {
    pub samples: usize,
    pub latent: LatentSource,
    pub seed: u64,
}

impl Default for PredictOptions {
    fn default() -> Self {
        PredictOptions { samples: 50, latent: LatentSource::Auto, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellNll {
    pub row: usize,
    pub feature: usize,
    pub nll: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilledCell {
    pub row: usize,
    pub feature: usize,
    pub value: f64,
    /// Mixture predictive variance, for numeric likelihoods.
    pub predictive_var: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ImputeResult {
    /// The query table with every missing cell filled by a point estimate.
    pub filled: DatasetTable,
    /// Predictive NLL of every originally observed cell.
    pub observed_nll: Vec<CellNll>,
    pub filled_cells: Vec<FilledCell>,
    /// Latent source actually used per row.
    pub latent_used: Vec<LatentSource>,
}

/// Maps a query table's covariates into the model's frozen level space.
///
/// Unseen levels of non-strict covariates get fresh indices (their
/// categorical kernels then score 0 against all training rows); strict
/// covariates reject unseen levels.
pub fn remap_covariates(
    trained: &TrainedModel,
    table: &DatasetTable,
) -> Result<Vec<CovariateRow>, ModelError> {
    let schema = &trained.model.schema;
    let model_levels = &trained.model.covariate_levels;
    let mut fresh: Vec<usize> = model_levels.iter().map(|l| l.len()).collect();
    let mut fresh_maps: Vec<Vec<(u32, u32)>> = vec![Vec::new(); model_levels.len()];
    let mut out = Vec::with_capacity(table.n_rows());
    for n in 0..table.n_rows() {
        let mut row = Vec::with_capacity(schema.covariates.len());
        for (q, spec) in schema.covariates.iter().enumerate() {
            let cell = table.covariate_row(n)[q];
            match (cell, spec.kind) {
                (CovValue::Continuous(v), _) => row.push(CovValue::Continuous(v)),
                (CovValue::Level(local), _) => {
                    let label = &table.covariate_levels()[q][local as usize];
                    match model_levels[q].iter().position(|l| l == label) {
                        Some(idx) => row.push(CovValue::Level(idx as u32)),
                        None if spec.strict => {
                            return Err(ModelError::UnknownInstance(format!(
                                "covariate {} level {label:?} was never seen in training",
                                spec.name
                            )))
                        }
                        None => {
                            let mapped = match fresh_maps[q].iter().find(|(l, _)| *l == local) {
                                Some((_, m)) => *m,
                                None => {
                                    let m = fresh[q] as u32;
                                    fresh[q] += 1;
                                    fresh_maps[q].push((local, m));
                                    m
                                }
                            };
                            row.push(CovValue::Level(mapped));
                        }
                    }
                }
            }
        }
        out.push(row);
    }
    Ok(out)
}

/// Latent predictive distribution at query covariate rows (already mapped
/// into the model's level space).
pub fn latent_predict(
    trained: &TrainedModel,
    query: &[CovariateRow],
) -> Result<PredictiveLatent, ModelError> {
    let model = &trained.model;
    let cache = &trained.cache;
    let n = cache.covariates.len();
    let q_count = query.len();
    let latent = model.latent_dim();
    let mut mean = Tensor::zeros(&[q_count, latent]);
    let mut var = Tensor::zeros(&[q_count, latent]);
    for l in 0..latent {
        let sigma =
            kernel::prior_covariance_value(&model.params, &model.structure, l, &cache.covariates)?;
        let chol = raw::cholesky_lower(sigma.values(), n)?;
        let mu_bar: Vec<f64> = (0..n).map(|i| cache.mean.at2(i, l)).collect();
        let w_bar: Vec<f64> = (0..n).map(|i| cache.var.at2(i, l)).collect();

        // Cross-covariance K_{X*} between training rows and queries.
        let k_xq = kernel::cross_covariance_value(
            &model.params,
            &model.structure,
            l,
            &cache.covariates,
            query,
        )?;
        // μ* = K_{*X} Σ⁻¹ μ̄ via two triangular solves.
        let half = raw::tri_solve(&chol, n, &mu_bar, 1, true, false)?;
        let alpha = raw::tri_solve(&chol, n, &half, 1, true, true)?;
        let mu_star = raw::matmul(&raw::transpose(k_xq.values(), n, q_count), q_count, n, &alpha, 1);

        // Variance: k** − colsum(V²) + Σ_n wₙ S²ₙ + σ²_z with V = L⁻¹K_{X*},
        // S = Σ⁻¹K_{X*}.
        let k_star_star = kernel::prior_variance_at_point(&model.params, &model.structure, l);
        let noise = kernel::noise_variance_value(&model.params, l);
        let v = raw::tri_solve(&chol, n, k_xq.values(), q_count, true, false)?;
        let s = raw::tri_solve(&chol, n, &v, q_count, true, true)?;
        for qi in 0..q_count {
            let mut explained = 0.0;
            let mut reinflated = 0.0;
            for i in 0..n {
                explained += v[i * q_count + qi] * v[i * q_count + qi];
                reinflated += w_bar[i] * s[i * q_count + qi] * s[i * q_count + qi];
            }
            let value = k_star_star - explained + reinflated + noise;
            if !value.is_finite() {
                return Err(ModelError::Invalid("non-finite predictive variance".into()));
            }
            mean.set2(qi, l, mu_star[qi]);
            var.set2(qi, l, value);
        }
    }
    Ok(PredictiveLatent { mean, var })
}

struct CellAccumulator {
    kind_is_discrete: bool,
    sum_mean: f64,
    sum_second_moment: f64,
    probs: Vec<f64>,
    log_probs_at_truth: Vec<f64>,
}

impl CellAccumulator {
    fn new(kind: &Likelihood) -> Self {
        let r = kind.cardinality().unwrap_or(0);
        CellAccumulator {
            kind_is_discrete: kind.is_discrete_level(),
            sum_mean: 0.0,
            sum_second_moment: 0.0,
            probs: vec![0.0; r],
            log_probs_at_truth: Vec::new(),
        }
    }

    fn add(&mut self, params: &LikelihoodParams, truth: Option<f64>) -> Result<(), ModelError> {
        if self.kind_is_discrete {
            for (acc, p) in
                self.probs.iter_mut().zip(params.class_probabilities().expect("discrete"))
            {
                *acc += p;
            }
        } else {
            let mean = params.mean_value().expect("numeric likelihood");
            let var = params.variance_value().expect("numeric likelihood");
            self.sum_mean += mean;
            self.sum_second_moment += var + mean * mean;
        }
        if let Some(y) = truth {
            self.log_probs_at_truth.push(log_prob(y, params)?);
        }
        Ok(())
    }

    /// Point estimate from the sample-averaged sufficient statistics.
    fn point_estimate(&self, samples: usize) -> (f64, Option<f64>) {
        if self.kind_is_discrete {
            let mut best = 0usize;
            for (k, p) in self.probs.iter().enumerate() {
                if *p > self.probs[best] {
                    best = k;
                }
            }
            (best as f64, None)
        } else {
            let mean = self.sum_mean / samples as f64;
            let second = self.sum_second_moment / samples as f64;
            (mean, Some((second - mean * mean).max(0.0)))
        }
    }

    /// −log of the sample-averaged likelihood at the truth.
    fn nll(&self) -> f64 {
        let n = self.log_probs_at_truth.len() as f64;
        let m = self
            .log_probs_at_truth
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let lse = m + self
            .log_probs_at_truth
            .iter()
            .map(|lp| (lp - m).exp())
            .sum::<f64>()
            .ln();
        -(lse - n.ln())
    }
}

fn latent_distribution_for(
    trained: &TrainedModel,
    table: &DatasetTable,
    opts: &PredictOptions,
) -> Result<(Tensor, Tensor, Vec<LatentSource>), ModelError> {
    let n = table.n_rows();
    let latent = trained.model.latent_dim();
    let sources: Vec<LatentSource> = (0..n)
        .map(|row| match opts.latent {
            LatentSource::Amortized => LatentSource::Amortized,
            LatentSource::GpConditioned => LatentSource::GpConditioned,
            LatentSource::Auto => {
                if (0..table.n_features()).any(|d| table.is_observed(row, d)) {
                    LatentSource::Amortized
                } else {
                    LatentSource::GpConditioned
                }
            }
        })
        .collect();

    let mut mean = Tensor::zeros(&[n, latent]);
    let mut var = Tensor::zeros(&[n, latent]);
    let needs_amortized = sources.iter().any(|s| *s == LatentSource::Amortized);
    let needs_gp = sources.iter().any(|s| *s == LatentSource::GpConditioned);
    let amortized = if needs_amortized { Some(trained.model.encode(table)?) } else { None };
    let gp = if needs_gp {
        let rows = remap_covariates(trained, table)?;
        Some(latent_predict(trained, &rows)?)
    } else {
        None
    };
    for row in 0..n {
        let (m_src, v_src) = match sources[row] {
            LatentSource::Amortized => {
                let a = amortized.as_ref().expect("amortized computed");
                (&a.mean, &a.var)
            }
            _ => {
                let g = gp.as_ref().expect("gp computed");
                (&g.mean, &g.var)
            }
        };
        for l in 0..latent {
            mean.set2(row, l, m_src.at2(row, l));
            var.set2(row, l, v_src.at2(row, l));
        }
    }
    Ok((mean, var, sources))
}

/// Fills missing cells of a table and reports per-cell predictive NLL for
/// the observed ones. Observed cells are never modified. Deterministic under
/// `opts.seed` and the sample count.
pub fn impute(
    trained: &TrainedModel,
    table: &DatasetTable,
    opts: &PredictOptions,
) -> Result<ImputeResult, ModelError> {
    let truths: Vec<Vec<Option<f64>>> = (0..table.n_rows())
        .map(|n| (0..table.n_features()).map(|d| table.value(n, d)).collect())
        .collect();
    let (accs, sources) = accumulate_predictions(trained, table, &truths, opts)?;

    let mut filled = table.clone();
    let mut observed_nll = Vec::new();
    let mut filled_cells = Vec::new();
    for n in 0..table.n_rows() {
        for d in 0..table.n_features() {
            let acc = &accs[n][d];
            if table.is_observed(n, d) {
                observed_nll.push(CellNll { row: n, feature: d, nll: acc.nll() });
            } else {
                let (value, predictive_var) = acc.point_estimate(opts.samples);
                filled.fill_cell(n, d, value);
                filled_cells.push(FilledCell { row: n, feature: d, value, predictive_var });
            }
        }
    }
    Ok(ImputeResult { filled, observed_nll, filled_cells, latent_used: sources })
}

/// Predictive NLL at arbitrary target cells whose ground truth is known to
/// the caller (evaluation of injected missingness).
pub fn predictive_cell_nll(
    trained: &TrainedModel,
    table: &DatasetTable,
    cells: &[(usize, usize, f64)],
    opts: &PredictOptions,
) -> Result<Vec<f64>, ModelError> {
    let mut truths: Vec<Vec<Option<f64>>> =
        (0..table.n_rows()).map(|_| vec![None; table.n_features()]).collect();
    for &(row, feature, value) in cells {
        truths[row][feature] = Some(value);
    }
    let (accs, _) = accumulate_predictions(trained, table, &truths, opts)?;
    Ok(cells.iter().map(|&(row, feature, _)| accs[row][feature].nll()).collect())
}

fn accumulate_predictions(
    trained: &TrainedModel,
    table: &DatasetTable,
    truths: &[Vec<Option<f64>>],
    opts: &PredictOptions,
) -> Result<(Vec<Vec<CellAccumulator>>, Vec<LatentSource>), ModelError> {
    let model = &trained.model;
    let n = table.n_rows();
    let latent = model.latent_dim();
    let (mean, var, sources) = latent_distribution_for(trained, table, opts)?;
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(opts.seed, 7));

    let mut accs: Vec<Vec<CellAccumulator>> = (0..n)
        .map(|_| model.schema.features.iter().map(|f| CellAccumulator::new(&f.likelihood)).collect())
        .collect();
    for _ in 0..opts.samples {
        let eps = crate::model::standard_normal(n, latent, &mut rng);
        let mut z = Tensor::zeros(&[n, latent]);
        for i in 0..n {
            for l in 0..latent {
                z.set2(i, l, mean.at2(i, l) + var.at2(i, l).max(0.0).sqrt() * eps.at2(i, l));
            }
        }
        let params = nn::decode_rows(&model.params, &model.schema, &model.config.net, &z)?;
        for i in 0..n {
            for d in 0..table.n_features() {
                accs[i][d].add(&params[i][d], truths[i][d])?;
            }
        }
    }
    Ok((accs, sources))
}

/// Predicts completely unobserved rows from covariates alone, conditioning
/// on the training cache (instance-specific kernel components carry the
/// instance identity, so disclosed visits inform the prediction).
///
/// Any observed feature cells of `query` are treated as ground truth for NLL
/// reporting, never as inference inputs.
pub fn predict_future(
    trained: &TrainedModel,
    query: &DatasetTable,
    opts: &PredictOptions,
) -> Result<ImputeResult, ModelError> {
    let gp_opts = PredictOptions { latent: LatentSource::GpConditioned, ..opts.clone() };
    let truths: Vec<Vec<Option<f64>>> = (0..query.n_rows())
        .map(|n| (0..query.n_features()).map(|d| query.value(n, d)).collect())
        .collect();
    let (accs, sources) = accumulate_predictions(trained, query, &truths, &gp_opts)?;

    let mut filled = query.clone();
    let mut observed_nll = Vec::new();
    let mut filled_cells = Vec::new();
    for n in 0..query.n_rows() {
        for d in 0..query.n_features() {
            let acc = &accs[n][d];
            if query.is_observed(n, d) {
                observed_nll.push(CellNll { row: n, feature: d, nll: acc.nll() });
            }
            let (value, predictive_var) = acc.point_estimate(gp_opts.samples);
            if !query.is_observed(n, d) {
                filled.fill_cell(n, d, value);
            }
            filled_cells.push(FilledCell { row: n, feature: d, value, predictive_var });
        }
    }
    Ok(ImputeResult { filled, observed_nll, filled_cells, latent_used: sources })
}
