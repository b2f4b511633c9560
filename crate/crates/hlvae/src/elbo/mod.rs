//! Evidence lower bound assembly.
//!
//! The objective is a masked reconstruction expectation (single-sample Monte
//! Carlo through the reparameterization) minus the KL divergence from the
//! amortized posterior to the additive GP prior. The KL term is available in
//! two forms:
//!
//! * **exact** — closed form per latent dimension via a Cholesky
//!   factorization of the full N×N prior covariance;
//! * **bound** — an instance-decomposed upper bound built from an
//!   inducing-point augmentation of the low-rank covariance part against the
//!   block-diagonal individual part. For a batch of instances 𝒫 (|𝒫| = P̂ of
//!   P) it evaluates ½·(P/P̂)·Σ_{p∈𝒫} Υ_p − N/2 + KL(N(m,H) ‖ N(0,K_SS)) per
//!   dimension, where Υ_p depends only on instance-local quantities, so the
//!   stochastic estimate is unbiased and the P̂ = P value dominates the exact
//!   KL for every parameter setting.

pub mod train;

pub use train::{train, EpochStats, KlMode, OptimizerKind, TrainConfig, TrainOutcome};

use crate::data::DatasetTable;
use crate::kernel::{
    self, instance_block, low_rank_part, lift_dim_vars, InducingPoints, KernelError,
    KernelStructure, Side,
};
use crate::likelihood::graph::log_prob_column;
use crate::likelihood::LikelihoodParams;
use crate::model::{variational_chol_name, variational_mean_name, Model, ModelError};
use crate::nn::{decode_columns, decoder_trunk, encoder_forward, reparameterize, LatentPosterior};
use crate::params::{Lifted, ParamStore};
use crate::tensor::{raw, Tape, Tensor, TensorError, Var};

/// Closed-form KL from a diagonal posterior slice to N(0, Σ) for one latent
/// dimension: ½[log|Σ| − Σₙ log wₙ + tr(Σ⁻¹W) + μ̄ᵀΣ⁻¹μ̄ − N].
fn exact_kl_dim<'t>(
    tape: &'t Tape,
    sigma: Var<'t>,
    mu: Var<'t>,
    w: Var<'t>,
) -> Result<Var<'t>, TensorError> {
    let n = mu.value().dims2()?.0;
    let l = sigma.cholesky()?;
    let log_det = l.diag_part()?.log()?.sum()?.scale(2.0)?;
    let sum_log_w = w.log()?.sum()?;
    let v = l.tri_solve(tape.constant(Tensor::eye(n)), true, false)?;
    let precision_diag = v.square()?.sum_axis(0)?;
    let trace = precision_diag.mul(w.transpose()?)?.sum()?;
    let alpha = l.tri_solve(mu, true, false)?;
    let mahalanobis = alpha.square()?.sum()?;
    log_det
        .sub(sum_log_w)?
        .add(trace)?
        .add(mahalanobis)?
        .add_scalar(-(n as f64))?
        .scale(0.5)
}

/// Exact KL across all latent dimensions from prior covariances built on the
/// given covariate rows.
pub fn exact_kl_graph<'t>(
    tape: &'t Tape,
    lifted: &Lifted<'t>,
    structure: &KernelStructure,
    latent_dim: usize,
    rows: &[crate::data::CovariateRow],
    mean: Var<'t>,
    var: Var<'t>,
) -> Result<Var<'t>, ModelError> {
    let mut total = tape.constant_scalar(0.0);
    for l in 0..latent_dim {
        let vars = lift_dim_vars(lifted, structure, l);
        let sigma = kernel::prior_covariance(tape, structure, &vars, rows)?;
        let mu_l = mean.slice_axis(1, l, l + 1)?;
        let w_l = var.slice_axis(1, l, l + 1)?;
        total = total.add(exact_kl_dim(tape, sigma, mu_l, w_l)?)?;
    }
    Ok(total)
}

/// Exact KL from explicit prior covariances (one per latent dimension).
pub fn exact_kl(posterior: &LatentPosterior, sigmas: &[Tensor]) -> Result<f64, ModelError> {
    let (n, latent) = posterior.mean.dims2()?;
    if sigmas.len() != latent {
        return Err(ModelError::Invalid(format!(
            "{} covariances for {} latent dimensions",
            sigmas.len(),
            latent
        )));
    }
    let tape = Tape::new();
    let mut total = 0.0;
    for (l, sigma) in sigmas.iter().enumerate() {
        if sigma.dims2()? != (n, n) {
            return Err(ModelError::Invalid(format!("covariance {l} is not {n}x{n}")));
        }
        let sv = tape.constant(sigma.clone());
        let mu = tape.constant(Tensor::column(
            (0..n).map(|i| posterior.mean.at2(i, l)).collect(),
        ));
        let w = tape.constant(Tensor::column(
            (0..n).map(|i| posterior.var.at2(i, l)).collect(),
        ));
        total += exact_kl_dim(&tape, sv, mu, w)?.scalar_value()?;
    }
    Ok(total)
}

/// Assembles the variational Cholesky factor from its raw parameterization:
/// strict lower triangle free, diagonal through softplus.
fn variational_chol<'t>(tape: &'t Tape, t_raw: Var<'t>) -> Result<Var<'t>, TensorError> {
    let m = t_raw.value().dims2()?.0;
    let mut strict = Tensor::zeros(&[m, m]);
    for i in 0..m {
        for j in 0..i {
            strict.set2(i, j, 1.0);
        }
    }
    let strict_part = t_raw.mul(tape.constant(strict))?;
    let diag_part = t_raw.softplus()?.mul(tape.constant(Tensor::eye(m)))?;
    strict_part.add(diag_part)
}

/// The per-instance term of the mini-batch bound.
#[allow(clippy::too_many_arguments)]
fn upsilon<'t>(
    tape: &'t Tape,
    k_ps: Var<'t>,
    k_sp: Var<'t>,
    k_pp: Var<'t>,
    sigma_hat: Var<'t>,
    l_ss: Var<'t>,
    kss_inv: Var<'t>,
    m_var: Var<'t>,
    h: Var<'t>,
    mu_p: Var<'t>,
    w_p: Var<'t>,
) -> Result<Var<'t>, TensorError> {
    let n_p = mu_p.value().dims2()?.0;
    let l_hat = sigma_hat.cholesky()?;
    let a_p = k_ps.matmul(kss_inv)?;
    let resid = mu_p.sub(a_p.matmul(m_var)?)?;
    let quad = l_hat.tri_solve(resid, true, false)?.square()?.sum()?;
    let v = l_hat.tri_solve(tape.constant(Tensor::eye(n_p)), true, false)?;
    let precision_diag = v.square()?.sum_axis(0)?;
    let tr_w = precision_diag.mul(w_p.transpose()?)?.sum()?;
    let va = l_hat.tri_solve(a_p, true, false)?;
    let tr_ah = va.matmul(h)?.mul(va)?.sum()?;
    let sigma_inv = l_hat.tri_solve(v, true, true)?;
    let tr_ka = sigma_inv.mul(k_pp)?.sum()?;
    let c = l_ss.tri_solve(k_sp, true, false)?;
    let tr_q = c.matmul(sigma_inv)?.mul(c)?.sum()?;
    let log_det = l_hat.diag_part()?.log()?.sum()?.scale(2.0)?;
    let sum_log_w = w_p.log()?.sum()?;
    log_det
        .sub(sum_log_w)?
        .add(quad)?
        .add(tr_w)?
        .add(tr_ah)?
        .add(tr_ka)?
        .sub(tr_q)
}

/// Mini-batch KL upper bound over all latent dimensions.
///
/// `rows`/`blocks` describe the batch instances (instance-sorted, each block
/// one complete instance); `p_total`/`n_total` are the full-dataset counts
/// that scale the stochastic estimate.
#[allow(clippy::too_many_arguments)]
pub fn minibatch_bound_graph<'t>(
    tape: &'t Tape,
    lifted: &Lifted<'t>,
    structure: &KernelStructure,
    inducing: &InducingPoints,
    latent_dim: usize,
    rows: &[crate::data::CovariateRow],
    blocks: &[(usize, usize)],
    mean: Var<'t>,
    var: Var<'t>,
    p_total: usize,
    n_total: usize,
) -> Result<Var<'t>, ModelError> {
    let Some(individual) = structure.individual_index() else {
        return Err(ModelError::Kernel(KernelError::MissingIndividualComponent));
    };
    // Each block must hold exactly one instance's rows, and no instance may
    // be split across blocks.
    let id_cov = structure.components[individual]
        .factors
        .iter()
        .find(|f| f.kind == crate::kernel::FactorKind::Categorical)
        .map(|f| f.covariate);
    if let Some(q) = id_cov {
        let mut seen: Vec<u32> = Vec::new();
        for &(start, end) in blocks {
            let level = rows[start][q].level();
            if rows[start..end].iter().any(|r| r[q].level() != level) {
                return Err(ModelError::IncompleteInstance(format!("block at row {start}")));
            }
            if seen.contains(&level) {
                return Err(ModelError::IncompleteInstance(format!(
                    "instance level {level} split across blocks"
                )));
            }
            seen.push(level);
        }
    }
    let p_hat = blocks.len();
    let m = inducing.m;
    let inducing_vars = inducing.lift(lifted);
    let ind_side = Side::Inducing(&inducing_vars);
    let mut total = tape.constant_scalar(0.0);
    for l in 0..latent_dim {
        let vars = lift_dim_vars(lifted, structure, l);
        let k_ss = low_rank_part(tape, structure, &vars, &ind_side, &ind_side)?;
        let l_ss = k_ss.cholesky()?;
        let eye_m = tape.constant(Tensor::eye(m));
        let kss_inv = l_ss.tri_solve(l_ss.tri_solve(eye_m, true, false)?, true, true)?;

        let m_var = lifted.var(&variational_mean_name(l));
        let t = variational_chol(tape, lifted.var(&variational_chol_name(l)))?;
        let h = t.matmul(t.transpose()?)?;

        // KL(N(m, H) || N(0, K_SS))
        let tr_kh = kss_inv.mul(h)?.sum()?;
        let maha = m_var.mul(kss_inv.matmul(m_var)?)?.sum()?;
        let log_det_k = l_ss.diag_part()?.log()?.sum()?.scale(2.0)?;
        let log_det_h = t.diag_part()?.log()?.sum()?.scale(2.0)?;
        let kl_u = tr_kh
            .add(maha)?
            .add_scalar(-(m as f64))?
            .add(log_det_k)?
            .sub(log_det_h)?
            .scale(0.5)?;

        let mut sum_upsilon = tape.constant_scalar(0.0);
        for &(start, end) in blocks {
            let block_rows = &rows[start..end];
            let side = Side::Rows(block_rows);
            let k_ps = low_rank_part(tape, structure, &vars, &side, &ind_side)?;
            let k_sp = low_rank_part(tape, structure, &vars, &ind_side, &side)?;
            let k_pp = low_rank_part(tape, structure, &vars, &side, &side)?;
            let sigma_hat = instance_block(tape, structure, &vars, block_rows)?;
            let mu_p = mean.slice_axis(0, start, end)?.slice_axis(1, l, l + 1)?;
            let w_p = var.slice_axis(0, start, end)?.slice_axis(1, l, l + 1)?;
            let u = upsilon(
                tape, k_ps, k_sp, k_pp, sigma_hat, l_ss, kss_inv, m_var, h, mu_p, w_p,
            )?;
            sum_upsilon = sum_upsilon.add(u)?;
        }
        let bound_l = sum_upsilon
            .scale(0.5 * p_total as f64 / p_hat as f64)?
            .add_scalar(-(n_total as f64) / 2.0)?
            .add(kl_u)?;
        total = total.add(bound_l)?;
    }
    Ok(total)
}

/// Value-mode mini-batch bound from stored parameters.
#[allow(clippy::too_many_arguments)]
pub fn minibatch_kl_bound(
    store: &ParamStore,
    structure: &KernelStructure,
    inducing: &InducingPoints,
    latent_dim: usize,
    rows: &[crate::data::CovariateRow],
    blocks: &[(usize, usize)],
    posterior: &LatentPosterior,
    p_total: usize,
    n_total: usize,
) -> Result<f64, ModelError> {
    let tape = Tape::new();
    let lifted = store.lift(&tape);
    let mean = tape.constant(posterior.mean.clone());
    let var = tape.constant(posterior.var.clone());
    Ok(minibatch_bound_graph(
        &tape, &lifted, structure, inducing, latent_dim, rows, blocks, mean, var, p_total,
        n_total,
    )?
    .scalar_value()?)
}

/// Masked reconstruction sum over the batch through decoded head columns.
pub fn reconstruction_graph<'t>(
    tape: &'t Tape,
    lifted: &Lifted<'t>,
    schema: &crate::data::Schema,
    slot_width: usize,
    z: Var<'t>,
    y_cols: &[Vec<f64>],
    mask_cols: &[Vec<f64>],
) -> Result<Var<'t>, ModelError> {
    let a = decoder_trunk(lifted, z)?;
    let cols = decode_columns(tape, lifted, a, schema, slot_width)?;
    let mut total = tape.constant_scalar(0.0);
    for (d, col) in cols.iter().enumerate() {
        let lp = log_prob_column(tape, col, &y_cols[d], &mask_cols[d])?;
        let masked = lp.mul(tape.constant(Tensor::column(mask_cols[d].clone())))?.sum()?;
        total = total.add(masked)?;
    }
    Ok(total)
}

/// Sum of log-probabilities over observed cells of a table under decoded
/// per-row parameters (single-sample Monte Carlo reconstruction estimate).
pub fn reconstruction_term(
    table: &DatasetTable,
    params: &[Vec<LikelihoodParams>],
) -> Result<f64, ModelError> {
    let mut total = 0.0;
    for n in 0..table.n_rows() {
        for d in 0..table.n_features() {
            if let Some(y) = table.value(n, d) {
                total += crate::likelihood::log_prob(y, &params[n][d])?;
            }
        }
    }
    Ok(total)
}

/// Per-feature raw-value and mask columns of a table.
pub fn feature_columns(table: &DatasetTable) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let d = table.n_features();
    let n = table.n_rows();
    let mut y_cols = vec![vec![0.0; n]; d];
    let mut mask_cols = vec![vec![0.0; n]; d];
    for i in 0..n {
        for j in 0..d {
            if table.is_observed(i, j) {
                y_cols[j][i] = table.raw_value(i, j);
                mask_cols[j][i] = 1.0;
            }
        }
    }
    (y_cols, mask_cols)
}

/// Full-dataset counts for scaling mini-batch estimates.
#[derive(Debug, Clone, Copy)]
pub struct Totals {
    pub rows: usize,
    pub observed_cells: usize,
    pub instances: usize,
}

impl Totals {
    pub fn of(table: &DatasetTable) -> Totals {
        Totals {
            rows: table.n_rows(),
            observed_cells: table.observed_cell_count(),
            instances: table.present_instances().len(),
        }
    }
}

pub struct ElboParts<'t> {
    pub elbo: Var<'t>,
    pub recon: Var<'t>,
    pub kl: Var<'t>,
}

/// Builds the full objective graph over an instance-sorted batch table.
///
/// The reconstruction sum is rescaled by (total observed cells)/(batch
/// observed cells) so both terms stay on the full-dataset scale; `beta` is
/// the KL warm-up multiplier. Exact mode expects the batch to be the whole
/// dataset.
#[allow(clippy::too_many_arguments)]
pub fn build_elbo<'t>(
    tape: &'t Tape,
    lifted: &Lifted<'t>,
    model: &Model,
    batch: &DatasetTable,
    totals: &Totals,
    eps: &Tensor,
    beta: f64,
    mode: KlMode,
) -> Result<ElboParts<'t>, ModelError> {
    if !batch.is_instance_sorted() {
        return Err(ModelError::Kernel(KernelError::NotSorted));
    }
    let latent = model.latent_dim();
    let encoded = crate::data::encode_inputs(batch, &model.norm, model.config.net.append_mask)?;
    let x = tape.constant(encoded.data);
    let (mean, var) = encoder_forward(lifted, x, latent)?;
    let z = reparameterize(mean, var, tape.constant(eps.clone()))?;

    let (y_cols, mask_cols) = feature_columns(batch);
    let recon_sum = reconstruction_graph(
        tape,
        lifted,
        &model.schema,
        model.config.net.slot_width,
        z,
        &y_cols,
        &mask_cols,
    )?;
    let batch_observed = batch.observed_cell_count().max(1);
    let recon = recon_sum.scale(totals.observed_cells as f64 / batch_observed as f64)?;

    let kl = match mode {
        KlMode::Exact => {
            if batch.n_rows() != totals.rows {
                return Err(ModelError::Invalid(
                    "exact KL mode requires full-dataset batches".into(),
                ));
            }
            exact_kl_graph(
                tape,
                lifted,
                &model.structure,
                latent,
                batch.covariate_rows(),
                mean,
                var,
            )?
        }
        KlMode::Bound => {
            let inducing = model
                .inducing
                .as_ref()
                .ok_or_else(|| ModelError::Invalid("model has no inducing points".into()))?;
            let blocks = instance_blocks(batch);
            minibatch_bound_graph(
                tape,
                lifted,
                &model.structure,
                inducing,
                latent,
                batch.covariate_rows(),
                &blocks,
                mean,
                var,
                totals.instances,
                totals.rows,
            )?
        }
    };

    let elbo = recon.sub(kl.scale(beta)?)?;
    Ok(ElboParts { elbo, recon, kl })
}

/// Contiguous (start, end) instance blocks of an instance-sorted table.
pub fn instance_blocks(table: &DatasetTable) -> Vec<(usize, usize)> {
    let mut blocks = Vec::new();
    let n = table.n_rows();
    let mut start = 0usize;
    for i in 1..=n {
        if i == n || table.instance_of(i) != table.instance_of(start) {
            blocks.push((start, i));
            start = i;
        }
    }
    blocks
}

/// Sets each dimension's variational distribution to its closed-form optimum
/// for the current hyperparameters and encodings: H* = (K_SS⁻¹ + AᵀΣ̂⁻¹A)⁻¹
/// and m* = H*·AᵀΣ̂⁻¹μ̄.
pub fn optimize_variational_closed_form(
    store: &mut ParamStore,
    structure: &KernelStructure,
    inducing: &InducingPoints,
    latent_dim: usize,
    rows: &[crate::data::CovariateRow],
    blocks: &[(usize, usize)],
    posterior: &LatentPosterior,
) -> Result<(), ModelError> {
    let m = inducing.m;
    for l in 0..latent_dim {
        // Evaluate the needed kernel matrices in value mode.
        let tape = Tape::new();
        let lifted = store.lift(&tape);
        let vars = lift_dim_vars(&lifted, structure, l);
        let inducing_vars = inducing.lift(&lifted);
        let ind_side = Side::Inducing(&inducing_vars);
        let k_ss = low_rank_part(&tape, structure, &vars, &ind_side, &ind_side)?.to_tensor();
        let k_xs =
            low_rank_part(&tape, structure, &vars, &Side::Rows(rows), &ind_side)?.to_tensor();
        let sigma_blocks: Vec<Tensor> = blocks
            .iter()
            .map(|&(s, e)| {
                instance_block(&tape, structure, &vars, &rows[s..e]).map(|v| v.to_tensor())
            })
            .collect::<Result<_, _>>()?;

        let l_ss = raw::cholesky_lower(k_ss.values(), m)?;
        // Precision = K_SS⁻¹ + Σ_p A_pᵀ Σ̂_p⁻¹ A_p with A = K_XS·K_SS⁻¹;
        // accumulate in the "whitened" form to keep solves triangular.
        let eye = Tensor::eye(m);
        let kss_inv_half = raw::tri_solve(&l_ss, m, eye.values(), m, true, false)?; // L⁻¹
        let kss_inv = raw::tri_solve(&l_ss, m, &kss_inv_half, m, true, true)?; // K⁻¹
        let mut precision = kss_inv.clone();
        let mut info_vec = vec![0.0; m];
        for (bi, &(s, e)) in blocks.iter().enumerate() {
            let n_p = e - s;
            let a_p = {
                let mut block_kxs: Vec<f64> = Vec::with_capacity(n_p * m);
                for i in s..e {
                    for j in 0..m {
                        block_kxs.push(k_xs.at2(i, j));
                    }
                }
                raw::matmul(&block_kxs, n_p, m, &kss_inv, m)
            };
            let l_hat = raw::cholesky_lower(sigma_blocks[bi].values(), n_p)?;
            let half = raw::tri_solve(&l_hat, n_p, &a_p, m, true, false)?;
            let w_p = raw::tri_solve(&l_hat, n_p, &half, m, true, true)?; // Σ̂⁻¹A
            // precision += A_pᵀ (Σ̂⁻¹ A_p)
            let at = raw::transpose(&a_p, n_p, m);
            let contrib = raw::matmul(&at, m, n_p, &w_p, m);
            for (pv, cv) in precision.iter_mut().zip(&contrib) {
                *pv += cv;
            }
            let mu_p: Vec<f64> = (s..e).map(|i| posterior.mean.at2(i, l)).collect();
            let half_mu = raw::tri_solve(&l_hat, n_p, &mu_p, 1, true, false)?;
            let smu = raw::tri_solve(&l_hat, n_p, &half_mu, 1, true, true)?;
            let contrib_vec = raw::matmul(&at, m, n_p, &smu, 1);
            for (iv, cv) in info_vec.iter_mut().zip(&contrib_vec) {
                *iv += cv;
            }
        }
        let l_prec = raw::cholesky_lower(&precision, m)?;
        let half = raw::tri_solve(&l_prec, m, eye.values(), m, true, false)?;
        let h_star = raw::tri_solve(&l_prec, m, &half, m, true, true)?;
        let m_star = raw::matmul(&h_star, m, m, &info_vec, 1);

        let t_star = raw::cholesky_lower(&h_star, m)?;
        let mut t_raw = Tensor::zeros(&[m, m]);
        for i in 0..m {
            for j in 0..i {
                t_raw.set2(i, j, t_star[i * m + j]);
            }
            t_raw.set2(i, i, kernel::inverse_softplus(t_star[i * m + i]));
        }
        *store.get_mut(&variational_mean_name(l)) = Tensor::column(m_star);
        *store.get_mut(&variational_chol_name(l)) = t_raw;
    }
    Ok(())
}
