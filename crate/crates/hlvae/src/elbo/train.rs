//! Stochastic gradient training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::{build_elbo, Totals};
use crate::data::DatasetTable;
use crate::model::{derive_seed, standard_normal, Model, ModelError, TrainedModel};
use crate::params::ParamStore;
use crate::tensor::{Tape, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KlMode {
    /// Closed-form KL on full-dataset batches.
    Exact,
    /// Instance-decomposed inducing-point upper bound on instance minibatches.
    Bound,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Instances per minibatch (bound mode).
    pub batch_instances: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub kl_mode: KlMode,
    pub seed: u64,
    /// Linear KL warm-up over the first 10% of epochs; defaults to on in
    /// bound mode, off in exact mode.
    pub kl_warmup: Option<bool>,
    /// Early stopping patience on the validation imputation NLL.
    pub early_stop_patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_instances: 8,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            kl_mode: KlMode::Exact,
            seed: 0,
            kl_warmup: None,
            early_stop_patience: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub elbo: f64,
    pub recon: f64,
    pub kl: f64,
    pub val_nll: Option<f64>,
}

/// Result of a training run. `aborted_epoch` is set when a step produced a
/// non-finite loss; the returned model then holds the last parameters that
/// completed an epoch cleanly.
pub struct TrainOutcome {
    pub trained: TrainedModel,
    pub history: Vec<EpochStats>,
    pub aborted_epoch: Option<usize>,
}

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    fn new(lr: f64, store: &ParamStore) -> Self {
        let shapes: Vec<usize> = store.iter().map(|(_, t)| t.len()).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: shapes.iter().map(|n| vec![0.0; *n]).collect(),
            v: shapes.iter().map(|n| vec![0.0; *n]).collect(),
        }
    }

    /// Gradient ascent step.
    fn step(&mut self, store: &mut ParamStore, grads: &[Tensor]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (idx, tensor) in store.tensors_mut().iter_mut().enumerate() {
            let g = grads[idx].values();
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            for (i, value) in tensor.values_mut().iter_mut().enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *value += self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

fn sgd_step(store: &mut ParamStore, grads: &[Tensor], lr: f64) {
    for (idx, tensor) in store.tensors_mut().iter_mut().enumerate() {
        let g = grads[idx].values();
        for (i, value) in tensor.values_mut().iter_mut().enumerate() {
            *value += lr * g[i];
        }
    }
}

fn is_numeric_blowup(err: &ModelError) -> bool {
    matches!(
        err,
        ModelError::Tensor(TensorError::NonFinite { .. })
            | ModelError::Tensor(TensorError::FactorizationFailure { .. })
            | ModelError::Tensor(TensorError::SingularTriangular { .. })
    )
}

/// Mean negative log-likelihood of the observed cells under the posterior
/// mean latent (deterministic validation proxy).
pub fn posterior_mean_nll(model: &Model, table: &DatasetTable) -> Result<f64, ModelError> {
    let posterior = model.encode(table)?;
    let params =
        crate::nn::decode_rows(&model.params, &model.schema, &model.config.net, &posterior.mean)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for n in 0..table.n_rows() {
        for d in 0..table.n_features() {
            if let Some(y) = table.value(n, d) {
                total -= crate::likelihood::log_prob(y, &params[n][d])?;
                count += 1;
            }
        }
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Gradient ascent on the ELBO over instance-level minibatches.
///
/// History records the per-epoch objective decomposition and the validation
/// imputation NLL; runs are deterministic under `config.seed`. A non-finite
/// loss aborts the run and returns the last good parameters with
/// `aborted_epoch` set.
pub fn train(
    mut model: Model,
    table: &DatasetTable,
    validation: Option<&DatasetTable>,
    config: &TrainConfig,
) -> Result<TrainOutcome, ModelError> {
    let (sorted, _) = table.sorted_by_instance();
    let totals = Totals::of(&sorted);
    if config.kl_mode == KlMode::Bound {
        if model.inducing.is_none() {
            return Err(ModelError::Invalid(
                "bound mode requires inducing points (set a positive inducing count)".into(),
            ));
        }
        if model.structure.individual_index().is_none() {
            return Err(ModelError::Kernel(
                crate::kernel::KernelError::MissingIndividualComponent,
            ));
        }
    }

    let instances = sorted.present_instances();
    let instance_rows: Vec<Vec<usize>> =
        instances.iter().map(|&p| sorted.rows_of_instance(p)).collect();

    let mut rng_batch = ChaCha20Rng::seed_from_u64(derive_seed(config.seed, 1));
    let mut rng_eps = ChaCha20Rng::seed_from_u64(derive_seed(config.seed, 2));

    let warmup_on = config
        .kl_warmup
        .unwrap_or(matches!(config.kl_mode, KlMode::Bound));
    let warm_epochs = ((config.epochs as f64 * 0.1).ceil() as usize).max(1);

    let mut adam = Adam::new(config.learning_rate, &model.params);
    let mut history: Vec<EpochStats> = Vec::with_capacity(config.epochs);
    let mut last_good = model.params.clone();
    let mut best_val = f64::INFINITY;
    let mut best_params = model.params.clone();
    let mut stale_epochs = 0usize;

    for epoch in 0..config.epochs {
        let beta = if warmup_on {
            ((epoch + 1) as f64 / warm_epochs as f64).min(1.0)
        } else {
            1.0
        };

        let batches: Vec<Vec<usize>> = match config.kl_mode {
            KlMode::Exact => vec![(0..instances.len()).collect()],
            KlMode::Bound => {
                let mut order: Vec<usize> = (0..instances.len()).collect();
                order.shuffle(&mut rng_batch);
                order
                    .chunks(config.batch_instances.max(1))
                    .map(|c| c.to_vec())
                    .collect()
            }
        };

        let mut epoch_elbo = 0.0;
        let mut epoch_recon = 0.0;
        let mut epoch_kl = 0.0;
        for batch_members in &batches {
            let mut row_ids = Vec::new();
            for &slot in batch_members {
                row_ids.extend(instance_rows[slot].iter().copied());
            }
            let batch = sorted.subset(&row_ids);
            let eps = standard_normal(batch.n_rows(), model.latent_dim(), &mut rng_eps);

            let step = (|| -> Result<(f64, f64, f64, Vec<Tensor>), ModelError> {
                let tape = Tape::new();
                let lifted = model.params.lift(&tape);
                let parts =
                    build_elbo(&tape, &lifted, &model, &batch, &totals, &eps, beta, config.kl_mode)?;
                let grads = parts.elbo.backward()?;
                let grad_list: Vec<Tensor> = lifted
                    .order()
                    .iter()
                    .map(|name| grads.wrt(lifted.var(name)))
                    .collect();
                Ok((
                    parts.elbo.scalar_value()?,
                    parts.recon.scalar_value()?,
                    parts.kl.scalar_value()?,
                    grad_list,
                ))
            })();

            match step {
                Ok((elbo, recon, kl, grads)) => {
                    match config.optimizer {
                        OptimizerKind::Adam => adam.step(&mut model.params, &grads),
                        OptimizerKind::Sgd => {
                            sgd_step(&mut model.params, &grads, config.learning_rate)
                        }
                    }
                    epoch_elbo += elbo;
                    epoch_recon += recon;
                    epoch_kl += kl;
                }
                Err(err) if is_numeric_blowup(&err) => {
                    model.params = last_good;
                    let trained = TrainedModel::freeze(model, table)?;
                    return Ok(TrainOutcome {
                        trained,
                        history,
                        aborted_epoch: Some(epoch),
                    });
                }
                Err(err) => return Err(err),
            }
        }

        let nb = batches.len().max(1) as f64;
        let val_nll = match validation {
            Some(v) => Some(posterior_mean_nll(&model, v)?),
            None => None,
        };
        history.push(EpochStats {
            epoch,
            elbo: epoch_elbo / nb,
            recon: epoch_recon / nb,
            kl: epoch_kl / nb,
            val_nll,
        });
        last_good = model.params.clone();

        if let (Some(patience), Some(nll)) = (config.early_stop_patience, val_nll) {
            if nll < best_val - 1e-12 {
                best_val = nll;
                best_params = model.params.clone();
                stale_epochs = 0;
            } else {
                stale_epochs += 1;
                if stale_epochs >= patience {
                    model.params = best_params;
                    break;
                }
            }
        }
    }

    let trained = TrainedModel::freeze(model, table)?;
    Ok(TrainOutcome { trained, history, aborted_epoch: None })
}
