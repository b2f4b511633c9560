//! Model assembly: schema, normalization statistics, network and GP
//! parameters, inducing points, and the variational distribution, bundled
//! for training, checkpointing, and prediction.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::data::{DataError, DatasetTable, NormStats, Schema};
use crate::kernel::{
    self, InducingPoints, KernelError, KernelStructure, NOISE_VARIANCE_FLOOR,
};
use crate::likelihood::LikelihoodError;
use crate::nn::{self, LatentPosterior, NetConfig};
use crate::params::ParamStore;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
    #[error("training loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("unknown instance {0}")]
    UnknownInstance(String),
    #[error("instance {0} has rows missing from its batch")]
    IncompleteInstance(String),
    #[error("{0}")]
    Invalid(String),
}

/// Settings that shape a model; everything else is data-derived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub net: NetConfig,
    /// Kernel structure string, e.g. `se(time) + ca(id)*se(time)`.
    pub kernel: String,
    /// Number of inducing points for the mini-batch KL bound.
    pub inducing: usize,
    /// Initial latent noise variance σ²_z.
    pub init_noise: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            net: NetConfig::default(),
            kernel: "se(time) + ca(id)*se(time)".into(),
            inducing: 32,
            init_noise: 0.25,
        }
    }
}

/// A heterogeneous longitudinal VAE: all trainable state plus the frozen
/// data-derived pieces needed to use it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Model {
    pub schema: Schema,
    pub norm: NormStats,
    pub config: ModelConfig,
    pub structure: KernelStructure,
    /// Present when the structure has a low-rank part to approximate.
    pub inducing: Option<InducingPoints>,
    pub params: ParamStore,
    /// Covariate level tables frozen from the training data.
    pub covariate_levels: Vec<Vec<String>>,
}

pub fn variational_mean_name(l: usize) -> String {
    format!("vg.{l}.m")
}

pub fn variational_chol_name(l: usize) -> String {
    format!("vg.{l}.t")
}

impl Model {
    /// Initializes a model against a training table: normalization statistics
    /// are frozen from it, hyperparameters take data-dependent defaults, and
    /// inducing points subsample its covariate configurations.
    pub fn init(table: &DatasetTable, config: ModelConfig, seed: u64) -> Result<Model, ModelError> {
        let schema = table.schema().clone();
        let norm = NormStats::from_table(table);
        let structure = kernel::parse_structure(&config.kernel, &schema)?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();

        let enc_width = nn::encoder_input_width(&schema, &config.net);
        nn::init_net_params(&mut params, &schema, &config.net, enc_width, &mut rng);

        let spans = kernel::covariate_spans(&schema, table.covariate_rows());
        kernel::init_gp_params(
            &mut params,
            &structure,
            config.net.latent_dim,
            &spans,
            config.init_noise.max(NOISE_VARIANCE_FLOOR * 2.0),
        );

        let inducing = if config.inducing > 0 && !structure.shared_covariates().is_empty() {
            let ind = InducingPoints::init(
                &mut params,
                &structure,
                &schema,
                table.covariate_rows(),
                config.inducing,
                &mut rng,
            )?;
            init_variational_params(&mut params, config.net.latent_dim, ind.m);
            Some(ind)
        } else {
            None
        };

        Ok(Model {
            schema,
            norm,
            config,
            structure,
            inducing,
            params,
            covariate_levels: table.covariate_levels().to_vec(),
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.config.net.latent_dim
    }

    /// Value-mode amortized posterior for a table (encoded with the model's
    /// frozen normalization statistics).
    pub fn encode(&self, table: &DatasetTable) -> Result<LatentPosterior, ModelError> {
        nn::encode_table(&self.params, table, &self.norm, &self.config.net)
    }
}

/// Registers the variational distribution N(m, H) per latent dimension:
/// m = 0 and H = I (raw Cholesky diagonal at softplus⁻¹(1)).
pub fn init_variational_params(store: &mut ParamStore, latent_dim: usize, m: usize) {
    let raw_unit = kernel::inverse_softplus(1.0);
    for l in 0..latent_dim {
        store.insert(variational_mean_name(l), Tensor::zeros(&[m, 1]));
        let mut t = Tensor::zeros(&[m, m]);
        for i in 0..m {
            t.set2(i, i, raw_unit);
        }
        store.insert(variational_chol_name(l), t);
    }
}

/// A trained model plus the cached training-set encodings the GP-conditioned
/// predictive formulas need.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedModel {
    pub model: Model,
    pub cache: PosteriorCache,
}

/// Training covariates (instance-sorted) with their encoded posterior
/// statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorCache {
    pub covariates: Vec<crate::data::CovariateRow>,
    pub mean: Tensor,
    pub var: Tensor,
}

impl TrainedModel {
    /// Freezes the model against its training table.
    pub fn freeze(model: Model, train_table: &DatasetTable) -> Result<TrainedModel, ModelError> {
        let (sorted, _) = train_table.sorted_by_instance();
        let posterior = model.encode(&sorted)?;
        Ok(TrainedModel {
            model,
            cache: PosteriorCache {
                covariates: sorted.covariate_rows().to_vec(),
                mean: posterior.mean,
                var: posterior.var,
            },
        })
    }
}

/// Deterministic sub-seed derivation for the independent random streams of a
/// run (init, batching, noise draws, imputation).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // SplitMix64 step keeps streams decorrelated.
    let mut z = seed.wrapping_add(0x9e3779b97f4a7c15u64.wrapping_mul(stream + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Standard-normal draws shaped `[rows, cols]`.
pub fn standard_normal<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let values = (0..rows * cols)
        .map(|_| rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng))
        .collect();
    Tensor::new(vec![rows, cols], values).expect("shape matches")
}
