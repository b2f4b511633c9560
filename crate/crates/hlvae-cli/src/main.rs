//! Command-line entry points wiring ingestion, training, imputation,
//! prediction, synthesis, and evaluation into reproducible runs.
//!
//! Every subcommand writes a resolved-config snapshot next to its outputs so
//! a run can be reproduced from that file alone. Exit codes: 0 success,
//! 1 user error, 2 internal or numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use hlvae::checkpoint;
use hlvae::data::{
    inject_mcar, load_csv, split_longitudinal, write_csv, DataError, DatasetTable, HeldOutCell,
    NormStats, Schema,
};
use hlvae::elbo::{train, KlMode, OptimizerKind, TrainConfig};
use hlvae::kernel::KernelError;
use hlvae::metrics::{point_metrics_report, predictive_nll_report};
use hlvae::model::{Model, ModelConfig, ModelError};
use hlvae::nn::NetConfig;
use hlvae::predict::{impute, predict_future, LatentSource, PredictOptions};
use hlvae::synth::{generate_synthetic_longitudinal, synthetic_schema, SyntheticConfig};
use hlvae::tensor::TensorError;

#[derive(Parser)]
#[command(name = "hlvae", version, about = "Heterogeneous longitudinal VAE")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a CSV dataset.
    Train(TrainArgs),
    /// Fill missing cells of a query CSV with a trained model.
    Impute(ImputeArgs),
    /// Predict fully unobserved rows from covariates alone.
    Predict(PredictArgs),
    /// Generate a synthetic longitudinal dataset with ground-truth latents.
    Synth(SynthArgs),
    /// Score filled values (and optionally predictive NLL) against held-out truth.
    Eval(EvalArgs),
    /// Split a dataset by instance into train/validation/test tables.
    Split(SplitArgs),
}

fn default_out_dir() -> PathBuf {
    std::env::var_os("HLVAE_OUT_DIR").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."))
}

#[derive(Args, Serialize)]
struct TrainArgs {
    /// Training data CSV.
    #[arg(long)]
    data: PathBuf,
    /// Schema JSON file.
    #[arg(long)]
    schema: PathBuf,
    /// Validation data CSV.
    #[arg(long)]
    val: Option<PathBuf>,
    /// Output directory (default: $HLVAE_OUT_DIR or the working directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON config file; explicit flags override its values.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Kernel structure, e.g. "se(time) + ca(id)*se(time)".
    #[arg(long)]
    kernel: Option<String>,
    /// Latent dimensionality L.
    #[arg(long)]
    latent: Option<usize>,
    /// Hidden width of encoder/decoder MLPs.
    #[arg(long)]
    hidden: Option<usize>,
    /// Homogeneous-layer width per feature.
    #[arg(long)]
    slot: Option<usize>,
    /// Append observation-mask columns to the encoder input.
    #[arg(long)]
    append_mask: bool,
    #[arg(long)]
    epochs: Option<usize>,
    /// Instances per minibatch (bound mode).
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// KL mode: "exact" or "bound".
    #[arg(long)]
    kl: Option<String>,
    /// Number of inducing points for the bound.
    #[arg(long)]
    inducing: Option<usize>,
    /// Optimizer: "adam" or "sgd".
    #[arg(long)]
    optimizer: Option<String>,
    /// KL warm-up: "on" or "off" (default: on in bound mode, off in exact).
    #[arg(long)]
    warmup: Option<String>,
    /// Early-stopping patience on validation NLL.
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Serialize, Deserialize, Default)]
struct TrainFileConfig {
    kernel: Option<String>,
    latent: Option<usize>,
    hidden: Option<usize>,
    slot: Option<usize>,
    append_mask: Option<bool>,
    epochs: Option<usize>,
    batch: Option<usize>,
    lr: Option<f64>,
    kl: Option<String>,
    inducing: Option<usize>,
    optimizer: Option<String>,
    warmup: Option<String>,
    patience: Option<usize>,
    seed: Option<u64>,
}

#[derive(Serialize)]
struct ResolvedTrain {
    data: PathBuf,
    schema: PathBuf,
    val: Option<PathBuf>,
    kernel: String,
    latent: usize,
    hidden: usize,
    slot: usize,
    append_mask: bool,
    epochs: usize,
    batch: usize,
    lr: f64,
    kl: String,
    inducing: usize,
    optimizer: String,
    warmup: Option<bool>,
    patience: Option<usize>,
    seed: u64,
}

#[derive(Args, Serialize)]
struct ImputeArgs {
    #[arg(long)]
    model: PathBuf,
    /// Query CSV in the checkpoint's schema; empty cells are imputed.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Latent samples per row for the predictive averages.
    #[arg(long, default_value_t = 50)]
    samples: usize,
    /// Latent source: "amortized", "gp", or "auto".
    #[arg(long, default_value = "auto")]
    latent_source: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Serialize)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Covariate CSV (feature columns may be present as ground truth for NLL).
    #[arg(long)]
    covariates: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Serialize)]
struct SynthArgs {
    /// Generator config JSON.
    #[arg(long)]
    gen_config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Serialize)]
struct EvalArgs {
    /// Schema JSON (defaults to the model checkpoint's schema when --model given).
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Filled CSV produced by `impute` or `predict`.
    #[arg(long)]
    filled: PathBuf,
    /// Held-out ground truth CSV (row,feature,value).
    #[arg(long)]
    holes: PathBuf,
    /// Checkpoint; enables predictive NLL and supplies training ranges.
    #[arg(long)]
    model: Option<PathBuf>,
    /// The holey query CSV the predictions were made from (needed for NLL).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Training CSV for NRMSE ranges when no model is given.
    #[arg(long)]
    train_data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Serialize)]
struct SplitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    /// Instance fractions "train,val,test".
    #[arg(long, default_value = "0.6,0.2,0.2")]
    fractions: String,
    /// Random visits of each validation/test instance disclosed to training.
    #[arg(long, default_value_t = 0)]
    disclose: usize,
    /// Inject this ratio of MCAR missingness into each output table.
    #[arg(long)]
    mcar: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum CliError {
    User(String),
    Numeric(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::User(m) | CliError::Numeric(m) => write!(f, "{m}"),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::User(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match &e {
            ModelError::Tensor(TensorError::NonFinite { .. })
            | ModelError::Tensor(TensorError::FactorizationFailure { .. })
            | ModelError::Tensor(TensorError::SingularTriangular { .. })
            | ModelError::NonFiniteLoss { .. } => CliError::Numeric(e.to_string()),
            ModelError::Kernel(KernelError::NotSorted) => CliError::Numeric(e.to_string()),
            _ => CliError::User(e.to_string()),
        }
    }
}

impl From<KernelError> for CliError {
    fn from(e: KernelError) -> Self {
        CliError::User(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::User(format!("io error: {e}"))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Impute(args) => cmd_impute(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Split(args) => cmd_split(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::User(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Numeric(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(2)
        }
    }
}

fn ensure_out(dir: &Option<PathBuf>) -> Result<PathBuf, CliError> {
    let out = dir.clone().unwrap_or_else(default_out_dir);
    std::fs::create_dir_all(&out)?;
    Ok(out)
}

fn write_resolved<T: Serialize>(out: &Path, resolved: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(resolved)
        .map_err(|e| CliError::User(format!("cannot serialize resolved config: {e}")))?;
    std::fs::write(out.join("resolved_config.json"), text)?;
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let file_cfg: TrainFileConfig = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::User(format!("cannot parse config file: {e}")))?
        }
        None => TrainFileConfig::default(),
    };
    let kernel = args
        .kernel
        .or(file_cfg.kernel)
        .unwrap_or_else(|| "se(time) + ca(id)*se(time)".to_string());
    let latent = args.latent.or(file_cfg.latent).unwrap_or(8);
    let hidden = args.hidden.or(file_cfg.hidden).unwrap_or(50);
    let slot = args.slot.or(file_cfg.slot).unwrap_or(5);
    let append_mask = args.append_mask || file_cfg.append_mask.unwrap_or(false);
    let epochs = args.epochs.or(file_cfg.epochs).unwrap_or(100);
    let batch = args.batch.or(file_cfg.batch).unwrap_or(8);
    let lr = args.lr.or(file_cfg.lr).unwrap_or(1e-3);
    let kl = args.kl.or(file_cfg.kl).unwrap_or_else(|| "exact".to_string());
    let inducing = args.inducing.or(file_cfg.inducing).unwrap_or(32);
    let optimizer = args.optimizer.or(file_cfg.optimizer).unwrap_or_else(|| "adam".to_string());
    let warmup = args.warmup.or(file_cfg.warmup);
    let patience = args.patience.or(file_cfg.patience);
    let seed = args.seed.or(file_cfg.seed).unwrap_or(0);

    let kl_mode = match kl.as_str() {
        "exact" => KlMode::Exact,
        "bound" => KlMode::Bound,
        other => return Err(CliError::User(format!("unknown KL mode {other:?}"))),
    };
    let optimizer_kind = match optimizer.as_str() {
        "adam" => OptimizerKind::Adam,
        "sgd" => OptimizerKind::Sgd,
        other => return Err(CliError::User(format!("unknown optimizer {other:?}"))),
    };
    let kl_warmup = match warmup.as_deref() {
        None => None,
        Some("on") => Some(true),
        Some("off") => Some(false),
        Some(other) => return Err(CliError::User(format!("warmup must be on/off, got {other:?}"))),
    };

    let schema_text = std::fs::read_to_string(&args.schema)?;
    let schema = Schema::from_json_str(&schema_text)?;
    let table = load_csv(&args.data, &schema)?;
    let val = match &args.val {
        Some(path) => Some(load_csv(path, &schema)?),
        None => None,
    };

    let out = ensure_out(&args.out)?;
    write_resolved(
        &out,
        &ResolvedTrain {
            data: args.data.clone(),
            schema: args.schema.clone(),
            val: args.val.clone(),
            kernel: kernel.clone(),
            latent,
            hidden,
            slot,
            append_mask,
            epochs,
            batch,
            lr,
            kl: kl.clone(),
            inducing,
            optimizer: optimizer.clone(),
            warmup: kl_warmup,
            patience,
            seed,
        },
    )?;

    let model = Model::init(
        &table,
        ModelConfig {
            net: NetConfig { latent_dim: latent, hidden, slot_width: slot, append_mask },
            kernel,
            inducing,
            init_noise: 0.25,
        },
        seed,
    )?;
    for name in model.norm.degenerate_features(&model.schema) {
        eprintln!("warning: feature {name} has a constant observed training column");
    }

    let outcome = train(
        model,
        &table,
        val.as_ref(),
        &TrainConfig {
            epochs,
            batch_instances: batch,
            learning_rate: lr,
            optimizer: optimizer_kind,
            kl_mode,
            seed,
            kl_warmup,
            early_stop_patience: patience,
        },
    )?;

    let mut history = String::from("epoch,elbo,recon,kl,val_nll\n");
    for e in &outcome.history {
        let val_cell = e.val_nll.map(|v| format!("{v}")).unwrap_or_default();
        history.push_str(&format!("{},{},{},{},{}\n", e.epoch, e.elbo, e.recon, e.kl, val_cell));
    }
    std::fs::write(out.join("history.csv"), history)?;
    checkpoint::save(&outcome.trained, out.join("checkpoint.json"))?;

    if let Some(epoch) = outcome.aborted_epoch {
        return Err(CliError::Numeric(format!(
            "training loss became non-finite at epoch {epoch}; last good checkpoint saved"
        )));
    }
    println!("trained {} epochs; checkpoint written to {}", outcome.history.len(), out.display());
    Ok(())
}

fn parse_latent_source(text: &str) -> Result<LatentSource, CliError> {
    match text {
        "amortized" => Ok(LatentSource::Amortized),
        "gp" => Ok(LatentSource::GpConditioned),
        "auto" => Ok(LatentSource::Auto),
        other => Err(CliError::User(format!("unknown latent source {other:?}"))),
    }
}

fn write_nll_csv(
    path: &Path,
    schema: &Schema,
    cells: &[hlvae::predict::CellNll],
    opts: &PredictOptions,
    latent_used: &str,
) -> Result<(), CliError> {
    let mut text = format!(
        "# samples={} latent_source={} seed={}\n",
        opts.samples, latent_used, opts.seed
    );
    text.push_str("row,feature,nll\n");
    for c in cells {
        text.push_str(&format!("{},{},{}\n", c.row, schema.features[c.feature].name, c.nll));
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn cmd_impute(args: ImputeArgs) -> Result<(), CliError> {
    let trained = checkpoint::load(&args.model)?;
    let table = load_csv(&args.data, &trained.model.schema)?;
    let latent = parse_latent_source(&args.latent_source)?;
    let opts = PredictOptions { samples: args.samples, latent, seed: args.seed };
    let out = ensure_out(&args.out)?;
    write_resolved(&out, &args)?;

    let result = impute(&trained, &table, &opts)?;
    write_csv(&result.filled, out.join("filled.csv"))?;
    write_nll_csv(
        &out.join("nll.csv"),
        &trained.model.schema,
        &result.observed_nll,
        &opts,
        &args.latent_source,
    )?;
    println!(
        "imputed {} cells across {} rows; outputs in {}",
        result.filled_cells.len(),
        table.n_rows(),
        out.display()
    );
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<(), CliError> {
    let trained = checkpoint::load(&args.model)?;
    let query = load_csv(&args.covariates, &trained.model.schema)?;
    let opts =
        PredictOptions { samples: args.samples, latent: LatentSource::GpConditioned, seed: args.seed };
    let out = ensure_out(&args.out)?;
    write_resolved(&out, &args)?;

    let result = predict_future(&trained, &query, &opts)?;
    write_csv(&result.filled, out.join("predicted.csv"))?;
    write_nll_csv(&out.join("nll.csv"), &trained.model.schema, &result.observed_nll, &opts, "gp")?;
    println!("predicted {} rows; outputs in {}", query.n_rows(), out.display());
    Ok(())
}

#[derive(Deserialize)]
struct GenConfigFile {
    instances: usize,
    visits: usize,
    latent_dim: usize,
    features: serde_json::Value,
    #[serde(default = "one")]
    shared_magnitude: f64,
    #[serde(default = "four")]
    shared_lengthscale: f64,
    #[serde(default = "one")]
    individual_magnitude: f64,
    #[serde(default = "four")]
    individual_lengthscale: f64,
    #[serde(default = "small")]
    noise_var: f64,
    #[serde(default = "sixteen")]
    decoder_hidden: usize,
    #[serde(default = "tenth")]
    gaussian_noise_var: f64,
}

fn one() -> f64 {
    1.0
}
fn four() -> f64 {
    4.0
}
fn small() -> f64 {
    0.02
}
fn sixteen() -> usize {
    16
}
fn tenth() -> f64 {
    0.1
}

fn cmd_synth(args: SynthArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.gen_config)?;
    let file: GenConfigFile = serde_json::from_str(&text)
        .map_err(|e| CliError::User(format!("cannot parse generator config: {e}")))?;
    // Reuse the schema feature grammar for the feature list.
    let schema_json = serde_json::json!({
        "features": file.features,
        "covariates": [
            {"name": "id", "kind": "categorical", "id": true},
            {"name": "time", "kind": "continuous", "time": true}
        ]
    });
    let schema = Schema::from_json_str(&schema_json.to_string())?;
    let config = SyntheticConfig {
        instances: file.instances,
        visits: file.visits,
        latent_dim: file.latent_dim,
        features: schema.features,
        shared_magnitude: file.shared_magnitude,
        shared_lengthscale: file.shared_lengthscale,
        individual_magnitude: file.individual_magnitude,
        individual_lengthscale: file.individual_lengthscale,
        noise_var: file.noise_var,
        decoder_hidden: file.decoder_hidden,
        gaussian_noise_var: file.gaussian_noise_var,
    };
    let out = ensure_out(&args.out)?;
    #[derive(Serialize)]
    struct ResolvedSynth<'a> {
        gen_config: &'a PathBuf,
        seed: u64,
        config: &'a SyntheticConfig,
    }
    write_resolved(&out, &ResolvedSynth { gen_config: &args.gen_config, seed: args.seed, config: &config })?;

    let (table, truth) = generate_synthetic_longitudinal(&config, args.seed)?;
    write_csv(&table, out.join("data.csv"))?;
    std::fs::write(out.join("schema.json"), synthetic_schema(&config)?.to_json_string())?;
    let mut latents = String::from(
        (0..config.latent_dim).map(|l| format!("z{l}")).collect::<Vec<_>>().join(",") + "\n",
    );
    for i in 0..table.n_rows() {
        let row: Vec<String> =
            (0..config.latent_dim).map(|l| format!("{}", truth.latents.at2(i, l))).collect();
        latents.push_str(&(row.join(",") + "\n"));
    }
    std::fs::write(out.join("latents.csv"), latents)?;
    println!("wrote {} rows to {}", table.n_rows(), out.display());
    Ok(())
}

fn read_holes(path: &Path, schema: &Schema) -> Result<Vec<HeldOutCell>, CliError> {
    let text = std::fs::read_to_string(path)?;
    let mut holes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            return Err(CliError::User(format!("holes file line {i}: expected row,feature,value")));
        }
        let row: usize = parts[0]
            .parse()
            .map_err(|_| CliError::User(format!("holes file line {i}: bad row index")))?;
        let feature = schema
            .feature_index(parts[1])
            .ok_or_else(|| CliError::User(format!("holes file line {i}: unknown feature {}", parts[1])))?;
        let value: f64 = parts[2]
            .parse()
            .map_err(|_| CliError::User(format!("holes file line {i}: bad value")))?;
        holes.push(HeldOutCell { row, feature, value });
    }
    Ok(holes)
}

fn write_holes(path: &Path, schema: &Schema, holes: &[HeldOutCell]) -> Result<(), CliError> {
    let mut text = String::from("row,feature,value\n");
    for h in holes {
        text.push_str(&format!("{},{},{}\n", h.row, schema.features[h.feature].name, h.value));
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let trained = match &args.model {
        Some(path) => Some(checkpoint::load(path)?),
        None => None,
    };
    let schema = match (&trained, &args.schema) {
        (Some(t), _) => t.model.schema.clone(),
        (None, Some(path)) => Schema::from_json_str(&std::fs::read_to_string(path)?)?,
        (None, None) => {
            return Err(CliError::User("eval needs --schema or --model".into()))
        }
    };
    let filled = load_csv(&args.filled, &schema)?;
    let holes = read_holes(&args.holes, &schema)?;
    if holes.is_empty() {
        return Err(CliError::User("holes file holds no held-out cells".into()));
    }
    let norm = match (&trained, &args.train_data) {
        (Some(t), _) => t.model.norm.clone(),
        (None, Some(path)) => NormStats::from_table(&load_csv(path, &schema)?),
        (None, None) => {
            return Err(CliError::User(
                "eval needs --model or --train-data for NRMSE normalization".into(),
            ))
        }
    };

    let mut report = point_metrics_report(&schema, &norm, &holes, &filled)
        .map_err(|e| CliError::User(e.to_string()))?;

    if let (Some(trained), Some(data_path)) = (&trained, &args.data) {
        let holey = load_csv(data_path, &schema)?;
        let cells: Vec<(usize, usize, f64)> =
            holes.iter().map(|h| (h.row, h.feature, h.value)).collect();
        let opts = PredictOptions {
            samples: args.samples,
            latent: LatentSource::Auto,
            seed: args.seed,
        };
        let nlls = hlvae::predict::predictive_cell_nll(trained, &holey, &cells, &opts)?;
        let nll_cells: Vec<(usize, f64)> =
            holes.iter().zip(&nlls).map(|(h, nll)| (h.feature, *nll)).collect();
        let nll_report = predictive_nll_report(&schema, &nll_cells);
        report.rows.extend(nll_report.rows);
    }

    let out = ensure_out(&args.out)?;
    write_resolved(&out, &args)?;
    std::fs::write(out.join("metrics.csv"), report.to_csv_string())?;
    print!("{}", report.to_pretty_string());
    Ok(())
}

fn cmd_split(args: SplitArgs) -> Result<(), CliError> {
    let schema = Schema::from_json_str(&std::fs::read_to_string(&args.schema)?)?;
    let table = load_csv(&args.data, &schema)?;
    let parts: Vec<f64> = args
        .fractions
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::User(format!("cannot parse fractions {:?}", args.fractions)))?;
    if parts.len() != 3 {
        return Err(CliError::User("fractions must be three comma-separated numbers".into()));
    }
    let split = split_longitudinal(&table, [parts[0], parts[1], parts[2]], args.seed, args.disclose)?;
    let out = ensure_out(&args.out)?;
    write_resolved(&out, &args)?;

    let emit = |name: &str, table: &DatasetTable, hole_seed: u64| -> Result<(), CliError> {
        match args.mcar {
            Some(ratio) => {
                let (holey, holes) = inject_mcar(table, ratio, hole_seed)?;
                write_csv(&holey, out.join(format!("{name}.csv")))?;
                write_holes(&out.join(format!("{name}_holes.csv")), &schema, &holes)?;
            }
            None => write_csv(table, out.join(format!("{name}.csv")))?,
        }
        Ok(())
    };
    emit("train", &split.train, args.seed.wrapping_add(101))?;
    emit("validation", &split.validation, args.seed.wrapping_add(102))?;
    emit("test", &split.test, args.seed.wrapping_add(103))?;
    println!(
        "split {} rows into {}/{}/{}; outputs in {}",
        table.n_rows(),
        split.train.n_rows(),
        split.validation.n_rows(),
        split.test.n_rows(),
        out.display()
    );
    Ok(())
}
