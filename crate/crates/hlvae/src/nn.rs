//! Amortized inference network and generative network.
//!
//! Both are single-hidden-layer MLPs with ReLU activations. The encoder maps
//! the zero-filled encoded input to per-dimension posterior means and
//! softplus variances; the decoder maps a latent code to the homogeneous
//! layer, which is sliced into per-feature slots and passed through the
//! likelihood heads.

use rand::Rng;

use crate::data::{DatasetTable, EncodedMatrix, Schema};
use crate::likelihood::graph::{head_columns, HeadColumns};
use crate::likelihood::Likelihood;
use crate::params::{Lifted, ParamStore};
use crate::tensor::{Tape, Tensor, TensorError, Var};

/// Network shape settings.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NetConfig {
    pub latent_dim: usize,
    pub hidden: usize,
    /// Homogeneous-layer width per feature (s_d).
    pub slot_width: usize,
    /// Append one observation-mask column per feature to the encoder input.
    pub append_mask: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig { latent_dim: 8, hidden: 50, slot_width: 5, append_mask: false }
    }
}

/// Diagonal Gaussian amortized posterior over a table's rows.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LatentPosterior {
    /// N×L means.
    pub mean: Tensor,
    /// N×L variances, strictly positive.
    pub var: Tensor,
}

fn glorot<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let values = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(vec![rows, cols], values).expect("shape matches count")
}

pub fn head_param_names(d: usize) -> (String, String, String, String, String) {
    (
        format!("head.{d}.w0"),
        format!("head.{d}.b0"),
        format!("head.{d}.w1"),
        format!("head.{d}.b1"),
        format!("head.{d}.free"),
    )
}

/// Registers encoder, decoder-trunk, and head parameters.
pub fn init_net_params<R: Rng>(
    store: &mut ParamStore,
    schema: &Schema,
    config: &NetConfig,
    encoder_input_width: usize,
    rng: &mut R,
) {
    let l = config.latent_dim;
    let h = config.hidden;
    let s_total = config.slot_width * schema.features.len();

    store.insert("enc.w1", glorot(encoder_input_width, h, rng));
    store.insert("enc.b1", Tensor::zeros(&[1, h]));
    store.insert("enc.w2", glorot(h, 2 * l, rng));
    store.insert("enc.b2", Tensor::zeros(&[1, 2 * l]));

    store.insert("dec.w1", glorot(l, h, rng));
    store.insert("dec.b1", Tensor::zeros(&[1, h]));
    store.insert("dec.w2", glorot(h, s_total, rng));
    store.insert("dec.b2", Tensor::zeros(&[1, s_total]));

    let s = config.slot_width;
    for (d, spec) in schema.features.iter().enumerate() {
        let (w0, b0, w1, b1, free) = head_param_names(d);
        match &spec.likelihood {
            Likelihood::Gaussian { .. } | Likelihood::LogNormal => {
                store.insert(w0, glorot(s, 1, rng));
                store.insert(b0, Tensor::zeros(&[1, 1]));
                store.insert(w1, glorot(s, 1, rng));
                store.insert(b1, Tensor::zeros(&[1, 1]));
            }
            Likelihood::GaussianFreeVariance => {
                store.insert(w0, glorot(s, 1, rng));
                store.insert(b0, Tensor::zeros(&[1, 1]));
                store.insert(free, Tensor::scalar(0.0));
            }
            Likelihood::Poisson => {
                store.insert(w0, glorot(s, 1, rng));
                store.insert(b0, Tensor::zeros(&[1, 1]));
            }
            Likelihood::Categorical { cardinality } => {
                store.insert(w0, glorot(s, cardinality - 1, rng));
                store.insert(b0, Tensor::zeros(&[1, cardinality - 1]));
            }
            Likelihood::Ordinal { cardinality } => {
                store.insert(w0, glorot(s, 1, rng));
                store.insert(b0, Tensor::zeros(&[1, 1]));
                store.insert(free, Tensor::zeros(&[cardinality - 1, 1]));
            }
        }
    }
}

/// Encoder forward pass: rows of `x` to posterior means and variances.
pub fn encoder_forward<'t>(
    lifted: &Lifted<'t>,
    x: Var<'t>,
    latent_dim: usize,
) -> Result<(Var<'t>, Var<'t>), TensorError> {
    let h = x.matmul(lifted.var("enc.w1"))?.add(lifted.var("enc.b1"))?.relu()?;
    let out = h.matmul(lifted.var("enc.w2"))?.add(lifted.var("enc.b2"))?;
    let mean = out.slice_axis(1, 0, latent_dim)?;
    let var = out.slice_axis(1, latent_dim, 2 * latent_dim)?.softplus()?;
    Ok((mean, var))
}

/// Decoder trunk: latent rows to the homogeneous layer (n × Σ s_d).
pub fn decoder_trunk<'t>(lifted: &Lifted<'t>, z: Var<'t>) -> Result<Var<'t>, TensorError> {
    let h = z.matmul(lifted.var("dec.w1"))?.add(lifted.var("dec.b1"))?.relu()?;
    h.matmul(lifted.var("dec.w2"))?.add(lifted.var("dec.b2"))
}

/// Head parameter vars of feature `d`.
pub fn lift_head<'t>(
    lifted: &Lifted<'t>,
    d: usize,
    kind: &Likelihood,
) -> (Vec<(Var<'t>, Var<'t>)>, Option<Var<'t>>) {
    let (w0, b0, w1, b1, free) = head_param_names(d);
    match kind {
        Likelihood::Gaussian { .. } | Likelihood::LogNormal => (
            vec![(lifted.var(&w0), lifted.var(&b0)), (lifted.var(&w1), lifted.var(&b1))],
            None,
        ),
        Likelihood::GaussianFreeVariance | Likelihood::Ordinal { .. } => {
            (vec![(lifted.var(&w0), lifted.var(&b0))], Some(lifted.var(&free)))
        }
        Likelihood::Poisson | Likelihood::Categorical { .. } => {
            (vec![(lifted.var(&w0), lifted.var(&b0))], None)
        }
    }
}

/// Slices the homogeneous layer and decodes every feature's parameter columns.
pub fn decode_columns<'t>(
    tape: &'t Tape,
    lifted: &Lifted<'t>,
    homogeneous: Var<'t>,
    schema: &Schema,
    slot_width: usize,
) -> Result<Vec<HeadColumns<'t>>, TensorError> {
    let mut out = Vec::with_capacity(schema.features.len());
    for (d, spec) in schema.features.iter().enumerate() {
        let slot = homogeneous.slice_axis(1, d * slot_width, (d + 1) * slot_width)?;
        let (affines, free) = lift_head(lifted, d, &spec.likelihood);
        out.push(head_columns(tape, slot, &spec.likelihood, &affines, free)?);
    }
    Ok(out)
}

/// z = μ + σ·ε elementwise; gradients flow to μ and σ.
pub fn reparameterize<'t>(
    mean: Var<'t>,
    var: Var<'t>,
    eps: Var<'t>,
) -> Result<Var<'t>, TensorError> {
    mean.add(var.sqrt()?.mul(eps)?)
}

/// Value-mode amortized posterior for every row of an encoded table.
pub fn encode_matrix(
    store: &ParamStore,
    encoded: &EncodedMatrix,
    latent_dim: usize,
) -> Result<LatentPosterior, TensorError> {
    let tape = Tape::new();
    let lifted = store.lift(&tape);
    let x = tape.constant(encoded.data.clone());
    let (mean, var) = encoder_forward(&lifted, x, latent_dim)?;
    Ok(LatentPosterior { mean: mean.to_tensor(), var: var.to_tensor() })
}

/// Value-mode decode of latent rows into per-row, per-feature parameters.
pub fn decode_rows(
    store: &ParamStore,
    schema: &Schema,
    config: &NetConfig,
    z: &Tensor,
) -> Result<Vec<Vec<crate::likelihood::LikelihoodParams>>, TensorError> {
    use crate::likelihood::LikelihoodParams;
    let tape = Tape::new();
    let lifted = store.lift(&tape);
    let zv = tape.constant(z.clone());
    let a = decoder_trunk(&lifted, zv)?;
    let cols = decode_columns(&tape, &lifted, a, schema, config.slot_width)?;
    let n = z.shape()[0];
    let mut rows: Vec<Vec<LikelihoodParams>> = (0..n).map(|_| Vec::new()).collect();
    for col in cols.iter() {
        match col {
            HeadColumns::Gaussian { mean, var } => {
                let m = mean.to_tensor();
                let v = var.to_tensor();
                for i in 0..n {
                    let var_i = if v.len() == 1 { v.values()[0] } else { v.at2(i, 0) };
                    rows[i].push(LikelihoodParams::Gaussian { mean: m.at2(i, 0), var: var_i });
                }
            }
            HeadColumns::LogNormal { mu, var } => {
                let m = mu.to_tensor();
                let v = var.to_tensor();
                for i in 0..n {
                    rows[i].push(LikelihoodParams::LogNormal { mu: m.at2(i, 0), var: v.at2(i, 0) });
                }
            }
            HeadColumns::Poisson { rate } => {
                let r = rate.to_tensor();
                for i in 0..n {
                    rows[i].push(LikelihoodParams::Poisson { rate: r.at2(i, 0) });
                }
            }
            HeadColumns::Categorical { logits } => {
                let lg = logits.to_tensor();
                let (_, r) = lg.dims2()?;
                for i in 0..n {
                    rows[i].push(LikelihoodParams::Categorical {
                        logits: (0..r).map(|j| lg.at2(i, j)).collect(),
                    });
                }
            }
            HeadColumns::Ordinal { score, thresholds } => {
                let s = score.to_tensor();
                let t = thresholds.to_tensor();
                let thr: Vec<f64> = t.values().to_vec();
                for i in 0..n {
                    rows[i].push(LikelihoodParams::Ordinal {
                        score: s.at2(i, 0),
                        thresholds: thr.clone(),
                    });
                }
            }
        }
    }
    Ok(rows)
}

/// Encoder input width for a schema under a net config.
pub fn encoder_input_width(schema: &Schema, config: &NetConfig) -> usize {
    crate::data::encoded_width(schema, config.append_mask)
}

/// Convenience: encode a table with frozen normalization statistics and run
/// the encoder over it.
pub fn encode_table(
    store: &ParamStore,
    schema_table: &DatasetTable,
    norm: &crate::data::NormStats,
    config: &NetConfig,
) -> Result<LatentPosterior, crate::model::ModelError> {
    let encoded = crate::data::encode_inputs(schema_table, norm, config.append_mask)?;
    Ok(encode_matrix(store, &encoded, config.latent_dim)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{CovValue, CovariateSpec, DatasetTable, FeatureSpec, NormStats, Schema};
    use crate::likelihood::{decode_head, HeadWeights, Likelihood, LikelihoodParams};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn schema() -> Schema {
        Schema::new(
            vec![
                FeatureSpec::new("g", Likelihood::Gaussian { bounded: false }),
                FeatureSpec::new("c", Likelihood::Categorical { cardinality: 3 }),
                FeatureSpec::new("o", Likelihood::Ordinal { cardinality: 4 }),
                FeatureSpec::new("p", Likelihood::Poisson),
            ],
            vec![CovariateSpec::instance_id("id"), CovariateSpec::time_axis("t")],
        )
        .unwrap()
    }

    fn init_store(config: &NetConfig, zeroed: bool) -> ParamStore {
        let schema = schema();
        let mut store = ParamStore::new();
        let width = encoder_input_width(&schema, config);
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        init_net_params(&mut store, &schema, config, width, &mut rng);
        if zeroed {
            for t in store.tensors_mut() {
                t.values_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        store
    }

    fn encoded_input(rows: usize, width: usize, fill: f64) -> EncodedMatrix {
        EncodedMatrix { data: Tensor::filled(&[rows, width], fill), ranges: vec![] }
    }

    #[test]
    fn zero_encoder_outputs_zero_mean_log2_variance() {
        let config = NetConfig { latent_dim: 3, hidden: 4, slot_width: 2, append_mask: false };
        let store = init_store(&config, true);
        let width = encoder_input_width(&schema(), &config);
        let post = encode_matrix(&store, &encoded_input(2, width, 1.0), 3).unwrap();
        for i in 0..2 {
            for l in 0..3 {
                assert_relative_eq!(post.mean.at2(i, l), 0.0);
                assert_relative_eq!(post.var.at2(i, l), 2f64.ln(), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn identical_rows_get_identical_posteriors() {
        let config = NetConfig { latent_dim: 2, hidden: 5, slot_width: 2, append_mask: false };
        let store = init_store(&config, false);
        let width = encoder_input_width(&schema(), &config);
        let mut data = Tensor::zeros(&[2, width]);
        for j in 0..width {
            data.set2(0, j, 0.3 * j as f64);
            data.set2(1, j, 0.3 * j as f64);
        }
        let post =
            encode_matrix(&store, &EncodedMatrix { data, ranges: vec![] }, 2).unwrap();
        for l in 0..2 {
            assert_eq!(post.mean.at2(0, l), post.mean.at2(1, l));
            assert_eq!(post.var.at2(0, l), post.var.at2(1, l));
        }
    }

    #[test]
    fn perturbing_one_row_changes_only_that_row() {
        let config = NetConfig { latent_dim: 2, hidden: 5, slot_width: 2, append_mask: false };
        let store = init_store(&config, false);
        let width = encoder_input_width(&schema(), &config);
        let base = Tensor::filled(&[3, width], 0.5);
        let post0 =
            encode_matrix(&store, &EncodedMatrix { data: base.clone(), ranges: vec![] }, 2)
                .unwrap();
        let mut bumped = base;
        bumped.set2(1, 0, 2.5);
        let post1 =
            encode_matrix(&store, &EncodedMatrix { data: bumped, ranges: vec![] }, 2).unwrap();
        for l in 0..2 {
            assert_eq!(post0.mean.at2(0, l), post1.mean.at2(0, l));
            assert_eq!(post0.mean.at2(2, l), post1.mean.at2(2, l));
        }
        assert_ne!(post0.mean.at2(1, 0), post1.mean.at2(1, 0));
    }

    #[test]
    fn reparameterize_zero_noise_returns_mean() {
        let tape = Tape::new();
        let mean = tape.constant(Tensor::from_rows(&[vec![1.0, -2.0]]).unwrap());
        let var = tape.constant(Tensor::from_rows(&[vec![0.5, 0.1]]).unwrap());
        let eps = tape.constant(Tensor::zeros(&[1, 2]));
        let z = reparameterize(mean, var, eps).unwrap().to_tensor();
        assert_eq!(z.values(), &[1.0, -2.0]);
    }

    #[test]
    fn reparameterize_sample_variance_tracks_var() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let n = 10_000;
        let var = 0.7;
        let tape = Tape::new();
        let mean = tape.constant(Tensor::zeros(&[n, 1]));
        let vars = tape.constant(Tensor::filled(&[n, 1], var));
        let eps_vals: Vec<f64> =
            (0..n).map(|_| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng)).collect();
        let eps = tape.constant(Tensor::column(eps_vals));
        let z = reparameterize(mean, vars, eps).unwrap().to_tensor();
        let emp_var =
            z.values().iter().map(|v| v * v).sum::<f64>() / n as f64;
        assert!((emp_var - var).abs() / var < 0.05, "empirical variance {emp_var}");
    }

    #[test]
    fn zero_decoder_gives_zero_case_heads() {
        let config = NetConfig { latent_dim: 2, hidden: 4, slot_width: 3, append_mask: false };
        let store = init_store(&config, true);
        let z = Tensor::zeros(&[2, 2]);
        let rows = decode_rows(&store, &schema(), &config, &z).unwrap();
        match &rows[0][0] {
            LikelihoodParams::Gaussian { mean, var } => {
                assert_relative_eq!(*mean, 0.0);
                assert_relative_eq!(*var, 2f64.ln(), epsilon = 1e-5);
            }
            other => panic!("unexpected {other:?}"),
        }
        match &rows[1][1] {
            LikelihoodParams::Categorical { logits } => assert_eq!(logits, &vec![0.0; 3]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn vectorized_decode_matches_per_slot_decode() {
        let config = NetConfig { latent_dim: 2, hidden: 4, slot_width: 3, append_mask: false };
        let store = init_store(&config, false);
        let sch = schema();
        let z = Tensor::from_rows(&[vec![0.4, -0.7], vec![1.2, 0.3]]).unwrap();
        let rows = decode_rows(&store, &sch, &config, &z).unwrap();

        // Recompute the homogeneous layer by hand and push each slot through
        // the value-mode head decoder.
        let tape = Tape::new();
        let lifted = store.lift(&tape);
        let a = decoder_trunk(&lifted, tape.constant(z.clone())).unwrap().to_tensor();
        for i in 0..2 {
            for (d, spec) in sch.features.iter().enumerate() {
                let slot: Vec<f64> =
                    (0..config.slot_width).map(|j| a.at2(i, d * config.slot_width + j)).collect();
                let (w0, b0, w1, b1, free) = head_param_names(d);
                let affines = match &spec.likelihood {
                    Likelihood::Gaussian { .. } | Likelihood::LogNormal => {
                        vec![(store.get(&w0), store.get(&b0)), (store.get(&w1), store.get(&b1))]
                    }
                    _ => vec![(store.get(&w0), store.get(&b0))],
                };
                let free_t = match &spec.likelihood {
                    Likelihood::GaussianFreeVariance | Likelihood::Ordinal { .. } => {
                        Some(store.get(&free))
                    }
                    _ => None,
                };
                let expect = decode_head(
                    &slot,
                    &spec.likelihood,
                    &HeadWeights { affines, free: free_t },
                );
                match (&rows[i][d], &expect) {
                    (
                        LikelihoodParams::Gaussian { mean: m1, var: v1 },
                        LikelihoodParams::Gaussian { mean: m2, var: v2 },
                    ) => {
                        assert_relative_eq!(m1, m2, epsilon = 1e-12);
                        assert_relative_eq!(v1, v2, epsilon = 1e-12);
                    }
                    (
                        LikelihoodParams::Categorical { logits: a },
                        LikelihoodParams::Categorical { logits: b },
                    ) => {
                        for (x, y) in a.iter().zip(b) {
                            assert_relative_eq!(x, y, epsilon = 1e-12);
                        }
                    }
                    (
                        LikelihoodParams::Ordinal { score: s1, thresholds: t1 },
                        LikelihoodParams::Ordinal { score: s2, thresholds: t2 },
                    ) => {
                        assert_relative_eq!(s1, s2, epsilon = 1e-12);
                        for (x, y) in t1.iter().zip(t2) {
                            assert_relative_eq!(x, y, epsilon = 1e-12);
                        }
                    }
                    (
                        LikelihoodParams::Poisson { rate: r1 },
                        LikelihoodParams::Poisson { rate: r2 },
                    ) => assert_relative_eq!(r1, r2, epsilon = 1e-12),
                    other => panic!("kind mismatch {other:?}"),
                }
            }
        }
    }

    #[test]
    fn slot_slicing_covers_homogeneous_layer_exactly() {
        let config = NetConfig { latent_dim: 2, hidden: 4, slot_width: 5, append_mask: false };
        let sch = schema();
        let widths: usize = sch.features.len() * config.slot_width;
        assert_eq!(widths, 20);
        let store = init_store(&config, false);
        assert_eq!(store.get("dec.w2").shape()[1], widths);
    }

    #[test]
    fn masked_cell_insensitivity_through_encoding() {
        // Changing the raw value of a masked cell changes neither the encoded
        // input nor the posterior.
        let sch = schema();
        let config = NetConfig { latent_dim: 2, hidden: 5, slot_width: 2, append_mask: false };
        let store = init_store(&config, false);
        let mk = |masked_value: f64| {
            DatasetTable::from_parts(
                sch.clone(),
                vec![vec![CovValue::Level(0), CovValue::Continuous(0.0)]],
                vec![vec!["p0".into()], vec![]],
                vec![vec![masked_value, 1.0, 2.0, 3.0]],
                vec![vec![false, true, true, true]],
            )
            .unwrap()
        };
        let t1 = mk(0.0);
        let t2 = mk(123.0);
        let norm = NormStats::from_table(&t1);
        let p1 = encode_table(&store, &t1, &norm, &config).unwrap();
        let p2 = encode_table(&store, &t2, &norm, &config).unwrap();
        assert_eq!(p1.mean.values(), p2.mean.values());
        assert_eq!(p1.var.values(), p2.var.values());
    }
}
