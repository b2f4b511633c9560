//! Tape-mode likelihood heads, vectorized over the rows of a batch.
//!
//! These mirror the value-mode functions in the parent module but operate on
//! whole parameter columns so the training objective differentiates through
//! them. Stabilized forms match the value path: log-sum-exp with a detached
//! shift for categorical logits, and log σ(a) + log σ(−b) + log1p(−e^{b−a})
//! for ordinal cell probabilities.

use super::{Likelihood, GAUSSIAN_VARIANCE_FLOOR};
use crate::tensor::{Tape, Tensor, TensorError, Var};

const HALF_LN_2PI: f64 = 0.9189385332046727;

/// Decoded parameter columns for one feature over a batch of n rows.
pub enum HeadColumns<'t> {
    Gaussian { mean: Var<'t>, var: Var<'t> },
    LogNormal { mu: Var<'t>, var: Var<'t> },
    Poisson { rate: Var<'t> },
    /// n×R logits with the first column pinned to zero.
    Categorical { logits: Var<'t> },
    /// n×1 scores and (R−1)×1 strictly increasing thresholds.
    Ordinal { score: Var<'t>, thresholds: Var<'t> },
}

fn affine<'t>(a: Var<'t>, w: Var<'t>, b: Var<'t>) -> Result<Var<'t>, TensorError> {
    a.matmul(w)?.add(b)
}

/// Builds the decoded parameter columns for a feature from its slot block.
///
/// `affines` holds the (weight, bias) vars of h_1..h_W; `free` is the
/// free-variance raw scalar or the raw ordinal threshold increments.
pub fn head_columns<'t>(
    tape: &'t Tape,
    slot: Var<'t>,
    kind: &Likelihood,
    affines: &[(Var<'t>, Var<'t>)],
    free: Option<Var<'t>>,
) -> Result<HeadColumns<'t>, TensorError> {
    match kind {
        Likelihood::Gaussian { bounded } => {
            let pre_mean = affine(slot, affines[0].0, affines[0].1)?;
            let mean = if *bounded { pre_mean.sigmoid()? } else { pre_mean };
            let var = affine(slot, affines[1].0, affines[1].1)?
                .softplus()?
                .add_scalar(GAUSSIAN_VARIANCE_FLOOR)?;
            Ok(HeadColumns::Gaussian { mean, var })
        }
        Likelihood::GaussianFreeVariance => {
            let mean = affine(slot, affines[0].0, affines[0].1)?;
            let var = free
                .expect("free-variance scalar")
                .softplus()?
                .add_scalar(GAUSSIAN_VARIANCE_FLOOR)?;
            Ok(HeadColumns::Gaussian { mean, var })
        }
        Likelihood::LogNormal => {
            let mu = affine(slot, affines[0].0, affines[0].1)?;
            let var = affine(slot, affines[1].0, affines[1].1)?.softplus()?;
            Ok(HeadColumns::LogNormal { mu, var })
        }
        Likelihood::Poisson => {
            let rate = affine(slot, affines[0].0, affines[0].1)?.softplus()?;
            Ok(HeadColumns::Poisson { rate })
        }
        Likelihood::Categorical { cardinality } => {
            let n = slot.shape()[0];
            let tail = affine(slot, affines[0].0, affines[0].1)?;
            debug_assert_eq!(tail.shape()[1], cardinality - 1);
            let zeros = tape.constant(Tensor::zeros(&[n, 1]));
            let logits = tape.concat(&[zeros, tail], 1)?;
            Ok(HeadColumns::Categorical { logits })
        }
        Likelihood::Ordinal { cardinality } => {
            let score = affine(slot, affines[0].0, affines[0].1)?.softplus()?;
            let raw_inc = free.expect("ordinal threshold increments");
            let r1 = cardinality - 1;
            debug_assert_eq!(raw_inc.shape(), vec![r1, 1]);
            // Cumulative sum of softplus increments via a lower-ones matrix.
            let mut ones = Tensor::zeros(&[r1, r1]);
            for i in 0..r1 {
                for j in 0..=i {
                    ones.set2(i, j, 1.0);
                }
            }
            let thresholds = tape.constant(ones).matmul(raw_inc.softplus()?)?;
            Ok(HeadColumns::Ordinal { score, thresholds })
        }
    }
}

/// Per-row log-probability column (n×1) of the observed raw values.
///
/// `y` must be zero-filled at masked rows so every intermediate stays finite;
/// entries of the result at masked rows are meaningless and must be masked by
/// the caller before summing.
pub fn log_prob_column<'t>(
    tape: &'t Tape,
    cols: &HeadColumns<'t>,
    y: &[f64],
    mask: &[f64],
) -> Result<Var<'t>, TensorError> {
    match cols {
        HeadColumns::Gaussian { mean, var } => {
            let y_col = tape.constant(Tensor::column(y.to_vec()));
            gaussian_column(tape, y_col, *mean, *var)
        }
        HeadColumns::LogNormal { mu, var } => {
            let ly: Vec<f64> = y
                .iter()
                .zip(mask)
                .map(|(v, m)| if *m > 0.0 { v.ln() } else { 0.0 })
                .collect();
            let ly_col = tape.constant(Tensor::column(ly));
            gaussian_column(tape, ly_col, *mu, *var)?.sub(ly_col)
        }
        HeadColumns::Poisson { rate } => {
            let y_col = tape.constant(Tensor::column(y.to_vec()));
            let lgamma: Vec<f64> = y
                .iter()
                .zip(mask)
                .map(|(v, m)| if *m > 0.0 { super::ln_factorial(*v as u64) } else { 0.0 })
                .collect();
            let lg_col = tape.constant(Tensor::column(lgamma));
            y_col.mul(rate.log()?)?.sub(*rate)?.sub(lg_col)
        }
        HeadColumns::Categorical { logits } => {
            let (n, r) = logits.value().dims2()?;
            // Detached row-wise max: exact value and exact gradient for any
            // fixed shift.
            let shift = {
                let v = logits.value();
                let mut m = vec![f64::NEG_INFINITY; n];
                for i in 0..n {
                    for j in 0..r {
                        m[i] = m[i].max(v.at2(i, j));
                    }
                }
                Tensor::column(m)
            };
            let shift = tape.constant(shift);
            let e = logits.sub(shift)?.exp()?;
            let lse = e.sum_axis(1)?.log()?.add(shift)?;
            let logp = logits.sub(lse)?;
            let onehot = tape.constant(one_hot_matrix(y, mask, n, r));
            logp.mul(onehot)?.sum_axis(1)
        }
        HeadColumns::Ordinal { score, thresholds } => {
            let r = thresholds.value().dims2()?.0 + 1;
            let n = score.value().dims2()?.0;
            let mut class_cols: Vec<Var<'t>> = Vec::with_capacity(r);
            for level in 0..r {
                let col = if level == 0 {
                    let t0 = thresholds.slice_axis(0, 0, 1)?;
                    score.sub(t0)?.softplus()?.neg()?
                } else if level == r - 1 {
                    let tl = thresholds.slice_axis(0, r - 2, r - 1)?;
                    tl.sub(*score)?.softplus()?.neg()?
                } else {
                    let t_hi = thresholds.slice_axis(0, level, level + 1)?;
                    let t_lo = thresholds.slice_axis(0, level - 1, level)?;
                    let a = score.sub(t_hi)?.softplus()?.neg()?;
                    let b = t_lo.sub(*score)?.softplus()?;
                    let tail = t_lo.sub(t_hi)?.exp()?.neg()?.log1p()?;
                    a.sub(b)?.add(tail)?
                };
                class_cols.push(col);
            }
            let lp = tape.concat(&class_cols, 1)?;
            let onehot = tape.constant(one_hot_matrix(y, mask, n, r));
            lp.mul(onehot)?.sum_axis(1)
        }
    }
}

fn gaussian_column<'t>(
    tape: &'t Tape,
    y: Var<'t>,
    mean: Var<'t>,
    var: Var<'t>,
) -> Result<Var<'t>, TensorError> {
    let log_var = var.log()?;
    let quad = y.sub(mean)?.square()?.mul(var.recip_positive()?)?;
    log_var
        .add(quad)?
        .scale(-0.5)?
        .add(tape.constant_scalar(-HALF_LN_2PI))
}

fn one_hot_matrix(y: &[f64], mask: &[f64], n: usize, r: usize) -> Tensor {
    let mut m = Tensor::zeros(&[n, r]);
    for i in 0..n {
        if mask[i] > 0.0 {
            m.set2(i, y[i] as usize, 1.0);
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::{log_prob, LikelihoodParams};
    use crate::tensor::gradient_check;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn graph_columns_match_value_log_prob() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 6;
        let tape = Tape::new();

        // Gaussian
        let means: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let vars: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..2.0)).collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let cols = HeadColumns::Gaussian {
            mean: tape.constant(Tensor::column(means.clone())),
            var: tape.constant(Tensor::column(vars.clone())),
        };
        let lp = log_prob_column(&tape, &cols, &ys, &vec![1.0; n]).unwrap().to_tensor();
        for i in 0..n {
            let expect =
                log_prob(ys[i], &LikelihoodParams::Gaussian { mean: means[i], var: vars[i] })
                    .unwrap();
            assert_relative_eq!(lp.values()[i], expect, epsilon = 1e-11);
        }

        // Poisson
        let rates: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..6.0)).collect();
        let counts: Vec<f64> = (0..n).map(|_| rng.gen_range(0..9) as f64).collect();
        let cols = HeadColumns::Poisson { rate: tape.constant(Tensor::column(rates.clone())) };
        let lp = log_prob_column(&tape, &cols, &counts, &vec![1.0; n]).unwrap().to_tensor();
        for i in 0..n {
            let expect =
                log_prob(counts[i], &LikelihoodParams::Poisson { rate: rates[i] }).unwrap();
            assert_relative_eq!(lp.values()[i], expect, epsilon = 1e-11);
        }

        // Categorical (first logit pinned to zero)
        let r = 4;
        let mut logit_rows = Vec::new();
        for _ in 0..n {
            let mut row = vec![0.0];
            row.extend((1..r).map(|_| rng.gen_range(-3.0..3.0)));
            logit_rows.push(row);
        }
        let levels: Vec<f64> = (0..n).map(|_| rng.gen_range(0..r) as f64).collect();
        let cols = HeadColumns::Categorical {
            logits: tape.constant(Tensor::from_rows(&logit_rows).unwrap()),
        };
        let lp = log_prob_column(&tape, &cols, &levels, &vec![1.0; n]).unwrap().to_tensor();
        for i in 0..n {
            let expect = log_prob(
                levels[i],
                &LikelihoodParams::Categorical { logits: logit_rows[i].clone() },
            )
            .unwrap();
            assert_relative_eq!(lp.values()[i], expect, epsilon = 1e-11);
        }

        // Ordinal
        let r = 5;
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..4.0)).collect();
        let mut acc = 0.0;
        let thresholds: Vec<f64> = (0..r - 1)
            .map(|_| {
                acc += rng.gen_range(0.2..1.5);
                acc
            })
            .collect();
        let levels: Vec<f64> = (0..n).map(|_| rng.gen_range(0..r) as f64).collect();
        let cols = HeadColumns::Ordinal {
            score: tape.constant(Tensor::column(scores.clone())),
            thresholds: tape.constant(Tensor::column(thresholds.clone())),
        };
        let lp = log_prob_column(&tape, &cols, &levels, &vec![1.0; n]).unwrap().to_tensor();
        for i in 0..n {
            let expect = log_prob(
                levels[i],
                &LikelihoodParams::Ordinal {
                    score: scores[i],
                    thresholds: thresholds.clone(),
                },
            )
            .unwrap();
            assert_relative_eq!(lp.values()[i], expect, epsilon = 1e-10);
        }
    }

    #[test]
    fn head_log_prob_gradients_match_finite_differences() {
        // One flat leaf packs the head parameters of each likelihood kind;
        // the masked log-probability sum is differentiated through the full
        // column path.
        let s = 3;
        let n = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let slot_data: Vec<Vec<f64>> =
            (0..n).map(|_| (0..s).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let slot_tensor = Tensor::from_rows(&slot_data).unwrap();

        struct Case {
            kind: Likelihood,
            y: Vec<f64>,
            n_affine: usize,
            affine_out: usize,
            free_len: usize,
        }
        let cases = vec![
            Case {
                kind: Likelihood::Gaussian { bounded: false },
                y: vec![0.3, -1.2, 0.0, 2.4],
                n_affine: 2,
                affine_out: 1,
                free_len: 0,
            },
            Case {
                kind: Likelihood::GaussianFreeVariance,
                y: vec![0.3, -1.2, 0.0, 2.4],
                n_affine: 1,
                affine_out: 1,
                free_len: 1,
            },
            Case {
                kind: Likelihood::LogNormal,
                y: vec![0.5, 1.2, 3.0, 0.7],
                n_affine: 2,
                affine_out: 1,
                free_len: 0,
            },
            Case {
                kind: Likelihood::Poisson,
                y: vec![0.0, 3.0, 1.0, 7.0],
                n_affine: 1,
                affine_out: 1,
                free_len: 0,
            },
            Case {
                kind: Likelihood::Categorical { cardinality: 4 },
                y: vec![0.0, 3.0, 1.0, 2.0],
                n_affine: 1,
                affine_out: 3,
                free_len: 0,
            },
            Case {
                kind: Likelihood::Ordinal { cardinality: 4 },
                y: vec![0.0, 3.0, 1.0, 2.0],
                n_affine: 1,
                affine_out: 1,
                free_len: 3,
            },
        ];

        for case in cases {
            let per_affine = s * case.affine_out + case.affine_out;
            let total = case.n_affine * per_affine + case.free_len;
            let point = Tensor::row((0..total).map(|_| rng.gen_range(-0.8..0.8)).collect());
            let mask = vec![1.0, 1.0, 0.0, 1.0];
            let y = case.y.clone();
            let kind = case.kind.clone();
            let slot_tensor = slot_tensor.clone();
            let err = gradient_check(
                move |tape, theta| {
                    let slot = tape.constant(slot_tensor.clone());
                    let mut offset = 0;
                    let mut affines = Vec::new();
                    for _ in 0..case.n_affine {
                        let w = theta
                            .slice_axis(1, offset, offset + s * case.affine_out)?
                            .reshape_rows(s, case.affine_out)?;
                        offset += s * case.affine_out;
                        let b = theta.slice_axis(1, offset, offset + case.affine_out)?;
                        offset += case.affine_out;
                        affines.push((w, b));
                    }
                    let free = if case.free_len > 0 {
                        Some(theta.slice_axis(1, offset, offset + case.free_len)?.transpose()?)
                    } else {
                        None
                    };
                    let cols = head_columns(tape, slot, &kind, &affines, free)?;
                    let lp = log_prob_column(tape, &cols, &y, &mask)?;
                    lp.mul(tape.constant(Tensor::column(mask.clone())))?.sum()
                },
                &point,
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-5, "kind {:?} err {err}", case.kind);
        }
    }

    #[test]
    fn masked_rows_do_not_contribute() {
        let tape = Tape::new();
        let cols = HeadColumns::Poisson {
            rate: tape.constant(Tensor::column(vec![1.0, 2.0])),
        };
        let lp = log_prob_column(&tape, &cols, &[0.0, 0.0], &[1.0, 0.0]).unwrap();
        let masked = lp
            .mul(tape.constant(Tensor::column(vec![1.0, 0.0])))
            .unwrap()
            .sum()
            .unwrap();
        assert_relative_eq!(masked.scalar_value().unwrap(), -1.0, epsilon = 1e-12);
    }
}
