//! Heterogeneous observation likelihoods.
//!
//! Each feature of the data table is modelled by one of five likelihoods.
//! The decoder emits a slot vector per feature; per-feature affine heads map
//! the slot to unconstrained outputs, and link functions constrain them to
//! valid parameter domains structurally (softplus for positivity, cumulative
//! softplus for ordered thresholds) — never by clipping.
//!
//! Value-mode functions here ([`log_prob`], [`LikelihoodParams::sample`],
//! [`LikelihoodParams::point_estimate`]) operate on plain floats and serve
//! prediction and evaluation; [`graph`] holds the vectorized tape
//! counterparts used inside the training objective.

pub mod graph;

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson as PoissonDist};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{raw, Tensor};

/// Variance floor added to softplus outputs of Gaussian heads.
pub const GAUSSIAN_VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum LikelihoodError {
    #[error("domain violation: {0}")]
    DomainViolation(String),
}

/// Observation model of a single feature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Likelihood {
    /// Gaussian with decoded mean and variance; `bounded` selects a sigmoid
    /// mean link for features living in [0, 1].
    Gaussian { bounded: bool },
    /// Gaussian with decoded mean and one trainable variance per feature.
    GaussianFreeVariance,
    LogNormal,
    Poisson,
    Categorical { cardinality: usize },
    Ordinal { cardinality: usize },
}

impl Likelihood {
    pub fn cardinality(&self) -> Option<usize> {
        match self {
            Likelihood::Categorical { cardinality } | Likelihood::Ordinal { cardinality } => {
                Some(*cardinality)
            }
            _ => None,
        }
    }

    pub fn is_discrete_level(&self) -> bool {
        matches!(self, Likelihood::Categorical { .. } | Likelihood::Ordinal { .. })
    }

    /// Checks a raw value against the likelihood's domain.
    pub fn check_domain(&self, y: f64) -> Result<(), LikelihoodError> {
        match self {
            Likelihood::Gaussian { .. } | Likelihood::GaussianFreeVariance => Ok(()),
            Likelihood::LogNormal => {
                if y > 0.0 {
                    Ok(())
                } else {
                    Err(LikelihoodError::DomainViolation(format!(
                        "log-normal value must be strictly positive, got {y}"
                    )))
                }
            }
            Likelihood::Poisson => {
                if y >= 0.0 && y.fract() == 0.0 {
                    Ok(())
                } else {
                    Err(LikelihoodError::DomainViolation(format!(
                        "count value must be a non-negative integer, got {y}"
                    )))
                }
            }
            Likelihood::Categorical { cardinality } | Likelihood::Ordinal { cardinality } => {
                if y.fract() == 0.0 && y >= 0.0 && (y as usize) < *cardinality {
                    Ok(())
                } else {
                    Err(LikelihoodError::DomainViolation(format!(
                        "level must be an integer in 0..{}, got {y}",
                        cardinality
                    )))
                }
            }
        }
    }
}

/// Decoded likelihood parameters for one cell.
#[derive(Debug, Clone, PartialEq)]
pub enum LikelihoodParams {
    Gaussian { mean: f64, var: f64 },
    LogNormal { mu: f64, var: f64 },
    Poisson { rate: f64 },
    /// Full logit vector; the first entry is pinned to 0 before normalization.
    Categorical { logits: Vec<f64> },
    /// Partition score and strictly increasing thresholds (length R−1).
    Ordinal { score: f64, thresholds: Vec<f64> },
}

/// log Γ(y+1) for non-negative integer y.
pub fn ln_factorial(y: u64) -> f64 {
    (2..=y).map(|k| (k as f64).ln()).sum()
}

fn log_sigmoid(x: f64) -> f64 {
    -raw::softplus(-x)
}

/// Log of σ(a) − σ(b) for a > b, kept stable via
/// log σ(a) + log σ(−b) + log1p(−exp(b − a)).
fn log_sigmoid_diff(a: f64, b: f64) -> f64 {
    log_sigmoid(a) + log_sigmoid(-b) + (-((b - a).exp())).ln_1p()
}

/// Log-probability of a raw value under decoded parameters.
pub fn log_prob(y: f64, params: &LikelihoodParams) -> Result<f64, LikelihoodError> {
    const HALF_LN_2PI: f64 = 0.9189385332046727;
    match params {
        LikelihoodParams::Gaussian { mean, var } => {
            Ok(-HALF_LN_2PI - 0.5 * var.ln() - (y - mean) * (y - mean) / (2.0 * var))
        }
        LikelihoodParams::LogNormal { mu, var } => {
            if y <= 0.0 {
                return Err(LikelihoodError::DomainViolation(format!(
                    "log-normal value must be strictly positive, got {y}"
                )));
            }
            let ly = y.ln();
            Ok(-ly - HALF_LN_2PI - 0.5 * var.ln() - (ly - mu) * (ly - mu) / (2.0 * var))
        }
        LikelihoodParams::Poisson { rate } => {
            if y < 0.0 || y.fract() != 0.0 {
                return Err(LikelihoodError::DomainViolation(format!(
                    "count value must be a non-negative integer, got {y}"
                )));
            }
            let terms = if y == 0.0 { 0.0 } else { y * rate.ln() };
            Ok(terms - rate - ln_factorial(y as u64))
        }
        LikelihoodParams::Categorical { logits } => {
            let r = logits.len();
            let k = check_level(y, r)?;
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            Ok(logits[k] - lse)
        }
        LikelihoodParams::Ordinal { score, thresholds } => {
            let r = thresholds.len() + 1;
            let k = check_level(y, r)?;
            Ok(ordinal_level_log_prob(*score, thresholds, k))
        }
    }
}

fn check_level(y: f64, r: usize) -> Result<usize, LikelihoodError> {
    if y.fract() != 0.0 || y < 0.0 || (y as usize) >= r {
        return Err(LikelihoodError::DomainViolation(format!(
            "level must be an integer in 0..{r}, got {y}"
        )));
    }
    Ok(y as usize)
}

fn ordinal_level_log_prob(score: f64, thresholds: &[f64], level: usize) -> f64 {
    let r = thresholds.len() + 1;
    if level == 0 {
        log_sigmoid(thresholds[0] - score)
    } else if level == r - 1 {
        log_sigmoid(score - thresholds[r - 2])
    } else {
        log_sigmoid_diff(thresholds[level] - score, thresholds[level - 1] - score)
    }
}

impl LikelihoodParams {
    /// Exact draw from the decoded distribution.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            LikelihoodParams::Gaussian { mean, var } => {
                Normal::new(*mean, var.max(0.0).sqrt()).expect("finite parameters").sample(rng)
            }
            LikelihoodParams::LogNormal { mu, var } => {
                Normal::new(*mu, var.max(0.0).sqrt()).expect("finite parameters").sample(rng).exp()
            }
            LikelihoodParams::Poisson { rate } => {
                PoissonDist::new(*rate).expect("positive rate").sample(rng)
            }
            LikelihoodParams::Categorical { .. } | LikelihoodParams::Ordinal { .. } => {
                let probs = self.class_probabilities().expect("discrete likelihood");
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (k, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return k as f64;
                    }
                }
                (probs.len() - 1) as f64
            }
        }
    }

    /// Deterministic summary used by the error metrics: the distribution mean
    /// for numeric likelihoods, the modal class for discrete ones (ties break
    /// toward the lowest index).
    pub fn point_estimate(&self) -> f64 {
        match self {
            LikelihoodParams::Gaussian { mean, .. } => *mean,
            LikelihoodParams::LogNormal { mu, var } => (mu + 0.5 * var).exp(),
            LikelihoodParams::Poisson { rate } => *rate,
            LikelihoodParams::Categorical { .. } | LikelihoodParams::Ordinal { .. } => {
                let probs = self.class_probabilities().expect("discrete likelihood");
                let mut best = 0usize;
                for (k, p) in probs.iter().enumerate() {
                    if *p > probs[best] {
                        best = k;
                    }
                }
                best as f64
            }
        }
    }

    /// Mean of the distribution, when defined as a real number.
    pub fn mean_value(&self) -> Option<f64> {
        match self {
            LikelihoodParams::Gaussian { mean, .. } => Some(*mean),
            LikelihoodParams::LogNormal { mu, var } => Some((mu + 0.5 * var).exp()),
            LikelihoodParams::Poisson { rate } => Some(*rate),
            _ => None,
        }
    }

    pub fn variance_value(&self) -> Option<f64> {
        match self {
            LikelihoodParams::Gaussian { var, .. } => Some(*var),
            LikelihoodParams::LogNormal { mu, var } => {
                Some((var.exp() - 1.0) * (2.0 * mu + var).exp())
            }
            LikelihoodParams::Poisson { rate } => Some(*rate),
            _ => None,
        }
    }

    /// Class probabilities for categorical and ordinal parameters.
    pub fn class_probabilities(&self) -> Option<Vec<f64>> {
        match self {
            LikelihoodParams::Categorical { logits } => {
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
                let z: f64 = exps.iter().sum();
                Some(exps.iter().map(|e| e / z).collect())
            }
            LikelihoodParams::Ordinal { score, thresholds } => {
                let r = thresholds.len() + 1;
                Some((0..r).map(|k| ordinal_level_log_prob(*score, thresholds, k).exp()).collect())
            }
            _ => None,
        }
    }
}

/// Borrowed view of one feature head's trainable tensors.
pub struct HeadWeights<'a> {
    /// Affine maps h_1..h_W as (weight s×out, bias 1×out) pairs.
    pub affines: Vec<(&'a Tensor, &'a Tensor)>,
    /// Free-variance raw scalar (Gaussian) or raw threshold increments (ordinal).
    pub free: Option<&'a Tensor>,
}

fn affine(slot: &[f64], weight: &Tensor, bias: &Tensor) -> Vec<f64> {
    let (s, out) = weight.dims2().expect("2-D head weight");
    debug_assert_eq!(s, slot.len());
    let mut v = bias.values().to_vec();
    for (i, x) in slot.iter().enumerate() {
        for j in 0..out {
            v[j] += x * weight.at2(i, j);
        }
    }
    v
}

/// Maps one homogeneous-layer slot through a feature head's parameter
/// networks and link functions.
pub fn decode_head(
    slot: &[f64],
    kind: &Likelihood,
    weights: &HeadWeights<'_>,
) -> LikelihoodParams {
    match kind {
        Likelihood::Gaussian { bounded } => {
            let pre_mean = affine(slot, weights.affines[0].0, weights.affines[0].1)[0];
            let mean = if *bounded { raw::sigmoid(pre_mean) } else { pre_mean };
            let pre_var = affine(slot, weights.affines[1].0, weights.affines[1].1)[0];
            LikelihoodParams::Gaussian {
                mean,
                var: raw::softplus(pre_var) + GAUSSIAN_VARIANCE_FLOOR,
            }
        }
        Likelihood::GaussianFreeVariance => {
            let mean = affine(slot, weights.affines[0].0, weights.affines[0].1)[0];
            let raw_var = weights.free.expect("free-variance scalar").values()[0];
            LikelihoodParams::Gaussian {
                mean,
                var: raw::softplus(raw_var) + GAUSSIAN_VARIANCE_FLOOR,
            }
        }
        Likelihood::LogNormal => {
            let mu = affine(slot, weights.affines[0].0, weights.affines[0].1)[0];
            let pre_var = affine(slot, weights.affines[1].0, weights.affines[1].1)[0];
            LikelihoodParams::LogNormal { mu, var: raw::softplus(pre_var) }
        }
        Likelihood::Poisson => {
            let pre = affine(slot, weights.affines[0].0, weights.affines[0].1)[0];
            LikelihoodParams::Poisson { rate: raw::softplus(pre) }
        }
        Likelihood::Categorical { cardinality } => {
            let tail = affine(slot, weights.affines[0].0, weights.affines[0].1);
            debug_assert_eq!(tail.len(), cardinality - 1);
            let mut logits = Vec::with_capacity(*cardinality);
            logits.push(0.0);
            logits.extend(tail);
            LikelihoodParams::Categorical { logits }
        }
        Likelihood::Ordinal { cardinality } => {
            let pre = affine(slot, weights.affines[0].0, weights.affines[0].1)[0];
            let score = raw::softplus(pre);
            let raw_inc = weights.free.expect("ordinal threshold increments");
            debug_assert_eq!(raw_inc.len(), cardinality - 1);
            let mut thresholds = Vec::with_capacity(cardinality - 1);
            let mut acc = 0.0;
            for v in raw_inc.values() {
                acc += raw::softplus(*v);
                thresholds.push(acc);
            }
            LikelihoodParams::Ordinal { score, thresholds }
        }
    }
}
