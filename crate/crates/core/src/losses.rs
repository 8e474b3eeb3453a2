//! Cross-entropy, local class-aware contrastive and global prototype contrastive losses.
//!
//! All three terms are batch means. The contrastive terms operate on L2-normalized
//! representations; [`normalize_rows`] produces them and `nn::backward` chains the
//! gradient back through that normalization.
//!
//! Conventions for the local term: the positives of anchor `i` are the other samples
//! `j != i` sharing its label, the denominator runs over every `k != i`, and an anchor
//! without positives contributes zero while still counting towards the batch mean.
//!
//! The global term keeps the printed denominator: the anchor's own class prototype is
//! left out, so the value can be negative. A sample whose class has no prototype is
//! skipped. Prototypes that were never observed (zero vectors) are also left out of
//! the denominator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, l2_norm, Matrix};
use crate::prototype::PrototypeBank;

/// Smallest probability fed to `ln` when a true class receives zero mass.
pub const PROBABILITY_FLOOR: f64 = 1e-300;

/// Norm below which a representation is treated as zero during normalization.
pub(crate) const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the local class-aware contrastive term.
    pub lambda_local: f64,
    /// Weight of the global prototype contrastive term.
    pub lambda_global: f64,
    /// Temperature shared by both contrastive terms.
    pub temperature: f64,
}

impl LossConfig {
    pub fn new(lambda_local: f64, lambda_global: f64, temperature: f64) -> Result<Self> {
        let cfg = Self {
            lambda_local,
            lambda_global,
            temperature,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Plain cross-entropy training.
    pub fn cross_entropy_only() -> Self {
        Self {
            lambda_local: 0.0,
            lambda_global: 0.0,
            temperature: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::Config(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if !(self.lambda_local >= 0.0) || !(self.lambda_global >= 0.0) {
            return Err(Error::Config(format!(
                "contrastive coefficients must be >= 0, got ({}, {})",
                self.lambda_local, self.lambda_global
            )));
        }
        Ok(())
    }

    pub fn uses_local(&self) -> bool {
        self.lambda_local > 0.0
    }

    pub fn uses_global(&self) -> bool {
        self.lambda_global > 0.0
    }
}

/// Per-term values of one loss evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cross_entropy: f64,
    pub local: f64,
    pub global: f64,
    pub total: f64,
    /// Samples whose global term was skipped for lack of a prototype.
    pub skipped_global: usize,
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Row-wise L2 normalization. Rows with norm below 1e-12 are divided by that floor.
pub fn normalize_rows(reps: &Matrix) -> Matrix {
    let mut out = reps.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let n = l2_norm(row).max(NORM_EPS);
        row.iter_mut().for_each(|v| *v /= n);
    }
    out
}

/// Mean negative log-likelihood of the true classes, reporting how many
/// probabilities had to be clamped at [`PROBABILITY_FLOOR`].
pub fn cross_entropy_diagnostic(probabilities: &Matrix, labels: &[usize]) -> (f64, usize) {
    let n = probabilities.rows();
    let mut clamped = 0;
    let mut sum = 0.0;
    for (i, &y) in labels.iter().enumerate().take(n) {
        let p = probabilities.get(i, y);
        let p = if p < PROBABILITY_FLOOR {
            clamped += 1;
            PROBABILITY_FLOOR
        } else {
            p
        };
        sum -= p.ln();
    }
    (sum / n as f64, clamped)
}

pub fn cross_entropy(probabilities: &Matrix, labels: &[usize]) -> f64 {
    let (value, clamped) = cross_entropy_diagnostic(probabilities, labels);
    if clamped > 0 {
        log::warn!("cross-entropy clamped {clamped} zero true-class probabilities");
    }
    value
}

/// Cross-entropy evaluated from logits through log-sum-exp.
pub fn cross_entropy_from_logits(logits: &Matrix, labels: &[usize]) -> f64 {
    let n = logits.rows();
    let sum: f64 = (0..n)
        .map(|i| {
            let row = logits.row(i);
            log_sum_exp(row.iter().copied()) - row[labels[i]]
        })
        .sum();
    sum / n as f64
}

/// Supervised contrastive term over a batch. Representations are L2-normalized
/// first; anchors without another sample of their class contribute zero.
pub fn local_contrastive(reps: &Matrix, labels: &[usize], temperature: f64) -> Result<f64> {
    check_labels(reps, labels)?;
    Ok(local_contrastive_with_grad(&normalize_rows(reps), labels, temperature, false)?.0)
}

/// Local contrastive loss and, when requested, its gradient with respect to the
/// (already normalized) representations.
pub(crate) fn local_contrastive_with_grad(
    reps: &Matrix,
    labels: &[usize],
    temperature: f64,
    want_grad: bool,
) -> Result<(f64, Option<Matrix>)> {
    check_temperature(temperature)?;
    let n = reps.rows();
    let mut grad = want_grad.then(|| Matrix::zeros(n, reps.cols()));
    if n == 0 {
        return Ok((0.0, grad));
    }
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;
    let mut scaled = vec![0.0; n];
    for i in 0..n {
        let positives = (0..n).filter(|&j| j != i && labels[j] == labels[i]).count();
        if positives == 0 {
            continue;
        }
        let zi = reps.row(i);
        for (k, s) in scaled.iter_mut().enumerate() {
            *s = if k == i {
                f64::NEG_INFINITY
            } else {
                dot(zi, reps.row(k)) / temperature
            };
        }
        let lse = log_sum_exp(scaled.iter().copied());
        let pos_mean: f64 = (0..n)
            .filter(|&j| j != i && labels[j] == labels[i])
            .map(|j| scaled[j])
            .sum::<f64>()
            / positives as f64;
        total += lse - pos_mean;

        if let Some(g) = grad.as_mut() {
            // d loss_i / d s_ik = (softmax_k - [k positive] / |P|) / tau
            for k in 0..n {
                if k == i {
                    continue;
                }
                let mut coeff = (scaled[k] - lse).exp();
                if labels[k] == labels[i] {
                    coeff -= 1.0 / positives as f64;
                }
                coeff *= inv_n / temperature;
                if coeff == 0.0 {
                    continue;
                }
                for d in 0..reps.cols() {
                    let gi = coeff * reps.get(k, d);
                    let gk = coeff * reps.get(i, d);
                    g.set(i, d, g.get(i, d) + gi);
                    g.set(k, d, g.get(k, d) + gk);
                }
            }
        }
    }
    Ok((total * inv_n, grad))
}

/// Value of the global term together with the number of skipped samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalContrastive {
    pub value: f64,
    pub skipped: usize,
}

/// Prototype contrastive term over a batch. Representations are L2-normalized
/// first. Samples whose class has no prototype are skipped but still count in
/// the batch mean.
pub fn global_contrastive(
    reps: &Matrix,
    labels: &[usize],
    prototypes: &PrototypeBank,
    temperature: f64,
) -> Result<GlobalContrastive> {
    check_labels(reps, labels)?;
    let (value, skipped, _) = global_contrastive_with_grad(
        &normalize_rows(reps),
        labels,
        prototypes,
        temperature,
        false,
    )?;
    if skipped > 0 {
        log::warn!("global contrastive term skipped {skipped} samples without a class prototype");
    }
    Ok(GlobalContrastive { value, skipped })
}

pub(crate) fn global_contrastive_with_grad(
    reps: &Matrix,
    labels: &[usize],
    prototypes: &PrototypeBank,
    temperature: f64,
    want_grad: bool,
) -> Result<(f64, usize, Option<Matrix>)> {
    check_temperature(temperature)?;
    if prototypes.rep_dim() != reps.cols() {
        return Err(Error::Config(format!(
            "prototype width {} does not match representation width {}",
            prototypes.rep_dim(),
            reps.cols()
        )));
    }
    let n = reps.rows();
    let classes = prototypes.class_count();
    let mut grad = want_grad.then(|| Matrix::zeros(n, reps.cols()));
    if n == 0 {
        return Ok((0.0, 0, grad));
    }
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;
    let mut skipped = 0;
    let mut scaled = vec![0.0; classes];
    for i in 0..n {
        let y = labels[i];
        if y >= classes || !prototypes.has_vector(y) {
            skipped += 1;
            continue;
        }
        let zi = reps.row(i);
        for (c, s) in scaled.iter_mut().enumerate() {
            *s = if prototypes.has_vector(c) {
                dot(zi, prototypes.vector(c)) / temperature
            } else {
                f64::NEG_INFINITY
            };
        }
        let others = (0..classes).filter(|&k| k != y).map(|k| scaled[k]);
        let lse = log_sum_exp(others);
        if lse == f64::NEG_INFINITY {
            // only the anchor's own prototype is known
            skipped += 1;
            continue;
        }
        total += lse - scaled[y];

        if let Some(g) = grad.as_mut() {
            let row = g.row_mut(i);
            for k in 0..classes {
                let coeff = if k == y {
                    -1.0
                } else if scaled[k] == f64::NEG_INFINITY {
                    continue;
                } else {
                    (scaled[k] - lse).exp()
                };
                let coeff = coeff * inv_n / temperature;
                for (r, p) in row.iter_mut().zip(prototypes.vector(k)) {
                    *r += coeff * p;
                }
            }
        }
    }
    Ok((total * inv_n, skipped, grad))
}

pub fn total_loss(cross_entropy: f64, local: f64, global: f64, config: &LossConfig) -> f64 {
    cross_entropy + config.lambda_local * local + config.lambda_global * global
}

fn check_labels(reps: &Matrix, labels: &[usize]) -> Result<()> {
    if reps.rows() == labels.len() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{} representations but {} labels",
            reps.rows(),
            labels.len()
        )))
    }
}

fn check_temperature(temperature: f64) -> Result<()> {
    if temperature > 0.0 && temperature.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "temperature must be > 0, got {temperature}"
        )))
    }
}
