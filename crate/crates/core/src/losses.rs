//! Training losses: photometric L1, silhouette L1, offset regularizer and
//! their weighted sum.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{same_dims, ImageRef, MetricError};

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error(transparent)]
    Dimensions(#[from] MetricError),
    #[error("loss weight {name} must be finite and non-negative, got {value}")]
    Weight { name: &'static str, value: f64 },
}

/// Weights of the total loss and the offset target `eps` (meters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_l1: f64,
    pub lambda_lpips: f64,
    pub lambda_mask: f64,
    pub lambda_offset: f64,
    pub eps: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_l1: 1.0, lambda_lpips: 1.0, lambda_mask: 1.0, lambda_offset: 0.1, eps: 1e-4 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        let all = [
            ("lambda_l1", self.lambda_l1),
            ("lambda_lpips", self.lambda_lpips),
            ("lambda_mask", self.lambda_mask),
            ("lambda_offset", self.lambda_offset),
            ("eps", self.eps),
        ];
        for (name, value) in all {
            if !(value.is_finite() && value >= 0.0) {
                return Err(LossError::Weight { name, value });
            }
        }
        Ok(())
    }
}

/// Perceptual distance provided by an external pretrained network.
pub trait PerceptualLoss {
    fn distance(&self, rendered: ImageRef<'_>, target: ImageRef<'_>) -> f64;
}

/// Mean absolute difference over every value.
pub fn l1_loss(a: ImageRef<'_>, b: ImageRef<'_>) -> Result<f64, LossError> {
    same_dims(&a, &b)?;
    if a.data.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = a.data.iter().zip(b.data).map(|(&x, &y)| (f64::from(x) - f64::from(y)).abs()).sum();
    Ok(sum / a.data.len() as f64)
}

/// `d l1_loss / d a`, using 0 as the subgradient where `a == b`.
pub fn l1_loss_grad(a: ImageRef<'_>, b: ImageRef<'_>) -> Result<Vec<f32>, LossError> {
    same_dims(&a, &b)?;
    let n = a.data.len().max(1) as f32;
    Ok(a.data
        .iter()
        .zip(b.data)
        .map(|(&x, &y)| if x > y { 1.0 / n } else if x < y { -1.0 / n } else { 0.0 })
        .collect())
}

/// L1 between a rendered alpha channel and a ground-truth mask.
pub fn mask_loss(alpha: ImageRef<'_>, mask: ImageRef<'_>) -> Result<f64, LossError> {
    l1_loss(alpha, mask)
}

/// Mean over points of `(|O_k| - eps)²`.
pub fn offset_reg(offsets: &[[f32; 3]], eps: f64) -> f64 {
    if offsets.is_empty() {
        return 0.0;
    }
    let sum: f64 = offsets.iter().map(|o| (norm(o) - eps).powi(2)).sum();
    sum / offsets.len() as f64
}

/// Gradient of [`offset_reg`] with respect to each offset. At `O_k = 0` the
/// magnitude is not differentiable and the zero subgradient is returned.
pub fn offset_reg_grad(offsets: &[[f32; 3]], eps: f64) -> Vec<[f64; 3]> {
    let m = offsets.len() as f64;
    offsets
        .iter()
        .map(|o| {
            let n = norm(o);
            if n == 0.0 {
                return [0.0; 3];
            }
            let s = 2.0 * (n - eps) / (m * n);
            [s * f64::from(o[0]), s * f64::from(o[1]), s * f64::from(o[2])]
        })
        .collect()
}

fn norm(o: &[f32; 3]) -> f64 {
    o.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt()
}

/// Unweighted loss terms. `lpips` is `None` when no perceptual network is
/// plugged in, which contributes 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub l1: f64,
    pub lpips: Option<f64>,
    pub mask: f64,
    pub offset: f64,
}

impl LossParts {
    pub fn compute(
        rendered: ImageRef<'_>,
        target: ImageRef<'_>,
        alpha: ImageRef<'_>,
        mask: ImageRef<'_>,
        offsets: &[[f32; 3]],
        eps: f64,
        perceptual: Option<&dyn PerceptualLoss>,
    ) -> Result<Self, LossError> {
        Ok(Self {
            l1: l1_loss(rendered, target)?,
            lpips: perceptual.map(|p| p.distance(rendered, target)),
            mask: mask_loss(alpha, mask)?,
            offset: offset_reg(offsets, eps),
        })
    }
}

pub fn total_loss(parts: &LossParts, weights: &LossWeights) -> f64 {
    weights.lambda_l1 * parts.l1
        + weights.lambda_lpips * parts.lpips.unwrap_or(0.0)
        + weights.lambda_mask * parts.mask
        + weights.lambda_offset * parts.offset
}
