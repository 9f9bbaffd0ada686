//! Training objectives with analytic gradients.
//!
//! Depth losses take predictions as plain slices so the trainer can feed
//! network outputs directly; gradients are returned per pixel and injected
//! into the autodiff tape as seeds.

use serde::{Deserialize, Serialize};

use crate::dataio::DepthMap;
use crate::error::{Error, Result};

/// How per-pixel residuals are reduced in the consistency term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsistencyMode {
    /// Root of the mean squared residual.
    #[default]
    Rmse,
    /// Mean of per-pixel absolute residuals.
    Literal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_consistency: f64,
    pub w_smoothness: f64,
    pub w_detection: f64,
    /// Weight of the final-detection term relative to the proposal term.
    pub lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_consistency: 1.0,
            w_smoothness: 0.1,
            w_detection: 1.0,
            lambda: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.w_consistency, self.w_smoothness, self.w_detection, self.lambda];
        if all.iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(Error::Invalid(format!(
                "loss weights must be finite and >= 0: {self:?}"
            )))
        }
    }
}

/// A loss value and its gradient with respect to the inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct WithGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Consistency over pixels where `gt > 0`.
pub fn consistency_with_grad(pred: &[f64], gt: &[f32], mode: ConsistencyMode) -> Result<WithGrad> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!(
            "prediction {} vs ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    let n = gt.iter().filter(|&&g| g > 0.0).count();
    if n == 0 {
        return Err(Error::EmptyRegion("no valid ground-truth pixels".into()));
    }
    let mut grad = vec![0.0; pred.len()];
    let value = match mode {
        ConsistencyMode::Rmse => {
            let sq: f64 = pred
                .iter()
                .zip(gt)
                .filter(|(_, &g)| g > 0.0)
                .map(|(&p, &g)| (p - g as f64).powi(2))
                .sum();
            let rmse = (sq / n as f64).sqrt();
            if rmse > 0.0 {
                for ((d, &p), &g) in grad.iter_mut().zip(pred).zip(gt) {
                    if g > 0.0 {
                        *d = (p - g as f64) / (n as f64 * rmse);
                    }
                }
            }
            rmse
        }
        ConsistencyMode::Literal => {
            let mut total = 0.0;
            for ((d, &p), &g) in grad.iter_mut().zip(pred).zip(gt) {
                if g > 0.0 {
                    let r = p - g as f64;
                    total += r.abs();
                    *d = sign(r) / n as f64;
                }
            }
            total / n as f64
        }
    };
    Ok(WithGrad { value, grad })
}

pub fn consistency_loss(pred: &DepthMap, gt: &DepthMap, mode: ConsistencyMode) -> Result<f64> {
    if !pred.same_size(gt) {
        return Err(Error::Shape(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    let p: Vec<f64> = pred.values().iter().map(|&v| v as f64).collect();
    Ok(consistency_with_grad(&p, gt.values(), mode)?.value)
}

/// Mean over interior pixels of the absolute second differences along x and y.
pub fn smoothness_with_grad(pred: &[f64], width: usize, height: usize) -> Result<WithGrad> {
    if width < 3 || height < 3 {
        return Err(Error::Shape(format!(
            "smoothness needs at least 3x3, got {width}x{height}"
        )));
    }
    if pred.len() != width * height {
        return Err(Error::Shape(format!("{} values for {width}x{height}", pred.len())));
    }
    let m = ((width - 2) * (height - 2)) as f64;
    let mut grad = vec![0.0; pred.len()];
    let mut total = 0.0;
    for y in 1..height - 1 {
        for x in 1..width - 1 {
            let i = y * width + x;
            let dxx = pred[i - 1] - 2.0 * pred[i] + pred[i + 1];
            let dyy = pred[i - width] - 2.0 * pred[i] + pred[i + width];
            total += dxx.abs() + dyy.abs();
            let (sx, sy) = (sign(dxx) / m, sign(dyy) / m);
            grad[i - 1] += sx;
            grad[i + 1] += sx;
            grad[i - width] += sy;
            grad[i + width] += sy;
            grad[i] -= 2.0 * (sx + sy);
        }
    }
    Ok(WithGrad { value: total / m, grad })
}

pub fn smoothness_loss(pred: &DepthMap) -> Result<f64> {
    let p: Vec<f64> = pred.values().iter().map(|&v| v as f64).collect();
    Ok(smoothness_with_grad(&p, pred.width(), pred.height())?.value)
}

/// `w_c * consistency + w_s * smoothness` and its gradient.
pub fn depth_objective(
    pred: &[f64],
    gt: &DepthMap,
    weights: &LossWeights,
    mode: ConsistencyMode,
) -> Result<(f64, f64, Vec<f64>)> {
    let c = consistency_with_grad(pred, gt.values(), mode)?;
    let s = smoothness_with_grad(pred, gt.width(), gt.height())?;
    let grad = c
        .grad
        .iter()
        .zip(&s.grad)
        .map(|(a, b)| weights.w_consistency * a + weights.w_smoothness * b)
        .collect();
    Ok((c.value, s.value, grad))
}

/// Numerically stable `log(1 + e^x)`.
fn log1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Mean binary cross-entropy on logits; `targets` are 0 or 1.
pub fn bce_with_logits(logits: &[f64], targets: &[f64]) -> WithGrad {
    let n = logits.len().max(1) as f64;
    let mut value = 0.0;
    let grad = logits
        .iter()
        .zip(targets)
        .map(|(&z, &t)| {
            value += log1p_exp(z) - t * z;
            (1.0 / (1.0 + (-z).exp()) - t) / n
        })
        .collect();
    WithGrad { value: value / n, grad }
}

/// Mean softmax cross-entropy over rows of `logits` (`rows x classes`).
pub fn softmax_cross_entropy(logits: &[f64], classes: usize, labels: &[usize]) -> WithGrad {
    let rows = labels.len();
    assert_eq!(logits.len(), rows * classes, "logit matrix shape");
    let n = rows.max(1) as f64;
    let mut grad = vec![0.0; logits.len()];
    let mut value = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        let row = &logits[r * classes..(r + 1) * classes];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|z| (z - max).exp()).sum();
        value += max + sum.ln() - row[label];
        for k in 0..classes {
            let p = (row[k] - max).exp() / sum;
            grad[r * classes + k] = (p - if k == label { 1.0 } else { 0.0 }) / n;
        }
    }
    WithGrad { value: value / n, grad }
}

/// Summed smooth-L1 (Huber with transition `beta`); no normalization.
pub fn smooth_l1(pred: &[f64], target: &[f64], beta: f64) -> WithGrad {
    let mut value = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d = p - t;
            if d.abs() < beta {
                value += 0.5 * d * d / beta;
                d / beta
            } else {
                value += d.abs() - 0.5 * beta;
                sign(d)
            }
        })
        .collect();
    WithGrad { value, grad }
}

/// Sub-losses of the two detection stages.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionTerms {
    pub rpn_objectness: f64,
    pub rpn_box: f64,
    pub roi_classification: f64,
    pub roi_box: f64,
}

impl DetectionTerms {
    pub fn proposal(&self) -> f64 {
        self.rpn_objectness + self.rpn_box
    }

    pub fn final_detection(&self) -> f64 {
        self.roi_classification + self.roi_box
    }
}

/// `l_proposal + lambda * l_final`.
pub fn detection_loss(terms: &DetectionTerms, lambda: f64) -> f64 {
    terms.proposal() + lambda * terms.final_detection()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub consistency: f64,
    pub smoothness: f64,
    pub detection: f64,
}

pub fn total_loss(parts: &LossParts, weights: &LossWeights, multitask: bool) -> f64 {
    let det = if multitask {
        weights.w_detection * parts.detection
    } else {
        0.0
    };
    weights.w_consistency * parts.consistency + weights.w_smoothness * parts.smoothness + det
}
