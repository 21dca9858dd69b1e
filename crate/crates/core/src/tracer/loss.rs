//! Training losses for the sequence tracer, each returning its value and
//! the analytic (sub)gradient with respect to the prediction.

use thiserror::Error;

use crate::geometry::Point2;

/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` before the log.
pub const BCE_CLAMP: f64 = 1e-7;

/// Tolerance on per-pixel probability rows for [`cross_entropy`].
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("size mismatch: {0} predictions vs {1} targets")]
    SizeMismatch(usize, usize),
    #[error("label {0} at index {1} is not 0 or 1")]
    InvalidLabel(u8, usize),
    #[error("invalid-distribution: row {row} sums to {sum}")]
    InvalidDistribution { row: usize, sum: f64 },
    #[error("class label {label} at pixel {pixel} is out of range for {classes} classes")]
    ClassOutOfRange { pixel: usize, label: usize, classes: usize },
    #[error("loss weights must be non-negative and finite")]
    InvalidWeights,
}

fn check_len(a: usize, b: usize) -> Result<(), LossError> {
    if a == b {
        Ok(())
    } else {
        Err(LossError::SizeMismatch(a, b))
    }
}

fn check_labels(labels: &[u8]) -> Result<(), LossError> {
    match labels.iter().position(|&c| c > 1) {
        Some(i) => Err(LossError::InvalidLabel(labels[i], i)),
        None => Ok(()),
    }
}

fn smooth_l1_scalar(d: f64) -> (f64, f64) {
    if d.abs() < 1.0 {
        (0.5 * d * d, d)
    } else {
        (d.abs() - 0.5, d.signum())
    }
}

/// Smooth-L1 offset loss summed over both components of every point.
pub fn smooth_l1(pred: &[Point2], target: &[Point2]) -> Result<(f64, Vec<Point2>), LossError> {
    check_len(pred.len(), target.len())?;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d = p - t;
            let (lx, gx) = smooth_l1_scalar(d.x);
            let (ly, gy) = smooth_l1_scalar(d.y);
            loss += lx + ly;
            Point2::new(gx, gy)
        })
        .collect();
    Ok((loss, grad))
}

/// Summed binary cross-entropy of vertex probabilities against 0/1 labels.
///
/// The gradient is zero where clamping is active.
pub fn bce(probs: &[f64], labels: &[u8]) -> Result<(f64, Vec<f64>), LossError> {
    check_len(probs.len(), labels.len())?;
    check_labels(labels)?;
    let mut loss = 0.0;
    let grad = probs
        .iter()
        .zip(labels)
        .map(|(&p, &c)| {
            let q = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            let c = f64::from(c);
            loss -= c * q.ln() + (1.0 - c) * (1.0 - q).ln();
            if q != p {
                0.0
            } else {
                -c / q + (1.0 - c) / (1.0 - q)
            }
        })
        .collect();
    Ok((loss, grad))
}

/// Hinge penalty on the first-neighbour angle: vertices above the threshold
/// and non-vertices below it are penalised by the angular excess.
pub fn angle_penalty(thetas: &[f64], labels: &[u8], threshold: f64) -> Result<(f64, Vec<f64>), LossError> {
    check_len(thetas.len(), labels.len())?;
    check_labels(labels)?;
    let mut loss = 0.0;
    let grad = thetas
        .iter()
        .zip(labels)
        .map(|(&theta, &c)| {
            let excess = if c == 1 { theta - threshold } else { threshold - theta };
            if excess > 0.0 {
                loss += excess;
                if c == 1 {
                    1.0
                } else {
                    -1.0
                }
            } else {
                0.0
            }
        })
        .collect();
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub offset: f64,
    pub vertex: f64,
    pub angle: f64,
}

impl Default for LossWeights {
    /// All three weights are 1.
    fn default() -> Self {
        Self {
            offset: 1.0,
            vertex: 1.0,
            angle: 1.0,
        }
    }
}

pub fn total(offset: f64, vertex: f64, angle: f64, weights: LossWeights) -> Result<f64, LossError> {
    let w = [weights.offset, weights.vertex, weights.angle];
    if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(LossError::InvalidWeights);
    }
    Ok(weights.offset * offset + weights.vertex * vertex + weights.angle * angle)
}

/// Mean per-pixel cross-entropy. `probs` is row-major, one row of
/// `num_classes` probabilities per pixel; `labels` holds the true class of
/// each pixel. A zero probability on the true class is floored at
/// `f64::MIN_POSITIVE` so the result stays finite.
pub fn cross_entropy(probs: &[f64], labels: &[usize], num_classes: usize) -> Result<f64, LossError> {
    check_len(probs.len(), labels.len() * num_classes)?;
    if labels.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (i, (row, &label)) in probs.chunks_exact(num_classes).zip(labels).enumerate() {
        let total: f64 = row.iter().sum();
        if (total - 1.0).abs() > DISTRIBUTION_TOLERANCE || row.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(LossError::InvalidDistribution { row: i, sum: total });
        }
        if label >= num_classes {
            return Err(LossError::ClassOutOfRange {
                pixel: i,
                label,
                classes: num_classes,
            });
        }
        sum -= row[label].max(f64::MIN_POSITIVE).ln();
    }
    Ok(sum / labels.len() as f64)
}
