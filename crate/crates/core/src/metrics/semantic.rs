//! Pixel-level IoU and F1 over class masks.

use std::collections::BTreeMap;

use serde::Serialize;

use super::MetricError;
use crate::raster::MaskRaster;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassScores {
    pub iou: f64,
    pub f1: f64,
}

/// Mean IoU and F1 (percentages) over every foreground class present in
/// either mask, plus the per-class values. Two masks without any foreground
/// score 100.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SemanticScores {
    pub iou: f64,
    pub f1: f64,
    pub per_class: BTreeMap<u8, ClassScores>,
}

pub fn semantic_iou_f1(pred: &MaskRaster, gt: &MaskRaster) -> Result<SemanticScores, MetricError> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(MetricError::DimensionMismatch {
            pred: (pred.width(), pred.height()),
            gt: (gt.width(), gt.height()),
        });
    }
    // [tp, fp, fn] per class
    let mut counts = [[0u64; 3]; 256];
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        if p == g {
            counts[p as usize][0] += 1;
        } else {
            counts[p as usize][1] += 1;
            counts[g as usize][2] += 1;
        }
    }
    let mut per_class = BTreeMap::new();
    for (class, &[tp, fp, fn_]) in counts.iter().enumerate().skip(1) {
        if tp + fp + fn_ == 0 {
            continue;
        }
        let iou = tp as f64 / (tp + fp + fn_) as f64;
        let f1 = 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64;
        per_class.insert(
            class as u8,
            ClassScores {
                iou: 100.0 * iou,
                f1: 100.0 * f1,
            },
        );
    }
    if per_class.is_empty() {
        return Ok(SemanticScores {
            iou: 100.0,
            f1: 100.0,
            per_class,
        });
    }
    let k = per_class.len() as f64;
    Ok(SemanticScores {
        iou: per_class.values().map(|c| c.iou).sum::<f64>() / k,
        f1: per_class.values().map(|c| c.f1).sum::<f64>() / k,
        per_class,
    })
}
