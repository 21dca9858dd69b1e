//! Evaluation metrics for vector layers, label masks and road graphs.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::geometry::LabeledPolygon;
use crate::raster::{polygon_spans, spans_iou, MaskRaster, Span};

mod ap;
mod apls;
mod polygon;
mod semantic;

pub use ap::{instance_ap, iou_thresholds, ApScores, ScoredPolygon, MEDIUM_MAX_AREA, SMALL_MAX_AREA};
pub use apls::{apls, RoadGraph, DEFAULT_PAIRING_RADIUS};
pub use polygon::{ciou, ciou_with_counts, complexity_iou, polis, relative_difference};
pub use semantic::{semantic_iou_f1, ClassScores, SemanticScores};

/// Instance pairing threshold for PoLiS and the match counts.
pub const MATCH_IOU: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("dimension mismatch: prediction {pred:?}, reference {gt:?}")]
    DimensionMismatch { pred: (usize, usize), gt: (usize, usize) },
    #[error("empty-graph: reference graph has no connected node pair")]
    EmptyGraph,
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("apls requested without both graphs")]
    MissingGraphs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    Polis,
    Ciou,
    Ap,
    Iou,
    F1,
    Apls,
}

impl Metric {
    pub const ALL: [Metric; 6] = [Metric::Polis, Metric::Ciou, Metric::Ap, Metric::Iou, Metric::F1, Metric::Apls];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Polis => "polis",
            Metric::Ciou => "ciou",
            Metric::Ap => "ap",
            Metric::Iou => "iou",
            Metric::F1 => "f1",
            Metric::Apls => "apls",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown metric {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct InstanceCounts {
    pub matched: usize,
    pub unmatched_pred: usize,
    pub unmatched_gt: usize,
}

/// Metric values for one predicted layer against its reference. Unrequested
/// or undefined values are absent.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricsReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub polis: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ciou: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iou: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ap_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ap_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ap_l: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub apls: Option<f64>,
    pub counts: InstanceCounts,
}

/// Inputs of [`evaluate_layers`].
pub struct LayerEvaluation<'a> {
    pub pred: &'a [ScoredPolygon],
    pub gt: &'a [LabeledPolygon],
    /// Raster grid (width, height) shared by both layers.
    pub grid: (usize, usize),
    /// Reference labels for the semantic and C-IoU metrics; rasterized from
    /// `gt` when absent.
    pub gt_mask: Option<&'a MaskRaster>,
    pub graphs: Option<(&'a RoadGraph, &'a RoadGraph)>,
    pub pairing_radius: f64,
    pub metrics: BTreeSet<Metric>,
}

impl<'a> LayerEvaluation<'a> {
    pub fn new(pred: &'a [ScoredPolygon], gt: &'a [LabeledPolygon], grid: (usize, usize)) -> Self {
        Self {
            pred,
            gt,
            grid,
            gt_mask: None,
            graphs: None,
            pairing_radius: DEFAULT_PAIRING_RADIUS,
            metrics: [Metric::Polis, Metric::Ciou, Metric::Ap, Metric::Iou, Metric::F1].into(),
        }
    }
}

/// Computes the requested metrics for a predicted layer.
///
/// PoLiS is the mean over prediction/reference pairs matched one-to-one at
/// mask IoU >= 0.5 (highest IoU first), using exterior rings. C-IoU uses the
/// foreground union of each layer and the total vertex counts.
pub fn evaluate_layers(req: &LayerEvaluation<'_>) -> Result<MetricsReport, MetricError> {
    let grid = req.grid;
    if let Some(m) = req.gt_mask {
        if (m.width(), m.height()) != grid {
            return Err(MetricError::DimensionMismatch {
                pred: grid,
                gt: (m.width(), m.height()),
            });
        }
    }
    let pred_spans: Vec<Vec<Span>> = req.pred.par_iter().map(|p| polygon_spans(&p.polygon, Some(grid))).collect();
    let gt_spans: Vec<Vec<Span>> = req.gt.par_iter().map(|g| polygon_spans(&g.polygon, Some(grid))).collect();

    let pairs = match_instances(&pred_spans, &gt_spans);
    let mut report = MetricsReport {
        counts: InstanceCounts {
            matched: pairs.len(),
            unmatched_pred: req.pred.len() - pairs.len(),
            unmatched_gt: req.gt.len() - pairs.len(),
        },
        ..Default::default()
    };
    let wants = |m: Metric| req.metrics.contains(&m);

    if wants(Metric::Polis) && !pairs.is_empty() {
        let total: f64 = pairs
            .par_iter()
            .map(|&(p, g)| polis(req.pred[p].polygon.exterior(), req.gt[g].polygon.exterior()))
            .sum();
        report.polis = Some(total / pairs.len() as f64);
    }

    if wants(Metric::Ciou) || wants(Metric::Iou) || wants(Metric::F1) {
        let mut pred_mask = MaskRaster::new(grid.0, grid.1);
        for (p, spans) in req.pred.iter().zip(&pred_spans) {
            pred_mask.fill_spans(spans, p.class.max(1));
        }
        let gt_mask = match req.gt_mask {
            Some(m) => m.clone(),
            None => {
                let mut m = MaskRaster::new(grid.0, grid.1);
                for (g, spans) in req.gt.iter().zip(&gt_spans) {
                    m.fill_spans(spans, g.class.max(1));
                }
                m
            }
        };
        if wants(Metric::Ciou) {
            let (mut inter, mut union) = (0u64, 0u64);
            for (&a, &b) in pred_mask.labels().iter().zip(gt_mask.labels()) {
                inter += u64::from(a != 0 && b != 0);
                union += u64::from(a != 0 || b != 0);
            }
            let iou = if union == 0 { 0.0 } else { inter as f64 / union as f64 };
            let np: usize = req.pred.iter().map(|p| p.polygon.vertex_count()).sum();
            let ng: usize = req.gt.iter().map(|g| g.polygon.vertex_count()).sum();
            report.ciou = Some(complexity_iou(iou, np, ng));
        }
        if wants(Metric::Iou) || wants(Metric::F1) {
            let s = semantic_iou_f1(&pred_mask, &gt_mask)?;
            report.iou = wants(Metric::Iou).then_some(s.iou);
            report.f1 = wants(Metric::F1).then_some(s.f1);
        }
    }

    if wants(Metric::Ap) {
        let s = ap::instance_ap_from_spans(req.pred, &pred_spans, req.gt, &gt_spans);
        report.ap = s.ap;
        report.ap_s = s.ap_s;
        report.ap_m = s.ap_m;
        report.ap_l = s.ap_l;
    }

    if wants(Metric::Apls) {
        let (g, p) = req.graphs.ok_or(MetricError::MissingGraphs)?;
        report.apls = Some(apls(g, p, req.pairing_radius)?);
    }
    Ok(report)
}

/// One-to-one pairs `(pred, gt)` with mask IoU >= [`MATCH_IOU`], taken in
/// descending IoU order.
pub fn match_instances(pred_spans: &[Vec<Span>], gt_spans: &[Vec<Span>]) -> Vec<(usize, usize)> {
    let p: Vec<&[Span]> = pred_spans.iter().map(Vec::as_slice).collect();
    let g: Vec<&[Span]> = gt_spans.iter().map(Vec::as_slice).collect();
    let cands = candidate_pairs(&span_boxes(&p), &span_boxes(&g));
    let mut scored: Vec<(f64, usize, usize)> = cands
        .par_iter()
        .enumerate()
        .flat_map_iter(|(i, row)| {
            let p = &p;
            let g = &g;
            row.iter()
                .map(move |&j| (spans_iou(p[i], g[j]), i, j))
                .filter(|&(iou, _, _)| iou >= MATCH_IOU)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut pred_used = vec![false; pred_spans.len()];
    let mut gt_used = vec![false; gt_spans.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in scored {
        if !pred_used[i] && !gt_used[j] {
            pred_used[i] = true;
            gt_used[j] = true;
            pairs.push((i, j));
        }
    }
    pairs.sort_unstable();
    pairs
}

// Inclusive pixel box [x0, x1] x [y0, y1].
type PixelBox = (i64, i64, i64, i64);

pub(crate) fn span_boxes(sets: &[&[Span]]) -> Vec<Option<PixelBox>> {
    sets.iter()
        .map(|spans| {
            let first = spans.first()?;
            let mut b = (first.x0, first.y, first.x1 - 1, first.y);
            for s in spans.iter() {
                b.0 = b.0.min(s.x0);
                b.2 = b.2.max(s.x1 - 1);
                b.3 = b.3.max(s.y);
            }
            Some(b)
        })
        .collect()
}

const INDEX_CELL: i64 = 64;

/// For each box in `a`, the indices of boxes in `b` it overlaps, ascending.
pub(crate) fn candidate_pairs(a: &[Option<PixelBox>], b: &[Option<PixelBox>]) -> Vec<Vec<usize>> {
    let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (j, bx) in b.iter().enumerate() {
        let Some((x0, y0, x1, y1)) = *bx else { continue };
        for cy in y0.div_euclid(INDEX_CELL)..=y1.div_euclid(INDEX_CELL) {
            for cx in x0.div_euclid(INDEX_CELL)..=x1.div_euclid(INDEX_CELL) {
                cells.entry((cx, cy)).or_default().push(j);
            }
        }
    }
    a.par_iter()
        .map(|bx| {
            let Some((x0, y0, x1, y1)) = *bx else { return Vec::new() };
            let mut out = Vec::new();
            for cy in y0.div_euclid(INDEX_CELL)..=y1.div_euclid(INDEX_CELL) {
                for cx in x0.div_euclid(INDEX_CELL)..=x1.div_euclid(INDEX_CELL) {
                    if let Some(list) = cells.get(&(cx, cy)) {
                        for &j in list {
                            let (bx0, by0, bx1, by1) = b[j].expect("indexed boxes exist");
                            if bx0 <= x1 && x0 <= bx1 && by0 <= y1 && y0 <= by1 {
                                out.push(j);
                            }
                        }
                    }
                }
            }
            out.sort_unstable();
            out.dedup();
            out
        })
        .collect()
}
