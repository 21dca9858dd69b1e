//! COCO-style instance average precision.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::Serialize;

use super::{candidate_pairs, span_boxes};
use crate::geometry::{LabeledPolygon, PolygonWithHoles};
use crate::raster::{polygon_spans, spans_area, spans_iou, Span};

pub const SMALL_MAX_AREA: f64 = 128.0 * 128.0;
pub const MEDIUM_MAX_AREA: f64 = 512.0 * 512.0;
const RECALL_POINTS: usize = 101;

/// A predicted instance with its ranking score.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPolygon {
    pub class: u8,
    pub polygon: PolygonWithHoles,
    pub score: f64,
}

/// AP over IoU thresholds 0.50..0.95, as percentages. A size bin with no
/// reference instance of any class is `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ApScores {
    pub ap: Option<f64>,
    pub ap_s: Option<f64>,
    pub ap_m: Option<f64>,
    pub ap_l: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum AreaRange {
    All,
    Small,
    Medium,
    Large,
}

impl AreaRange {
    fn contains(self, area: f64) -> bool {
        match self {
            AreaRange::All => true,
            AreaRange::Small => area <= SMALL_MAX_AREA,
            AreaRange::Medium => (SMALL_MAX_AREA..=MEDIUM_MAX_AREA).contains(&area),
            AreaRange::Large => area >= MEDIUM_MAX_AREA,
        }
    }
}

pub fn iou_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

// Per-class data: detections sorted by descending score, their areas and
// sparse IoU rows against the class's references.
struct ClassData {
    det_area: Vec<f64>,
    gt_area: Vec<f64>,
    ious: Vec<Vec<(usize, f64)>>,
}

/// Instance AP with greedy score-ordered matching and 101-point
/// interpolation, averaged over classes that have references. Areas are
/// pixel counts of the rasterized polygons; `grid` clips rasterization.
pub fn instance_ap(preds: &[ScoredPolygon], gts: &[LabeledPolygon], grid: Option<(usize, usize)>) -> ApScores {
    let pred_spans: Vec<Vec<Span>> = preds.par_iter().map(|p| polygon_spans(&p.polygon, grid)).collect();
    let gt_spans: Vec<Vec<Span>> = gts.par_iter().map(|g| polygon_spans(&g.polygon, grid)).collect();
    instance_ap_from_spans(preds, &pred_spans, gts, &gt_spans)
}

pub(crate) fn instance_ap_from_spans(
    preds: &[ScoredPolygon],
    pred_spans: &[Vec<Span>],
    gts: &[LabeledPolygon],
    gt_spans: &[Vec<Span>],
) -> ApScores {
    let classes: BTreeSet<u8> = gts.iter().map(|g| g.class).collect();
    let data: Vec<ClassData> = classes
        .iter()
        .map(|&c| {
            let mut dets: Vec<usize> = (0..preds.len()).filter(|&i| preds[i].class == c).collect();
            dets.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score).then(a.cmp(&b)));
            let refs: Vec<usize> = (0..gts.len()).filter(|&i| gts[i].class == c).collect();
            let det_spans: Vec<&[Span]> = dets.iter().map(|&i| pred_spans[i].as_slice()).collect();
            let ref_spans: Vec<&[Span]> = refs.iter().map(|&i| gt_spans[i].as_slice()).collect();
            let cands = candidate_pairs(&span_boxes(&det_spans), &span_boxes(&ref_spans));
            let ious = cands
                .par_iter()
                .enumerate()
                .map(|(d, row)| {
                    row.iter()
                        .map(|&g| (g, spans_iou(det_spans[d], ref_spans[g])))
                        .filter(|&(_, iou)| iou > 0.0)
                        .collect()
                })
                .collect();
            ClassData {
                det_area: det_spans.iter().map(|s| spans_area(s) as f64).collect(),
                gt_area: ref_spans.iter().map(|s| spans_area(s) as f64).collect(),
                ious,
            }
        })
        .collect();

    let score = |range: AreaRange| -> Option<f64> {
        let per_class: Vec<f64> = data.iter().filter_map(|d| class_ap(d, range)).collect();
        if per_class.is_empty() {
            None
        } else {
            Some(100.0 * per_class.iter().sum::<f64>() / per_class.len() as f64)
        }
    };
    ApScores {
        ap: score(AreaRange::All),
        ap_s: score(AreaRange::Small),
        ap_m: score(AreaRange::Medium),
        ap_l: score(AreaRange::Large),
    }
}

fn class_ap(d: &ClassData, range: AreaRange) -> Option<f64> {
    let gt_ignore: Vec<bool> = d.gt_area.iter().map(|&a| !range.contains(a)).collect();
    let positives = gt_ignore.iter().filter(|&&i| !i).count();
    if positives == 0 {
        return None;
    }
    // Non-ignored references are tried first.
    let mut gt_order: Vec<usize> = (0..d.gt_area.len()).collect();
    gt_order.sort_by_key(|&g| gt_ignore[g]);
    let mut rank = vec![0; gt_order.len()];
    for (r, &g) in gt_order.iter().enumerate() {
        rank[g] = r;
    }

    let thresholds = iou_thresholds();
    let per_threshold: Vec<f64> = thresholds
        .iter()
        .map(|&t| {
            let mut gt_taken = vec![false; d.gt_area.len()];
            let mut tp = Vec::with_capacity(d.det_area.len());
            for (det, row) in d.ious.iter().enumerate() {
                let mut sorted: Vec<(usize, f64)> = row.clone();
                sorted.sort_by_key(|&(g, _)| rank[g]);
                let mut best = t.min(1.0 - 1e-10);
                let mut matched: Option<usize> = None;
                for &(g, iou) in &sorted {
                    if gt_taken[g] {
                        continue;
                    }
                    if let Some(m) = matched {
                        if !gt_ignore[m] && gt_ignore[g] {
                            break;
                        }
                    }
                    if iou < best {
                        continue;
                    }
                    best = iou;
                    matched = Some(g);
                }
                match matched {
                    Some(g) => {
                        gt_taken[g] = true;
                        if !gt_ignore[g] {
                            tp.push(Some(true));
                        } else {
                            tp.push(None);
                        }
                    }
                    None if range.contains(d.det_area[det]) => tp.push(Some(false)),
                    None => tp.push(None),
                }
            }
            interpolated_ap(&tp, positives)
        })
        .collect();
    Some(per_threshold.iter().sum::<f64>() / per_threshold.len() as f64)
}

// `outcomes` in score order: Some(true) = TP, Some(false) = FP, None = ignored.
fn interpolated_ap(outcomes: &[Option<bool>], positives: usize) -> f64 {
    let mut recall = Vec::new();
    let mut precision = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    for o in outcomes.iter().flatten() {
        if *o {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / positives as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    for i in (1..precision.len()).rev() {
        if precision[i] > precision[i - 1] {
            precision[i - 1] = precision[i];
        }
    }
    let mut sum = 0.0;
    for k in 0..RECALL_POINTS {
        let r = k as f64 / (RECALL_POINTS - 1) as f64;
        let idx = recall.partition_point(|&x| x < r);
        if idx < precision.len() {
            sum += precision[idx];
        }
    }
    sum / RECALL_POINTS as f64
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::geometry::{Point2, Ring};

    fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> PolygonWithHoles {
        PolygonWithHoles::from_exterior(
            Ring::new(vec![
                Point2::new(x0, y0),
                Point2::new(x1, y0),
                Point2::new(x1, y1),
                Point2::new(x0, y1),
            ])
            .unwrap(),
        )
    }

    fn gt(p: PolygonWithHoles) -> LabeledPolygon {
        LabeledPolygon { class: 1, polygon: p }
    }

    fn pred(p: PolygonWithHoles, score: f64) -> ScoredPolygon {
        ScoredPolygon {
            class: 1,
            polygon: p,
            score,
        }
    }

    // Brute force: count the thresholds at which the single pair matches.
    fn single_pair_oracle(iou: f64) -> f64 {
        let hits = (0..10).filter(|i| iou >= (50 + 5 * i) as f64 / 100.0).count();
        100.0 * hits as f64 / 10.0
    }

    #[test]
    fn examples() {
        let g = vec![gt(rect(0.0, 0.0, 10.0, 10.0))];
        let s = instance_ap(&[pred(rect(0.0, 0.0, 10.0, 10.0), 0.9)], &g, None);
        assert_eq!(s.ap, Some(100.0));
        assert_eq!(s.ap_s, Some(100.0));
        assert_eq!((s.ap_m, s.ap_l), (None, None));

        // 60 px overlap of 100 px: IoU exactly 0.6
        let p = rect(0.0, 0.0, 10.0, 6.0);
        let iou = spans_iou(&polygon_spans(&p, None), &polygon_spans(&g[0].polygon, None));
        assert_eq!(iou, 0.6);
        let s = instance_ap(&[pred(p, 0.5)], &g, None);
        assert!((s.ap.unwrap() - 30.0).abs() < 1e-12);
        assert!((s.ap.unwrap() - single_pair_oracle(iou)).abs() < 1e-12);

        assert_eq!(instance_ap(&[], &g, None).ap, Some(0.0));
        assert_eq!(instance_ap(&[], &[], None).ap, None);
    }

    #[test]
    fn classes_are_separate() {
        let g = vec![gt(rect(0.0, 0.0, 10.0, 10.0))];
        let mut p = pred(rect(0.0, 0.0, 10.0, 10.0), 0.9);
        p.class = 2;
        assert_eq!(instance_ap(&[p], &g, None).ap, Some(0.0));
    }

    #[test]
    fn ranking_matters() {
        let g = vec![gt(rect(0.0, 0.0, 10.0, 10.0)), gt(rect(20.0, 0.0, 30.0, 10.0))];
        let good = pred(rect(0.0, 0.0, 10.0, 10.0), 0.9);
        let bad = pred(rect(50.0, 50.0, 60.0, 60.0), 0.95);
        let s = instance_ap(&[good.clone(), bad.clone()], &g, None);
        // FP first: precision 0.5 up to recall 0.5, nothing beyond
        assert!((s.ap.unwrap() - 100.0 * 0.5 * 51.0 / 101.0).abs() < 1e-12);
        let mut bad_low = bad;
        bad_low.score = 0.1;
        let s = instance_ap(&[good, bad_low], &g, None);
        assert!((s.ap.unwrap() - 100.0 * 51.0 / 101.0).abs() < 1e-12);
    }

    #[test]
    fn large_bin_uses_pixel_area() {
        let g = vec![gt(rect(0.0, 0.0, 600.0, 600.0)), gt(rect(700.0, 0.0, 710.0, 10.0))];
        let s = instance_ap(&[pred(rect(0.0, 0.0, 600.0, 600.0), 0.8)], &g, None);
        assert_eq!(s.ap_l, Some(100.0));
        assert_eq!(s.ap_s, Some(0.0));
        assert_eq!(s.ap_m, None);
    }

    proptest! {
        #[test]
        fn adding_a_correct_prediction_never_hurts(
            boxes in proptest::collection::vec((0u32..20, 0u32..20, 3u32..8, 0.0f64..1.0), 1..8),
            which in 0usize..8,
            score in 0.0f64..1.0,
        ) {
            let gts: Vec<LabeledPolygon> = boxes
                .iter()
                .map(|&(x, y, s, _)| gt(rect((x * 10) as f64, (y * 10) as f64, (x * 10 + s) as f64, (y * 10 + s) as f64)))
                .collect();
            let preds: Vec<ScoredPolygon> = boxes
                .iter()
                .step_by(2)
                .map(|&(x, y, s, sc)| pred(rect((x * 10 + 1) as f64, (y * 10) as f64, (x * 10 + s + 1) as f64, (y * 10 + s) as f64), sc))
                .collect();
            let before = instance_ap(&preds, &gts, None).ap.unwrap();
            prop_assert!((0.0..=100.0).contains(&before));
            // Only a reference that no existing prediction touches; otherwise
            // the new detection could steal a match and demote another one.
            let target = &gts[which % gts.len()].polygon;
            let pix = polygon_spans(target, None);
            prop_assume!(preds.iter().all(|p| spans_iou(&polygon_spans(&p.polygon, None), &pix) == 0.0));
            let mut more = preds.clone();
            more.push(pred(target.clone(), score));
            let after = instance_ap(&more, &gts, None).ap.unwrap();
            prop_assert!(after + 1e-9 >= before, "{before} -> {after}");
        }
    }
}
