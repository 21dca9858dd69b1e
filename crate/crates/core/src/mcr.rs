//! Contour reforming and ground-truth alignment.
//!
//! Prediction uses [`reconstruct`] alone: a dense traced contour is simplified
//! with Douglas-Peucker and then resampled at a fixed interval, giving a
//! regular point sequence `R`. Training additionally runs
//! [`match_to_ground_truth`], which marks the point of `R` nearest to each
//! reference vertex and interpolates the reference edges so that the aligned
//! reference `G'` has exactly one point per point of `R`.

use log::warn;
use rayon::prelude::*;
use thiserror::Error;

use crate::contours::{extract_contours, Connectivity};
use crate::geometry::{dp_simplify, resample_ring, GeometryError, LabeledPolygon, Point2, PolygonWithHoles, Resampled, Ring};
use crate::raster::{polygon_spans, spans_iou, MaskRaster, Span};

/// Defaults: DP tolerance 5 px, 25 px spacing for buildings and 50 px
/// for large targets such as water bodies and roads.
pub const DEFAULT_EPSILON: f64 = 5.0;
pub const DEFAULT_INTERVAL: f64 = 25.0;
pub const LARGE_TARGET_INTERVAL: f64 = 50.0;

/// Minimum mask IoU for pairing a traced contour with a reference polygon.
pub const PAIRING_IOU: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum McrError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Simplify-then-resample. Seeds flag the surviving simplified vertices.
pub fn reconstruct(contour: &Ring, epsilon: f64, interval: f64) -> Result<Resampled, McrError> {
    let simplified = dp_simplify(contour, epsilon)?;
    Ok(resample_ring(&simplified, interval)?)
}

/// A point of `R` marked as the nearest neighbour of reference vertex `g_index`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VertexMatch {
    pub r_index: usize,
    pub g_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchWarning {
    /// The reference ring had the opposite orientation and was reversed.
    ReversedReference,
    /// Several reference vertices shared a nearest point; later ones were dropped.
    CollapsedVertices(usize),
    /// Marked points do not follow the reference vertex order around the ring.
    CrossingOrder,
}

/// Per-point training target for one contour.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchedSample {
    /// Reconstructed contour.
    pub r: Ring,
    /// Aligned reference, one point per point of `r`.
    pub g_prime: Vec<Point2>,
    /// 1 where the point of `r` is a matched vertex, else 0.
    pub labels: Vec<u8>,
    /// Kept matches, ascending by `r_index`. Their count is the matched-vertex count.
    pub matches: Vec<VertexMatch>,
    pub warnings: Vec<MatchWarning>,
}

impl MatchedSample {
    pub fn matched(&self) -> usize {
        self.matches.len()
    }

    /// Regression targets `g'_i - r_i`.
    pub fn offsets(&self) -> Vec<Point2> {
        self.g_prime.iter().zip(self.r.points()).map(|(&g, &r)| g - r).collect()
    }

    /// Positions of the marked points, ascending.
    pub fn vertex_indices(&self) -> Vec<usize> {
        self.matches.iter().map(|m| m.r_index).collect()
    }
}

fn nearest_index(points: &[Point2], target: Point2) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, p) in points.iter().enumerate() {
        let d = p.distance_sq(target);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Aligns a reconstructed contour with a reference ring.
///
/// Every reference vertex marks its nearest point of `r` (ties go to the
/// lowest index); when several vertices mark the same point only the first in
/// reference order is kept. Walking the marked points in ring order, each
/// reference edge between consecutive kept vertices is sampled with as many
/// evenly spaced points as there are unmarked points in the gap, so `g_prime`
/// lines up index by index with `r`.
///
/// Which kept vertex sits at the first marked point is decided by rotating
/// the kept vertex list: when the marks follow the reference order the
/// rotation that puts every vertex on its own mark is used, otherwise the
/// rotation with the smallest total mark-to-vertex distance is used and
/// [`MatchWarning::CrossingOrder`] is reported. A reference with the opposite
/// orientation is reversed first.
pub fn match_to_ground_truth(r: &Ring, g: &Ring) -> MatchedSample {
    let mut warnings = Vec::new();
    let m = g.len();
    // Working order of reference vertices, as original indices.
    let order: Vec<usize> = if (r.signed_area() < 0.0) != (g.signed_area() < 0.0) {
        warnings.push(MatchWarning::ReversedReference);
        std::iter::once(0).chain((1..m).rev()).collect()
    } else {
        (0..m).collect()
    };

    let rp = r.points();
    let gp = g.points();
    let n = rp.len();

    // kept[pos] = (r_index, position in `order`)
    let mut owner = vec![usize::MAX; n];
    let mut kept: Vec<(usize, usize)> = Vec::with_capacity(m);
    for (pos, &gi) in order.iter().enumerate() {
        let ri = nearest_index(rp, gp[gi]);
        if owner[ri] == usize::MAX {
            owner[ri] = pos;
            kept.push((ri, pos));
        }
    }
    if kept.len() < m {
        warnings.push(MatchWarning::CollapsedVertices(m - kept.len()));
    }
    kept.sort_unstable();
    let p = kept.len();

    // Kept reference vertices in reference order.
    let mut ref_positions: Vec<usize> = kept.iter().map(|&(_, pos)| pos).collect();
    ref_positions.sort_unstable();
    let rank_of = |pos: usize| ref_positions.binary_search(&pos).expect("kept position");
    let ranks: Vec<usize> = kept.iter().map(|&(_, pos)| rank_of(pos)).collect();

    let descents = (0..p).filter(|&k| ranks[(k + 1) % p] < ranks[k]).count();
    let monotone = descents <= 1;
    let rotation = if monotone {
        ranks[0]
    } else {
        warnings.push(MatchWarning::CrossingOrder);
        (0..p)
            .map(|rho| {
                let cost: f64 = kept
                    .iter()
                    .enumerate()
                    .map(|(k, &(ri, _))| rp[ri].distance(gp[order[ref_positions[(k + rho) % p]]]))
                    .sum();
                (rho, cost)
            })
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .map(|(rho, _)| rho)
            .unwrap_or(0)
    };
    let assigned = |k: usize| gp[order[ref_positions[(k + rotation) % p]]];

    let mut g_prime = vec![Point2::default(); n];
    let mut labels = vec![0u8; n];
    for k in 0..p {
        let start = kept[k].0;
        let next = if k + 1 < p { kept[k + 1].0 } else { kept[0].0 + n };
        let gap = next - start - 1;
        let a = assigned(k);
        let b = assigned((k + 1) % p);
        labels[start] = 1;
        g_prime[start] = a;
        for step in 1..=gap {
            let t = step as f64 / (gap + 1) as f64;
            g_prime[(start + step) % n] = a + (b - a) * t;
        }
    }

    let matches = kept
        .iter()
        .map(|&(ri, pos)| VertexMatch {
            r_index: ri,
            g_index: order[pos],
        })
        .collect();

    MatchedSample {
        r: r.clone(),
        g_prime,
        labels,
        matches,
        warnings,
    }
}

/// One training sample with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    /// Index of the traced contour in extraction order.
    pub instance_id: usize,
    /// 0 for the exterior, `k` for the k-th hole.
    pub ring_index: usize,
    pub class: u8,
    /// Index of the paired reference polygon.
    pub gt_index: usize,
    pub sample: MatchedSample,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelSet {
    pub samples: Vec<LabeledSample>,
    /// Contours with no reference polygon at IoU >= 0.5.
    pub skipped_contours: usize,
    /// Holes of paired contours with no reference hole at IoU >= 0.5.
    pub skipped_holes: usize,
    /// Samples that raised [`MatchWarning::CrossingOrder`].
    pub crossing_warnings: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelParams {
    pub epsilon: f64,
    pub interval: f64,
    pub connectivity: Connectivity,
}

impl Default for LabelParams {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            interval: DEFAULT_INTERVAL,
            connectivity: Connectivity::Eight,
        }
    }
}

fn best_pairing(candidates: impl Iterator<Item = (usize, f64)>) -> Option<usize> {
    candidates
        .filter(|&(_, iou)| iou >= PAIRING_IOU)
        .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
}

fn bounds_overlap(a: &PolygonWithHoles, b: &PolygonWithHoles) -> bool {
    let (alo, ahi) = a.bounds();
    let (blo, bhi) = b.bounds();
    alo.x < bhi.x && blo.x < ahi.x && alo.y < bhi.y && blo.y < ahi.y
}

fn ring_spans(ring: &Ring) -> Vec<Span> {
    let outer = if ring.signed_area() < 0.0 { ring.reversed() } else { ring.clone() };
    polygon_spans(&PolygonWithHoles::from_exterior(outer), None)
}

// Samples, paired flag, skipped holes, crossing warnings.
type ContourOutcome = (Vec<LabeledSample>, bool, usize, usize);

/// Traces `mask`, pairs each contour with the reference polygon of highest
/// mask IoU (at least 0.5) and builds one sample per paired ring.
pub fn make_training_labels(mask: &MaskRaster, gt: &[LabeledPolygon], params: LabelParams) -> Result<LabelSet, McrError> {
    let contours = extract_contours(mask, params.connectivity);
    let gt_spans: Vec<Vec<Span>> = gt.par_iter().map(|g| polygon_spans(&g.polygon, None)).collect();

    let per_contour: Vec<Result<ContourOutcome, McrError>> = contours
        .contours
        .par_iter()
        .enumerate()
        .map(|(instance_id, contour)| {
            let spans = polygon_spans(&contour.polygon, None);
            let paired = best_pairing(
                gt.iter()
                    .enumerate()
                    .filter(|(_, g)| bounds_overlap(&g.polygon, &contour.polygon))
                    .map(|(i, _)| (i, spans_iou(&spans, &gt_spans[i]))),
            );
            let Some(gt_index) = paired else {
                return Ok((Vec::new(), false, 0, 0));
            };
            let reference = &gt[gt_index].polygon;
            let mut samples = Vec::new();
            let mut crossings = 0;
            let mut skipped_holes = 0;

            let mut push = |ring_index: usize, ring: &Ring, target: &Ring| -> Result<(), McrError> {
                let rec = reconstruct(ring, params.epsilon, params.interval)?;
                let sample = match_to_ground_truth(&rec.ring, target);
                if sample.warnings.contains(&MatchWarning::CrossingOrder) {
                    crossings += 1;
                }
                samples.push(LabeledSample {
                    instance_id,
                    ring_index,
                    class: contour.class,
                    gt_index,
                    sample,
                });
                Ok(())
            };
            push(0, contour.polygon.exterior(), reference.exterior())?;

            let ref_hole_spans: Vec<Vec<Span>> = reference.holes().iter().map(ring_spans).collect();
            for (h, hole) in contour.polygon.holes().iter().enumerate() {
                let hs = ring_spans(hole);
                let target = best_pairing(
                    ref_hole_spans.iter().enumerate().map(|(i, s)| (i, spans_iou(&hs, s))),
                );
                match target {
                    Some(t) => push(h + 1, hole, &reference.holes()[t])?,
                    None => skipped_holes += 1,
                }
            }
            Ok((samples, true, skipped_holes, crossings))
        })
        .collect();

    let mut out = LabelSet::default();
    for item in per_contour {
        let (samples, paired, skipped_holes, crossings) = item?;
        if !paired {
            out.skipped_contours += 1;
        }
        out.skipped_holes += skipped_holes;
        out.crossing_warnings += crossings;
        out.samples.extend(samples);
    }
    if out.skipped_contours > 0 {
        warn!("{} contour(s) had no reference polygon at IoU >= {PAIRING_IOU}", out.skipped_contours);
    }
    if out.crossing_warnings > 0 {
        warn!("{} sample(s) matched out of reference order", out.crossing_warnings);
    }
    Ok(out)
}
