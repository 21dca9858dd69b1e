//! Sequence tracing: offset refinement, angle features and vertex selection
//! over reconstructed contours.
//!
//! Per-point offsets and vertex probabilities come from a [`Scorer`]. The
//! crate ships [`RuleScorer`], which predicts no offsets and derives vertex
//! probabilities from the interior angle; learned predictors can be plugged
//! in through the same trait.

pub mod loss;

use std::f64::consts::PI;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::contours::{extract_contours, Connectivity, ContourSet};
use crate::geometry::{interior_angles, resample_ring, GeometryError, Point2, PolygonWithHoles, Ring};
use crate::mcr::{self, McrError};
use crate::raster::MaskRaster;

/// Angle below which the rule scorer leans towards "vertex" (135 degrees).
pub const DEFAULT_ANGLE_THRESHOLD: f64 = 135.0 * PI / 180.0;
pub const DEFAULT_PROB_THRESHOLD: f64 = 0.5;
pub const DEFAULT_ITERATIONS: usize = 2;
/// Angle features use neighbours 1, 2 and 3 steps away on each side.
pub const ANGLE_STEPS: [usize; 3] = [1, 2, 3];
/// Smallest ring the angle features are defined on.
pub const MIN_RING_POINTS: usize = 7;

const COLLAPSE_NUDGE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TraceError {
    #[error("offset-shape: iteration {iteration} has {got} offsets for {expected} points")]
    OffsetShape { iteration: usize, got: usize, expected: usize },
    #[error("offset-shape: {requested} iterations requested, {available} available")]
    MissingIterations { requested: usize, available: usize },
    #[error("scorer failed: {0}")]
    Scorer(String),
    #[error("scores have {got} entries for {expected} points")]
    ScoreShape { got: usize, expected: usize },
    #[error("score value out of range at index {0}")]
    ScoreRange(usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Mcr(#[from] McrError),
}

/// Offsets per refinement iteration plus per-point vertex probabilities.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct PointScores {
    pub offsets: Vec<Vec<Point2>>,
    pub vertex_prob: Vec<f64>,
}

/// Adds each iteration's offsets in turn, using the first `iterations`
/// entries of `offsets`. Points that end up on top of their predecessor are
/// nudged apart by 1e-6 px along x.
pub fn apply_offsets(ring: &Ring, offsets: &[Vec<Point2>], iterations: usize) -> Result<Ring, TraceError> {
    if offsets.len() < iterations {
        return Err(TraceError::MissingIterations {
            requested: iterations,
            available: offsets.len(),
        });
    }
    let mut pts = ring.points().to_vec();
    for (k, step) in offsets.iter().take(iterations).enumerate() {
        if step.len() != pts.len() {
            return Err(TraceError::OffsetShape {
                iteration: k,
                got: step.len(),
                expected: pts.len(),
            });
        }
        for (p, o) in pts.iter_mut().zip(step) {
            *p = *p + *o;
        }
    }
    separate_collapsed(&mut pts);
    Ok(Ring::new(pts)?)
}

fn separate_collapsed(pts: &mut [Point2]) {
    let n = pts.len();
    for i in 0..n {
        let j = (i + 1) % n;
        let after = (j + 1) % n;
        while pts[j] == pts[i] || (after != i && pts[j] == pts[after]) {
            pts[j].x += COLLAPSE_NUDGE;
        }
    }
}

/// Interior angles at neighbour distances 1, 2 and 3 for every point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AngleFeatures {
    pub theta: Vec<[f64; 3]>,
}

impl AngleFeatures {
    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn first(&self) -> Vec<f64> {
        self.theta.iter().map(|t| t[0]).collect()
    }

    /// Each angle as a `(cos, sin)` pair, the encoding handed to scorers.
    pub fn polar(&self) -> Vec<[f64; 6]> {
        self.theta
            .iter()
            .map(|t| {
                let (s1, c1) = t[0].sin_cos();
                let (s2, c2) = t[1].sin_cos();
                let (s3, c3) = t[2].sin_cos();
                [c1, s1, c2, s2, c3, s3]
            })
            .collect()
    }
}

pub fn angle_feature_block(ring: &Ring) -> Result<AngleFeatures, TraceError> {
    if ring.len() < MIN_RING_POINTS {
        return Err(GeometryError::InsufficientPoints {
            needed: MIN_RING_POINTS,
            got: ring.len(),
        }
        .into());
    }
    let per_step: Vec<Vec<f64>> = ANGLE_STEPS
        .iter()
        .map(|&s| interior_angles(ring, s))
        .collect::<Result<_, _>>()?;
    Ok(AngleFeatures {
        theta: (0..ring.len())
            .map(|i| [per_step[0][i], per_step[1][i], per_step[2][i]])
            .collect(),
    })
}

/// Maps an interior angle to a vertex probability: 0.5 at the threshold,
/// rising linearly to 1 at angle 0 and falling linearly to 0 at `π`.
pub fn angle_probability(theta: f64, threshold: f64) -> f64 {
    if theta < threshold {
        ((threshold - theta) / threshold * 0.5 + 0.5).clamp(0.0, 1.0)
    } else {
        (0.5 - (theta - threshold) / (PI - threshold) * 0.5).clamp(0.0, 1.0)
    }
}

/// Zero offsets and angle-derived probabilities for a single iteration.
pub fn rule_based_scores(ring: &Ring, threshold: f64) -> Result<PointScores, TraceError> {
    let features = angle_feature_block(ring)?;
    Ok(PointScores {
        offsets: vec![vec![Point2::default(); ring.len()]],
        vertex_prob: features.theta.iter().map(|t| angle_probability(t[0], threshold)).collect(),
    })
}

/// Identifies one ring of one traced instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct RingKey {
    pub instance: usize,
    /// 0 for the exterior, `k` for the k-th hole.
    pub ring: usize,
}

/// What a scorer sees for one refinement step.
pub struct ScoreQuery<'a> {
    pub key: RingKey,
    /// Refinement iterations already applied to `ring`.
    pub iteration: usize,
    pub ring: &'a Ring,
    pub angles: &'a AngleFeatures,
}

/// Offsets and vertex probabilities for one ring at one step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepScores {
    pub offsets: Vec<Point2>,
    pub vertex_prob: Vec<f64>,
}

/// Source of per-point offsets and vertex probabilities.
///
/// The tracer calls [`Scorer::score`] once per refinement iteration and
/// applies the returned offsets, then once more on the refined ring and uses
/// the returned probabilities. Both arrays must match the ring length.
pub trait Scorer: Send + Sync {
    fn score(&self, query: &ScoreQuery<'_>) -> Result<StepScores, String>;

    /// `false` makes the pipeline serialise calls to this scorer.
    fn concurrent(&self) -> bool {
        true
    }
}

/// Angle-threshold scorer with zero offsets.
#[derive(Debug, Clone, Copy)]
pub struct RuleScorer {
    pub angle_threshold: f64,
}

impl Default for RuleScorer {
    fn default() -> Self {
        Self {
            angle_threshold: DEFAULT_ANGLE_THRESHOLD,
        }
    }
}

impl Scorer for RuleScorer {
    fn score(&self, query: &ScoreQuery<'_>) -> Result<StepScores, String> {
        Ok(StepScores {
            offsets: vec![Point2::default(); query.ring.len()],
            vertex_prob: query
                .angles
                .theta
                .iter()
                .map(|t| angle_probability(t[0], self.angle_threshold))
                .collect(),
        })
    }
}

/// A ring after vertex selection, with the probability of each kept point.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectedRing {
    pub ring: Ring,
    pub confidence: Vec<f64>,
}

/// Keeps points whose probability reaches `threshold`, then only the most
/// probable point of each cyclic run of kept neighbours (ties to the lowest
/// index). With fewer than three survivors the three most probable points are
/// used instead. Cyclic order is preserved.
pub fn select_vertices(ring: &Ring, vertex_prob: &[f64], threshold: f64) -> Result<SelectedRing, TraceError> {
    let n = ring.len();
    if vertex_prob.len() != n {
        return Err(TraceError::ScoreShape {
            got: vertex_prob.len(),
            expected: n,
        });
    }
    let kept: Vec<bool> = vertex_prob.iter().map(|&p| p >= threshold).collect();
    let mut chosen: Vec<usize> = Vec::new();
    if kept.iter().all(|&k| k) {
        chosen.push(argmax(vertex_prob, 0..n));
    } else {
        // Start scanning just after a rejected point so no run wraps.
        let start = (0..n).find(|&i| !kept[i]).expect("some point is rejected") + 1;
        let mut run: Vec<usize> = Vec::new();
        for step in 0..n {
            let i = (start + step) % n;
            if kept[i] {
                run.push(i);
            } else if !run.is_empty() {
                chosen.push(argmax(vertex_prob, run.drain(..)));
            }
        }
        if !run.is_empty() {
            chosen.push(argmax(vertex_prob, run.drain(..)));
        }
    }
    if chosen.len() < 3 {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| vertex_prob[b].total_cmp(&vertex_prob[a]).then(a.cmp(&b)));
        chosen = order.into_iter().take(3).collect();
    }
    chosen.sort_unstable();
    chosen.dedup();

    let mut points: Vec<Point2> = Vec::with_capacity(chosen.len());
    let mut confidence = Vec::with_capacity(chosen.len());
    for &i in &chosen {
        let p = ring.points()[i];
        if points.last() == Some(&p) {
            continue;
        }
        points.push(p);
        confidence.push(vertex_prob[i]);
    }
    if points.len() > 1 && points.first() == points.last() {
        points.pop();
        confidence.pop();
    }
    Ok(SelectedRing {
        ring: Ring::new(points)?,
        confidence,
    })
}

// Highest value, ties to the lowest index.
fn argmax(values: &[f64], indices: impl IntoIterator<Item = usize>) -> usize {
    let mut best: Option<usize> = None;
    for i in indices {
        best = match best {
            Some(b) if values[b] > values[i] || (values[b] == values[i] && b < i) => Some(b),
            _ => Some(i),
        };
    }
    best.expect("non-empty run")
}

/// Final polygon with per-vertex confidence (exterior first, then holes).
#[derive(Debug, Clone, PartialEq)]
pub struct TracedPolygon {
    pub polygon: PolygonWithHoles,
    pub vertex_conf: Vec<f64>,
    /// Mean of `vertex_conf`.
    pub instance_score: f64,
}

impl TracedPolygon {
    /// Assembles a polygon from selected rings, fixing orientation and
    /// keeping confidences aligned with the stored vertex order. Holes that
    /// leave the exterior's bounds are dropped.
    pub fn from_rings(exterior: SelectedRing, holes: Vec<SelectedRing>) -> Self {
        let exterior = oriented(exterior, true);
        let (lo, hi) = exterior.ring.bounds();
        let holes: Vec<SelectedRing> = holes
            .into_iter()
            .map(|h| oriented(h, false))
            .filter(|h| {
                let (hlo, hhi) = h.ring.bounds();
                hlo.x >= lo.x && hlo.y >= lo.y && hhi.x <= hi.x && hhi.y <= hi.y
            })
            .collect();
        let mut vertex_conf = exterior.confidence.clone();
        for h in &holes {
            vertex_conf.extend_from_slice(&h.confidence);
        }
        let polygon = PolygonWithHoles::new(exterior.ring, holes.into_iter().map(|h| h.ring).collect())
            .expect("orientation and bounds already checked");
        let instance_score = vertex_conf.iter().sum::<f64>() / vertex_conf.len() as f64;
        Self {
            polygon,
            vertex_conf,
            instance_score,
        }
    }
}

fn oriented(mut s: SelectedRing, exterior: bool) -> SelectedRing {
    if (s.ring.signed_area() > 0.0) != exterior && s.ring.signed_area() != 0.0 {
        s.ring = s.ring.reversed();
        s.confidence[1..].reverse();
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceParams {
    pub epsilon: f64,
    pub interval: f64,
    pub iterations: usize,
    pub prob_threshold: f64,
    pub connectivity: Connectivity,
}

impl Default for TraceParams {
    fn default() -> Self {
        Self {
            epsilon: mcr::DEFAULT_EPSILON,
            interval: mcr::DEFAULT_INTERVAL,
            iterations: DEFAULT_ITERATIONS,
            prob_threshold: DEFAULT_PROB_THRESHOLD,
            connectivity: Connectivity::Eight,
        }
    }
}

/// One traced region.
#[derive(Debug, Clone, PartialEq)]
pub struct TracedInstance {
    pub instance_id: usize,
    pub class: u8,
    pub traced: TracedPolygon,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceFailure {
    pub instance_id: usize,
    pub error: TraceError,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TraceOutput {
    pub polygons: Vec<TracedInstance>,
    pub failures: Vec<InstanceFailure>,
}

/// Reconstructs a contour ring for tracing. Rings that resample to fewer
/// than [`MIN_RING_POINTS`] points (small objects) are resampled again with
/// a spacing of `perimeter / (MIN_RING_POINTS + m)`, `m` being the simplified
/// vertex count, which always yields enough points.
pub fn reconstruct_for_tracing(contour: &Ring, epsilon: f64, interval: f64) -> Result<Ring, TraceError> {
    let rec = mcr::reconstruct(contour, epsilon, interval)?;
    if rec.ring.len() >= MIN_RING_POINTS {
        return Ok(rec.ring);
    }
    let simplified = crate::geometry::dp_simplify(contour, epsilon)?;
    let spacing = simplified.perimeter() / (MIN_RING_POINTS + simplified.len()) as f64;
    Ok(resample_ring(&simplified, spacing)?.ring)
}

/// Refines one reconstructed ring with `scorer` and selects its vertices.
pub fn trace_ring(ring: Ring, key: RingKey, scorer: &dyn Scorer, gate: Option<&Mutex<()>>, params: &TraceParams) -> Result<(SelectedRing, PointScores), TraceError> {
    let call = |query: &ScoreQuery<'_>| -> Result<StepScores, TraceError> {
        let scores = match gate {
            Some(lock) => {
                let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
                scorer.score(query)
            }
            None => scorer.score(query),
        }
        .map_err(TraceError::Scorer)?;
        validate_step(&scores, query.ring.len())?;
        Ok(scores)
    };

    let mut current = ring;
    let mut history = PointScores::default();
    for iteration in 0..params.iterations {
        let angles = angle_feature_block(&current)?;
        let step = call(&ScoreQuery {
            key,
            iteration,
            ring: &current,
            angles: &angles,
        })?;
        current = apply_offsets(&current, std::slice::from_ref(&step.offsets), 1)?;
        history.offsets.push(step.offsets);
    }
    let angles = angle_feature_block(&current)?;
    let last = call(&ScoreQuery {
        key,
        iteration: params.iterations,
        ring: &current,
        angles: &angles,
    })?;
    history.vertex_prob = last.vertex_prob;
    let selected = select_vertices(&current, &history.vertex_prob, params.prob_threshold)?;
    Ok((selected, history))
}

fn validate_step(step: &StepScores, n: usize) -> Result<(), TraceError> {
    for got in [step.offsets.len(), step.vertex_prob.len()] {
        if got != n {
            return Err(TraceError::ScoreShape { got, expected: n });
        }
    }
    if let Some(i) = step.offsets.iter().position(|o| !o.is_finite()) {
        return Err(TraceError::ScoreRange(i));
    }
    if let Some(i) = step.vertex_prob.iter().position(|p| !(0.0..=1.0).contains(p)) {
        return Err(TraceError::ScoreRange(i));
    }
    Ok(())
}

/// Full mask-to-polygon pipeline: boundary tracing, reconstruction,
/// scorer-driven refinement and vertex selection for every region and hole.
/// A failing instance is reported in [`TraceOutput::failures`] without
/// affecting the others. Output order follows region order.
pub fn trace(mask: &MaskRaster, scorer: &dyn Scorer, params: &TraceParams) -> TraceOutput {
    let contours = extract_contours(mask, params.connectivity);
    trace_contours(&contours, scorer, params)
}

pub fn trace_contours(contours: &ContourSet, scorer: &dyn Scorer, params: &TraceParams) -> TraceOutput {
    let gate = (!scorer.concurrent()).then(|| Mutex::new(()));
    let results: Vec<Result<TracedInstance, InstanceFailure>> = contours
        .contours
        .par_iter()
        .enumerate()
        .map(|(instance_id, contour)| {
            let run = || -> Result<TracedInstance, TraceError> {
                let mut rings = Vec::new();
                for (ring_index, ring) in contour.polygon.rings().enumerate() {
                    let rec = reconstruct_for_tracing(ring, params.epsilon, params.interval)?;
                    let key = RingKey {
                        instance: instance_id,
                        ring: ring_index,
                    };
                    rings.push(trace_ring(rec, key, scorer, gate.as_ref(), params)?.0);
                }
                let exterior = rings.remove(0);
                Ok(TracedInstance {
                    instance_id,
                    class: contour.class,
                    traced: TracedPolygon::from_rings(exterior, rings),
                })
            };
            run().map_err(|error| InstanceFailure { instance_id, error })
        })
        .collect();

    let mut out = TraceOutput::default();
    for r in results {
        match r {
            Ok(p) => out.polygons.push(p),
            Err(f) => out.failures.push(f),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::rasterize_polygon;

    fn ring(pts: &[(f64, f64)]) -> Ring {
        Ring::new(pts.iter().map(|&p| p.into()).collect()).unwrap()
    }

    fn square16() -> Ring {
        resample_ring(&ring(&[(0.0, 0.0), (100.0, 0.0), (100.0, 100.0), (0.0, 100.0)]), 25.0)
            .unwrap()
            .ring
    }

    struct Constant(f64);

    impl Scorer for Constant {
        fn score(&self, q: &ScoreQuery<'_>) -> Result<StepScores, String> {
            Ok(StepScores {
                offsets: vec![Point2::default(); q.ring.len()],
                vertex_prob: vec![self.0; q.ring.len()],
            })
        }
    }

    struct Failing;

    impl Scorer for Failing {
        fn score(&self, q: &ScoreQuery<'_>) -> Result<StepScores, String> {
            if q.key.instance == 0 {
                Err("boom".into())
            } else {
                RuleScorer::default().score(q)
            }
        }

        fn concurrent(&self) -> bool {
            false
        }
    }

    #[test]
    fn offsets_compose() {
        let r = square16();
        let n = r.len();
        let zero = vec![vec![Point2::default(); n]; 3];
        assert_eq!(apply_offsets(&r, &zero, 3).unwrap(), r);
        assert_eq!(apply_offsets(&r, &zero, 0).unwrap(), r);

        let o1: Vec<Point2> = (0..n).map(|i| Point2::new(i as f64 * 0.25, 1.0)).collect();
        let o2: Vec<Point2> = (0..n).map(|i| Point2::new(-0.5, i as f64 * 0.125)).collect();
        let out = apply_offsets(&r, &[o1.clone(), o2.clone()], 2).unwrap();
        for i in 0..n {
            assert_eq!(out.points()[i], r.points()[i] + o1[i] + o2[i]);
        }
        let neg: Vec<Point2> = o1.iter().map(|&o| -o).collect();
        let back = apply_offsets(&apply_offsets(&r, &[o1], 1).unwrap(), &[neg], 1).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn offset_errors() {
        let r = square16();
        assert!(matches!(
            apply_offsets(&r, &[vec![Point2::default(); 3]], 1),
            Err(TraceError::OffsetShape { .. })
        ));
        assert!(matches!(apply_offsets(&r, &[], 1), Err(TraceError::MissingIterations { .. })));
    }

    #[test]
    fn oracle_offsets_recover_reference() {
        let gt = square16();
        let noisy = gt
            .map_points(|p| Point2::new(p.x + (p.y * 0.37).sin(), p.y + (p.x * 0.11).cos()))
            .unwrap();
        let oracle: Vec<Point2> = gt.points().iter().zip(noisy.points()).map(|(&g, &r)| g - r).collect();
        let out = apply_offsets(&noisy, &[oracle], 1).unwrap();
        for (a, b) in out.points().iter().zip(gt.points()) {
            assert!(a.distance(*b) < 1e-12);
        }
    }

    #[test]
    fn collapsed_points_are_separated() {
        let r = ring(&[(0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0)]);
        let pull = vec![Point2::default(), Point2::new(-10.0, 0.0), Point2::default(), Point2::default()];
        let out = apply_offsets(&r, &[pull], 1).unwrap();
        assert_ne!(out.points()[0], out.points()[1]);
        assert!(out.points()[0].distance(out.points()[1]) < 1e-5);
    }

    #[test]
    fn angle_block_square() {
        let f = angle_feature_block(&square16()).unwrap();
        for (i, t) in f.theta.iter().enumerate() {
            if i % 4 == 0 {
                assert!((t[0] - PI / 2.0).abs() < 1e-12);
                assert!((t[1] - PI / 2.0).abs() < 1e-12);
            } else if i % 4 == 2 {
                assert_eq!(t[0], PI);
            }
        }
        let oct: Vec<(f64, f64)> = (0..8)
            .map(|k| {
                let a = k as f64 * PI / 4.0;
                (a.cos(), a.sin())
            })
            .collect();
        for t in angle_feature_block(&ring(&oct)).unwrap().theta {
            assert!((t[0] - 3.0 * PI / 4.0).abs() < 1e-12);
        }
        let polar = angle_feature_block(&square16()).unwrap().polar();
        assert!((polar[0][0] - (PI / 2.0).cos()).abs() < 1e-15);
        assert!(matches!(
            angle_feature_block(&ring(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)])),
            Err(TraceError::Geometry(GeometryError::InsufficientPoints { .. }))
        ));
    }

    #[test]
    fn probability_mapping() {
        let t = DEFAULT_ANGLE_THRESHOLD;
        assert_eq!(angle_probability(PI, t), 0.0);
        assert_eq!(angle_probability(t, t), 0.5);
        assert_eq!(angle_probability(0.0, t), 1.0);
        let mut last = 1.0;
        for k in 0..=180 {
            let p = angle_probability((k as f64).to_radians(), t);
            assert!(p <= last);
            last = p;
        }
        let s = rule_based_scores(&square16(), t).unwrap();
        for (i, p) in s.vertex_prob.iter().enumerate() {
            assert_eq!(*p > 0.5, i % 4 == 0);
        }
    }

    #[test]
    fn selection_rules() {
        let r = square16();
        let s = rule_based_scores(&r, DEFAULT_ANGLE_THRESHOLD).unwrap();
        let sel = select_vertices(&r, &s.vertex_prob, 0.5).unwrap();
        assert_eq!(
            sel.ring.points(),
            &[
                Point2::new(0.0, 0.0),
                Point2::new(100.0, 0.0),
                Point2::new(100.0, 100.0),
                Point2::new(0.0, 100.0)
            ]
        );

        let ones = vec![1.0; r.len()];
        assert_eq!(select_vertices(&r, &ones, 0.5).unwrap().ring.len(), 3);
        let zeros = vec![0.0; r.len()];
        let sel = select_vertices(&r, &zeros, 0.5).unwrap();
        assert_eq!(sel.ring.points(), &r.points()[..3]);

        // a run keeps only its peak
        let mut probs = vec![0.0; r.len()];
        probs[15] = 0.7;
        probs[0] = 0.9;
        probs[1] = 0.6;
        probs[5] = 0.8;
        probs[9] = 0.8;
        let sel = select_vertices(&r, &probs, 0.5).unwrap();
        assert_eq!(sel.ring.points(), &[r.points()[0], r.points()[5], r.points()[9]]);
        assert_eq!(sel.confidence, vec![0.9, 0.8, 0.8]);
        assert!(select_vertices(&r, &probs[1..], 0.5).is_err());
    }

    fn square_mask() -> MaskRaster {
        let mut m = MaskRaster::new(140, 140);
        let sq = ring(&[(20.0, 20.0), (120.0, 20.0), (120.0, 120.0), (20.0, 120.0)]);
        rasterize_polygon(&mut m, &PolygonWithHoles::from_exterior(sq), 1);
        m
    }

    #[test]
    fn trace_square_mask() {
        let out = trace(&square_mask(), &RuleScorer::default(), &TraceParams::default());
        assert!(out.failures.is_empty());
        assert_eq!(out.polygons.len(), 1);
        let t = &out.polygons[0].traced;
        assert_eq!(t.polygon.exterior().len(), 4);
        assert_eq!(t.polygon.exterior().signed_area(), 10_000.0);
        assert!((t.instance_score - angle_probability(PI / 2.0, DEFAULT_ANGLE_THRESHOLD)).abs() < 1e-12);
        assert!(trace(&MaskRaster::new(10, 10), &RuleScorer::default(), &TraceParams::default())
            .polygons
            .is_empty());
    }

    #[test]
    fn constant_scorer_falls_back_to_triangles() {
        let out = trace(&square_mask(), &Constant(0.5), &TraceParams::default());
        assert_eq!(out.polygons[0].traced.polygon.exterior().len(), 3);
    }

    #[test]
    fn small_objects_and_failures() {
        let mut m = square_mask();
        rasterize_polygon(
            &mut m,
            &PolygonWithHoles::from_exterior(ring(&[(2.0, 2.0), (14.0, 2.0), (14.0, 14.0), (2.0, 14.0)])),
            1,
        );
        let out = trace(&m, &RuleScorer::default(), &TraceParams::default());
        assert_eq!(out.polygons.len(), 2);
        assert_eq!(out.polygons[0].traced.polygon.exterior().len(), 4);

        let out = trace(&m, &Failing, &TraceParams::default());
        assert_eq!(out.failures.len(), 1);
        assert_eq!(out.failures[0].instance_id, 0);
        assert_eq!(out.polygons.len(), 1);
    }

    #[test]
    fn holes_are_traced() {
        let mut m = MaskRaster::new(200, 200);
        let outer = ring(&[(10.0, 10.0), (190.0, 10.0), (190.0, 190.0), (10.0, 190.0)]);
        let hole = ring(&[(60.0, 60.0), (140.0, 60.0), (140.0, 140.0), (60.0, 140.0)]);
        rasterize_polygon(&mut m, &PolygonWithHoles::new(outer, vec![hole]).unwrap(), 3);
        let out = trace(&m, &RuleScorer::default(), &TraceParams::default());
        let t = &out.polygons[0];
        assert_eq!(t.class, 3);
        assert_eq!(t.traced.polygon.holes().len(), 1);
        assert_eq!(t.traced.polygon.holes()[0].len(), 4);
        assert_eq!(t.traced.vertex_conf.len(), 8);
        assert_eq!(t.traced.polygon.area(), 180.0 * 180.0 - 80.0 * 80.0);
    }

    #[test]
    fn deterministic() {
        let m = square_mask();
        let a = trace(&m, &RuleScorer::default(), &TraceParams::default());
        let b = trace(&m, &RuleScorer::default(), &TraceParams::default());
        assert_eq!(a, b);
    }
}
