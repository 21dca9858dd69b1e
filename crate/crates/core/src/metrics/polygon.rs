//! Polygon-level vector metrics.

use crate::geometry::{PolygonWithHoles, Ring};
use crate::raster::{polygon_spans, spans_iou};

/// Symmetric mean vertex-to-boundary distance between two rings.
///
/// Each vertex of `a` contributes its distance to the closest point on any
/// edge of `b` and vice versa; the two means are averaged.
pub fn polis(a: &Ring, b: &Ring) -> f64 {
    let forward: f64 = a.points().iter().map(|&p| b.boundary_distance(p)).sum();
    let backward: f64 = b.points().iter().map(|&p| a.boundary_distance(p)).sum();
    forward / (2.0 * a.len() as f64) + backward / (2.0 * b.len() as f64)
}

/// Relative difference of two vertex counts, in `[0, 1]`.
pub fn relative_difference(na: usize, nb: usize) -> f64 {
    if na + nb == 0 {
        return 0.0;
    }
    na.abs_diff(nb) as f64 / (na + nb) as f64
}

/// Mask IoU (0..1) discounted by the vertex-count difference, as a percentage.
pub fn complexity_iou(iou: f64, na: usize, nb: usize) -> f64 {
    100.0 * iou * (1.0 - relative_difference(na, nb))
}

/// C-IoU of two polygons rasterized on the pixel grid, optionally clipped
/// to `grid` = (width, height). Vertex counts include hole rings.
pub fn ciou(a: &PolygonWithHoles, b: &PolygonWithHoles, grid: Option<(usize, usize)>) -> f64 {
    ciou_with_counts(a, a.vertex_count(), b, b.vertex_count(), grid)
}

pub fn ciou_with_counts(a: &PolygonWithHoles, na: usize, b: &PolygonWithHoles, nb: usize, grid: Option<(usize, usize)>) -> f64 {
    let iou = spans_iou(&polygon_spans(a, grid), &polygon_spans(b, grid));
    complexity_iou(iou, na, nb)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::geometry::Point2;

    fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Ring {
        Ring::new(vec![
            Point2::new(x0, y0),
            Point2::new(x1, y0),
            Point2::new(x1, y1),
            Point2::new(x0, y1),
        ])
        .unwrap()
    }

    // Dense sampling of the boundary, used as an independent check.
    fn sampled_boundary_distance(p: Point2, ring: &Ring, step: f64) -> f64 {
        let mut best = f64::INFINITY;
        for (a, b) in ring.edges() {
            let len = a.distance(b);
            let n = (len / step).ceil().max(1.0) as usize;
            for k in 0..=n {
                let q = a + (b - a) * (k as f64 / n as f64);
                best = best.min(p.distance(q));
            }
        }
        best
    }

    fn sampled_polis(a: &Ring, b: &Ring) -> f64 {
        let f: f64 = a.points().iter().map(|&p| sampled_boundary_distance(p, b, 1e-3)).sum();
        let g: f64 = b.points().iter().map(|&p| sampled_boundary_distance(p, a, 1e-3)).sum();
        f / (2.0 * a.len() as f64) + g / (2.0 * b.len() as f64)
    }

    #[test]
    fn polis_examples() {
        let a = rect(0.0, 0.0, 4.0, 4.0);
        assert_eq!(polis(&a, &a), 0.0);
        let b = rect(1.0, 0.0, 5.0, 4.0);
        assert_eq!(polis(&a, &b), 0.5);
        assert!((sampled_polis(&a, &b) - 0.5).abs() < 1e-3);
    }

    #[test]
    fn ciou_examples() {
        let sq = PolygonWithHoles::from_exterior(rect(0.0, 0.0, 10.0, 10.0));
        assert_eq!(ciou(&sq, &sq, None), 100.0);
        assert_eq!(ciou_with_counts(&sq, 4, &sq, 12, None), 50.0);
        let far = PolygonWithHoles::from_exterior(rect(20.0, 0.0, 30.0, 10.0));
        assert_eq!(ciou(&sq, &far, None), 0.0);
    }

    proptest! {
        #[test]
        fn polis_translation_bound(tx in -5.0f64..5.0, ty in -5.0f64..5.0) {
            let a = rect(0.0, 0.0, 10.0, 6.0);
            let b = a.map_points(|p| Point2::new(p.x + tx, p.y + ty)).unwrap();
            prop_assert!(polis(&a, &b) <= tx.hypot(ty) + 1e-12);
            prop_assert_eq!(polis(&a, &b), polis(&b, &a));
        }

        #[test]
        fn ciou_never_exceeds_iou(w in 2.0f64..20.0, h in 2.0f64..20.0, dx in -5.0f64..5.0, na in 3usize..20) {
            let a = PolygonWithHoles::from_exterior(rect(0.0, 0.0, 10.0, 10.0));
            let b = PolygonWithHoles::from_exterior(rect(dx, 0.0, dx + w, h));
            let iou = 100.0 * spans_iou(&polygon_spans(&a, None), &polygon_spans(&b, None));
            prop_assert!(ciou_with_counts(&a, na, &b, 4, None) <= iou + 1e-12);
        }
    }
}
