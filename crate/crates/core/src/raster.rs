//! Label rasters and polygon scan conversion.

use thiserror::Error;

use crate::geometry::PolygonWithHoles;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RasterError {
    #[error("label buffer has {got} entries, expected {width}x{height}")]
    SizeMismatch { width: usize, height: usize, got: usize },
    #[error("raster dimensions must be positive")]
    Empty,
}

/// Row-major grid of class ids; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskRaster {
    width: usize,
    height: usize,
    labels: Vec<u8>,
}

impl MaskRaster {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            labels: vec![0; width * height],
        }
    }

    pub fn from_labels(width: usize, height: usize, labels: Vec<u8>) -> Result<Self, RasterError> {
        if labels.len() != width * height {
            return Err(RasterError::SizeMismatch {
                width,
                height,
                got: labels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [u8] {
        &mut self.labels
    }

    pub fn into_labels(self) -> Vec<u8> {
        self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, class: u8) {
        self.labels[y * self.width + x] = class;
    }

    pub fn row(&self, y: usize) -> &[u8] {
        &self.labels[y * self.width..(y + 1) * self.width]
    }

    pub fn count_foreground(&self) -> usize {
        self.labels.iter().filter(|&&c| c != 0).count()
    }

    /// Writes `class` into every span.
    pub fn fill_spans(&mut self, spans: &[Span], class: u8) {
        for s in spans {
            if s.y < 0 || s.y as usize >= self.height {
                continue;
            }
            let x0 = s.x0.max(0) as usize;
            let x1 = (s.x1.max(0) as usize).min(self.width);
            if x0 < x1 {
                let row = s.y as usize * self.width;
                self.labels[row + x0..row + x1].fill(class);
            }
        }
    }
}

/// Horizontal run of pixels `[x0, x1)` on row `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Span {
    pub y: i64,
    pub x0: i64,
    pub x1: i64,
}

impl Span {
    pub fn len(&self) -> u64 {
        (self.x1 - self.x0).max(0) as u64
    }

    pub fn is_empty(&self) -> bool {
        self.x1 <= self.x0
    }
}

/// Pixel spans whose centres lie inside `poly` under the even-odd rule,
/// sorted by row then column. Holes are excluded because their edges take
/// part in the parity count. `clip` restricts output to `[0,w)x[0,h)`.
pub fn polygon_spans(poly: &PolygonWithHoles, clip: Option<(usize, usize)>) -> Vec<Span> {
    let (lo, hi) = poly.bounds();
    let mut y_start = (lo.y - 0.5).ceil() as i64;
    let mut y_end = (hi.y - 0.5).ceil() as i64; // exclusive
    if let Some((_, h)) = clip {
        y_start = y_start.max(0);
        y_end = y_end.min(h as i64);
    }
    if y_start >= y_end {
        return Vec::new();
    }

    // Edge table bucketed by first row crossed.
    struct Edge {
        x0: f64,
        y0: f64,
        slope: f64,
        y_last: i64,
    }
    let rows = (y_end - y_start) as usize;
    let mut buckets: Vec<Vec<Edge>> = (0..rows).map(|_| Vec::new()).collect();
    for ring in poly.rings() {
        for (a, b) in ring.edges() {
            if a.y == b.y {
                continue;
            }
            let (top, bottom) = if a.y < b.y { (a, b) } else { (b, a) };
            // Rows whose centre c satisfies top.y <= c < bottom.y.
            let first = (top.y - 0.5).ceil() as i64;
            let last = (bottom.y - 0.5).ceil() as i64 - 1;
            let first_clipped = first.max(y_start);
            let last_clipped = last.min(y_end - 1);
            if first_clipped > last_clipped {
                continue;
            }
            buckets[(first_clipped - y_start) as usize].push(Edge {
                x0: top.x,
                y0: top.y,
                slope: (bottom.x - top.x) / (bottom.y - top.y),
                y_last: last_clipped,
            });
        }
    }

    let mut spans = Vec::new();
    let mut active: Vec<Edge> = Vec::new();
    let mut xs: Vec<f64> = Vec::new();
    for (row, bucket) in buckets.into_iter().enumerate() {
        let y = y_start + row as i64;
        active.retain(|e| e.y_last >= y);
        active.extend(bucket);
        let yc = y as f64 + 0.5;
        xs.clear();
        xs.extend(active.iter().map(|e| e.x0 + (yc - e.y0) * e.slope));
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            let mut x0 = (pair[0] - 0.5).ceil() as i64;
            let mut x1 = (pair[1] - 0.5).ceil() as i64;
            if let Some((w, _)) = clip {
                x0 = x0.max(0);
                x1 = x1.min(w as i64);
            }
            if x0 < x1 {
                spans.push(Span { y, x0, x1 });
            }
        }
    }
    merge_row_spans(&mut spans);
    spans
}

// Even-odd pairs on one row never overlap but may abut; join those.
fn merge_row_spans(spans: &mut Vec<Span>) {
    spans.sort_unstable();
    let mut out: Vec<Span> = Vec::with_capacity(spans.len());
    for s in spans.drain(..) {
        match out.last_mut() {
            Some(last) if last.y == s.y && s.x0 <= last.x1 => last.x1 = last.x1.max(s.x1),
            _ => out.push(s),
        }
    }
    *spans = out;
}

pub fn spans_area(spans: &[Span]) -> u64 {
    spans.iter().map(Span::len).sum()
}

/// Number of pixels covered by both span lists. Both must be sorted and
/// non-overlapping within a row, as produced by [`polygon_spans`].
pub fn spans_intersection(a: &[Span], b: &[Span]) -> u64 {
    let (mut i, mut j) = (0, 0);
    let mut total = 0;
    while i < a.len() && j < b.len() {
        let (sa, sb) = (a[i], b[j]);
        if sa.y != sb.y {
            if sa.y < sb.y {
                i += 1;
            } else {
                j += 1;
            }
            continue;
        }
        let lo = sa.x0.max(sb.x0);
        let hi = sa.x1.min(sb.x1);
        if hi > lo {
            total += (hi - lo) as u64;
        }
        if sa.x1 < sb.x1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    total
}

/// Pixel IoU of two span sets; two empty sets give 0.
pub fn spans_iou(a: &[Span], b: &[Span]) -> f64 {
    let inter = spans_intersection(a, b);
    let union = spans_area(a) + spans_area(b) - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Scan-converts `poly` into `target` with label `class`. A pixel is filled
/// when its centre is inside under the even-odd rule; later calls overwrite
/// earlier ones.
pub fn rasterize_polygon(target: &mut MaskRaster, poly: &PolygonWithHoles, class: u8) {
    let spans = polygon_spans(poly, Some((target.width(), target.height())));
    target.fill_spans(&spans, class);
}
