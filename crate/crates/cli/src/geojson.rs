//! GeoJSON vector layers.
//!
//! Coordinates are stored in world space through a pixel-to-world affine
//! transform carried in the `pixel_transform` member of the collection
//! (GDAL order `[x0, dx/dcol, dx/drow, y0, dy/dcol, dy/drow]`). The writer
//! emits one feature per line and three decimals per coordinate, so output
//! is stable under reruns and line-diffable.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use polytrace::geometry::{GeometryError, Point2, PolygonWithHoles, Ring};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeoJsonError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed GeoJSON at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("feature {index}: {message}")]
    Feature { index: usize, message: String },
    #[error("feature {index}: unsupported geometry type {kind}")]
    UnsupportedGeometry { index: usize, kind: String },
    #[error("invalid pixel_transform: {0}")]
    Transform(String),
}

/// Pixel-to-world affine map in GDAL coefficient order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelTransform(pub [f64; 6]);

impl Default for PixelTransform {
    fn default() -> Self {
        Self([0.0, 1.0, 0.0, 0.0, 0.0, 1.0])
    }
}

impl PixelTransform {
    pub fn new(c: [f64; 6]) -> Result<Self, GeoJsonError> {
        if c.iter().any(|v| !v.is_finite()) {
            return Err(GeoJsonError::Transform("non-finite coefficient".into()));
        }
        let t = Self(c);
        if t.determinant() == 0.0 {
            return Err(GeoJsonError::Transform("transform is not invertible".into()));
        }
        Ok(t)
    }

    pub fn determinant(&self) -> f64 {
        let c = &self.0;
        c[1] * c[5] - c[2] * c[4]
    }

    pub fn to_world(&self, p: Point2) -> Point2 {
        let c = &self.0;
        Point2::new(c[0] + c[1] * p.x + c[2] * p.y, c[3] + c[4] * p.x + c[5] * p.y)
    }

    pub fn to_pixel(&self, w: Point2) -> Point2 {
        let c = &self.0;
        let det = self.determinant();
        let (dx, dy) = (w.x - c[0], w.y - c[3]);
        Point2::new((c[5] * dx - c[2] * dy) / det, (c[1] * dy - c[4] * dx) / det)
    }
}

/// One polygon with its properties; geometry is in pixel space.
#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub class: u8,
    pub polygon: PolygonWithHoles,
    pub instance_score: Option<f64>,
    pub vertex_conf: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VectorLayer {
    pub features: Vec<Feature>,
    pub transform: PixelTransform,
}

fn coord(out: &mut String, v: f64) {
    let s = format!("{v:.3}");
    out.push_str(if s == "-0.000" { "0.000" } else { &s });
}

fn number(out: &mut String, v: f64) {
    // serde_json writes the shortest representation that reads back exactly
    out.push_str(&serde_json::to_string(&v).expect("finite float"));
}

fn write_ring(out: &mut String, ring: &Ring, t: &PixelTransform, positive: bool) {
    let mut pts: Vec<Point2> = ring.points().iter().map(|&p| t.to_world(p)).collect();
    let area: f64 = (0..pts.len()).map(|i| pts[i].cross(pts[(i + 1) % pts.len()])).sum();
    if (area > 0.0) != positive {
        pts[1..].reverse();
    }
    out.push('[');
    for p in pts.iter().chain(std::iter::once(&pts[0])) {
        if !out.ends_with('[') {
            out.push(',');
        }
        out.push('[');
        coord(out, p.x);
        out.push(',');
        coord(out, p.y);
        out.push(']');
    }
    out.push(']');
}

/// Serializes `layer`. Exterior rings are counter-clockwise and holes
/// clockwise in world coordinates; rings are closed.
pub fn layer_to_string(layer: &VectorLayer) -> String {
    let mut out = String::from("{\"type\":\"FeatureCollection\",\"pixel_transform\":[");
    for (i, &c) in layer.transform.0.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        number(&mut out, c);
    }
    out.push_str("],\"features\":[");
    for (i, f) in layer.features.iter().enumerate() {
        out.push_str(if i == 0 { "\n" } else { ",\n" });
        let _ = write!(out, "{{\"type\":\"Feature\",\"id\":{i},\"properties\":{{\"class_id\":{}", f.class);
        if let Some(s) = f.instance_score.filter(|s| s.is_finite()) {
            out.push_str(",\"instance_score\":");
            number(&mut out, s);
        }
        if let Some(conf) = &f.vertex_conf {
            out.push_str(",\"vertex_conf\":[");
            for (k, &c) in conf.iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                number(&mut out, if c.is_finite() { c } else { 0.0 });
            }
            out.push(']');
        }
        out.push_str("},\"geometry\":{\"type\":\"Polygon\",\"coordinates\":[");
        write_ring(&mut out, f.polygon.exterior(), &layer.transform, true);
        for h in f.polygon.holes() {
            out.push(',');
            write_ring(&mut out, h, &layer.transform, false);
        }
        out.push_str("]}}");
    }
    out.push_str("\n]}\n");
    out
}

pub fn write_vector_layer(layer: &VectorLayer, path: &Path) -> Result<(), GeoJsonError> {
    fs::write(path, layer_to_string(layer)).map_err(|source| GeoJsonError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_vector_layer(path: &Path) -> Result<VectorLayer, GeoJsonError> {
    let text = fs::read_to_string(path).map_err(|source| GeoJsonError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_vector_layer(&text)
}

/// Parses a FeatureCollection of Polygon and MultiPolygon features. Each
/// part of a MultiPolygon becomes its own feature with shared properties.
/// A missing `class_id` defaults to 1.
pub fn parse_vector_layer(text: &str) -> Result<VectorLayer, GeoJsonError> {
    let root: Value = serde_json::from_str(text).map_err(|e| GeoJsonError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let top = |message: &str| GeoJsonError::Parse {
        line: 1,
        column: 1,
        message: message.to_string(),
    };
    if root.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(top("top-level object is not a FeatureCollection"));
    }
    let transform = match root.get("pixel_transform") {
        None | Some(Value::Null) => PixelTransform::default(),
        Some(v) => {
            let c: Vec<f64> = v
                .as_array()
                .map(|a| a.iter().filter_map(Value::as_f64).collect())
                .unwrap_or_default();
            let c: [f64; 6] = c
                .try_into()
                .map_err(|_| GeoJsonError::Transform("expected six numbers".into()))?;
            PixelTransform::new(c)?
        }
    };
    let features = root
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| top("missing features array"))?;

    let mut layer = VectorLayer {
        features: Vec::with_capacity(features.len()),
        transform,
    };
    for (index, f) in features.iter().enumerate() {
        let err = |message: String| GeoJsonError::Feature { index, message };
        let props = f.get("properties").filter(|p| !p.is_null());
        let class = match props.and_then(|p| p.get("class_id")) {
            None | Some(Value::Null) => 1,
            Some(v) => v
                .as_u64()
                .filter(|&c| c <= u8::MAX as u64)
                .ok_or_else(|| err(format!("class_id {v} is not an integer in 0..=255")))? as u8,
        };
        let instance_score = match props.and_then(|p| p.get("instance_score")) {
            None | Some(Value::Null) => None,
            Some(v) => Some(v.as_f64().ok_or_else(|| err("instance_score is not a number".into()))?),
        };
        let vertex_conf = match props.and_then(|p| p.get("vertex_conf")) {
            None | Some(Value::Null) => None,
            Some(v) => Some(
                v.as_array()
                    .and_then(|a| a.iter().map(Value::as_f64).collect::<Option<Vec<f64>>>())
                    .ok_or_else(|| err("vertex_conf is not a number array".into()))?,
            ),
        };
        let geometry = f.get("geometry").ok_or_else(|| err("missing geometry".into()))?;
        let kind = match geometry {
            Value::Null => "null",
            g => g.get("type").and_then(Value::as_str).unwrap_or("<missing>"),
        };
        let coords = geometry.get("coordinates");
        let parts: Vec<&Value> = match kind {
            "Polygon" => vec![coords.ok_or_else(|| err("missing coordinates".into()))?],
            "MultiPolygon" => coords
                .and_then(Value::as_array)
                .ok_or_else(|| err("MultiPolygon coordinates are not an array".into()))?
                .iter()
                .collect(),
            other => {
                return Err(GeoJsonError::UnsupportedGeometry {
                    index,
                    kind: other.to_string(),
                })
            }
        };
        for part in parts {
            let polygon = parse_polygon(part, &transform).map_err(err)?;
            layer.features.push(Feature {
                class,
                polygon,
                instance_score,
                vertex_conf: vertex_conf.clone(),
            });
        }
    }
    Ok(layer)
}

fn parse_polygon(v: &Value, t: &PixelTransform) -> Result<PolygonWithHoles, String> {
    let rings = v.as_array().ok_or("polygon coordinates are not an array")?;
    if rings.is_empty() {
        return Err("polygon has no rings".into());
    }
    let mut parsed = Vec::with_capacity(rings.len());
    for (r, ring) in rings.iter().enumerate() {
        let pts = ring
            .as_array()
            .ok_or_else(|| format!("ring {r} is not an array"))?
            .iter()
            .map(|p| match p.as_array().map(|a| a.as_slice()) {
                Some([x, y, ..]) => match (x.as_f64(), y.as_f64()) {
                    (Some(x), Some(y)) => Ok(t.to_pixel(Point2::new(x, y))),
                    _ => Err(format!("ring {r} has a non-numeric position")),
                },
                _ => Err(format!("ring {r} has a malformed position")),
            })
            .collect::<Result<Vec<Point2>, String>>()?;
        let ring = Ring::from_points_dedup(pts).map_err(|e: GeometryError| format!("ring {r}: {e}"))?;
        parsed.push(ring);
    }
    let exterior = parsed.remove(0);
    PolygonWithHoles::new(exterior, parsed).map_err(|e| e.to_string())
}
