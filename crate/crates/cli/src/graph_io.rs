//! Plain-text road graphs: `node id x y` and `edge id1 id2 length` lines.
//! Blank lines and lines starting with `#` are skipped.

use std::fs;
use std::path::Path;

use polytrace::geometry::Point2;
use polytrace::metrics::RoadGraph;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphIoError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub fn parse_graph(text: &str) -> Result<RoadGraph, GraphIoError> {
    let mut g = RoadGraph::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let err = |message: String| GraphIoError::Parse { line, message };
        let body = raw.trim();
        if body.is_empty() || body.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = body.split_whitespace().collect();
        let int = |s: &str| s.parse::<u64>().map_err(|_| err(format!("bad node id {s:?}")));
        let num = |s: &str| s.parse::<f64>().map_err(|_| err(format!("bad number {s:?}")));
        match fields.as_slice() {
            ["node", id, x, y] => g
                .add_node(int(id)?, Point2::new(num(x)?, num(y)?))
                .map_err(|e| err(e.to_string()))?,
            ["edge", a, b, len] => g.add_edge(int(a)?, int(b)?, num(len)?).map_err(|e| err(e.to_string()))?,
            _ => return Err(err(format!("expected `node id x y` or `edge id1 id2 length`, got {body:?}"))),
        }
    }
    Ok(g)
}

pub fn read_graph(path: &Path) -> Result<RoadGraph, GraphIoError> {
    let text = fs::read_to_string(path).map_err(|source| GraphIoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_graph(&text)
}
