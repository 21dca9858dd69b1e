//! Average path length similarity between road graphs.

use std::collections::{BTreeMap, HashMap};

use petgraph::algo::dijkstra;
use petgraph::graph::{NodeIndex, UnGraph};
use rayon::prelude::*;

use super::MetricError;
use crate::geometry::Point2;

pub const DEFAULT_PAIRING_RADIUS: f64 = 50.0;

/// Undirected graph with positioned nodes and positive edge lengths.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoadGraph {
    nodes: BTreeMap<u64, Point2>,
    edges: Vec<(u64, u64, f64)>,
}

impl RoadGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, id: u64, at: Point2) -> Result<(), MetricError> {
        if !at.is_finite() {
            return Err(MetricError::InvalidGraph(format!("node {id} has a non-finite position")));
        }
        if self.nodes.insert(id, at).is_some() {
            return Err(MetricError::InvalidGraph(format!("duplicate node {id}")));
        }
        Ok(())
    }

    pub fn add_edge(&mut self, a: u64, b: u64, length: f64) -> Result<(), MetricError> {
        if a == b {
            return Err(MetricError::InvalidGraph(format!("self-loop on node {a}")));
        }
        for id in [a, b] {
            if !self.nodes.contains_key(&id) {
                return Err(MetricError::InvalidGraph(format!("edge references unknown node {id}")));
            }
        }
        if !(length > 0.0 && length.is_finite()) {
            return Err(MetricError::InvalidGraph(format!("edge {a}-{b} has length {length}")));
        }
        self.edges.push((a, b, length));
        Ok(())
    }

    pub fn nodes(&self) -> &BTreeMap<u64, Point2> {
        &self.nodes
    }

    pub fn edges(&self) -> &[(u64, u64, f64)] {
        &self.edges
    }

    // Graph plus node ids in index order.
    fn to_petgraph(&self) -> (UnGraph<u64, f64>, Vec<u64>) {
        let mut g = UnGraph::with_capacity(self.nodes.len(), self.edges.len());
        let mut index = HashMap::with_capacity(self.nodes.len());
        let mut ids = Vec::with_capacity(self.nodes.len());
        for &id in self.nodes.keys() {
            index.insert(id, g.add_node(id));
            ids.push(id);
        }
        for &(a, b, len) in &self.edges {
            g.add_edge(index[&a], index[&b], len);
        }
        (g, ids)
    }

    // All shortest-path lengths from each listed source.
    fn distances_from(&self, sources: &[usize]) -> Vec<Vec<f64>> {
        let (g, _) = self.to_petgraph();
        sources
            .par_iter()
            .map(|&s| {
                let found = dijkstra(&g, NodeIndex::new(s), None, |e| *e.weight());
                let mut d = vec![f64::INFINITY; g.node_count()];
                for (n, len) in found {
                    d[n.index()] = len;
                }
                d
            })
            .collect()
    }
}

/// APLS as a percentage. Every unordered pair of reference nodes joined by
/// a path contributes `min(1, |d_pred - d_gt| / d_gt)`; a pair whose nodes
/// have no predicted node within `radius`, or whose predicted nodes are
/// disconnected, contributes 1. Reference nodes snap to the nearest
/// predicted node, ties going to the smaller id.
pub fn apls(gt: &RoadGraph, pred: &RoadGraph, radius: f64) -> Result<f64, MetricError> {
    let gt_ids: Vec<u64> = gt.nodes.keys().copied().collect();
    let pred_pts: Vec<Point2> = pred.nodes.values().copied().collect();
    let snap: Vec<Option<usize>> = gt
        .nodes
        .values()
        .map(|&p| {
            let mut best: Option<(usize, f64)> = None;
            for (j, &q) in pred_pts.iter().enumerate() {
                let d = p.distance(q);
                if d <= radius && best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((j, d));
                }
            }
            best.map(|(j, _)| j)
        })
        .collect();

    let all: Vec<usize> = (0..gt_ids.len()).collect();
    let gt_dist = gt.distances_from(&all);
    let mut pred_sources: Vec<usize> = snap.iter().flatten().copied().collect();
    pred_sources.sort_unstable();
    pred_sources.dedup();
    let pred_rows = pred.distances_from(&pred_sources);
    let pred_dist: HashMap<usize, &Vec<f64>> = pred_sources.iter().copied().zip(pred_rows.iter()).collect();

    let mut pairs = 0usize;
    let mut penalty = 0.0;
    for i in 0..gt_ids.len() {
        for j in i + 1..gt_ids.len() {
            let d_gt = gt_dist[i][j];
            if !d_gt.is_finite() {
                continue;
            }
            pairs += 1;
            let term = match (snap[i], snap[j]) {
                (Some(a), Some(b)) => {
                    let d_pred = pred_dist[&a][b];
                    if d_pred.is_finite() {
                        ((d_pred - d_gt).abs() / d_gt).min(1.0)
                    } else {
                        1.0
                    }
                }
                _ => 1.0,
            };
            penalty += term;
        }
    }
    if pairs == 0 {
        return Err(MetricError::EmptyGraph);
    }
    Ok(100.0 * (1.0 - penalty / pairs as f64))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn graph(nodes: &[(u64, f64, f64)], edges: &[(u64, u64, f64)]) -> RoadGraph {
        let mut g = RoadGraph::new();
        for &(id, x, y) in nodes {
            g.add_node(id, Point2::new(x, y)).unwrap();
        }
        for &(a, b, l) in edges {
            g.add_edge(a, b, l).unwrap();
        }
        g
    }

    #[test]
    fn examples() {
        let g = graph(&[(1, 0.0, 0.0), (2, 10.0, 0.0)], &[(1, 2, 10.0)]);
        assert_eq!(apls(&g, &g, DEFAULT_PAIRING_RADIUS).unwrap(), 100.0);

        let p = graph(&[(1, 0.0, 0.0), (2, 10.0, 0.0)], &[(1, 2, 12.0)]);
        assert!((apls(&g, &p, DEFAULT_PAIRING_RADIUS).unwrap() - 80.0).abs() < 1e-12);

        let broken = graph(&[(1, 0.0, 0.0), (2, 10.0, 0.0)], &[]);
        assert_eq!(apls(&g, &broken, DEFAULT_PAIRING_RADIUS).unwrap(), 0.0);

        let far = graph(&[(1, 500.0, 0.0), (2, 510.0, 0.0)], &[(1, 2, 10.0)]);
        assert_eq!(apls(&g, &far, DEFAULT_PAIRING_RADIUS).unwrap(), 0.0);
    }

    #[test]
    fn empty_graph_is_an_error() {
        let lone = graph(&[(1, 0.0, 0.0), (2, 3.0, 0.0)], &[]);
        assert_eq!(apls(&lone, &lone, 50.0), Err(MetricError::EmptyGraph));
        assert_eq!(apls(&RoadGraph::new(), &lone, 50.0), Err(MetricError::EmptyGraph));
    }

    #[test]
    fn invalid_graphs_rejected() {
        let mut g = graph(&[(1, 0.0, 0.0), (2, 1.0, 0.0)], &[]);
        assert!(g.add_edge(1, 1, 1.0).is_err());
        assert!(g.add_edge(1, 3, 1.0).is_err());
        assert!(g.add_edge(1, 2, 0.0).is_err());
        assert!(g.add_node(1, Point2::new(5.0, 5.0)).is_err());
    }

    #[test]
    fn paths_use_shortest_route() {
        // square with a diagonal shortcut in the prediction
        let nodes = [(1, 0.0, 0.0), (2, 10.0, 0.0), (3, 10.0, 10.0), (4, 0.0, 10.0)];
        let ring = [(1, 2, 10.0), (2, 3, 10.0), (3, 4, 10.0), (4, 1, 10.0)];
        let g = graph(&nodes, &ring);
        let mut with_diag = ring.to_vec();
        with_diag.push((1, 3, 10.0));
        let p = graph(&nodes, &with_diag);
        // pair (1,3): |10 - 20| / 20 = 0.5, other five pairs exact
        assert!((apls(&g, &p, 50.0).unwrap() - 100.0 * (1.0 - 0.5 / 6.0)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn self_comparison_and_range(
            pts in proptest::collection::vec((0.0f64..1000.0, 0.0f64..1000.0), 2..12),
            extra in proptest::collection::vec((0usize..12, 0usize..12, 1.0f64..300.0), 0..20),
            scale in 0.5f64..2.0,
        ) {
            let nodes: Vec<(u64, f64, f64)> = pts.iter().enumerate().map(|(i, &(x, y))| (i as u64, x, y)).collect();
            let n = nodes.len();
            let mut edges: Vec<(u64, u64, f64)> = (1..n).map(|i| ((i - 1) as u64, i as u64, 100.0)).collect();
            edges.extend(extra.iter().filter(|e| e.0 % n != e.1 % n).map(|e| ((e.0 % n) as u64, (e.1 % n) as u64, e.2)));
            let g = graph(&nodes, &edges);
            prop_assert_eq!(apls(&g, &g, 50.0).unwrap(), 100.0);
            let scaled: Vec<(u64, u64, f64)> = edges.iter().map(|&(a, b, l)| (a, b, l * scale)).collect();
            let v = apls(&g, &graph(&nodes, &scaled), 50.0).unwrap();
            prop_assert!((0.0..=100.0).contains(&v));
        }
    }
}
