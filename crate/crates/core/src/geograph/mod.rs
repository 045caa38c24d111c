//! Weighted directed knowledge graph over 0.1° cells, built from training
//! tracks, with ego-graph extraction and nearest-node lookup.

mod ego;
mod record;
mod spatial;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{LatLon, Trajectory};
use crate::error::{Error, Result};

pub use ego::{ego_sample, Subgraph};
pub use record::GraphRecord;
use spatial::GridIndex;

/// Radius used when snapping unseen positions onto the graph.
pub const SNAP_RADIUS: f64 = 0.75;

/// Weight added to `u_{t-lag} -> u_t` for lags 1..=5, in tenths.
const LAG_WEIGHT_TENTHS: [u64; 5] = [10, 5, 5, 1, 1];

/// A 0.1° cell, stored as tenths of a degree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeKey {
    pub qlat: i32,
    pub qlon: i32,
}

impl NodeKey {
    pub const fn new(qlat: i32, qlon: i32) -> Self {
        Self { qlat, qlon }
    }

    /// Cell centre in degrees.
    pub fn position(&self) -> LatLon {
        LatLon::new(self.qlat as f64 / 10.0, self.qlon as f64 / 10.0)
    }
}

/// Rounds to one decimal, half away from zero.
///
/// Values within 1e-6 tenths of a half are treated as exact halves, so
/// decimal inputs such as `15.05` (stored as 15.0499999...) round the way
/// their text reads.
pub fn quantize(lat: f64, lon: f64) -> NodeKey {
    fn tenths(v: f64) -> i32 {
        let scaled = ((v * 10.0) * 1e6).round() / 1e6;
        scaled.round() as i32
    }
    NodeKey::new(tenths(lat), tenths(lon))
}

/// Directed graph with edge weights that are sums of 1.0, 0.5 and 0.1.
/// Weights are held as integer tenths so construction is exact and
/// independent of trajectory order.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGraph {
    keys: Vec<NodeKey>,
    index: HashMap<NodeKey, usize>,
    edges: BTreeMap<(usize, usize), u64>,
    out_adj: Vec<Vec<(usize, u64)>>,
    in_adj: Vec<Vec<(usize, u64)>>,
    grid: GridIndex,
    /// Hash of the split manifest the graph was built from, if known.
    pub built_from: String,
}

impl Default for SpatialGraph {
    fn default() -> Self {
        Self::from_tenths(BTreeSet::new(), BTreeMap::new())
    }
}

impl SpatialGraph {
    fn from_tenths(nodes: BTreeSet<NodeKey>, weighted: BTreeMap<(NodeKey, NodeKey), u64>) -> Self {
        let keys: Vec<NodeKey> = nodes.into_iter().collect();
        let index: HashMap<NodeKey, usize> =
            keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();
        let mut edges = BTreeMap::new();
        let mut out_adj = vec![Vec::new(); keys.len()];
        let mut in_adj = vec![Vec::new(); keys.len()];
        for ((src, dst), w) in weighted {
            let (s, d) = (index[&src], index[&dst]);
            edges.insert((s, d), w);
            out_adj[s].push((d, w));
            in_adj[d].push((s, w));
        }
        let grid = GridIndex::new(&keys);
        Self {
            keys,
            index,
            edges,
            out_adj,
            in_adj,
            grid,
            built_from: String::new(),
        }
    }

    /// Builds a graph from explicit nodes and weighted edges. Every weight
    /// must be a positive multiple of 0.1 and every endpoint a listed node.
    pub fn from_parts(
        nodes: impl IntoIterator<Item = NodeKey>,
        edges: impl IntoIterator<Item = (NodeKey, NodeKey, f64)>,
    ) -> Result<Self> {
        let nodes: BTreeSet<NodeKey> = nodes.into_iter().collect();
        let mut weighted = BTreeMap::new();
        for (src, dst, w) in edges {
            for k in [src, dst] {
                if !nodes.contains(&k) {
                    return Err(Error::UnknownNode {
                        qlat: k.qlat,
                        qlon: k.qlon,
                    });
                }
            }
            let tenths = (w * 10.0).round();
            if !(w > 0.0) || (w * 10.0 - tenths).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "edge weight {w} is not a positive multiple of 0.1"
                )));
            }
            *weighted.entry((src, dst)).or_insert(0) += tenths as u64;
        }
        Ok(Self::from_tenths(nodes, weighted))
    }

    pub fn node_count(&self) -> usize {
        self.keys.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn contains(&self, key: NodeKey) -> bool {
        self.index.contains_key(&key)
    }

    /// Nodes in key order.
    pub fn nodes(&self) -> &[NodeKey] {
        &self.keys
    }

    pub fn weight(&self, src: NodeKey, dst: NodeKey) -> Option<f64> {
        let s = *self.index.get(&src)?;
        let d = *self.index.get(&dst)?;
        self.edges.get(&(s, d)).map(|&t| t as f64 / 10.0)
    }

    /// Directed edges in `(src, dst)` key order.
    pub fn edges(&self) -> impl Iterator<Item = (NodeKey, NodeKey, f64)> + '_ {
        self.edges
            .iter()
            .map(|(&(s, d), &t)| (self.keys[s], self.keys[d], t as f64 / 10.0))
    }

    pub(crate) fn index_of(&self, key: NodeKey) -> Option<usize> {
        self.index.get(&key).copied()
    }

    pub(crate) fn key(&self, idx: usize) -> NodeKey {
        self.keys[idx]
    }

    pub(crate) fn edge_tenths(&self, src: usize, dst: usize) -> Option<u64> {
        self.edges.get(&(src, dst)).copied()
    }

    /// Undirected neighbours of `idx` with the larger of the two directed
    /// weights, in tenths. Self-loops are skipped.
    pub(crate) fn undirected_neighbours(&self, idx: usize) -> BTreeMap<usize, u64> {
        let mut out = BTreeMap::new();
        for &(n, w) in self.out_adj[idx].iter().chain(&self.in_adj[idx]) {
            if n != idx {
                let e = out.entry(n).or_insert(0);
                *e = (*e).max(w);
            }
        }
        out
    }

    /// Closest node to `query` in raw degree space, if within `max_dist`.
    /// Ties go to the smaller key.
    pub fn nearest_node(&self, query: LatLon, max_dist: f64) -> Option<NodeKey> {
        self.grid
            .nearest(&self.keys, query, max_dist)
            .map(|i| self.keys[i])
    }

    /// Summary counts for reporting.
    pub fn stats(&self) -> GraphStats {
        let total: u64 = self.edges.values().sum();
        let self_loops = self.edges.keys().filter(|(s, d)| s == d).count();
        let max_out = self.out_adj.iter().map(Vec::len).max().unwrap_or(0);
        GraphStats {
            nodes: self.node_count(),
            edges: self.edge_count(),
            self_loops,
            total_weight: total as f64 / 10.0,
            max_out_degree: max_out,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub nodes: usize,
    pub edges: usize,
    pub self_loops: usize,
    pub total_weight: f64,
    pub max_out_degree: usize,
}

/// Accumulates lag-weighted transitions from trajectories.
#[derive(Debug, Default, Clone)]
pub struct GraphBuilder {
    nodes: BTreeSet<NodeKey>,
    weights: BTreeMap<(NodeKey, NodeKey), u64>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_trajectory(&mut self, trajectory: &Trajectory) {
        let keys: Vec<NodeKey> = trajectory
            .positions()
            .map(|p| quantize(p.lat, p.lon))
            .collect();
        self.nodes.extend(keys.iter().copied());
        for t in 1..keys.len() {
            for (lag, &tenths) in LAG_WEIGHT_TENTHS.iter().enumerate() {
                let Some(src) = t.checked_sub(lag + 1) else {
                    break;
                };
                *self.weights.entry((keys[src], keys[t])).or_insert(0) += tenths;
            }
        }
    }

    pub fn finish(self) -> SpatialGraph {
        SpatialGraph::from_tenths(self.nodes, self.weights)
    }
}

/// Builds the transition graph from (training) trajectories: for every
/// position `t`, `u_{t-1}->u_t` gains 1.0, lags 2 and 3 gain 0.5, lags 4
/// and 5 gain 0.1. Self-loops from repeated cells are kept.
pub fn build_graph(train: &[Trajectory]) -> SpatialGraph {
    let mut builder = GraphBuilder::new();
    for t in train {
        builder.add_trajectory(t);
    }
    builder.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{from_points, toy_corpus, TOY_NODES};

    #[test]
    fn quantize_rounds_half_away_from_zero() {
        assert_eq!(quantize(15.04, -59.96), NodeKey::new(150, -600));
        assert_eq!(quantize(15.05, 0.0), NodeKey::new(151, 0));
        assert_eq!(quantize(-0.04, -0.05), NodeKey::new(0, -1));
        assert_eq!(quantize(0.15, -0.15), NodeKey::new(2, -2));
    }

    #[test]
    fn toy_corpus_weights() {
        let g = build_graph(&toy_corpus());
        let u: Vec<NodeKey> = TOY_NODES.iter().map(|&(a, b)| quantize(a, b)).collect();
        let expected = [
            (3, 4, 2.0),
            (4, 5, 2.0),
            (3, 5, 1.0),
            (0, 1, 1.0),
            (1, 3, 1.0),
            (2, 3, 1.0),
            (1, 4, 0.5),
            (0, 4, 0.5),
            (2, 4, 0.5),
            (0, 3, 0.5),
            (1, 5, 0.5),
            (2, 5, 0.5),
            (0, 5, 0.1),
        ];
        assert_eq!(g.edge_count(), expected.len());
        for (s, d, w) in expected {
            assert_eq!(g.weight(u[s], u[d]), Some(w), "u{s}->u{d}");
        }
        assert_eq!(g.node_count(), 6);
    }

    #[test]
    fn single_step_trajectory_has_one_edge() {
        let g = build_graph(&[from_points("A", &[(10.0, -50.0), (10.3, -50.2)])]);
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.edges().next().unwrap().2, 1.0);
    }

    #[test]
    fn repeated_cells_make_self_loops() {
        let g = build_graph(&[from_points("A", &[(10.01, -50.0), (10.02, -50.0)])]);
        let k = quantize(10.0, -50.0);
        assert_eq!(g.weight(k, k), Some(1.0));
        assert_eq!(g.stats().self_loops, 1);
    }

    #[test]
    fn empty_training_set_gives_empty_graph() {
        let g = build_graph(&[]);
        assert!(g.is_empty());
        assert_eq!(g.nearest_node(LatLon::new(0.0, 0.0), SNAP_RADIUS), None);
    }

    #[test]
    fn from_parts_rejects_bad_weights_and_dangling_edges() {
        let a = NodeKey::new(0, 0);
        let b = NodeKey::new(1, 1);
        assert!(SpatialGraph::from_parts([a, b], [(a, b, 0.25)]).is_err());
        assert!(SpatialGraph::from_parts([a], [(a, b, 1.0)]).is_err());
        assert!(SpatialGraph::from_parts([a, b], [(a, b, 1.1)]).is_ok());
    }
}
