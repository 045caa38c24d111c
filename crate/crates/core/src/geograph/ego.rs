use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{NodeKey, SpatialGraph};
use crate::error::{Error, Result};

/// Extracted neighbourhood of one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subgraph {
    pub nodes: Vec<NodeKey>,
    /// Per-node (lat, lon). Global cell centres as sampled; featurization
    /// rewrites them into a local frame.
    pub node_features: Vec<[f64; 2]>,
    /// Directed `(src, dst, weight)` over indices into `nodes`.
    pub edges: Vec<(usize, usize, f64)>,
    pub ego_index: usize,
}

impl Subgraph {
    /// A lone node with no edges.
    pub fn singleton(key: NodeKey, feature: [f64; 2]) -> Self {
        Self {
            nodes: vec![key],
            node_features: vec![feature],
            edges: Vec::new(),
            ego_index: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Checks the structural invariants.
    pub fn is_well_formed(&self) -> bool {
        let n = self.nodes.len();
        self.ego_index < n
            && self.node_features.len() == n
            && self.edges.iter().all(|&(s, d, _)| s < n && d < n)
    }
}

/// Breadth-first ego graph over the undirected view of `graph`.
///
/// Each hop keeps at most `cap` newly reached nodes, preferring the largest
/// connecting edge weight (either direction) and then the smaller key. All
/// directed edges between retained nodes are returned with their weights.
/// Nodes are ordered by hop, then by key; the ego node comes first.
pub fn ego_sample(graph: &SpatialGraph, ego: NodeKey, k: usize, cap: usize) -> Result<Subgraph> {
    let ego_idx = graph.index_of(ego).ok_or(Error::UnknownNode {
        qlat: ego.qlat,
        qlon: ego.qlon,
    })?;
    if k == 0 || cap == 0 {
        return Err(Error::Config(
            "ego_sample requires k >= 1 and cap >= 1".into(),
        ));
    }

    let mut retained = vec![ego_idx];
    let mut position: HashMap<usize, usize> = HashMap::from([(ego_idx, 0)]);
    let mut frontier = vec![ego_idx];
    for _ in 0..k {
        let mut candidates: BTreeMap<usize, u64> = BTreeMap::new();
        for &f in &frontier {
            for (n, w) in graph.undirected_neighbours(f) {
                if !position.contains_key(&n) {
                    let e = candidates.entry(n).or_insert(0);
                    *e = (*e).max(w);
                }
            }
        }
        if candidates.is_empty() {
            break;
        }
        let mut ranked: Vec<(usize, u64)> = candidates.into_iter().collect();
        // Index order equals key order.
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.truncate(cap);
        let mut hop: Vec<usize> = ranked.into_iter().map(|(n, _)| n).collect();
        hop.sort_unstable();
        for &n in &hop {
            position.insert(n, retained.len());
            retained.push(n);
        }
        frontier = hop;
    }

    let mut edges = Vec::new();
    for (local_src, &src) in retained.iter().enumerate() {
        for (local_dst, &dst) in retained.iter().enumerate() {
            if let Some(t) = graph.edge_tenths(src, dst) {
                edges.push((local_src, local_dst, t as f64 / 10.0));
            }
        }
    }

    let nodes: Vec<NodeKey> = retained.iter().map(|&i| graph.key(i)).collect();
    let node_features = nodes
        .iter()
        .map(|k| {
            let p = k.position();
            [p.lat, p.lon]
        })
        .collect();
    Ok(Subgraph {
        nodes,
        node_features,
        edges,
        ego_index: 0,
    })
}
