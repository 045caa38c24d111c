use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{NodeKey, SpatialGraph};
use crate::error::Result;

/// JSON form of a [`SpatialGraph`]: nodes as `[qlat, qlon]`, edges as
/// `[src_idx, dst_idx, weight]` indexing into `nodes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphRecord {
    pub nodes: Vec<(i32, i32)>,
    pub edges: Vec<(usize, usize, f64)>,
    pub built_from: String,
}

impl From<&SpatialGraph> for GraphRecord {
    fn from(g: &SpatialGraph) -> Self {
        GraphRecord {
            nodes: g.keys.iter().map(|k| (k.qlat, k.qlon)).collect(),
            edges: g
                .edges
                .iter()
                .map(|(&(s, d), &t)| (s, d, t as f64 / 10.0))
                .collect(),
            built_from: g.built_from.clone(),
        }
    }
}

impl GraphRecord {
    pub fn into_graph(self) -> Result<SpatialGraph> {
        let keys: Vec<NodeKey> = self
            .nodes
            .iter()
            .map(|&(a, b)| NodeKey::new(a, b))
            .collect();
        let mut edges = Vec::with_capacity(self.edges.len());
        for &(s, d, w) in &self.edges {
            let lookup = |i: usize| {
                keys.get(i).copied().ok_or_else(|| {
                    crate::error::Error::Config(format!("edge endpoint {i} out of range"))
                })
            };
            edges.push((lookup(s)?, lookup(d)?, w));
        }
        let mut g = SpatialGraph::from_parts(keys, edges)?;
        g.built_from = self.built_from;
        Ok(g)
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(
            serde_json::to_vec(self).expect("graph serializes"),
        ))
    }
}

impl SpatialGraph {
    pub fn to_record(&self) -> GraphRecord {
        GraphRecord::from(self)
    }

    pub fn hash(&self) -> String {
        self.to_record().hash()
    }
}

#[cfg(test)]
mod tests {
    use crate::fixtures::toy_corpus;
    use crate::geograph::build_graph;

    use super::*;

    #[test]
    fn json_round_trip() {
        let mut g = build_graph(&toy_corpus());
        g.built_from = "abc".into();
        let json = serde_json::to_string(&g.to_record()).unwrap();
        assert!(json.starts_with("{\"nodes\":[["));
        let back: GraphRecord = serde_json::from_str(&json).unwrap();
        let g2 = back.into_graph().unwrap();
        assert_eq!(g, g2);
        assert_eq!(g.hash(), g2.hash());
    }
}
