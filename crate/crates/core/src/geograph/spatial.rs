use std::collections::HashMap;

use super::NodeKey;
use crate::corpus::LatLon;

/// Nodes bucketed into 1°×1° cells.
#[derive(Debug, Clone, PartialEq, Default)]
pub(super) struct GridIndex {
    buckets: HashMap<(i32, i32), Vec<usize>>,
}

fn bucket_of(key: &NodeKey) -> (i32, i32) {
    (key.qlat.div_euclid(10), key.qlon.div_euclid(10))
}

impl GridIndex {
    pub(super) fn new(keys: &[NodeKey]) -> Self {
        let mut buckets: HashMap<(i32, i32), Vec<usize>> = HashMap::new();
        for (i, k) in keys.iter().enumerate() {
            buckets.entry(bucket_of(k)).or_default().push(i);
        }
        Self { buckets }
    }

    /// Index of the closest node within `max_dist`, ties to the smaller key.
    /// `keys` must be the slice the index was built from (sorted by key).
    pub(super) fn nearest(&self, keys: &[NodeKey], query: LatLon, max_dist: f64) -> Option<usize> {
        if keys.is_empty() || !(max_dist >= 0.0) {
            return None;
        }
        let mut best: Option<(f64, usize)> = None;
        let mut consider = |i: usize| {
            let d = keys[i].position().degree_distance(&query);
            if d > max_dist {
                return;
            }
            // Keys are sorted, so a smaller index is a smaller key.
            match best {
                Some((bd, bi)) if bd < d || (bd == d && bi < i) => {}
                _ => best = Some((d, i)),
            }
        };

        let lo_lat = (query.lat - max_dist).floor();
        let hi_lat = (query.lat + max_dist).floor();
        let lo_lon = (query.lon - max_dist).floor();
        let hi_lon = (query.lon + max_dist).floor();
        let span = (hi_lat - lo_lat + 1.0) * (hi_lon - lo_lon + 1.0);
        if !span.is_finite() || span > self.buckets.len() as f64 {
            (0..keys.len()).for_each(&mut consider);
        } else {
            for blat in lo_lat as i32..=hi_lat as i32 {
                for blon in lo_lon as i32..=hi_lon as i32 {
                    if let Some(members) = self.buckets.get(&(blat, blon)) {
                        members.iter().copied().for_each(&mut consider);
                    }
                }
            }
        }
        best.map(|(_, i)| i)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{quantize, SpatialGraph};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn linear_scan(keys: &[NodeKey], q: LatLon, max_dist: f64) -> Option<NodeKey> {
        let mut best: Option<(f64, NodeKey)> = None;
        for k in keys {
            let d = k.position().degree_distance(&q);
            let better = match best {
                None => true,
                Some((bd, bk)) => d < bd || (d == bd && *k < bk),
            };
            if d <= max_dist && better {
                best = Some((d, *k));
            }
        }
        best.map(|b| b.1)
    }

    #[test]
    fn exact_hit_and_threshold() {
        let a = NodeKey::new(200, -700);
        let b = NodeKey::new(208, -700);
        let g = SpatialGraph::from_parts([a, b], []).unwrap();
        assert_eq!(g.nearest_node(a.position(), 0.75), Some(a));
        // Only node at 0.8 away.
        let g1 = SpatialGraph::from_parts([b], []).unwrap();
        assert_eq!(g1.nearest_node(a.position(), 0.75), None);
    }

    #[test]
    fn matches_linear_scan_on_random_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let nodes: Vec<NodeKey> = (0..1000)
            .map(|_| quantize(rng.random_range(15.0..25.0), rng.random_range(-75.0..-65.0)))
            .collect();
        let g = SpatialGraph::from_parts(nodes.iter().copied(), []).unwrap();
        let mut queries = vec![LatLon::new(20.33, -70.41)];
        queries
            .extend((0..99).map(|_| {
                LatLon::new(rng.random_range(14.0..26.0), rng.random_range(-76.0..-64.0))
            }));
        for q in queries {
            for r in [0.05, 0.75, 3.0] {
                assert_eq!(
                    g.nearest_node(q, r),
                    linear_scan(g.nodes(), q, r),
                    "{q:?} r={r}"
                );
            }
        }
    }

    #[test]
    fn ties_go_to_smaller_key() {
        let a = NodeKey::new(0, 0);
        let b = NodeKey::new(0, 10);
        let g = SpatialGraph::from_parts([b, a], []).unwrap();
        assert_eq!(g.nearest_node(LatLon::new(0.0, 0.5), 0.75), Some(a));
    }
}
