use std::collections::BTreeSet;

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Observation, Trajectory};
use crate::error::{Error, Result};

const MIN_LEN: usize = 6;
const MAX_LEN: usize = 36;
/// Out-edges are drawn among this many nearest latent nodes.
const CANDIDATE_NEIGHBOURS: usize = 5;

/// Ground-truth dynamics behind a synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentGraph {
    /// Integer-degree (lat, lon) cell positions.
    pub nodes: Vec<(f64, f64)>,
    /// `(src, dst, weight)`; every node has at least one out-edge.
    pub edges: Vec<(usize, usize, f64)>,
}

impl LatentGraph {
    pub fn successors(&self, node: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.edges
            .iter()
            .filter(move |e| e.0 == node)
            .map(|e| (e.1, e.2))
    }

    pub fn has_edge(&self, src: usize, dst: usize) -> bool {
        self.edges.iter().any(|e| e.0 == src && e.1 == dst)
    }

    /// Index of the latent node closest to `(lat, lon)`.
    pub fn nearest(&self, lat: f64, lon: f64) -> usize {
        let d = |i: usize| (self.nodes[i].0 - lat).hypot(self.nodes[i].1 - lon);
        (0..self.nodes.len())
            .min_by(|&a, &b| d(a).total_cmp(&d(b)))
            .expect("latent graph has nodes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpus {
    pub trajectories: Vec<Trajectory>,
    pub latent: LatentGraph,
    /// Latent node visited at every fix of every trajectory.
    pub walks: Vec<Vec<usize>>,
}

/// Emits weighted random walks over a random latent graph, with Gaussian
/// positional noise (rounded to 0.01°) and weather that carries no
/// positional information. Deterministic under `seed`.
pub fn generate_synthetic(
    n_trajectories: usize,
    latent_graph_nodes: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<SyntheticCorpus> {
    if n_trajectories == 0 {
        return Err(Error::Config("n_trajectories must be at least 1".into()));
    }
    if latent_graph_nodes < 4 {
        return Err(Error::Config(
            "latent_graph_nodes must be at least 4".into(),
        ));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::Config(format!("invalid noise_sigma {noise_sigma}")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let latent = latent_graph(latent_graph_nodes, &mut rng);
    let noise = Normal::new(0.0, noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let jitter = Normal::new(0.0, 1.0).expect("unit normal");
    let t0 = NaiveDate::from_ymd_opt(1990, 6, 1)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap();

    let mut trajectories = Vec::with_capacity(n_trajectories);
    let mut walks = Vec::with_capacity(n_trajectories);
    for id in 0..n_trajectories {
        let len = rng.random_range(MIN_LEN..=MAX_LEN);
        let mut walk = vec![rng.random_range(0..latent.nodes.len())];
        while walk.len() < len {
            let here = *walk.last().unwrap();
            let next: Vec<(usize, f64)> = latent.successors(here).collect();
            let total: f64 = next.iter().map(|e| e.1).sum();
            let mut pick = rng.random::<f64>() * total;
            let mut chosen = next[next.len() - 1].0;
            for (dst, w) in &next {
                if pick < *w {
                    chosen = *dst;
                    break;
                }
                pick -= w;
            }
            walk.push(chosen);
        }

        let start = t0 + Duration::days(id as i64 * 3);
        let observations = walk
            .iter()
            .enumerate()
            .map(|(step, &node)| {
                let (lat, lon) = latent.nodes[node];
                let (lat, lon) = if noise_sigma > 0.0 {
                    (
                        round2(lat + noise.sample(&mut rng)),
                        round2(lon + noise.sample(&mut rng)),
                    )
                } else {
                    (lat, lon)
                };
                let phase = std::f64::consts::PI * step as f64 / len as f64;
                let wind = (35.0 + 40.0 * phase.sin() + 3.0 * jitter.sample(&mut rng))
                    .round()
                    .max(15.0);
                let pressure = if rng.random::<f64>() < 0.05 {
                    None
                } else {
                    Some((1012.0 - 0.9 * (wind - 30.0) + 2.0 * jitter.sample(&mut rng)).round())
                };
                let mut radii = [None; 12];
                for (q, slot) in radii.iter_mut().enumerate() {
                    let threshold = [34.0, 50.0, 64.0][q / 4];
                    if wind >= threshold {
                        let base = 3.0 * (wind - threshold) + 10.0 * jitter.sample(&mut rng);
                        *slot = Some(base.round().max(0.0));
                    } else if threshold < 64.0 {
                        *slot = Some(0.0);
                    }
                }
                Observation {
                    timestamp: start + Duration::hours(6 * step as i64),
                    record_id: String::new(),
                    status: if wind >= 64.0 { "HU" } else { "TS" }.into(),
                    lat,
                    lon,
                    max_wind: Some(wind),
                    min_pressure: pressure,
                    wind_radii: radii,
                }
            })
            .collect();

        trajectories.push(Trajectory {
            storm_id: format!("SY{id:06}"),
            name: "SYNTH".into(),
            observations,
        });
        walks.push(walk);
    }

    Ok(SyntheticCorpus {
        trajectories,
        latent,
        walks,
    })
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

fn latent_graph(n: usize, rng: &mut ChaCha8Rng) -> LatentGraph {
    let side = ((2 * n) as f64).sqrt().ceil() as i64 + 1;
    let mut cells = BTreeSet::new();
    while cells.len() < n {
        cells.insert((rng.random_range(0..side), rng.random_range(0..side)));
    }
    // Atlantic-like box; integer degrees so zero-noise fixes sit exactly on nodes.
    let nodes: Vec<(f64, f64)> = cells
        .into_iter()
        .map(|(r, c)| (12.0 + r as f64, -80.0 + c as f64))
        .collect();

    let mut edges = Vec::new();
    for src in 0..n {
        let mut near: Vec<usize> = (0..n).filter(|&j| j != src).collect();
        let dist = |j: usize| (nodes[j].0 - nodes[src].0).hypot(nodes[j].1 - nodes[src].1);
        near.sort_by(|&a, &b| dist(a).total_cmp(&dist(b)).then(a.cmp(&b)));
        near.truncate(CANDIDATE_NEIGHBOURS);
        let degree = [1, 2, 2, 3][rng.random_range(0..4)].min(near.len());
        for k in 0..degree {
            let pick = rng.random_range(0..near.len());
            let dst = near.swap_remove(pick);
            // One dominant transition keeps the walk mostly predictable from the graph.
            let weight = if k == 0 { 1.0 } else { 0.25 };
            edges.push((src, dst, weight));
        }
    }
    LatentGraph { nodes, edges }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_hurdat2, write_hurdat2};

    #[test]
    fn zero_noise_points_sit_on_latent_nodes() {
        let c = generate_synthetic(50, 12, 0.0, 4).unwrap();
        for (t, walk) in c.trajectories.iter().zip(&c.walks) {
            for (o, &node) in t.observations.iter().zip(walk) {
                assert_eq!((o.lat, o.lon), c.latent.nodes[node]);
            }
        }
    }

    #[test]
    fn zero_noise_transitions_follow_latent_edges() {
        let c = generate_synthetic(200, 30, 0.0, 8).unwrap();
        let index = |lat: f64, lon: f64| {
            c.latent
                .nodes
                .iter()
                .position(|&n| n == (lat, lon))
                .unwrap()
        };
        for t in &c.trajectories {
            for w in t.observations.windows(2) {
                let a = index(w[0].lat, w[0].lon);
                let b = index(w[1].lat, w[1].lon);
                assert!(
                    c.latent.has_edge(a, b),
                    "transition {a}->{b} not in latent graph"
                );
            }
        }
    }

    #[test]
    fn deterministic_and_serializable() {
        let a = generate_synthetic(40, 20, 0.05, 1).unwrap();
        let b = generate_synthetic(40, 20, 0.05, 1).unwrap();
        let text = write_hurdat2(&a.trajectories);
        assert_eq!(text, write_hurdat2(&b.trajectories));
        assert_eq!(parse_hurdat2(&text).unwrap().trajectories, a.trajectories);
        assert_ne!(a, generate_synthetic(40, 20, 0.05, 2).unwrap());
    }

    #[test]
    fn rejects_degenerate_requests() {
        assert!(generate_synthetic(0, 10, 0.0, 0).is_err());
        assert!(generate_synthetic(10, 3, 0.0, 0).is_err());
    }
}
