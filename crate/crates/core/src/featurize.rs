//! Local-frame transforms, weather standardization and assembly of
//! example pairs into model inputs.

use serde::{Deserialize, Serialize};

use crate::corpus::{ExamplePair, LatLon, Observation, MAX_INPUT_STEPS, WEATHER_DIM};
use crate::geograph::{ego_sample, quantize, SpatialGraph, Subgraph, SNAP_RADIUS};

const MIN_STD: f64 = 1e-8;

/// Per-feature standardization statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: [f64; WEATHER_DIM],
    pub std: [f64; WEATHER_DIM],
    /// Hash of the split manifest whose training pairs produced the fit.
    pub fitted_on: String,
}

impl Default for Scaler {
    fn default() -> Self {
        Self {
            mean: [0.0; WEATHER_DIM],
            std: [1.0; WEATHER_DIM],
            fitted_on: String::new(),
        }
    }
}

impl Scaler {
    /// Standardizes one weather vector; missing entries become 0 (the mean).
    pub fn transform(&self, features: &[Option<f64>; WEATHER_DIM]) -> [f64; WEATHER_DIM] {
        let mut out = [0.0; WEATHER_DIM];
        for (i, f) in features.iter().enumerate() {
            if let Some(v) = f {
                out[i] = (v - self.mean[i]) / self.std[i];
            }
        }
        out
    }
}

/// Mean and population standard deviation per feature over every
/// non-missing input-step value. A feature with no values gets mean 0,
/// std 1; a constant feature gets std 1.
pub fn fit_scaler(pairs: &[ExamplePair]) -> Scaler {
    let steps = || pairs.iter().flat_map(|p| p.input_steps.iter());
    let mut sum = [0.0; WEATHER_DIM];
    let mut count = [0usize; WEATHER_DIM];
    for o in steps() {
        for (i, v) in o.features().iter().enumerate() {
            if let Some(v) = v {
                sum[i] += v;
                count[i] += 1;
            }
        }
    }
    let mut mean = [0.0; WEATHER_DIM];
    for i in 0..WEATHER_DIM {
        if count[i] > 0 {
            mean[i] = sum[i] / count[i] as f64;
        }
    }
    let mut sq = [0.0; WEATHER_DIM];
    for o in steps() {
        for (i, v) in o.features().iter().enumerate() {
            if let Some(v) = v {
                sq[i] += (v - mean[i]).powi(2);
            }
        }
    }
    let mut std = [1.0; WEATHER_DIM];
    for i in 0..WEATHER_DIM {
        if count[i] > 0 {
            let s = (sq[i] / count[i] as f64).sqrt();
            std[i] = if s < MIN_STD { 1.0 } else { s };
        }
    }
    Scaler {
        mean,
        std,
        fitted_on: String::new(),
    }
}

pub fn to_local_frame(points: &[LatLon], origin: LatLon) -> Vec<[f64; 2]> {
    points.iter().map(|p| to_local(*p, origin)).collect()
}

pub fn from_local_frame(points: &[[f64; 2]], origin: LatLon) -> Vec<LatLon> {
    points.iter().map(|p| from_local(*p, origin)).collect()
}

pub fn to_local(p: LatLon, origin: LatLon) -> [f64; 2] {
    [p.lat - origin.lat, p.lon - origin.lon]
}

pub fn from_local(p: [f64; 2], origin: LatLon) -> LatLon {
    LatLon::new(p[0] + origin.lat, p[1] + origin.lon)
}

/// How a step's position was matched to the graph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NodeResolution {
    Exact,
    Snapped { distance: f64 },
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInput {
    /// (Δlat, Δlon) from the origin.
    pub position_local: [f64; 2],
    pub weather: [f64; WEATHER_DIM],
    /// Ego graph with local-frame node features.
    pub subgraph: Subgraph,
    pub resolution: NodeResolution,
}

/// One model-ready sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInput {
    pub steps: Vec<StepInput>,
    pub origin: LatLon,
    /// Absent when assembling a bare prefix for prediction.
    pub target_local: Option<[f64; 2]>,
}

impl ModelInput {
    pub fn seq_len(&self) -> usize {
        self.steps.len()
    }
}

/// Ego-graph extraction settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphFeatures {
    pub k_hops: usize,
    pub neighbor_cap: usize,
}

impl Default for GraphFeatures {
    fn default() -> Self {
        Self {
            k_hops: 1,
            neighbor_cap: 64,
        }
    }
}

/// Builds a [`ModelInput`] for a training or evaluation pair.
pub fn assemble(
    pair: &ExamplePair,
    graph: &SpatialGraph,
    scaler: &Scaler,
    features: GraphFeatures,
) -> ModelInput {
    let mut input = assemble_steps(&pair.input_steps, graph, scaler, features);
    debug_assert_eq!(input.origin, pair.origin);
    input.target_local = Some(to_local(pair.target, input.origin));
    input
}

/// Builds a target-free [`ModelInput`] from the last (up to 16) fixes of
/// `prefix`. The prefix must be non-empty.
pub fn assemble_steps(
    prefix: &[Observation],
    graph: &SpatialGraph,
    scaler: &Scaler,
    features: GraphFeatures,
) -> ModelInput {
    assert!(!prefix.is_empty(), "assemble_steps needs at least one step");
    let window = &prefix[prefix.len().saturating_sub(MAX_INPUT_STEPS)..];
    let origin = window[0].position();
    let steps = window
        .iter()
        .map(|o| {
            let (mut subgraph, resolution) = resolve(o.position(), graph, features);
            for f in &mut subgraph.node_features {
                *f = to_local(LatLon::new(f[0], f[1]), origin);
            }
            StepInput {
                position_local: to_local(o.position(), origin),
                weather: scaler.transform(&o.features()),
                subgraph,
                resolution,
            }
        })
        .collect();
    ModelInput {
        steps,
        origin,
        target_local: None,
    }
}

/// Ego graph of the exact cell, else of the nearest node within the snap
/// radius, else a singleton carrying the raw position. Node features are
/// global here.
fn resolve(
    position: LatLon,
    graph: &SpatialGraph,
    features: GraphFeatures,
) -> (Subgraph, NodeResolution) {
    let key = quantize(position.lat, position.lon);
    let sample = |k| {
        ego_sample(graph, k, features.k_hops, features.neighbor_cap)
            .expect("resolved node is in the graph")
    };
    if graph.contains(key) {
        return (sample(key), NodeResolution::Exact);
    }
    if let Some(near) = graph.nearest_node(position, SNAP_RADIUS) {
        let distance = near.position().degree_distance(&position);
        return (sample(near), NodeResolution::Snapped { distance });
    }
    (
        Subgraph::singleton(key, [position.lat, position.lon]),
        NodeResolution::Fallback,
    )
}
