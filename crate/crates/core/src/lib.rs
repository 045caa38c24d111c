//! Next-location prediction for storm tracks with a spatial knowledge
//! graph: per-step ego graphs are embedded by a small GCN, concatenated
//! with standardized weather features and fed through a Transformer
//! encoder. A position-only Transformer serves as the baseline.

pub mod autodiff;
pub mod corpus;
mod error;
pub mod evalkit;
pub mod featurize;
pub mod geograph;
pub mod nets;
pub mod trainer;

#[cfg(test)]
pub(crate) mod fixtures;

pub use corpus::{ExamplePair, LatLon, Observation, Trajectory};
pub use error::{Error, Result};
pub use geograph::{NodeKey, SpatialGraph, Subgraph};
