//! GCN ego-graph encoder, pre-norm Transformer encoder, and the two model
//! variants built from them.

mod batch;
mod config;
mod gcn;
pub mod gradcheck;
mod model;
mod params;
mod transformer;

pub use batch::Batch;
pub use config::{ModelConfig, Variant};
pub use gcn::{gcn_encode, normalize_adjacency};
pub use model::{forward, predict, Dropout};
pub use params::{init_params, Bound, Parameters};
pub use transformer::{positional_encoding, transformer_encode, EncoderOutput};
