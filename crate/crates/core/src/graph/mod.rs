//! Layer topologies, sharing splits, branch models and model files.

pub mod io;
pub mod layer;
pub mod model;
pub mod network;
pub mod topology;

pub use io::{decode_model, encode_model, load_model, save_model};
pub use layer::LayerSpec;
pub use model::{clone_branch, widen_last_conv, BranchModel, IncrementalModel, Provenance, WidenInit};
pub use network::{Cache, Layer, Network};
pub use topology::{Growth, SharingConfig, Topology};
