//! Extraction network with hand-written back-propagation.

pub mod adam;
pub mod attention;
pub mod blocks;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod params;

pub use adam::Adam;
pub use blocks::MaskOverride;
pub use checkpoint::Checkpoint;
pub use model::{ClueCodes, DseNet, ModelConfig, NetInput, Tape};
pub use params::{Grads, ParamId, ParamStore};
