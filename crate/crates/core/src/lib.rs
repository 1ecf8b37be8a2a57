//! Directional speaker extraction.
//!
//! Given a multichannel recording, a target direction and a beamwidth, the
//! network in [`nn`] returns the speech arriving from inside the beam. The
//! crate also contains the scene simulator used to make training data, the
//! losses and metrics, an MVDR reference beamformer and the training and
//! spatial evaluation pipeline.

pub mod dsp;
pub mod embed;
pub mod error;
pub mod mvdr;
pub mod nn;
pub mod objectives;
pub mod pipeline;
pub mod real;
pub mod scene;

pub use error::{Error, Result};
