//! Reverberant multichannel scene simulation.

mod dataset;
mod render;
mod rir;
mod signals;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::embed::wrap_degrees;
use crate::error::{Error, Result};

pub use dataset::{
    generate_dataset, load_scene, read_manifest, sample_scene, scene_seed, write_manifest,
    DatasetConfig, LoadedScene, ManifestEntry, Split, MANIFEST_FILE,
};
pub use render::{render_scene, SceneRender};
pub use rir::{decay_time, reflection_coefficient, simulate_rir, simulate_rir_at, Rir};
pub use signals::{pink_noise, speech_like, tone};

pub const SPEED_OF_SOUND: f64 = 343.0;
pub const MIN_WALL_DISTANCE: f64 = 0.3;
/// Sources closer than this to a microphone are rejected as degenerate.
pub const MIN_MIC_DISTANCE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SignalKind {
    SpeechLike { seed: u64 },
    Noise { seed: u64 },
    Tone { freq_hz: f64 },
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub position: [f64; 3],
    pub doa_deg: f64,
    pub signal: SignalKind,
    /// Level of the dry signal relative to unit RMS.
    pub level_db: f64,
}

impl SourceSpec {
    /// Builds a source and derives its azimuth from the array centre.
    pub fn at(
        position: [f64; 3],
        array_center: [f64; 3],
        signal: SignalKind,
        level_db: f64,
    ) -> Result<Self> {
        Ok(Self {
            position,
            doa_deg: doa_of(position, array_center)?,
            signal,
            level_db,
        })
    }
}

/// Uniform circular array in the horizontal plane; mic 0 lies on the +x axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub center: [f64; 3],
    pub radius: f64,
    pub n_mics: usize,
}

impl ArrayGeometry {
    pub fn mic_positions(&self) -> Vec<[f64; 3]> {
        (0..self.n_mics)
            .map(|m| {
                let a = 2.0 * std::f64::consts::PI * m as f64 / self.n_mics as f64;
                [
                    self.center[0] + self.radius * a.cos(),
                    self.center[1] + self.radius * a.sin(),
                    self.center[2],
                ]
            })
            .collect()
    }

    /// Horizontal mic offsets from the centre.
    pub fn mic_offsets(&self) -> Vec<[f64; 2]> {
        self.mic_positions()
            .iter()
            .map(|p| [p[0] - self.center[0], p[1] - self.center[1]])
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    /// Width, depth, height in metres.
    pub room: [f64; 3],
    pub rt60: f64,
    /// Image-source order limit; `Some(0)` is free-field propagation, `None`
    /// keeps every image that arrives within the response length.
    pub max_order: Option<u32>,
    pub array_center: [f64; 3],
    pub array_radius: f64,
    pub n_mics: usize,
    pub sources: Vec<SourceSpec>,
    pub noise: Option<SourceSpec>,
    /// Target RMS of the reference channel after global scaling; `None` disables scaling.
    pub mix_rms_db: Option<f64>,
    pub sample_rate: u32,
    pub n_samples: usize,
    pub seed: u64,
}

impl SceneSpec {
    pub fn geometry(&self) -> ArrayGeometry {
        ArrayGeometry {
            center: self.array_center,
            radius: self.array_radius,
            n_mics: self.n_mics,
        }
    }

    pub fn doas(&self) -> Vec<f64> {
        self.sources.iter().map(|s| s.doa_deg).collect()
    }

    fn check_inside(&self, what: &str, p: [f64; 3], margin: f64) -> Result<()> {
        for (axis, (&v, &size)) in p.iter().zip(&self.room).enumerate() {
            if !(v >= 0.0 && v <= size) {
                return Err(Error::Geometry(format!(
                    "{what} at {p:?} lies outside the room {:?}",
                    self.room
                )));
            }
            if v < margin - 1e-12 || size - v < margin - 1e-12 {
                return Err(Error::Geometry(format!(
                    "{what} at {p:?} is closer than {margin} m to a wall on axis {axis}"
                )));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.room.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::Config(format!(
                "room dimensions must be positive: {:?}",
                self.room
            )));
        }
        if !(0.05..=2.0).contains(&self.rt60) {
            return Err(Error::Config(format!(
                "rt60 {} outside [0.05, 2.0] s",
                self.rt60
            )));
        }
        if self.n_mics < 2 || !(self.array_radius > 0.0) {
            return Err(Error::Config(format!(
                "array needs >= 2 mics and positive radius, got {} mics radius {}",
                self.n_mics, self.array_radius
            )));
        }
        if self.n_samples == 0 || self.sample_rate == 0 {
            return Err(Error::Config(
                "scene needs a positive length and sample rate".into(),
            ));
        }
        for p in self.geometry().mic_positions() {
            self.check_inside("microphone", p, 0.0)?;
        }
        let named = self
            .sources
            .iter()
            .enumerate()
            .map(|(i, s)| (format!("source {i}"), s))
            .chain(self.noise.iter().map(|s| ("noise source".to_string(), s)));
        for (name, s) in named {
            self.check_inside(&name, s.position, MIN_WALL_DISTANCE)?;
            let doa = doa_of(s.position, self.array_center)?;
            if crate::embed::circular_distance(doa, s.doa_deg) > 1e-6 {
                return Err(Error::Geometry(format!(
                    "{name}: stated DOA {} disagrees with position-derived {doa}",
                    s.doa_deg
                )));
            }
        }
        Ok(())
    }
}

/// Azimuth of `position` seen from `array_center`, counter-clockwise from +x, in `[0, 360)`.
pub fn doa_of(position: [f64; 3], array_center: [f64; 3]) -> Result<f64> {
    let dx = position[0] - array_center[0];
    let dy = position[1] - array_center[1];
    if dx.hypot(dy) < 1e-9 {
        return Err(Error::Geometry(format!(
            "position {position:?} has no horizontal offset from the array centre"
        )));
    }
    Ok(wrap_degrees(dy.atan2(dx).to_degrees()))
}
