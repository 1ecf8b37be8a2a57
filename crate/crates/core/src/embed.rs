//! Direction and beamwidth clue encodings.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Beamwidths the width code can represent, in degrees.
pub const SUPPORTED_WIDTHS: [f64; 3] = [15.0, 30.0, 45.0];

/// Dimension of the one-hot direction code.
pub const ONE_HOT_DIM: usize = 360;

/// Target direction and beam half-width, both in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClueInput {
    pub theta_target: f64,
    pub theta_width: f64,
}

impl ClueInput {
    pub fn new(theta_target: f64, theta_width: f64) -> Result<Self> {
        if !theta_target.is_finite() || !theta_width.is_finite() || theta_width <= 0.0 {
            return Err(Error::Input(format!(
                "invalid clue: target {theta_target}, width {theta_width}"
            )));
        }
        Ok(Self {
            theta_target: wrap_degrees(theta_target),
            theta_width,
        })
    }

    /// Beam edges `[target - width, target + width]`, each wrapped into `[0, 360)`.
    pub fn beam(&self) -> (f64, f64) {
        (
            wrap_degrees(self.theta_target - self.theta_width),
            wrap_degrees(self.theta_target + self.theta_width),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingKind {
    OneHot,
    CycPos,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    pub kind: EmbeddingKind,
    pub dim: usize,
    pub alpha: f64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            kind: EmbeddingKind::CycPos,
            dim: 40,
            alpha: 20.0,
        }
    }
}

impl EmbeddingConfig {
    pub fn one_hot() -> Self {
        Self {
            kind: EmbeddingKind::OneHot,
            dim: ONE_HOT_DIM,
            alpha: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            EmbeddingKind::CycPos if self.dim == 0 || self.dim % 2 != 0 => {
                Err(Error::Config(format!(
                    "cyc-pos dimension must be even and positive, got {}",
                    self.dim
                )))
            }
            EmbeddingKind::OneHot if self.dim != ONE_HOT_DIM => Err(Error::Config(format!(
                "one-hot dimension must be {ONE_HOT_DIM}, got {}",
                self.dim
            ))),
            _ => Ok(()),
        }
    }

    /// Embeds a direction given in degrees.
    pub fn embed(&self, theta_deg: f64) -> Vec<f64> {
        match self.kind {
            EmbeddingKind::OneHot => one_hot_doa(theta_deg),
            EmbeddingKind::CycPos => cyc_pos(theta_deg.to_radians(), self),
        }
    }
}

pub fn wrap_degrees(theta: f64) -> f64 {
    let w = theta.rem_euclid(360.0);
    if w >= 360.0 {
        0.0
    } else {
        w
    }
}

/// Cyclic positional encoding of an angle in radians.
///
/// Even entries encode `sin(phi)`, odd entries `cos(phi)`, each squashed through
/// `sin(. * alpha / 10000^(2j/D))`.
pub fn cyc_pos(phi: f64, cfg: &EmbeddingConfig) -> Vec<f64> {
    let phi = phi.rem_euclid(2.0 * PI);
    let (s, c) = phi.sin_cos();
    let d = cfg.dim;
    let mut out = vec![0.0; d];
    for j in 0..d / 2 {
        let scale = cfg.alpha / 10000f64.powf(2.0 * j as f64 / d as f64);
        out[2 * j] = (s * scale).sin();
        out[2 * j + 1] = (c * scale).sin();
    }
    out
}

pub fn one_hot_doa(theta_deg: f64) -> Vec<f64> {
    let idx = (wrap_degrees(theta_deg).round() as usize) % ONE_HOT_DIM;
    let mut v = vec![0.0; ONE_HOT_DIM];
    v[idx] = 1.0;
    v
}

pub fn beamwidth_code(theta_width: f64) -> Result<[f64; 3]> {
    let idx = SUPPORTED_WIDTHS
        .iter()
        .position(|w| (w - theta_width).abs() < 1e-9)
        .ok_or_else(|| Error::UnsupportedWidth {
            width: theta_width,
            supported: SUPPORTED_WIDTHS.to_vec(),
        })?;
    let mut code = [0.0; 3];
    code[idx] = 1.0;
    Ok(code)
}

/// Shortest angular distance between two directions, in `[0, 180]`.
pub fn circular_distance(a_deg: f64, b_deg: f64) -> f64 {
    let d = (a_deg - b_deg).rem_euclid(360.0);
    d.min(360.0 - d)
}

pub fn in_beam(doa_deg: f64, clue: &ClueInput) -> bool {
    circular_distance(doa_deg, clue.theta_target) <= clue.theta_width + 1e-9
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cyc_pos_reference_values() {
        let v = cyc_pos(0.0, &EmbeddingConfig::default());
        assert_eq!(v.len(), 40);
        assert_eq!(v[0], 0.0);
        // sin(20) evaluated independently: 0.912945250727627...
        assert!((v[1] - 0.912_945_250_727_627_7).abs() < 1e-12);
    }

    #[test]
    fn one_hot_wraps_and_rounds() {
        assert_eq!(one_hot_doa(0.0)[0], 1.0);
        let v = one_hot_doa(359.6);
        assert_eq!(v[0], 1.0);
        assert_eq!(v.iter().sum::<f64>(), 1.0);
        assert_eq!(one_hot_doa(42.4)[42], 1.0);
    }

    #[test]
    fn width_codes() {
        assert_eq!(beamwidth_code(15.0).unwrap(), [1.0, 0.0, 0.0]);
        assert_eq!(beamwidth_code(30.0).unwrap(), [0.0, 1.0, 0.0]);
        assert_eq!(beamwidth_code(45.0).unwrap(), [0.0, 0.0, 1.0]);
        let err = beamwidth_code(60.0).unwrap_err();
        assert!(err.to_string().contains("15"), "{err}");
    }

    #[test]
    fn beam_membership() {
        assert!(in_beam(5.0, &ClueInput::new(350.0, 30.0).unwrap()));
        assert!(!in_beam(50.0, &ClueInput::new(0.0, 45.0).unwrap()));
        assert!(in_beam(123.0, &ClueInput::new(123.0, 1.0).unwrap()));
    }

    #[test]
    fn beam_edges_wrap() {
        let clue = ClueInput::new(10.0, 30.0).unwrap();
        assert_eq!(clue.beam(), (340.0, 40.0));
    }

    #[test]
    fn config_validation() {
        let mut cfg = EmbeddingConfig::default();
        cfg.dim = 41;
        assert!(cfg.validate().is_err());
        assert!(EmbeddingConfig::one_hot().validate().is_ok());
    }

    proptest! {
        #[test]
        fn cyc_pos_is_bounded_and_periodic(phi in -20.0f64..20.0, alpha in 1.0f64..50.0) {
            let cfg = EmbeddingConfig { alpha, ..EmbeddingConfig::default() };
            let a = cyc_pos(phi, &cfg);
            let b = cyc_pos(phi + 2.0 * PI, &cfg);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!(x.abs() <= 1.0);
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn in_beam_is_reflection_symmetric(doa in 0.0f64..360.0, target in 0.0f64..360.0, width in 1.0f64..90.0) {
            let mirrored = wrap_degrees(2.0 * target - doa);
            let clue = ClueInput::new(target, width).unwrap();
            prop_assert_eq!(in_beam(doa, &clue), in_beam(mirrored, &clue));
        }
    }
}
