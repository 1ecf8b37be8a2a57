//! Extraction back-ends and spatial evaluation sweeps.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsp::{MultichannelWaveform, StftConfig, StftPlan};
use crate::embed::{in_beam, ClueInput};
use crate::error::{Error, Result};
use crate::mvdr::{mvdr_extract, CovarianceSource};
use crate::nn::{Checkpoint, ClueCodes, DseNet, ParamStore};
use crate::objectives::{evaluate, Metrics};
use crate::scene::{render_scene, SceneRender, SceneSpec, SignalKind, SourceSpec};

/// Anything that turns a rendered scene and a clue into a beam signal.
///
/// Learned and beamforming back-ends read only the mixture (plus, for MVDR,
/// its oracle covariance); oracle back-ends read the ground truth directly.
pub trait Backend {
    fn name(&self) -> String;
    fn extract(&self, scene: &SceneRender, clue: &ClueInput) -> Result<Vec<f64>>;
}

/// Trained network loaded from a checkpoint.
pub struct NetBackend {
    pub net: DseNet,
    pub params: ParamStore<f32>,
    pub plan: StftPlan,
    pub bw_enabled: bool,
}

impl NetBackend {
    /// The BW module is active for stage-2 checkpoints.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let (net, params) = ck.restore::<f32>()?;
        let plan = StftPlan::new(net.config.stft)?;
        Ok(Self {
            net,
            params,
            plan,
            bw_enabled: ck.stage == 2,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn extract_mixture(&self, x: &MultichannelWaveform, clue: &ClueInput) -> Result<Vec<f64>> {
        let codes = ClueCodes::new(&self.net.config.embed, clue)?;
        self.net
            .extract(&self.params, &self.plan, x, &codes, self.bw_enabled)
    }
}

impl Backend for NetBackend {
    fn name(&self) -> String {
        "dsenet".into()
    }

    fn extract(&self, scene: &SceneRender, clue: &ClueInput) -> Result<Vec<f64>> {
        self.extract_mixture(&scene.mixture, clue)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MvdrCovariance {
    /// Everything except the in-beam speakers.
    OracleInterference,
    /// Mixture frames where the in-beam speakers are silent.
    OracleVad { threshold_db: f64, forget: f64 },
}

impl Default for MvdrCovariance {
    fn default() -> Self {
        MvdrCovariance::OracleVad {
            threshold_db: 30.0,
            forget: 0.98,
        }
    }
}

/// MVDR beamformer steered at the clue direction.
#[derive(Debug, Clone)]
pub struct MvdrBackend {
    pub stft: StftConfig,
    pub covariance: MvdrCovariance,
}

impl Default for MvdrBackend {
    fn default() -> Self {
        Self {
            stft: StftConfig::default(),
            covariance: MvdrCovariance::default(),
        }
    }
}

fn in_beam_speakers(scene: &SceneRender, clue: &ClueInput) -> Vec<usize> {
    (0..scene.doas.len())
        .filter(|&k| in_beam(scene.doas[k], clue))
        .collect()
}

impl Backend for MvdrBackend {
    fn name(&self) -> String {
        "mvdr".into()
    }

    fn extract(&self, scene: &SceneRender, clue: &ClueInput) -> Result<Vec<f64>> {
        let inside = in_beam_speakers(scene, clue);
        let source = match self.covariance {
            MvdrCovariance::OracleInterference => {
                let mut noise = scene.mixture.samples().clone();
                for &k in &inside {
                    noise -= scene.per_source_images[k].samples();
                }
                CovarianceSource::Oracle(MultichannelWaveform::new(
                    noise,
                    scene.mixture.sample_rate(),
                )?)
            }
            MvdrCovariance::OracleVad {
                threshold_db,
                forget,
            } => CovarianceSource::OracleVad {
                target: scene.reference_target(&inside, 0),
                threshold_db,
                forget,
            },
        };
        let (y, _) = mvdr_extract(
            &scene.mixture,
            clue.theta_target,
            &scene.geometry,
            self.stft,
            &source,
        )?;
        Ok(y)
    }
}

/// Ground-truth back-ends used to validate the evaluation harness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OracleBackend {
    /// Reference image of source 0, whatever the clue.
    Passthrough,
    /// Sum of the reference images of the in-beam speakers.
    InBeam,
    /// Reference image of one speaker, whatever the clue.
    SpeakerImage(usize),
}

impl Backend for OracleBackend {
    fn name(&self) -> String {
        match self {
            OracleBackend::Passthrough => "oracle-passthrough".into(),
            OracleBackend::InBeam => "oracle-in-beam".into(),
            OracleBackend::SpeakerImage(k) => format!("oracle-speaker-{k}"),
        }
    }

    fn extract(&self, scene: &SceneRender, clue: &ClueInput) -> Result<Vec<f64>> {
        let n = scene.per_source_images.len();
        match *self {
            OracleBackend::Passthrough if n > 0 => Ok(scene.reference_target(&[0], 0)),
            OracleBackend::InBeam => Ok(scene.reference_target(&in_beam_speakers(scene, clue), 0)),
            OracleBackend::SpeakerImage(k) if k < n => Ok(scene.reference_target(&[k], 0)),
            _ => Err(Error::Input(format!(
                "{} has no source to return",
                self.name()
            ))),
        }
    }
}

/// A single talker moved around the array on a circle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GainSweepSpec {
    pub step_deg: f64,
    pub widths: Vec<f64>,
    pub clue_doas: Vec<f64>,
    pub radius: f64,
    pub floor_db: f64,
    pub duration_s: f64,
    pub room: [f64; 3],
    pub rt60: f64,
    pub anechoic: bool,
    pub array_height: f64,
    pub array_radius: f64,
    pub n_mics: usize,
    pub signal_seed: u64,
    pub sample_rate: u32,
}

impl Default for GainSweepSpec {
    fn default() -> Self {
        Self {
            step_deg: 1.0,
            widths: vec![30.0],
            clue_doas: vec![90.0],
            radius: 1.5,
            floor_db: -80.0,
            duration_s: 2.0,
            room: [8.0, 8.0, 3.0],
            rt60: 0.3,
            anechoic: false,
            array_height: 1.0,
            array_radius: 0.03,
            n_mics: 3,
            signal_seed: 7,
            sample_rate: 16000,
        }
    }
}

fn grid(step: f64) -> Result<Vec<f64>> {
    let n = 360.0 / step;
    if !(step > 0.0) || (n - n.round()).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "grid step {step} does not divide 360"
        )));
    }
    Ok((0..n.round() as usize).map(|i| i as f64 * step).collect())
}

impl GainSweepSpec {
    pub fn validate(&self) -> Result<()> {
        grid(self.step_deg)?;
        if self.widths.is_empty() || self.clue_doas.is_empty() {
            return Err(Error::Config(
                "sweep needs at least one width and clue direction".into(),
            ));
        }
        if !(self.duration_s > 0.0) {
            return Err(Error::Config("duration must be positive".into()));
        }
        Ok(())
    }

    /// Scene with one talker at azimuth `doa` on the trajectory.
    pub fn scene(&self, doa: f64) -> Result<SceneSpec> {
        let c = [self.room[0] / 2.0, self.room[1] / 2.0, self.array_height];
        let (s, co) = doa.to_radians().sin_cos();
        let pos = [c[0] + self.radius * co, c[1] + self.radius * s, c[2]];
        let mut src = SourceSpec::at(
            pos,
            c,
            SignalKind::SpeechLike {
                seed: self.signal_seed,
            },
            0.0,
        )?;
        src.doa_deg = doa;
        Ok(SceneSpec {
            room: self.room,
            rt60: self.rt60,
            max_order: self.anechoic.then_some(0),
            array_center: c,
            array_radius: self.array_radius,
            n_mics: self.n_mics,
            sources: vec![src],
            noise: None,
            mix_rms_db: None,
            sample_rate: self.sample_rate,
            n_samples: (self.duration_s * self.sample_rate as f64).round() as usize,
            seed: self.signal_seed,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainRow {
    pub clue_doa: f64,
    pub width: f64,
    pub source_doa: f64,
    pub in_beam: bool,
    pub gain_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainSummary {
    pub clue_doa: f64,
    pub width: f64,
    pub mean_in_beam_db: f64,
    pub mean_out_of_beam_db: f64,
    pub contrast_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainPattern {
    pub backend: String,
    pub rows: Vec<GainRow>,
    pub summary: Vec<GainSummary>,
}

impl GainPattern {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("clue_doa,width,source_doa,in_beam,gain_db\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{:.3}",
                r.clue_doa, r.width, r.source_doa, r.in_beam as u8, r.gain_db
            );
        }
        out
    }
}

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

/// Gain `10 log10(P_out / P_in)` per talker direction, where `P_in` is the
/// talker's power at the reference microphone, floored at `spec.floor_db`.
pub fn gain_pattern(backend: &dyn Backend, spec: &GainSweepSpec) -> Result<GainPattern> {
    spec.validate()?;
    let clues: Vec<ClueInput> = spec
        .clue_doas
        .iter()
        .flat_map(|&d| spec.widths.iter().map(move |&w| ClueInput::new(d, w)))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for doa in grid(spec.step_deg)? {
        let render = render_scene(&spec.scene(doa)?)?;
        let p_in = power(&render.reference_target(&[0], 0));
        if !(p_in > 0.0) {
            return Err(Error::Numeric(format!("silent talker at {doa} deg")));
        }
        for clue in &clues {
            let y = backend.extract(&render, clue)?;
            let p_out = power(&y);
            let gain = if p_out > 0.0 {
                (10.0 * (p_out / p_in).log10()).max(spec.floor_db)
            } else {
                spec.floor_db
            };
            if !gain.is_finite() {
                return Err(Error::Numeric(format!("non-finite gain at {doa} deg")));
            }
            rows.push(GainRow {
                clue_doa: clue.theta_target,
                width: clue.theta_width,
                source_doa: doa,
                in_beam: in_beam(doa, clue),
                gain_db: gain,
            });
        }
    }
    let summary = clues
        .iter()
        .map(|clue| {
            let sel = |inside: bool| {
                let v: Vec<f64> = rows
                    .iter()
                    .filter(|r| {
                        r.clue_doa == clue.theta_target
                            && r.width == clue.theta_width
                            && r.in_beam == inside
                    })
                    .map(|r| r.gain_db)
                    .collect();
                v.iter().sum::<f64>() / v.len().max(1) as f64
            };
            let (i, o) = (sel(true), sel(false));
            GainSummary {
                clue_doa: clue.theta_target,
                width: clue.theta_width,
                mean_in_beam_db: i,
                mean_out_of_beam_db: o,
                contrast_db: i - o,
            }
        })
        .collect();
    Ok(GainPattern {
        backend: backend.name(),
        rows,
        summary,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub clue_doa: f64,
    pub speaker: usize,
    pub speaker_doa: f64,
    pub in_beam: bool,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerSweep {
    pub backend: String,
    pub width: f64,
    pub rows: Vec<SweepRow>,
}

impl SpeakerSweep {
    /// Speaker with the highest SI-SDRi at each clue direction.
    pub fn best_speaker(&self) -> Vec<(f64, usize)> {
        let mut out: Vec<(f64, usize, f64)> = Vec::new();
        for r in &self.rows {
            match out.last_mut() {
                Some(last) if last.0 == r.clue_doa => {
                    if r.metrics.si_sdri > last.2 {
                        *last = (r.clue_doa, r.speaker, r.metrics.si_sdri);
                    }
                }
                _ => out.push((r.clue_doa, r.speaker, r.metrics.si_sdri)),
            }
        }
        out.into_iter().map(|(d, k, _)| (d, k)).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("clue_doa,speaker,speaker_doa,in_beam,si_sdr,si_sdri,sdr,sdri\n");
        for r in &self.rows {
            let m = r.metrics;
            let _ = writeln!(
                out,
                "{},{},{:.4},{},{:.3},{:.3},{:.3},{:.3}",
                r.clue_doa,
                r.speaker,
                r.speaker_doa,
                r.in_beam as u8,
                m.si_sdr,
                m.si_sdri,
                m.sdr,
                m.sdri
            );
        }
        out
    }
}

/// Per-speaker SI-SDRi as the clue direction walks the grid at a fixed width.
pub fn speaker_sweep(
    backend: &dyn Backend,
    scene: &SceneRender,
    width: f64,
    step_deg: f64,
) -> Result<SpeakerSweep> {
    let mix0 = scene.mixture.channel_vec(0);
    let images: Vec<Vec<f64>> = (0..scene.doas.len())
        .map(|k| scene.reference_target(&[k], 0))
        .collect();
    let mut rows = Vec::new();
    for doa in grid(step_deg)? {
        let clue = ClueInput::new(doa, width)?;
        let y = backend.extract(scene, &clue)?;
        for (k, img) in images.iter().enumerate() {
            rows.push(SweepRow {
                clue_doa: doa,
                speaker: k,
                speaker_doa: scene.doas[k],
                in_beam: in_beam(scene.doas[k], &clue),
                metrics: evaluate(&y, &mix0, img)?,
            });
        }
    }
    Ok(SpeakerSweep {
        backend: backend.name(),
        width,
        rows,
    })
}
