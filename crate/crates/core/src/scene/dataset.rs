//! Seeded dataset generation and JSON-lines manifests.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{render_scene, SceneSpec, SignalKind, SourceSpec, MIN_WALL_DISTANCE};
use crate::dsp::{read_wav, rms_db_mono, write_wav, MultichannelWaveform, SampleFormat};
use crate::embed::circular_distance;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    fn tag(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Val => 2,
            Split::Test => 3,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Sampling ranges for generated scenes. Ranges are `[low, high]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub duration_s: f64,
    pub sample_rate: u32,
    pub n_speakers: usize,
    pub with_noise: bool,
    /// Dry noise level relative to a unit-RMS speaker.
    pub noise_level_db: [f64; 2],
    pub speaker_level_db: [f64; 2],
    /// Free-field rendering (image order 0) instead of reverberant rooms.
    pub anechoic: bool,
    pub room_width: [f64; 2],
    pub room_depth: [f64; 2],
    pub room_height: f64,
    pub rt60: [f64; 2],
    pub array_radius: f64,
    pub n_mics: usize,
    pub array_height: f64,
    pub source_height: [f64; 2],
    /// Minimum horizontal distance between a source and the array centre.
    pub min_array_distance: f64,
    /// Minimum azimuth separation between any two speakers.
    pub min_separation_deg: f64,
    pub mix_rms_db: [f64; 2],
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_train: 200,
            n_val: 50,
            n_test: 50,
            duration_s: 4.0,
            sample_rate: 16000,
            n_speakers: 6,
            with_noise: true,
            noise_level_db: [-15.0, -5.0],
            speaker_level_db: [-2.5, 2.5],
            anechoic: false,
            room_width: [6.0, 9.0],
            room_depth: [6.0, 9.0],
            room_height: 3.0,
            rt60: [0.3, 0.5],
            array_radius: 0.03,
            n_mics: 3,
            array_height: 1.0,
            source_height: [1.2, 1.9],
            min_array_distance: 0.5,
            min_separation_deg: 0.0,
            mix_rms_db: [-20.0, -15.0],
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        let ordered = |r: [f64; 2]| r[0] <= r[1];
        if !(self.duration_s > 0.0) || self.sample_rate == 0 {
            return Err(Error::Config(
                "duration and sample rate must be positive".into(),
            ));
        }
        if self.n_speakers == 0 {
            return Err(Error::Config(
                "at least one speaker per scene is required".into(),
            ));
        }
        for (name, r) in [
            ("noise_level_db", self.noise_level_db),
            ("speaker_level_db", self.speaker_level_db),
            ("room_width", self.room_width),
            ("room_depth", self.room_depth),
            ("rt60", self.rt60),
            ("source_height", self.source_height),
            ("mix_rms_db", self.mix_rms_db),
        ] {
            if !ordered(r) || r.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("{name} range {r:?} is not ordered")));
            }
        }
        if self.room_width[0] < 2.0 * (MIN_WALL_DISTANCE + self.min_array_distance)
            || self.room_depth[0] < 2.0 * (MIN_WALL_DISTANCE + self.min_array_distance)
        {
            return Err(Error::Config(
                "room too small for the placement constraints".into(),
            ));
        }
        if self.n_speakers as f64 * self.min_separation_deg >= 360.0 {
            return Err(Error::Config(
                "speaker separation cannot be satisfied".into(),
            ));
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        (self.duration_s * self.sample_rate as f64).round() as usize
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Per-scene seed derived from the master seed, split and index.
pub fn scene_seed(master: u64, split: Split, index: usize) -> u64 {
    splitmix(splitmix(master ^ split.tag().wrapping_mul(0x1000_0000_0001)) ^ index as u64)
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..r[1])
    } else {
        r[0]
    }
}

/// Samples a scene from `cfg` using `seed`.
pub fn sample_scene(cfg: &DatasetConfig, seed: u64) -> Result<SceneSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let room = [
        uniform(&mut rng, cfg.room_width),
        uniform(&mut rng, cfg.room_depth),
        cfg.room_height,
    ];
    let rt60 = uniform(&mut rng, cfg.rt60);
    let center = [room[0] / 2.0, room[1] / 2.0, cfg.array_height];
    let place = |rng: &mut ChaCha8Rng, taken: &[f64], separate: bool| -> Result<[f64; 3]> {
        for _ in 0..10_000 {
            let p = [
                rng.random_range(MIN_WALL_DISTANCE..room[0] - MIN_WALL_DISTANCE),
                rng.random_range(MIN_WALL_DISTANCE..room[1] - MIN_WALL_DISTANCE),
                uniform(rng, cfg.source_height),
            ];
            if (p[0] - center[0]).hypot(p[1] - center[1]) < cfg.min_array_distance {
                continue;
            }
            let doa = super::doa_of(p, center)?;
            if separate
                && taken
                    .iter()
                    .any(|&d| circular_distance(d, doa) < cfg.min_separation_deg)
            {
                continue;
            }
            return Ok(p);
        }
        Err(Error::Config(
            "could not place a source under the constraints".into(),
        ))
    };
    let mut sources = Vec::with_capacity(cfg.n_speakers);
    let mut doas = Vec::new();
    for k in 0..cfg.n_speakers {
        let p = place(&mut rng, &doas, true)?;
        let level = uniform(&mut rng, cfg.speaker_level_db);
        let src = SourceSpec::at(
            p,
            center,
            SignalKind::SpeechLike {
                seed: splitmix(seed ^ (k as u64 + 1)),
            },
            level,
        )?;
        doas.push(src.doa_deg);
        sources.push(src);
    }
    let noise = if cfg.with_noise {
        let p = place(&mut rng, &[], false)?;
        let level = uniform(&mut rng, cfg.noise_level_db);
        Some(SourceSpec::at(
            p,
            center,
            SignalKind::Noise {
                seed: splitmix(seed ^ 0xabcd),
            },
            level,
        )?)
    } else {
        None
    };
    let mix_rms_db = uniform(&mut rng, cfg.mix_rms_db);
    Ok(SceneSpec {
        room,
        rt60,
        max_order: cfg.anechoic.then_some(0),
        array_center: center,
        array_radius: cfg.array_radius,
        n_mics: cfg.n_mics,
        sources,
        noise,
        mix_rms_db: Some(mix_rms_db),
        sample_rate: cfg.sample_rate,
        n_samples: cfg.n_samples(),
        seed,
    })
}

/// One line of the manifest. Paths are relative to the manifest directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    pub mixture: String,
    /// Reference-microphone image of each speaker.
    pub images: Vec<String>,
    pub noise: Option<String>,
    pub doas: Vec<f64>,
    pub rt60: f64,
    pub room: [f64; 3],
    pub rms_db: f64,
    pub seed: u64,
    pub scene: SceneSpec,
}

fn write_mono(path: &Path, x: &[f64], fs: u32) -> Result<()> {
    write_wav(
        path,
        &MultichannelWaveform::from_mono(x.to_vec(), fs)?,
        SampleFormat::Float32,
    )
}

/// Renders every scene, writes WAV files below `out_dir` and the manifest at
/// `out_dir/manifest.jsonl`.
pub fn generate_dataset(cfg: &DatasetConfig, out_dir: &Path) -> Result<Vec<ManifestEntry>> {
    cfg.validate()?;
    let mut entries = Vec::new();
    for (split, count) in [
        (Split::Train, cfg.n_train),
        (Split::Val, cfg.n_val),
        (Split::Test, cfg.n_test),
    ] {
        if count == 0 {
            continue;
        }
        let dir = out_dir.join(split.name());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for i in 0..count {
            let seed = scene_seed(cfg.seed, split, i);
            let scene = sample_scene(cfg, seed)?;
            let render = render_scene(&scene)?;
            let id = format!("{}-{i:05}", split.name());
            let rel = |name: String| format!("{}/{name}", split.name());
            let mixture = rel(format!("{id}_mix.wav"));
            write_wav(
                &out_dir.join(&mixture),
                &render.mixture,
                SampleFormat::Float32,
            )?;
            let mut images = Vec::new();
            for (k, img) in render.per_source_images.iter().enumerate() {
                let p = rel(format!("{id}_s{k}.wav"));
                write_mono(&out_dir.join(&p), &img.channel_vec(0), scene.sample_rate)?;
                images.push(p);
            }
            let noise = if scene.noise.is_some() {
                let p = rel(format!("{id}_noise.wav"));
                write_mono(
                    &out_dir.join(&p),
                    &render.noise_image.channel_vec(0),
                    scene.sample_rate,
                )?;
                Some(p)
            } else {
                None
            };
            entries.push(ManifestEntry {
                id,
                split,
                mixture,
                images,
                noise,
                doas: render.doas.clone(),
                rt60: scene.rt60,
                room: scene.room,
                rms_db: rms_db_mono(&render.mixture.channel_vec(0)),
                seed,
                scene,
            });
        }
    }
    write_manifest(&out_dir.join(MANIFEST_FILE), &entries)?;
    Ok(entries)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut text = String::new();
    for e in entries {
        text.push_str(&serde_json::to_string(e).map_err(|err| Error::json(path, err))?);
        text.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::json(path, e))?);
    }
    Ok(out)
}

/// Audio of one manifest entry.
#[derive(Debug, Clone)]
pub struct LoadedScene {
    pub entry: ManifestEntry,
    pub mixture: MultichannelWaveform,
    /// Reference-microphone image per speaker.
    pub images: Vec<Vec<f64>>,
}

pub fn load_scene(entry: &ManifestEntry, base_dir: &Path) -> Result<LoadedScene> {
    let resolve = |p: &str| -> PathBuf { base_dir.join(p) };
    let mixture = read_wav(&resolve(&entry.mixture))?;
    let images = entry
        .images
        .iter()
        .map(|p| read_wav(&resolve(p)).map(|w| w.channel_vec(0)))
        .collect::<Result<Vec<_>>>()?;
    if images.iter().any(|i| i.len() != mixture.len()) {
        return Err(Error::Input(format!(
            "scene {}: image lengths differ from mixture",
            entry.id
        )));
    }
    Ok(LoadedScene {
        entry: entry.clone(),
        mixture,
        images,
    })
}
