use std::path::Path;

use super::{signals, simulate_rir_at, ArrayGeometry, SceneSpec, SignalKind, SourceSpec};
use crate::dsp::{convolve_truncated, read_wav, rms_db_mono, MultichannelWaveform};
use crate::error::{Error, Result};

/// Rendered scene: `mixture = sum(per_source_images) + noise_image`.
#[derive(Debug, Clone)]
pub struct SceneRender {
    pub mixture: MultichannelWaveform,
    pub per_source_images: Vec<MultichannelWaveform>,
    pub dry_sources: Vec<Vec<f64>>,
    pub noise_image: MultichannelWaveform,
    pub doas: Vec<f64>,
    pub geometry: ArrayGeometry,
    /// Global gain applied to reach the requested mixture level.
    pub gain: f64,
}

impl SceneRender {
    /// Sum of the reference-channel images of the listed sources.
    pub fn reference_target(&self, speakers: &[usize], reference_mic: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.mixture.len()];
        for &k in speakers {
            for (o, v) in out
                .iter_mut()
                .zip(self.per_source_images[k].channel(reference_mic))
            {
                *o += v;
            }
        }
        out
    }
}

fn load_file_signal(path: &Path, len: usize) -> Result<Vec<f64>> {
    let wav = read_wav(path)?;
    let ch = wav.channel_vec(0);
    if ch.iter().all(|&v| v == 0.0) {
        return Err(Error::Input(format!("{} is silent", path.display())));
    }
    let mut out: Vec<f64> = ch.iter().copied().cycle().take(len).collect();
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v /= rms);
    }
    Ok(out)
}

fn dry_signal(src: &SourceSpec, len: usize, sample_rate: u32) -> Result<Vec<f64>> {
    let mut x = match &src.signal {
        SignalKind::SpeechLike { seed } => signals::speech_like(len, sample_rate, *seed),
        SignalKind::Noise { seed } => signals::pink_noise(len, sample_rate, *seed),
        SignalKind::Tone { freq_hz } => signals::tone(len, sample_rate, *freq_hz),
        SignalKind::File { path } => load_file_signal(path, len)?,
    };
    let g = 10f64.powf(src.level_db / 20.0);
    x.iter_mut().for_each(|v| *v *= g);
    Ok(x)
}

fn image_of(spec: &SceneSpec, src: &SourceSpec, dry: &[f64]) -> Result<MultichannelWaveform> {
    let rir = simulate_rir_at(spec, src.position)?;
    let channels: Vec<Vec<f64>> = rir
        .per_mic
        .iter()
        .map(|h| convolve_truncated(dry, h))
        .collect();
    MultichannelWaveform::from_channels(&channels, spec.sample_rate)
}

/// Renders every source through its room response and sums them.
pub fn render_scene(spec: &SceneSpec) -> Result<SceneRender> {
    spec.validate()?;
    let len = spec.n_samples;
    let fs = spec.sample_rate;
    let mut dry_sources = Vec::with_capacity(spec.sources.len());
    let mut images = Vec::with_capacity(spec.sources.len());
    for src in &spec.sources {
        let dry = dry_signal(src, len, fs)?;
        images.push(image_of(spec, src, &dry)?);
        dry_sources.push(dry);
    }
    let mut noise_image = match &spec.noise {
        Some(n) => {
            let dry = dry_signal(n, len, fs)?;
            image_of(spec, n, &dry)?
        }
        None => MultichannelWaveform::zeros(spec.n_mics, len, fs),
    };
    let mut mix = noise_image.samples().clone();
    for img in &images {
        mix += img.samples();
    }
    let mut mixture = MultichannelWaveform::new(mix, fs)?;

    let mut gain = 1.0;
    if let Some(target) = spec.mix_rms_db {
        let current = rms_db_mono(&mixture.channel_vec(0));
        if current <= crate::dsp::RMS_FLOOR_DB {
            return Err(Error::Numeric("cannot scale a silent mixture".into()));
        }
        gain = 10f64.powf((target - current) / 20.0);
        mixture.scale(gain);
        noise_image.scale(gain);
        for img in &mut images {
            img.scale(gain);
        }
        for d in &mut dry_sources {
            d.iter_mut().for_each(|v| *v *= gain);
        }
    }
    Ok(SceneRender {
        mixture,
        per_source_images: images,
        dry_sources,
        noise_image,
        doas: spec.doas(),
        geometry: spec.geometry(),
        gain,
    })
}
