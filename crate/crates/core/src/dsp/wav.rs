use std::path::Path;

use hound::{SampleFormat as HoundFormat, WavReader, WavSpec, WavWriter};

use super::MultichannelWaveform;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleFormat {
    Pcm16,
    Float32,
}

fn wav_err(path: &Path, source: hound::Error) -> Error {
    Error::Wav {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_wav(path: &Path, x: &MultichannelWaveform, format: SampleFormat) -> Result<()> {
    let spec = WavSpec {
        channels: x.channels() as u16,
        sample_rate: x.sample_rate(),
        bits_per_sample: match format {
            SampleFormat::Pcm16 => 16,
            SampleFormat::Float32 => 32,
        },
        sample_format: match format {
            SampleFormat::Pcm16 => HoundFormat::Int,
            SampleFormat::Float32 => HoundFormat::Float,
        },
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    let samples = x.samples();
    for t in 0..x.len() {
        for c in 0..x.channels() {
            let v = samples[[c, t]];
            match format {
                SampleFormat::Pcm16 => {
                    let q = (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                    writer.write_sample(q)
                }
                SampleFormat::Float32 => writer.write_sample(v as f32),
            }
            .map_err(|e| wav_err(path, e))?;
        }
    }
    writer.finalize().map_err(|e| wav_err(path, e))
}

pub fn read_wav(path: &Path) -> Result<MultichannelWaveform> {
    let mut reader = WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (HoundFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()
            .map_err(|e| wav_err(path, e))?,
        (HoundFormat::Int, bits) if bits <= 32 => {
            let scale = 1.0 / (1u64 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<Result<_, _>>()
                .map_err(|e| wav_err(path, e))?
        }
        (fmt, bits) => {
            return Err(Error::Input(format!(
                "{}: unsupported wav format {fmt:?} with {bits} bits",
                path.display()
            )))
        }
    };
    let len = interleaved.len() / channels.max(1);
    let mut data = ndarray::Array2::zeros((channels, len));
    for (i, v) in interleaved.into_iter().enumerate() {
        data[[i % channels, i / channels]] = v;
    }
    MultichannelWaveform::new(data, spec.sample_rate)
}
