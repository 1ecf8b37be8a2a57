use ndarray::{Array2, ArrayView1, Axis};

use crate::error::{Error, Result};

/// Level reported for an all-zero signal.
pub const RMS_FLOOR_DB: f64 = -120.0;

/// Real multichannel signal stored as `[channels, samples]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelWaveform {
    samples: Array2<f64>,
    sample_rate: u32,
}

impl MultichannelWaveform {
    pub fn new(samples: Array2<f64>, sample_rate: u32) -> Result<Self> {
        let (channels, len) = samples.dim();
        if channels == 0 || len == 0 {
            return Err(Error::Input(format!(
                "waveform must have at least one channel and one sample, got {channels}x{len}"
            )));
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric(
                "waveform contains non-finite samples".into(),
            ));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn from_mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        let len = samples.len();
        let arr =
            Array2::from_shape_vec((1, len), samples).map_err(|e| Error::Input(e.to_string()))?;
        Self::new(arr, sample_rate)
    }

    pub fn from_channels(channels: &[Vec<f64>], sample_rate: u32) -> Result<Self> {
        let len = channels.first().map_or(0, Vec::len);
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::Input("channels have different lengths".into()));
        }
        let flat: Vec<f64> = channels.iter().flatten().copied().collect();
        let arr = Array2::from_shape_vec((channels.len(), len), flat)
            .map_err(|e| Error::Input(e.to_string()))?;
        Self::new(arr, sample_rate)
    }

    pub fn zeros(channels: usize, len: usize, sample_rate: u32) -> Self {
        Self {
            samples: Array2::zeros((channels, len)),
            sample_rate,
        }
    }

    pub fn channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn samples(&self) -> &Array2<f64> {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut Array2<f64> {
        &mut self.samples
    }

    pub fn channel(&self, index: usize) -> ArrayView1<'_, f64> {
        self.samples.index_axis(Axis(0), index)
    }

    pub fn channel_vec(&self, index: usize) -> Vec<f64> {
        self.channel(index).to_vec()
    }

    pub fn into_samples(self) -> Array2<f64> {
        self.samples
    }

    pub fn scale(&mut self, gain: f64) {
        self.samples.mapv_inplace(|x| x * gain);
    }
}

/// RMS level per channel in dB (full scale = 1.0), floored at [`RMS_FLOOR_DB`].
pub fn rms_db(x: &MultichannelWaveform) -> Vec<f64> {
    x.samples()
        .outer_iter()
        .map(|ch| rms_db_mono(ch.as_slice().expect("standard layout")))
        .collect()
}

pub fn rms_db_mono(x: &[f64]) -> f64 {
    if x.is_empty() {
        return RMS_FLOOR_DB;
    }
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    if ms <= 0.0 {
        return RMS_FLOOR_DB;
    }
    (10.0 * ms.log10()).max(RMS_FLOOR_DB)
}
