use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, Array3, ArrayView2, Axis};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::MultichannelWaveform;
use crate::error::{Error, Result};

/// Framing parameters. The window is always a periodic Hann window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub window_len: usize,
    pub hop: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            window_len: 256,
            hop: 128,
        }
    }
}

impl StftConfig {
    pub fn n_freqs(&self) -> usize {
        self.window_len / 2 + 1
    }

    /// Frames produced for a signal of `len` samples under center padding.
    pub fn n_frames(&self, len: usize) -> usize {
        len.div_ceil(self.hop) + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_len < 4 || self.window_len % 2 != 0 {
            return Err(Error::Config(format!(
                "window length must be even and >= 4, got {}",
                self.window_len
            )));
        }
        if self.hop == 0 || self.hop > self.window_len {
            return Err(Error::Config(format!(
                "hop must be in 1..={}, got {}",
                self.window_len, self.hop
            )));
        }
        let window = hann(self.window_len);
        // Every sample in the steady state needs nonzero squared-window coverage.
        let min_cover = (0..self.hop)
            .map(|r| {
                (r..self.window_len)
                    .step_by(self.hop)
                    .map(|n| window[n] * window[n])
                    .sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min);
        if min_cover < 1e-6 {
            return Err(Error::Config(format!(
                "Hann window of {} samples does not overlap-add at hop {}",
                self.window_len, self.hop
            )));
        }
        Ok(())
    }
}

fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Complex spectrogram stored as `[channels, frames, freqs]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub bins: Array3<Complex64>,
    pub frame_hop: usize,
    pub window_len: usize,
}

impl ComplexSpectrogram {
    pub fn channels(&self) -> usize {
        self.bins.dim().0
    }

    pub fn frames(&self) -> usize {
        self.bins.dim().1
    }

    pub fn freqs(&self) -> usize {
        self.bins.dim().2
    }

    pub fn config(&self) -> StftConfig {
        StftConfig {
            window_len: self.window_len,
            hop: self.frame_hop,
        }
    }
}

/// Precomputed window and FFT plans for one [`StftConfig`].
///
/// Besides analysis and synthesis this exposes the adjoint of both maps, which
/// is what back-propagation through the transform needs. Complex gradients are
/// stored as `dL/dRe + i dL/dIm`.
#[derive(Clone)]
pub struct StftPlan {
    cfg: StftConfig,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for StftPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StftPlan").field("cfg", &self.cfg).finish()
    }
}

impl StftPlan {
    pub fn new(cfg: StftConfig) -> Result<Self> {
        cfg.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            cfg,
            window: hann(cfg.window_len),
            forward: planner.plan_fft_forward(cfg.window_len),
            inverse: planner.plan_fft_inverse(cfg.window_len),
        })
    }

    pub fn config(&self) -> StftConfig {
        self.cfg
    }

    /// Sum of squared window samples; a unit-RMS white signal has this
    /// expected power per bin.
    pub fn window_energy(&self) -> f64 {
        self.window.iter().map(|w| w * w).sum()
    }

    fn pad(&self) -> usize {
        self.cfg.window_len / 2
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len < self.cfg.window_len {
            return Err(Error::Input(format!(
                "signal of {len} samples is shorter than one window ({})",
                self.cfg.window_len
            )));
        }
        Ok(())
    }

    /// Index into the original signal for padded position `i` (reflect mode).
    fn reflect(&self, i: usize, len: usize) -> usize {
        let j = i as isize - self.pad() as isize;
        let last = len as isize - 1;
        let r = if j < 0 {
            -j
        } else if j > last {
            2 * last - j
        } else {
            j
        };
        r as usize
    }

    /// One-sided spectrum of a mono signal, `[frames, freqs]`.
    pub fn analyze(&self, x: &[f64]) -> Result<Array2<Complex64>> {
        self.check_len(x.len())?;
        let n = self.cfg.window_len;
        let frames = self.cfg.n_frames(x.len());
        let freqs = self.cfg.n_freqs();
        let mut out = Array2::zeros((frames, freqs));
        let mut buf = vec![Complex64::default(); n];
        let mut scratch = vec![Complex64::default(); self.forward.get_inplace_scratch_len()];
        for (t, mut row) in out.outer_iter_mut().enumerate() {
            let start = t * self.cfg.hop;
            for (k, b) in buf.iter_mut().enumerate() {
                *b = Complex64::new(x[self.reflect(start + k, x.len())] * self.window[k], 0.0);
            }
            self.forward.process_with_scratch(&mut buf, &mut scratch);
            for (o, b) in row.iter_mut().zip(&buf) {
                *o = *b;
            }
        }
        Ok(out)
    }

    /// Adjoint of [`analyze`](Self::analyze): maps a spectrogram gradient to a
    /// signal gradient of length `len`.
    pub fn analyze_adjoint(&self, grad: ArrayView2<Complex64>, len: usize) -> Result<Vec<f64>> {
        self.check_len(len)?;
        let n = self.cfg.window_len;
        let expected = (self.cfg.n_frames(len), self.cfg.n_freqs());
        if grad.dim() != expected {
            return Err(Error::shape(
                "stft adjoint",
                format!("expected {expected:?}, got {:?}", grad.dim()),
            ));
        }
        let mut out = vec![0.0; len];
        let mut buf = vec![Complex64::default(); n];
        let mut scratch = vec![Complex64::default(); self.inverse.get_inplace_scratch_len()];
        for (t, row) in grad.outer_iter().enumerate() {
            buf.iter_mut().for_each(|b| *b = Complex64::default());
            for (b, g) in buf.iter_mut().zip(row.iter()) {
                *b = *g;
            }
            // Re(sum_k G_k e^{+i 2 pi k n / N}) is the unnormalized inverse DFT.
            self.inverse.process_with_scratch(&mut buf, &mut scratch);
            let start = t * self.cfg.hop;
            for (k, b) in buf.iter().enumerate() {
                out[self.reflect(start + k, len)] += b.re * self.window[k];
            }
        }
        Ok(out)
    }

    fn window_power(&self, frames: usize) -> Vec<f64> {
        let n = self.cfg.window_len;
        let mut wsum = vec![0.0; (frames - 1) * self.cfg.hop + n];
        for t in 0..frames {
            let start = t * self.cfg.hop;
            for (k, w) in self.window.iter().enumerate() {
                wsum[start + k] += w * w;
            }
        }
        wsum
    }

    fn check_spec(&self, frames: usize, freqs: usize, len: usize) -> Result<()> {
        self.check_len(len)?;
        if freqs != self.cfg.n_freqs() || frames != self.cfg.n_frames(len) {
            return Err(Error::shape(
                "istft",
                format!(
                    "spectrogram {frames}x{freqs} incompatible with window {} hop {} for {len} samples",
                    self.cfg.window_len, self.cfg.hop
                ),
            ));
        }
        Ok(())
    }

    /// Weighted overlap-add synthesis of a mono signal of `len` samples.
    pub fn synthesize(&self, spec: ArrayView2<Complex64>, len: usize) -> Result<Vec<f64>> {
        let (frames, freqs) = spec.dim();
        self.check_spec(frames, freqs, len)?;
        let n = self.cfg.window_len;
        let pad = self.pad();
        let wsum = self.window_power(frames);
        let mut acc = vec![0.0; wsum.len()];
        let mut buf = vec![Complex64::default(); n];
        let mut scratch = vec![Complex64::default(); self.inverse.get_inplace_scratch_len()];
        let scale = 1.0 / n as f64;
        for (t, row) in spec.outer_iter().enumerate() {
            buf[0] = Complex64::new(row[0].re, 0.0);
            buf[n / 2] = Complex64::new(row[n / 2].re, 0.0);
            for k in 1..n / 2 {
                buf[k] = row[k];
                buf[n - k] = row[k].conj();
            }
            self.inverse.process_with_scratch(&mut buf, &mut scratch);
            let start = t * self.cfg.hop;
            for (k, b) in buf.iter().enumerate() {
                acc[start + k] += b.re * scale * self.window[k];
            }
        }
        Ok((0..len).map(|j| acc[j + pad] / wsum[j + pad]).collect())
    }

    /// Adjoint of [`synthesize`](Self::synthesize).
    pub fn synthesize_adjoint(&self, grad: &[f64], frames: usize) -> Result<Array2<Complex64>> {
        let len = grad.len();
        self.check_spec(frames, self.cfg.n_freqs(), len)?;
        let n = self.cfg.window_len;
        let pad = self.pad();
        let wsum = self.window_power(frames);
        let mut gacc = vec![0.0; wsum.len()];
        for (j, g) in grad.iter().enumerate() {
            gacc[j + pad] = g / wsum[j + pad];
        }
        let mut out = Array2::zeros((frames, self.cfg.n_freqs()));
        let mut buf = vec![Complex64::default(); n];
        let mut scratch = vec![Complex64::default(); self.forward.get_inplace_scratch_len()];
        let scale = 1.0 / n as f64;
        for (t, mut row) in out.outer_iter_mut().enumerate() {
            let start = t * self.cfg.hop;
            for (k, b) in buf.iter_mut().enumerate() {
                *b = Complex64::new(gacc[start + k] * self.window[k] * scale, 0.0);
            }
            self.forward.process_with_scratch(&mut buf, &mut scratch);
            row[0] = Complex64::new(buf[0].re, 0.0);
            row[n / 2] = Complex64::new(buf[n / 2].re, 0.0);
            for k in 1..n / 2 {
                row[k] = buf[k] * 2.0;
            }
        }
        Ok(out)
    }
}

/// Short-time Fourier transform of every channel.
pub fn stft(x: &MultichannelWaveform, cfg: StftConfig) -> Result<ComplexSpectrogram> {
    let plan = StftPlan::new(cfg)?;
    let frames = cfg.n_frames(x.len());
    let mut bins = Array3::zeros((x.channels(), frames, cfg.n_freqs()));
    for (c, mut out) in bins.outer_iter_mut().enumerate() {
        let ch = x.channel_vec(c);
        out.assign(&plan.analyze(&ch)?);
    }
    Ok(ComplexSpectrogram {
        bins,
        frame_hop: cfg.hop,
        window_len: cfg.window_len,
    })
}

/// Inverse transform producing `out_len` samples per channel.
pub fn istft(
    spec: &ComplexSpectrogram,
    cfg: StftConfig,
    out_len: usize,
    sample_rate: u32,
) -> Result<MultichannelWaveform> {
    if spec.window_len != cfg.window_len || spec.frame_hop != cfg.hop {
        return Err(Error::Config(format!(
            "spectrogram was produced with window {} hop {}, synthesis requested window {} hop {}",
            spec.window_len, spec.frame_hop, cfg.window_len, cfg.hop
        )));
    }
    let plan = StftPlan::new(cfg)?;
    let mut out = Array2::zeros((spec.channels(), out_len));
    for (c, mut row) in out.outer_iter_mut().enumerate() {
        let y = plan.synthesize(spec.bins.index_axis(Axis(0), c), out_len)?;
        row.assign(&ndarray::Array1::from(y));
    }
    MultichannelWaveform::new(out, sample_rate)
}
