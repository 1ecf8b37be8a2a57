//! Time-frequency analysis and synthesis primitives.

mod stft;
mod wav;
mod waveform;

pub use stft::{istft, stft, ComplexSpectrogram, StftConfig, StftPlan};
pub use wav::{read_wav, write_wav, SampleFormat};
pub use waveform::{rms_db, rms_db_mono, MultichannelWaveform, RMS_FLOOR_DB};

/// Linear convolution of `signal` with `kernel`, truncated to `signal.len()` samples.
pub fn convolve_truncated(signal: &[f64], kernel: &[f64]) -> Vec<f64> {
    use rustfft::{num_complex::Complex64, FftPlanner};

    let out_len = signal.len();
    if out_len == 0 || kernel.is_empty() {
        return vec![0.0; out_len];
    }
    // Direct form is cheaper for short kernels.
    if kernel.len() <= 64 {
        let mut out = vec![0.0; out_len];
        for (k, &h) in kernel.iter().enumerate() {
            if h == 0.0 {
                continue;
            }
            for (o, &s) in out[k.min(out_len)..].iter_mut().zip(signal) {
                *o += h * s;
            }
        }
        return out;
    }
    let full = signal.len() + kernel.len() - 1;
    let n = full.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut a: Vec<Complex64> = signal.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    a.resize(n, Complex64::default());
    let mut b: Vec<Complex64> = kernel.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    b.resize(n, Complex64::default());
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y;
    }
    inv.process(&mut a);
    let scale = 1.0 / n as f64;
    a[..out_len].iter().map(|c| c.re * scale).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fft_and_direct_convolution_agree() {
        let signal: Vec<f64> = (0..500)
            .map(|i| ((i * 37 % 101) as f64 - 50.0) / 50.0)
            .collect();
        let long: Vec<f64> = (0..100)
            .map(|i| (i as f64 * 0.3).sin() / (1.0 + i as f64))
            .collect();
        let fft = convolve_truncated(&signal, &long);
        let mut direct = vec![0.0; signal.len()];
        for (k, &h) in long.iter().enumerate() {
            for n in k..signal.len() {
                direct[n] += h * signal[n - k];
            }
        }
        for (a, b) in fft.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}
