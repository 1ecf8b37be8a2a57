//! Synthetic dry source signals.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

fn normalize_rms(x: &mut [f64]) {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v /= rms);
    }
}

/// Unit-RMS noise with a 1/f power spectrum above `low_cut_hz`.
pub fn pink_noise(len: usize, sample_rate: u32, seed: u64) -> Vec<f64> {
    const LOW_CUT_HZ: f64 = 60.0;
    if len == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = len.next_power_of_two();
    let mut buf: Vec<Complex64> = (0..n)
        .map(|_| Complex64::new(rng.sample(StandardNormal), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, b) in buf.iter_mut().enumerate() {
        let bin = k.min(n - k);
        let f = bin as f64 * sample_rate as f64 / n as f64;
        *b *= if f < LOW_CUT_HZ { 0.0 } else { 1.0 / f.sqrt() };
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let mut out: Vec<f64> = buf[..len].iter().map(|c| c.re).collect();
    normalize_rms(&mut out);
    out
}

/// Envelope level during pauses, 40 dB under full activity. Digital silence
/// never occurs in recordings and leaves normalization layers with
/// zero-variance inputs.
pub const PAUSE_FLOOR: f64 = 0.01;

/// Amplitude-modulated pink noise with syllable-like bursts and pauses, unit RMS.
pub fn speech_like(len: usize, sample_rate: u32, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed_5eed_5eed);
    let carrier = pink_noise(len, sample_rate, seed);
    let fs = sample_rate as f64;
    let ramp = (0.01 * fs).max(1.0);
    let mut envelope = vec![PAUSE_FLOOR; len];
    let mut pos = 0usize;
    let mut talking = rng.random_bool(0.7);
    while pos < len {
        let dur = if talking {
            rng.random_range(0.15..0.6)
        } else {
            rng.random_range(0.05..0.3)
        };
        let n = ((dur * fs) as usize).max(1);
        let end = (pos + n).min(len);
        if talking {
            let rate = rng.random_range(3.0..6.0);
            let phase = rng.random_range(0.0..2.0 * PI);
            let gain = rng.random_range(0.6..1.0);
            for (i, e) in envelope[pos..end].iter_mut().enumerate() {
                let t = i as f64;
                let edge = (t.min((n - 1) as f64 - t) / ramp).clamp(0.0, 1.0);
                let onset = 0.5 - 0.5 * (PI * edge).cos();
                let syllable = 0.65 + 0.35 * (2.0 * PI * rate * t / fs + phase).sin();
                *e = (gain * onset * syllable).max(PAUSE_FLOOR);
            }
        }
        pos = end;
        talking = !talking;
    }
    let mut out: Vec<f64> = carrier.iter().zip(&envelope).map(|(c, e)| c * e).collect();
    normalize_rms(&mut out);
    out
}

/// Unit-RMS sine at `freq_hz`, phase 0.
pub fn tone(len: usize, sample_rate: u32, freq_hz: f64) -> Vec<f64> {
    (0..len)
        .map(|n| 2f64.sqrt() * (2.0 * PI * freq_hz * n as f64 / sample_rate as f64).sin())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn generators_are_unit_rms_and_deterministic() {
        let a = speech_like(16000, 16000, 3);
        assert!((rms(&a) - 1.0).abs() < 1e-12);
        assert_eq!(a, speech_like(16000, 16000, 3));
        assert_ne!(a, speech_like(16000, 16000, 4));
        assert!((rms(&pink_noise(5000, 16000, 1)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pink_spectrum_falls_with_frequency() {
        let x = pink_noise(1 << 16, 16000, 9);
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        FftPlanner::new()
            .plan_fft_forward(buf.len())
            .process(&mut buf);
        let band = |lo: usize, hi: usize| buf[lo..hi].iter().map(|c| c.norm_sqr()).sum::<f64>();
        // Equal energy per octave: 250-500 Hz vs 2-4 kHz within a factor of 1.5.
        let n = buf.len() as f64 / 16000.0;
        let low = band((250.0 * n) as usize, (500.0 * n) as usize);
        let high = band((2000.0 * n) as usize, (4000.0 * n) as usize);
        assert!((low / high - 1.0).abs() < 0.5, "{}", low / high);
    }

    #[test]
    fn speech_like_has_pauses() {
        let x = speech_like(64000, 16000, 11);
        let frames: Vec<f64> = x.chunks(320).map(rms).collect();
        let quiet = frames.iter().filter(|&&r| r < 0.05).count();
        assert!(quiet > 0 && quiet < frames.len());
        assert!(frames.iter().all(|&r| r > 1e-3));
    }
}
