//! Training losses and evaluation metrics.

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dsp::StftPlan;
use crate::error::{Error, Result};

/// Bound applied to SI-SDR and SDR values, in dB.
pub const SDR_CLAMP_DB: f64 = 60.0;

const DB_PER_LN: f64 = 10.0 / std::f64::consts::LN_10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda: f64,
    pub epsilon: f64,
}

impl LossConfig {
    pub fn stage1() -> Self {
        Self {
            lambda: 0.5,
            epsilon: 1e-8,
        }
    }

    pub fn stage2() -> Self {
        Self {
            lambda: 0.05,
            epsilon: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !(self.epsilon > 0.0) {
            return Err(Error::Config(format!(
                "loss weights must satisfy lambda >= 0 and epsilon > 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

fn check_pair(est: &[f64], reference: &[f64]) -> Result<()> {
    if est.len() != reference.len() || est.is_empty() {
        return Err(Error::shape(
            "objective",
            format!(
                "estimate has {} samples, reference has {}",
                est.len(),
                reference.len()
            ),
        ));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MagLoss {
    pub value: f64,
    /// Set when the reference spectrum had zero magnitude and the denominator was floored.
    pub degenerate_reference: bool,
}

/// Relative L1 distance between STFT magnitudes.
pub fn mag_loss(est: &[f64], reference: &[f64], plan: &StftPlan, eps: f64) -> Result<MagLoss> {
    mag_loss_impl(est, reference, plan, eps, false).map(|(l, _)| l)
}

pub fn mag_loss_with_grad(
    est: &[f64],
    reference: &[f64],
    plan: &StftPlan,
    eps: f64,
) -> Result<(MagLoss, Vec<f64>)> {
    mag_loss_impl(est, reference, plan, eps, true).map(|(l, g)| (l, g.expect("requested")))
}

fn mag_loss_impl(
    est: &[f64],
    reference: &[f64],
    plan: &StftPlan,
    eps: f64,
    want_grad: bool,
) -> Result<(MagLoss, Option<Vec<f64>>)> {
    check_pair(est, reference)?;
    let est_spec = plan.analyze(est)?;
    let ref_spec = plan.analyze(reference)?;
    let denom_raw: f64 = ref_spec.iter().map(|c| c.norm()).sum();
    let degenerate = denom_raw <= eps;
    let denom = denom_raw.max(eps);
    let numer: f64 = est_spec
        .iter()
        .zip(ref_spec.iter())
        .map(|(a, b)| (a.norm() - b.norm()).abs())
        .sum();
    let loss = MagLoss {
        value: numer / denom,
        degenerate_reference: degenerate,
    };
    if !want_grad {
        return Ok((loss, None));
    }
    let mut g = Array2::<Complex64>::zeros(est_spec.dim());
    for ((gv, a), b) in g.iter_mut().zip(est_spec.iter()).zip(ref_spec.iter()) {
        let mag = a.norm();
        if mag > 0.0 {
            let sign = (mag - b.norm()).signum();
            *gv = *a * (sign / (mag * denom));
        }
    }
    let grad = plan.analyze_adjoint(g.view(), est.len())?;
    Ok((loss, Some(grad)))
}

/// Scale-invariant SDR in dB, clamped to `+-SDR_CLAMP_DB`.
pub fn si_sdr(est: &[f64], reference: &[f64]) -> Result<f64> {
    si_sdr_impl(est, reference, false).map(|(v, _)| v)
}

/// SI-SDR and its gradient with respect to `est`. The gradient is zero while the clamp is active.
pub fn si_sdr_with_grad(est: &[f64], reference: &[f64]) -> Result<(f64, Vec<f64>)> {
    si_sdr_impl(est, reference, true).map(|(v, g)| (v, g.expect("requested")))
}

fn si_sdr_impl(est: &[f64], reference: &[f64], want_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
    check_pair(est, reference)?;
    let ref_energy = dot(reference, reference);
    if ref_energy <= 0.0 {
        return Err(Error::Input("SI-SDR reference has zero energy".into()));
    }
    let alpha = dot(reference, est) / ref_energy;
    let target: Vec<f64> = reference.iter().map(|s| alpha * s).collect();
    let residual: Vec<f64> = est.iter().zip(&target).map(|(e, t)| e - t).collect();
    let t_energy = dot(&target, &target);
    let r_energy = dot(&residual, &residual);
    let raw = if t_energy <= 0.0 {
        f64::NEG_INFINITY
    } else if r_energy <= 0.0 {
        f64::INFINITY
    } else {
        10.0 * (t_energy / r_energy).log10()
    };
    let value = raw.clamp(-SDR_CLAMP_DB, SDR_CLAMP_DB);
    if !want_grad {
        return Ok((value, None));
    }
    let grad = if raw.is_finite() && raw.abs() < SDR_CLAMP_DB {
        target
            .iter()
            .zip(&residual)
            .map(|(t, r)| DB_PER_LN * (2.0 * t / t_energy - 2.0 * r / r_energy))
            .collect()
    } else {
        vec![0.0; est.len()]
    };
    Ok((value, Some(grad)))
}

/// Plain signal-to-distortion ratio `10 log10(|s|^2 / |est - s|^2)`, clamped.
pub fn sdr(est: &[f64], reference: &[f64]) -> Result<f64> {
    check_pair(est, reference)?;
    let ref_energy = dot(reference, reference);
    if ref_energy <= 0.0 {
        return Err(Error::Input("SDR reference has zero energy".into()));
    }
    let err: f64 = est
        .iter()
        .zip(reference)
        .map(|(e, s)| (e - s) * (e - s))
        .sum();
    let raw = if err <= 0.0 {
        f64::INFINITY
    } else {
        10.0 * (ref_energy / err).log10()
    };
    Ok(raw.clamp(-SDR_CLAMP_DB, SDR_CLAMP_DB))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub total: f64,
    pub mag: f64,
    pub si_sdr: f64,
    pub degenerate_reference: bool,
}

/// `mag_loss + lambda * (-si_sdr)` for a single merged target.
pub fn total_loss(
    est: &[f64],
    reference: &[f64],
    cfg: &LossConfig,
    plan: &StftPlan,
) -> Result<LossValue> {
    let mag = mag_loss(est, reference, plan, cfg.epsilon)?;
    let sdr = si_sdr(est, reference)?;
    Ok(LossValue {
        total: mag.value - cfg.lambda * sdr,
        mag: mag.value,
        si_sdr: sdr,
        degenerate_reference: mag.degenerate_reference,
    })
}

pub fn total_loss_with_grad(
    est: &[f64],
    reference: &[f64],
    cfg: &LossConfig,
    plan: &StftPlan,
) -> Result<(LossValue, Vec<f64>)> {
    let (mag, mut grad) = mag_loss_with_grad(est, reference, plan, cfg.epsilon)?;
    let (sdr, sdr_grad) = si_sdr_with_grad(est, reference)?;
    if cfg.lambda != 0.0 {
        for (g, s) in grad.iter_mut().zip(&sdr_grad) {
            *g -= cfg.lambda * s;
        }
    }
    let value = LossValue {
        total: mag.value - cfg.lambda * sdr,
        mag: mag.value,
        si_sdr: sdr,
        degenerate_reference: mag.degenerate_reference,
    };
    Ok((value, grad))
}

/// Metrics of one enhanced signal against one reference, with improvements
/// measured relative to the unprocessed reference-channel mixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub si_sdr: f64,
    pub si_sdri: f64,
    pub sdr: f64,
    pub sdri: f64,
}

pub fn evaluate(est: &[f64], mixture_ref: &[f64], reference: &[f64]) -> Result<Metrics> {
    let si = si_sdr(est, reference)?;
    let si_mix = si_sdr(mixture_ref, reference)?;
    let sd = sdr(est, reference)?;
    let sd_mix = sdr(mixture_ref, reference)?;
    Ok(Metrics {
        si_sdr: si,
        si_sdri: si - si_mix,
        sdr: sd,
        sdri: sd - sd_mix,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerMetrics {
    pub speaker: usize,
    pub doa_deg: f64,
    #[serde(flatten)]
    pub metrics: Metrics,
}

/// Averages plus per-speaker breakdown; serialized as JSON by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub si_sdr: f64,
    pub si_sdri: f64,
    pub sdr: f64,
    pub sdri: f64,
    pub per_speaker: Vec<SpeakerMetrics>,
}

impl MetricReport {
    pub fn from_speakers(per_speaker: Vec<SpeakerMetrics>) -> Self {
        let n = per_speaker.len().max(1) as f64;
        let mean =
            |f: fn(&Metrics) -> f64| per_speaker.iter().map(|s| f(&s.metrics)).sum::<f64>() / n;
        Self {
            si_sdr: mean(|m| m.si_sdr),
            si_sdri: mean(|m| m.si_sdri),
            sdr: mean(|m| m.sdr),
            sdri: mean(|m| m.sdri),
            per_speaker,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::StftConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Component of `n` orthogonal to `s`, rescaled to energy `energy`.
    fn orthogonal_to(s: &[f64], n: &[f64], energy: f64) -> Vec<f64> {
        let a = dot(s, n) / dot(s, s);
        let mut o: Vec<f64> = n.iter().zip(s).map(|(x, y)| x - a * y).collect();
        let k = (energy / dot(&o, &o)).sqrt();
        o.iter_mut().for_each(|x| *x *= k);
        o
    }

    fn plan() -> StftPlan {
        StftPlan::new(StftConfig::default()).unwrap()
    }

    #[test]
    fn mag_loss_identities() {
        let s = noise(4000, 1);
        let p = plan();
        assert_eq!(mag_loss(&s, &s, &p, 1e-8).unwrap().value, 0.0);
        let zeros = vec![0.0; s.len()];
        assert!((mag_loss(&zeros, &s, &p, 1e-8).unwrap().value - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = s.iter().map(|x| -x).collect();
        assert!(mag_loss(&neg, &s, &p, 1e-8).unwrap().value < 1e-12);
    }

    #[test]
    fn mag_loss_flags_silent_reference() {
        let s = noise(4000, 2);
        let zeros = vec![0.0; s.len()];
        let l = mag_loss(&s, &zeros, &plan(), 1e-8).unwrap();
        assert!(l.degenerate_reference);
        assert!(l.value.is_finite());
    }

    #[test]
    fn si_sdr_reference_cases() {
        let s = noise(8000, 3);
        let scaled: Vec<f64> = s.iter().map(|x| 3.0 * x).collect();
        assert_eq!(si_sdr(&scaled, &s).unwrap(), SDR_CLAMP_DB);

        let n = orthogonal_to(&s, &noise(8000, 4), dot(&s, &s) / 100.0);
        let est: Vec<f64> = s.iter().zip(&n).map(|(a, b)| a + b).collect();
        assert!((si_sdr(&est, &s).unwrap() - 20.0).abs() < 1e-9);

        assert_eq!(si_sdr(&n, &s).unwrap(), -SDR_CLAMP_DB);
        assert!(si_sdr(&s, &vec![0.0; s.len()]).is_err());
    }

    #[test]
    fn si_sdr_monotone_in_orthogonal_noise() {
        let s = noise(4000, 5);
        let base = noise(4000, 6);
        let mut last = f64::INFINITY;
        for k in 1..8 {
            let n = orthogonal_to(&s, &base, dot(&s, &s) * 0.01 * k as f64);
            let est: Vec<f64> = s.iter().zip(&n).map(|(a, b)| a + b).collect();
            let v = si_sdr(&est, &s).unwrap();
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn total_loss_composition() {
        let s = noise(4000, 7);
        let p = plan();
        let cfg = LossConfig::stage1();
        let l = total_loss(&s, &s, &cfg, &p).unwrap();
        assert!((l.total + 30.0).abs() < 1e-12);
        let est = noise(4000, 8);
        let zero_lambda = LossConfig { lambda: 0.0, ..cfg };
        let l0 = total_loss(&est, &s, &zero_lambda, &p).unwrap();
        assert_eq!(l0.total, mag_loss(&est, &s, &p, 1e-8).unwrap().value);
    }

    #[test]
    fn sdr_cases() {
        let s = noise(2000, 9);
        assert_eq!(sdr(&s, &s).unwrap(), SDR_CLAMP_DB);
        let mix: Vec<f64> = s.iter().zip(noise(2000, 10)).map(|(a, b)| a + b).collect();
        let m = evaluate(&mix, &mix, &s).unwrap();
        assert_eq!(m.si_sdri, 0.0);
        assert_eq!(m.sdri, 0.0);
        assert!(sdr(&s, &vec![0.0; 2000]).is_err());
    }

    #[test]
    fn improvement_is_difference_of_metrics() {
        let s = noise(3000, 11);
        let interferer = noise(3000, 12);
        let mix: Vec<f64> = s
            .iter()
            .zip(&interferer)
            .map(|(a, b)| a + 3.0 * b)
            .collect();
        let est: Vec<f64> = s
            .iter()
            .zip(&interferer)
            .map(|(a, b)| a + 0.1 * b)
            .collect();
        let m = evaluate(&est, &mix, &s).unwrap();
        let expected = si_sdr(&est, &s).unwrap() - si_sdr(&mix, &s).unwrap();
        assert!((m.si_sdri - expected).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(si_sdr(&[1.0, 2.0], &[1.0]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn si_sdr_ignores_estimate_scale(scale in -1e3f64..1e3, seed in 0u64..1000) {
            proptest::prop_assume!(scale.abs() > 1e-3);
            let s = noise(800, seed);
            let est: Vec<f64> = s.iter().zip(noise(800, seed + 1)).map(|(a, b)| a + 0.5 * b).collect();
            let scaled: Vec<f64> = est.iter().map(|v| v * scale).collect();
            let (a, b) = (si_sdr(&est, &s).unwrap(), si_sdr(&scaled, &s).unwrap());
            proptest::prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
        }
    }
}
