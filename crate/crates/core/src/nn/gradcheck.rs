//! Central finite-difference verification of the analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::model::{DseNet, ModelConfig};
use crate::dsp::{MultichannelWaveform, StftConfig, StftPlan};
use crate::embed::{ClueInput, EmbeddingConfig};
use crate::error::Result;
use crate::objectives::LossConfig;

#[derive(Debug, Clone, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub elements: usize,
    /// `|analytic - numeric| / max(|numeric|, 1e-6 |g|)` in the L2 sense, where
    /// `g` is the whole-model gradient; tensors whose gradient vanishes are
    /// thereby compared on an absolute scale.
    pub rel_error: f64,
}

/// One-block configuration small enough for exhaustive finite differences.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        n_blocks: 1,
        channels: 8,
        cross_hidden: 2,
        ffn_hidden: 8,
        kernel_tconv: 5,
        kernel_tgconv: 5,
        kernel_fgconv: 3,
        groups: 2,
        heads: 2,
        n_mics: 2,
        stft: StftConfig {
            window_len: 16,
            hop: 8,
        },
        embed: EmbeddingConfig {
            dim: 8,
            ..EmbeddingConfig::default()
        },
        residual_gain: 1.0,
    }
}

/// Compares the analytic gradient of the total loss with central differences
/// for every parameter tensor, in double precision. `len` is the signal length
/// in samples.
pub fn check_gradients(
    config: &ModelConfig,
    len: usize,
    seed: u64,
    step: f64,
) -> Result<Vec<TensorCheck>> {
    let (net, params) = DseNet::new(config.clone(), seed)?;
    let plan = StftPlan::new(config.stft)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut noise = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.sample(StandardNormal)).collect() };
    let channels: Vec<Vec<f64>> = (0..config.n_mics).map(|_| noise(len)).collect();
    let x = MultichannelWaveform::from_channels(&channels, 16000)?;
    let target = noise(len);
    let clue = net.clue_codes(&ClueInput::new(73.0, 30.0)?)?;
    let loss = LossConfig::stage1();

    let mut grads = params.zeros_like();
    net.loss_and_grad(&params, &plan, &x, &target, &clue, true, &loss, &mut grads)?;

    let mut probe = params.clone();
    let mut scratch = params.zeros_like();
    let mut eval = |p: &super::params::ParamStore<f64>| -> Result<f64> {
        scratch.zero();
        Ok(net
            .loss_and_grad(p, &plan, &x, &target, &clue, true, &loss, &mut scratch)?
            .total)
    };
    let floor = 1e-6
        * grads
            .values()
            .iter()
            .flat_map(|v| v.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
            .max(1e-12);
    let mut out = Vec::new();
    for (idx, name) in params.names().iter().enumerate() {
        let n = params.values()[idx].len();
        let analytic: Vec<f64> = grads.values()[idx].iter().copied().collect();
        let mut numeric = Vec::with_capacity(n);
        for k in 0..n {
            let orig = params.values()[idx].as_slice().expect("contiguous")[k];
            probe.values_mut()[idx].as_slice_mut().expect("contiguous")[k] = orig + step;
            let up = eval(&probe)?;
            probe.values_mut()[idx].as_slice_mut().expect("contiguous")[k] = orig - step;
            let down = eval(&probe)?;
            probe.values_mut()[idx].as_slice_mut().expect("contiguous")[k] = orig;
            numeric.push((up - down) / (2.0 * step));
        }
        let diff = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let norm = numeric.iter().map(|b| b * b).sum::<f64>().sqrt().max(floor);
        out.push(TensorCheck {
            name: name.clone(),
            elements: n,
            rel_error: diff / norm,
        });
    }
    Ok(out)
}
