//! The directional extraction network and its training-time tape.

use ndarray::{Array2, Array3, ArrayView3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::blocks::{
    BwCache, BwModule, ClueCache, ClueEncoder, Crossband, CrossbandCache, CrossbandDims,
    FreqLinear, MaskOverride, Narrowband, NarrowbandCache, NarrowbandDims,
};
use super::layers::{as3, flat, scale_channels, swap01, Conv1d, Init, Linear};
use super::params::{Grads, ParamStore};
use crate::dsp::{MultichannelWaveform, StftConfig, StftPlan};
use crate::embed::{beamwidth_code, ClueInput, EmbeddingConfig};
use crate::error::{Error, Result};
use crate::objectives::{total_loss_with_grad, LossConfig, LossValue};
use crate::real::Real;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_blocks: usize,
    pub channels: usize,
    /// Bottleneck width of the crossband full-band stage.
    pub cross_hidden: usize,
    /// Hidden width of the narrowband feed-forward module.
    pub ffn_hidden: usize,
    pub kernel_tconv: usize,
    pub kernel_tgconv: usize,
    pub kernel_fgconv: usize,
    pub groups: usize,
    pub heads: usize,
    pub n_mics: usize,
    pub stft: StftConfig,
    pub embed: EmbeddingConfig,
    /// Initial scale of the last layer in every residual branch.
    #[serde(default = "default_residual_gain")]
    pub residual_gain: f64,
}

fn default_residual_gain() -> f64 {
    0.5
}

impl ModelConfig {
    /// Small configuration used for desk-scale experiments.
    pub fn desk() -> Self {
        Self {
            n_blocks: 2,
            channels: 32,
            cross_hidden: 4,
            ffn_hidden: 32,
            kernel_tconv: 5,
            kernel_tgconv: 5,
            kernel_fgconv: 3,
            groups: 4,
            heads: 2,
            n_mics: 3,
            stft: StftConfig::default(),
            embed: EmbeddingConfig::default(),
            residual_gain: default_residual_gain(),
        }
    }

    /// Full-size configuration.
    pub fn full() -> Self {
        Self {
            n_blocks: 8,
            channels: 192,
            cross_hidden: 8,
            ffn_hidden: 192,
            groups: 8,
            heads: 8,
            ..Self::desk()
        }
    }

    pub fn n_freqs(&self) -> usize {
        self.stft.n_freqs()
    }

    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        self.embed.validate()?;
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_blocks == 0
            || self.channels == 0
            || self.cross_hidden == 0
            || self.ffn_hidden == 0
        {
            return bad("block count and widths must be positive".into());
        }
        if self.n_mics == 0 {
            return bad("at least one microphone is required".into());
        }
        if self.groups == 0
            || self.channels % self.groups != 0
            || self.ffn_hidden % self.groups != 0
        {
            return bad(format!(
                "channels {} and ffn width {} must be divisible by groups {}",
                self.channels, self.ffn_hidden, self.groups
            ));
        }
        if self.heads == 0 || self.channels % self.heads != 0 {
            return bad(format!(
                "channels {} not divisible by heads {}",
                self.channels, self.heads
            ));
        }
        for (name, k) in [
            ("kernel_tconv", self.kernel_tconv),
            ("kernel_tgconv", self.kernel_tgconv),
            ("kernel_fgconv", self.kernel_fgconv),
        ] {
            if k % 2 == 0 {
                return bad(format!("{name} must be odd, got {k}"));
            }
        }
        if !(self.residual_gain >= 0.0) {
            return bad("residual_gain must be non-negative".into());
        }
        Ok(())
    }
}

/// Encoded clue: direction embedding plus beamwidth one-hot code.
#[derive(Debug, Clone, PartialEq)]
pub struct ClueCodes {
    pub doa: Vec<f64>,
    pub width: [f64; 3],
}

impl ClueCodes {
    pub fn new(embed: &EmbeddingConfig, clue: &ClueInput) -> Result<Self> {
        Ok(Self {
            doa: embed.embed(clue.theta_target),
            width: beamwidth_code(clue.theta_width)?,
        })
    }
}

/// Network input: real/imaginary spectra of the level-normalized mixture.
#[derive(Debug, Clone)]
pub struct NetInput<A> {
    /// `[freqs, frames, 2 * mics]`, real parts first.
    pub features: Array3<A>,
    /// Reference-channel RMS the mixture was divided by.
    pub scale: f64,
    pub len: usize,
}

struct BlockTape<A> {
    h_in: Array2<A>,
    z: ndarray::Array1<A>,
    clue: ClueCache<A>,
    bw: Option<BwCache<A>>,
    cross: CrossbandCache<A>,
    narrow: NarrowbandCache<A>,
}

/// Activations kept by a forward pass for back-propagation.
pub struct Tape<A> {
    features: Array3<A>,
    blocks: Vec<BlockTape<A>>,
    last: Array2<A>,
}

/// Layer layout of the extraction network. Parameter values live in a
/// separate [`ParamStore`].
#[derive(Debug, Clone)]
pub struct DseNet {
    pub config: ModelConfig,
    pub input_conv: Conv1d,
    pub clue_encoders: Vec<ClueEncoder>,
    pub bw: Vec<BwModule>,
    pub freq_linear: FreqLinear,
    pub crossband: Vec<Crossband>,
    pub narrowband: Vec<Narrowband>,
    pub output: Linear,
    pub mask_override: MaskOverride,
}

impl DseNet {
    /// Builds the layout and a freshly initialized parameter set.
    pub fn new(config: ModelConfig, seed: u64) -> Result<(Self, ParamStore<f64>)> {
        config.validate()?;
        let mut ps = ParamStore::new();
        let mut init = Init::new(ChaCha8Rng::seed_from_u64(seed));
        let c = config.channels;
        let g = config.residual_gain;
        let input_conv = Conv1d::new(
            &mut ps,
            &mut init,
            "input.tconv",
            2 * config.n_mics,
            c,
            config.kernel_tconv,
            1,
            1.0,
        );
        let freq_linear = FreqLinear::new(
            &mut ps,
            &mut init,
            "crossband.full_band",
            config.cross_hidden,
            config.n_freqs(),
        );
        let cross_dims = CrossbandDims {
            channels: c,
            hidden: config.cross_hidden,
            kernel: config.kernel_fgconv,
            groups: config.groups,
            out_gain: g,
        };
        let narrow_dims = NarrowbandDims {
            channels: c,
            hidden: config.ffn_hidden,
            kernel: config.kernel_tgconv,
            groups: config.groups,
            heads: config.heads,
            out_gain: g,
        };
        let mut clue_encoders = Vec::new();
        let mut bw = Vec::new();
        let mut crossband = Vec::new();
        let mut narrowband = Vec::new();
        for l in 0..config.n_blocks {
            clue_encoders.push(ClueEncoder::new(
                &mut ps,
                &mut init,
                &format!("block{l}.clue"),
                config.embed.dim,
                c,
            ));
            bw.push(BwModule::new(
                &mut ps,
                &mut init,
                &format!("block{l}.bw"),
                c,
            ));
            crossband.push(Crossband::new(
                &mut ps,
                &mut init,
                &format!("block{l}.crossband"),
                &cross_dims,
            ));
            narrowband.push(Narrowband::new(
                &mut ps,
                &mut init,
                &format!("block{l}.narrowband"),
                &narrow_dims,
            ));
        }
        let output = Linear::new(&mut ps, &mut init, "output", c, 2, 1, 1.0);
        let net = Self {
            config,
            input_conv,
            clue_encoders,
            bw,
            freq_linear,
            crossband,
            narrowband,
            output,
            mask_override: MaskOverride::Learned,
        };
        Ok((net, ps))
    }

    /// Total number of learnable scalars for `config`.
    pub fn parameter_count(config: &ModelConfig) -> Result<usize> {
        Ok(Self::new(config.clone(), 0)?.1.num_elements())
    }

    /// BW mask evaluations summed over blocks.
    pub fn mask_evaluations(&self) -> usize {
        self.bw.iter().map(BwModule::evaluations).sum()
    }

    pub fn clue_codes(&self, clue: &ClueInput) -> Result<ClueCodes> {
        ClueCodes::new(&self.config.embed, clue)
    }

    /// Splits the level-normalized mixture into the network's input features.
    pub fn prepare<A: Real>(
        &self,
        plan: &StftPlan,
        x: &MultichannelWaveform,
    ) -> Result<NetInput<A>> {
        let m = self.config.n_mics;
        if x.channels() != m {
            return Err(Error::shape(
                "input",
                format!("{} channels, model expects {m}", x.channels()),
            ));
        }
        if plan.config() != self.config.stft {
            return Err(Error::Config(
                "STFT plan does not match the model configuration".into(),
            ));
        }
        let len = x.len();
        let ch0 = x.channel(0);
        let rms = (ch0.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt();
        let scale = if rms > 1e-8 { rms } else { 1.0 };
        let bin_gain = 1.0 / plan.window_energy().sqrt();
        let frames = self.config.stft.n_frames(len);
        let freqs = self.config.n_freqs();
        let mut features = Array3::zeros((freqs, frames, 2 * m));
        for c in 0..m {
            let sig: Vec<f64> = x.channel(c).iter().map(|v| v / scale).collect();
            let spec = plan.analyze(&sig)?;
            for ((t, f), v) in spec.indexed_iter() {
                features[[f, t, c]] = A::of(v.re * bin_gain);
                features[[f, t, m + c]] = A::of(v.im * bin_gain);
            }
        }
        Ok(NetInput {
            features,
            scale,
            len,
        })
    }

    /// Input layer: temporal convolution from `2M` to `C` channels.
    pub fn input_layer<A: Real>(
        &self,
        ps: &ParamStore<A>,
        features: ArrayView3<A>,
    ) -> Result<Array3<A>> {
        let (f, _, ch) = features.dim();
        if ch != 2 * self.config.n_mics {
            return Err(Error::shape(
                "input layer",
                format!("{ch} feature channels, expected {}", 2 * self.config.n_mics),
            ));
        }
        if f != self.config.n_freqs() {
            return Err(Error::shape(
                "input layer",
                format!("{f} frequencies, expected {}", self.config.n_freqs()),
            ));
        }
        Ok(self.input_conv.forward(ps, features))
    }

    /// Network body on input features; returns `[freqs, frames, 2]` output
    /// coefficients and, if `keep` is set, the tape for [`backward`](Self::backward).
    pub fn run<A: Real>(
        &self,
        ps: &ParamStore<A>,
        features: ArrayView3<A>,
        clue: &ClueCodes,
        bw_enabled: bool,
        keep: bool,
    ) -> Result<(Array3<A>, Option<Tape<A>>)> {
        if clue.doa.len() != self.config.embed.dim {
            return Err(Error::shape(
                "clue encoder",
                format!(
                    "embedding of length {}, expected {}",
                    clue.doa.len(),
                    self.config.embed.dim
                ),
            ));
        }
        let (f, t, _) = features.dim();
        let mut h = flat(self.input_layer(ps, features)?);
        let mut blocks = Vec::new();
        for l in 0..self.config.n_blocks {
            let (z, clue_cache) = self.clue_encoders[l].forward(ps, &clue.doa);
            let h_in = h;
            h = scale_channels(h_in.view(), &z);
            let bw = if bw_enabled {
                let (y, cache) =
                    self.bw[l].forward(ps, h.view(), &clue.width, self.mask_override)?;
                h = y;
                Some(cache)
            } else {
                None
            };
            let x = swap01(as3(&h, f, t));
            let (y, cross) = self.crossband[l].forward(ps, &self.freq_linear, x.view())?;
            h = flat(swap01(y.view()));
            let (y, narrow) = self.narrowband[l].forward(ps, as3(&h, f, t))?;
            h = flat(y);
            if keep {
                blocks.push(BlockTape {
                    h_in,
                    z,
                    clue: clue_cache,
                    bw,
                    cross,
                    narrow,
                });
            }
        }
        let out = self.output.forward(ps, h.view());
        let out = out.into_shape_with_order((f, t, 2)).expect("contiguous");
        let tape = keep.then(|| Tape {
            features: features.to_owned(),
            blocks,
            last: h,
        });
        Ok((out, tape))
    }

    /// Accumulates parameter gradients given the gradient of the output
    /// coefficients.
    pub fn backward<A: Real>(
        &self,
        ps: &ParamStore<A>,
        tape: &Tape<A>,
        g_out: ArrayView3<A>,
        grads: &mut Grads<A>,
    ) {
        let (f, t, _) = g_out.dim();
        let g = g_out
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((f * t, 2))
            .expect("contiguous");
        let mut gh = self.output.backward(ps, tape.last.view(), g.view(), grads);
        for l in (0..tape.blocks.len()).rev() {
            let b = &tape.blocks[l];
            gh = flat(self.narrowband[l].backward(ps, &b.narrow, as3(&gh, f, t), grads));
            let g3 = swap01(as3(&gh, f, t));
            let gx = self.crossband[l].backward(ps, &self.freq_linear, &b.cross, g3.view(), grads);
            gh = flat(swap01(gx.view()));
            if let Some(cache) = &b.bw {
                gh = self.bw[l].backward(ps, cache, gh.view(), grads);
            }
            let gz = (&gh * &b.h_in).sum_axis(Axis(0));
            self.clue_encoders[l].backward(ps, &b.clue, &gz, grads);
            gh = scale_channels(gh.view(), &b.z);
        }
        self.input_conv
            .backward(ps, tape.features.view(), as3(&gh, f, t), grads);
    }

    /// Output coefficients to a spectrum; the inverse of the input bin scaling.
    fn to_spectrum<A: Real>(plan: &StftPlan, out: &Array3<A>) -> Array2<Complex64> {
        let (f, t, _) = out.dim();
        let g = plan.window_energy().sqrt();
        Array2::from_shape_fn((t, f), |(ti, fi)| {
            Complex64::new(out[[fi, ti, 0]].f64() * g, out[[fi, ti, 1]].f64() * g)
        })
    }

    /// Extracts the beam signal at the level of the input mixture.
    pub fn extract<A: Real>(
        &self,
        ps: &ParamStore<A>,
        plan: &StftPlan,
        x: &MultichannelWaveform,
        clue: &ClueCodes,
        bw_enabled: bool,
    ) -> Result<Vec<f64>> {
        let input = self.prepare::<A>(plan, x)?;
        let (out, _) = self.run(ps, input.features.view(), clue, bw_enabled, false)?;
        let y = plan.synthesize(Self::to_spectrum(plan, &out).view(), input.len)?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("network output is not finite".into()));
        }
        Ok(y.into_iter().map(|v| v * input.scale).collect())
    }

    /// Loss on the level-normalized signals and its gradient, accumulated
    /// into `grads`.
    #[allow(clippy::too_many_arguments)]
    pub fn loss_and_grad<A: Real>(
        &self,
        ps: &ParamStore<A>,
        plan: &StftPlan,
        x: &MultichannelWaveform,
        target: &[f64],
        clue: &ClueCodes,
        bw_enabled: bool,
        loss: &LossConfig,
        grads: &mut Grads<A>,
    ) -> Result<LossValue> {
        if target.len() != x.len() {
            return Err(Error::shape(
                "loss",
                format!("target has {} samples, mixture {}", target.len(), x.len()),
            ));
        }
        let input = self.prepare::<A>(plan, x)?;
        let (out, tape) = self.run(ps, input.features.view(), clue, bw_enabled, true)?;
        let est = plan.synthesize(Self::to_spectrum(plan, &out).view(), input.len)?;
        let reference: Vec<f64> = target.iter().map(|v| v / input.scale).collect();
        let (value, g_est) = total_loss_with_grad(&est, &reference, loss, plan)?;
        if !value.total.is_finite() || g_est.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "loss is not finite ({})",
                value.total
            )));
        }
        let frames = out.len_of(Axis(1));
        let g_spec = plan.synthesize_adjoint(&g_est, frames)?;
        let (f, t, _) = out.dim();
        let gain = plan.window_energy().sqrt();
        let g_out = Array3::from_shape_fn((f, t, 2), |(fi, ti, k)| {
            let g = g_spec[[ti, fi]] * gain;
            A::of(if k == 0 { g.re } else { g.im })
        });
        self.backward(ps, tape.as_ref().expect("tape kept"), g_out.view(), grads);
        Ok(value)
    }
}
