use ndarray::{s, Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use dsenet::dsp::{MultichannelWaveform, StftPlan};
use dsenet::embed::ClueInput;
use dsenet::nn::attention::SelfAttention;
use dsenet::nn::blocks::{
    BwModule, Crossband, CrossbandDims, FreqLinear, Narrowband, NarrowbandDims,
};
use dsenet::nn::layers::{scale_channels, Init};
use dsenet::nn::{DseNet, MaskOverride, ModelConfig, ParamStore};
use dsenet::Error;

fn randomize(ps: &mut ParamStore<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in ps.values_mut() {
        v.mapv_inplace(|_| 0.5 * rng.sample::<f64, _>(StandardNormal));
    }
}

fn random3(shape: (usize, usize, usize), seed: u64) -> Array3<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array3::from_shape_fn(shape, |_| rng.sample(StandardNormal))
}

fn random_wave(channels: usize, len: usize, seed: u64) -> MultichannelWaveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chans: Vec<Vec<f64>> = (0..channels)
        .map(|_| (0..len).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    MultichannelWaveform::from_channels(&chans, 16000).unwrap()
}

fn max_abs_diff(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn small_config() -> ModelConfig {
    ModelConfig {
        channels: 16,
        ffn_hidden: 16,
        ..ModelConfig::desk()
    }
}

fn cross_dims() -> CrossbandDims {
    CrossbandDims {
        channels: 8,
        hidden: 2,
        kernel: 3,
        groups: 2,
        out_gain: 1.0,
    }
}

#[test]
fn forward_preserves_length_and_is_deterministic() {
    let cfg = small_config();
    let (net, ps) = DseNet::new(cfg.clone(), 1).unwrap();
    let plan = StftPlan::new(cfg.stft).unwrap();
    let x = random_wave(3, 64000, 2);
    let clue = net
        .clue_codes(&ClueInput::new(40.0, 30.0).unwrap())
        .unwrap();
    let a = net.extract(&ps, &plan, &x, &clue, false).unwrap();
    let b = net.extract(&ps, &plan, &x, &clue, false).unwrap();
    assert_eq!(a.len(), 64000);
    assert!(a.iter().all(|v| v.is_finite()));
    assert_eq!(a, b);
}

#[test]
fn output_depends_on_target_direction() {
    let cfg = small_config();
    let (net, ps) = DseNet::new(cfg.clone(), 3).unwrap();
    let plan = StftPlan::new(cfg.stft).unwrap();
    let x = random_wave(3, 4000, 4);
    let run = |doa: f64| {
        let clue = net.clue_codes(&ClueInput::new(doa, 30.0).unwrap()).unwrap();
        net.extract(&ps, &plan, &x, &clue, false).unwrap()
    };
    let (a, b) = (run(40.0), run(41.0));
    let diff: f64 = a
        .iter()
        .zip(&b)
        .map(|(p, q)| (p - q).powi(2))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = a.iter().map(|p| p * p).sum::<f64>().sqrt();
    assert!(diff / norm > 1e-6, "{}", diff / norm);
}

#[test]
fn wrong_channel_count_is_rejected() {
    let cfg = small_config();
    let (net, ps) = DseNet::new(cfg.clone(), 1).unwrap();
    let plan = StftPlan::new(cfg.stft).unwrap();
    let clue = net.clue_codes(&ClueInput::new(0.0, 30.0).unwrap()).unwrap();
    let err = net
        .extract(&ps, &plan, &random_wave(2, 4000, 1), &clue, false)
        .unwrap_err();
    assert!(matches!(err, Error::Shape { .. }), "{err}");
    let features = Array3::<f64>::zeros((129, 10, 4));
    assert!(net.input_layer(&ps, features.view()).is_err());
}

#[test]
fn input_layer_shapes_bias_and_receptive_field() {
    let cfg = ModelConfig::desk();
    let (net, mut ps) = DseNet::new(cfg, 5).unwrap();
    randomize(&mut ps, 6);
    let zero = Array3::<f64>::zeros((129, 12, 6));
    let out = net.input_layer(&ps, zero.view()).unwrap();
    assert_eq!(out.dim(), (129, 12, 32));
    let bias = ps.vector(net.input_conv.b);
    for row in out.lanes(Axis(2)) {
        assert_eq!(row.as_slice().unwrap(), bias);
    }

    let x = random3((129, 12, 6), 7);
    let mut y = x.clone();
    y.slice_mut(s![.., 6, ..]).mapv_inplace(|v| v + 1.0);
    let a = net.input_layer(&ps, x.view()).unwrap();
    let b = net.input_layer(&ps, y.view()).unwrap();
    for t in 0..12 {
        let d = max_abs_diff(
            &a.slice(s![.., t..t + 1, ..]).to_owned(),
            &b.slice(s![.., t..t + 1, ..]).to_owned(),
        );
        if (4..=8).contains(&t) {
            assert!(d > 0.0, "frame {t} should see the change");
        } else {
            assert_eq!(d, 0.0, "frame {t} is outside the kernel");
        }
    }
}

#[test]
fn clue_modulation_of_ones_returns_the_clue_vector() {
    let cfg = small_config();
    let (net, ps) = DseNet::new(cfg.clone(), 8).unwrap();
    let clue = net
        .clue_codes(&ClueInput::new(123.0, 30.0).unwrap())
        .unwrap();
    let (z, _) = net.clue_encoders[0].forward(&ps, &clue.doa);
    let (z2, _) = net.clue_encoders[0].forward(&ps, &clue.doa);
    assert_eq!(z, z2);
    let ones = Array2::<f64>::ones((5, cfg.channels));
    for row in scale_channels(ones.view(), &z).outer_iter() {
        assert_eq!(row, z);
    }
}

#[test]
fn crossband_is_equivariant_to_frame_permutation() {
    let mut ps = ParamStore::new();
    let mut init = Init::new(ChaCha8Rng::seed_from_u64(9));
    let shared = FreqLinear::new(&mut ps, &mut init, "fl", 2, 17);
    let layer = Crossband::new(&mut ps, &mut init, "cb", &cross_dims());
    randomize(&mut ps, 10);
    let x = random3((9, 17, 8), 11);
    let mut perm: Vec<usize> = (0..9).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(12));
    let xp = x.select(Axis(0), &perm);
    let (y, _) = layer.forward(&ps, &shared, x.view()).unwrap();
    let (yp, _) = layer.forward(&ps, &shared, xp.view()).unwrap();
    assert!(max_abs_diff(&y.select(Axis(0), &perm), &yp) < 1e-9);
}

#[test]
fn crossband_rejects_frequency_mismatch() {
    let mut ps = ParamStore::new();
    let mut init = Init::new(ChaCha8Rng::seed_from_u64(9));
    let shared = FreqLinear::new(&mut ps, &mut init, "fl", 2, 17);
    let layer = Crossband::new(&mut ps, &mut init, "cb", &cross_dims());
    let x = Array3::<f64>::zeros((3, 16, 8));
    assert!(matches!(
        layer.forward(&ps, &shared, x.view()),
        Err(Error::Shape { .. })
    ));
}

#[test]
fn crossband_frequency_reach() {
    let mut ps = ParamStore::new();
    let mut init = Init::new(ChaCha8Rng::seed_from_u64(13));
    let shared = FreqLinear::new(&mut ps, &mut init, "fl", 2, 17);
    let layer = Crossband::new(&mut ps, &mut init, "cb", &cross_dims());
    randomize(&mut ps, 14);
    let zero = Array3::<f64>::zeros((2, 17, 8));
    // A channel-constant probe would be erased by the layer norms.
    let mut delta = zero.clone();
    let probe = random3((2, 1, 8), 30);
    delta.slice_mut(s![.., 8..9, ..]).assign(&probe);
    let reach = |ps: &ParamStore<f64>| -> Vec<usize> {
        let (a, _) = layer.forward(ps, &shared, zero.view()).unwrap();
        let (b, _) = layer.forward(ps, &shared, delta.view()).unwrap();
        (0..17)
            .filter(|&f| {
                let d = (&a.slice(s![.., f, ..]) - &b.slice(s![.., f, ..])).mapv(f64::abs);
                d.iter().any(|&v| v > 0.0)
            })
            .collect()
    };
    assert_eq!(reach(&ps), (0..17).collect::<Vec<_>>());
    ps.get_mut(shared.w).fill(0.0);
    assert_eq!(reach(&ps), (6..=10).collect::<Vec<_>>());
}

#[test]
fn narrowband_is_equivariant_to_frequency_permutation() {
    let mut ps = ParamStore::new();
    let mut init = Init::new(ChaCha8Rng::seed_from_u64(15));
    let dims = NarrowbandDims {
        channels: 8,
        hidden: 8,
        kernel: 5,
        groups: 2,
        heads: 2,
        out_gain: 1.0,
    };
    let layer = Narrowband::new(&mut ps, &mut init, "nb", &dims);
    randomize(&mut ps, 16);
    let x = random3((11, 7, 8), 17);
    let mut perm: Vec<usize> = (0..11).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(18));
    let (y, _) = layer.forward(&ps, x.view()).unwrap();
    let (yp, _) = layer.forward(&ps, x.select(Axis(0), &perm).view()).unwrap();
    assert!(max_abs_diff(&y.select(Axis(0), &perm), &yp) < 1e-9);
}

#[test]
fn single_frame_attention_is_the_value_path() {
    let mut ps = ParamStore::new();
    let mut init = Init::new(ChaCha8Rng::seed_from_u64(19));
    let att = SelfAttention::new(&mut ps, &mut init, "att", 8, 2, 1.0);
    randomize(&mut ps, 20);
    let x = random3((4, 1, 8), 21);
    let (y, _) = att.forward(&ps, x.view());
    let flat = x.into_shape_with_order((4, 8)).unwrap();
    let expected = att.o.forward(&ps, att.v.forward(&ps, flat.view()).view());
    let y = y.into_shape_with_order((4, 8)).unwrap();
    let err = (&y - &expected)
        .mapv(f64::abs)
        .fold(0.0, |m: f64, &v| m.max(v));
    assert!(err < 1e-12, "{err}");
}

#[test]
fn bw_module_overrides_and_code_validation() {
    let mut ps = ParamStore::new();
    let mut init = Init::new(ChaCha8Rng::seed_from_u64(22));
    let bw = BwModule::new(&mut ps, &mut init, "bw", 8);
    randomize(&mut ps, 23);
    let x = random3((1, 6, 8), 24)
        .into_shape_with_order((6, 8))
        .unwrap();
    let code = [0.0, 1.0, 0.0];
    let (zero, _) = bw
        .forward(&ps, x.view(), &code, MaskOverride::Zero)
        .unwrap();
    assert_eq!(zero, x);
    let (one, _) = bw.forward(&ps, x.view(), &code, MaskOverride::One).unwrap();
    assert_eq!(one, &x * 2.0);
    let (learned, _) = bw
        .forward(&ps, x.view(), &code, MaskOverride::Learned)
        .unwrap();
    for (l, v) in learned.iter().zip(x.iter()) {
        let ratio = l / v;
        assert!((1.0..=2.0).contains(&ratio), "{ratio}");
    }
    assert_eq!(bw.evaluations(), 3);
    assert!(bw
        .forward(&ps, x.view(), &[0.5, 0.5, 0.0], MaskOverride::Learned)
        .is_err());
    assert!(bw
        .forward(&ps, x.view(), &[1.0, 1.0, 0.0], MaskOverride::Learned)
        .is_err());
}

#[test]
fn bw_module_runs_only_when_enabled() {
    let cfg = small_config();
    let (mut net, ps) = DseNet::new(cfg.clone(), 25).unwrap();
    let plan = StftPlan::new(cfg.stft).unwrap();
    let x = random_wave(3, 2000, 26);
    let clue = net
        .clue_codes(&ClueInput::new(200.0, 15.0).unwrap())
        .unwrap();
    let stage1 = net.extract(&ps, &plan, &x, &clue, false).unwrap();
    assert_eq!(net.mask_evaluations(), 0);

    net.mask_override = MaskOverride::Zero;
    let bypassed = net.extract(&ps, &plan, &x, &clue, true).unwrap();
    assert_eq!(net.mask_evaluations(), cfg.n_blocks);
    assert_eq!(stage1, bypassed);

    net.mask_override = MaskOverride::Learned;
    let gated = net.extract(&ps, &plan, &x, &clue, true).unwrap();
    assert_ne!(stage1, gated);
}

#[test]
fn shared_full_band_weights_are_registered_once() {
    let cfg = ModelConfig::desk();
    let (_, ps) = DseNet::new(cfg, 0).unwrap();
    let shared = ps
        .names()
        .iter()
        .filter(|n| n.contains("full_band"))
        .count();
    assert_eq!(shared, 2);
    assert!(ps
        .names()
        .iter()
        .all(|n| !n.starts_with("block") || !n.contains("full_band")));
}

#[test]
fn parameter_counts() {
    let full = DseNet::parameter_count(&ModelConfig::full()).unwrap() as f64;
    assert!((full / 1.40e6 - 1.0).abs() < 0.15, "{full}");
    let (_, ps) = DseNet::new(ModelConfig::desk(), 0).unwrap();
    assert_eq!(
        ps.num_elements(),
        DseNet::parameter_count(&ModelConfig::desk()).unwrap()
    );
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        ModelConfig {
            channels: 30,
            ..ModelConfig::desk()
        },
        ModelConfig {
            heads: 3,
            ..ModelConfig::desk()
        },
        ModelConfig {
            n_blocks: 0,
            ..ModelConfig::desk()
        },
        ModelConfig {
            kernel_tconv: 4,
            ..ModelConfig::desk()
        },
    ];
    for cfg in bad {
        assert!(matches!(DseNet::new(cfg, 0), Err(Error::Config(_))));
    }
}
