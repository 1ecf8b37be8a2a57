//! Acceptance criteria 1 to 11. Each criterion prints one PASS/FAIL line.
//! Criteria 10a and 10b measure learning at desk scale; their outcome is
//! reported but does not fail the run.

use std::fs;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use ndarray::{Array3, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use dsenet::dsp::{istft, stft, MultichannelWaveform, StftConfig, StftPlan};
use dsenet::embed::{cyc_pos, one_hot_doa, ClueInput, EmbeddingConfig, ONE_HOT_DIM};
use dsenet::mvdr::{mvdr_extract, mvdr_weights, steering, CovarianceSource, DEFAULT_LOADING};
use dsenet::nn::blocks::{Crossband, CrossbandDims, FreqLinear, Narrowband, NarrowbandDims};
use dsenet::nn::gradcheck::{check_gradients, tiny_config};
use dsenet::nn::layers::Init;
use dsenet::nn::{DseNet, ModelConfig, ParamStore};
use dsenet::objectives::{evaluate, mag_loss, si_sdr};
use dsenet::pipeline::{
    audit_clues, evaluate_scenes, gain_pattern, inactive_target, make_example, speaker_sweep,
    ClueChoice, Example, GainSweepSpec, NetBackend, OracleBackend, TrainConfig, TrainScene,
    Trainer,
};
use dsenet::scene::{
    decay_time, generate_dataset, render_scene, sample_scene, scene_seed, simulate_rir_at,
    ArrayGeometry, DatasetConfig, SceneSpec, SignalKind, SourceSpec, Split,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn noise(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn db(ratio: f64) -> f64 {
    10.0 * ratio.log10()
}

fn two_talker_scene(n_samples: usize, max_order: Option<u32>) -> SceneSpec {
    let c = [3.5, 3.0, 1.0];
    SceneSpec {
        room: [7.0, 6.0, 3.0],
        rt60: 0.3,
        max_order,
        array_center: c,
        array_radius: 0.03,
        n_mics: 3,
        sources: vec![
            SourceSpec::at([5.0, 4.2, 1.5], c, SignalKind::SpeechLike { seed: 1 }, 0.0).unwrap(),
            SourceSpec::at([1.5, 1.2, 1.7], c, SignalKind::SpeechLike { seed: 2 }, 0.0).unwrap(),
        ],
        noise: None,
        mix_rms_db: Some(-18.0),
        sample_rate: 16000,
        n_samples,
        seed: 0,
    }
}

fn c1_stft_round_trip() -> Outcome {
    const TOL: f64 = 1e-6;
    const BUDGET_S: f64 = 5.0;
    let cfg = StftConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    let mut worst = 0.0f64;
    for i in 0..20 {
        let channels = if i % 2 == 0 { 1 } else { 3 };
        let chans: Vec<Vec<f64>> = (0..channels).map(|_| noise(64000, &mut rng)).collect();
        let x = MultichannelWaveform::from_channels(&chans, 16000).unwrap();
        let y = istft(&stft(&x, cfg).unwrap(), cfg, x.len(), 16000).unwrap();
        let edge = cfg.window_len;
        for c in 0..channels {
            let (a, b) = (x.channel(c), y.channel(c));
            for n in edge..x.len() - edge {
                worst = worst.max((a[n] - b[n]).abs());
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < TOL && secs < BUDGET_S,
        format!("max interior error {worst:.2e} (< {TOL:.0e}), {secs:.2} s (< {BUDGET_S} s)"),
    )
}

fn c2_embeddings() -> Outcome {
    let cfg = EmbeddingConfig::default();
    let dist = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let mut periodic = 0.0f64;
    let mut bounded = true;
    for k in 0..360 {
        let phi = (k as f64).to_radians();
        let a = cyc_pos(phi, &cfg);
        let b = cyc_pos(phi + 2.0 * std::f64::consts::PI, &cfg);
        periodic = periodic.max(dist(&a, &b));
        bounded &= a.iter().all(|v| v.abs() <= 1.0);
    }
    let e = |deg: f64| cyc_pos(deg.to_radians(), &cfg);
    let wrap = dist(&e(359.0), &e(0.0));
    let ten = dist(&e(0.0), &e(10.0));
    let oh = one_hot_doa(137.0);
    let unit = oh.iter().sum::<f64>() == 1.0 && oh.len() == ONE_HOT_DIM && oh[137] == 1.0;
    let entry1 = cyc_pos(
        0.0,
        &EmbeddingConfig {
            dim: 40,
            alpha: 20.0,
            ..cfg.clone()
        },
    )[1];
    let expected1 = 20f64.sin();
    outcome(
        periodic < 1e-12 && bounded && wrap < 10.0 * ten && unit && (entry1 - expected1).abs() < 1e-12,
        format!(
            "periodicity {periodic:.1e} (< 1e-12), bounded {bounded}, d(359,0) {wrap:.3} < 10 x d(0,10) {ten:.3}, \
             one-hot dim {} sum 1 {unit}, entry 1 at 0 rad {entry1:.5}"
        , oh.len()),
    )
}

fn c3_losses() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let s = noise(16000, &mut rng);
    let est: Vec<f64> = s
        .iter()
        .zip(noise(16000, &mut rng))
        .map(|(a, b)| a + 0.3 * b)
        .collect();
    let base = si_sdr(&est, &s).unwrap();
    let scaled: Vec<f64> = est.iter().map(|v| -3.7 * v).collect();
    let positive: Vec<f64> = est.iter().map(|v| 250.0 * v).collect();
    let scale_err = (si_sdr(&scaled, &s).unwrap() - base)
        .abs()
        .max((si_sdr(&positive, &s).unwrap() - base).abs());
    // Noise orthogonal to s with 1/100 of its energy.
    let mut n = noise(16000, &mut rng);
    let proj = n.iter().zip(&s).map(|(a, b)| a * b).sum::<f64>() / energy(&s);
    n.iter_mut().zip(&s).for_each(|(v, b)| *v -= proj * b);
    let g = (energy(&s) / 100.0 / energy(&n)).sqrt();
    let noisy: Vec<f64> = s.iter().zip(&n).map(|(a, b)| a + g * b).collect();
    let twenty = si_sdr(&noisy, &s).unwrap();
    let plan = StftPlan::new(StftConfig::default()).unwrap();
    let equal = mag_loss(&s, &s, &plan, 1e-8).unwrap().value;
    let zero = mag_loss(&vec![0.0; s.len()], &s, &plan, 1e-8)
        .unwrap()
        .value;
    outcome(
        scale_err < 1e-9 && (twenty - 20.0).abs() <= 0.01 && equal == 0.0 && (zero - 1.0).abs() < 1e-12,
        format!(
            "scale invariance {scale_err:.1e} (< 1e-9), orthogonal case {twenty:.4} dB (20 +- 0.01), \
             mag_loss equal {equal}, zero estimate {zero:.12}"
        ),
    )
}

fn c4_gradients() -> Outcome {
    let start = Instant::now();
    let checks = check_gradients(&tiny_config(), 48, 11, 1e-5).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let worst = checks
        .iter()
        .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
        .unwrap();
    outcome(
        worst.rel_error < 1e-4 && secs < 120.0,
        format!(
            "{} tensors, worst relative error {:.2e} ({}) (< 1e-4), {secs:.1} s (< 120 s)",
            checks.len(),
            worst.rel_error,
            worst.name
        ),
    )
}

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

fn max_diff(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn c5_equivariance() -> Outcome {
    let mut ps = ParamStore::new();
    let mut init = Init::new(ChaCha8Rng::seed_from_u64(5));
    let shared = FreqLinear::new(&mut ps, &mut init, "fl", 4, 33);
    let cross = Crossband::new(
        &mut ps,
        &mut init,
        "cb",
        &CrossbandDims {
            channels: 16,
            hidden: 4,
            kernel: 3,
            groups: 4,
            out_gain: 1.0,
        },
    );
    let narrow = Narrowband::new(
        &mut ps,
        &mut init,
        "nb",
        &NarrowbandDims {
            channels: 16,
            hidden: 16,
            kernel: 5,
            groups: 4,
            heads: 2,
            out_gain: 1.0,
        },
    );
    randomize(&mut ps, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    let x = random3((12, 33, 16), 8);
    let mut perm: Vec<usize> = (0..12).collect();
    perm.shuffle(&mut rng);
    let (y, _) = cross.forward(&ps, &shared, x.view()).unwrap();
    let (yp, _) = cross
        .forward(&ps, &shared, x.select(Axis(0), &perm).view())
        .unwrap();
    let cross_err = max_diff(&y.select(Axis(0), &perm), &yp);

    let x = random3((33, 12, 16), 9);
    let mut perm: Vec<usize> = (0..33).collect();
    perm.shuffle(&mut rng);
    let (y, _) = narrow.forward(&ps, x.view()).unwrap();
    let (yp, _) = narrow
        .forward(&ps, x.select(Axis(0), &perm).view())
        .unwrap();
    let narrow_err = max_diff(&y.select(Axis(0), &perm), &yp);
    outcome(
        cross_err < 1e-9 && narrow_err < 1e-9,
        format!("crossband frame permutation {cross_err:.1e}, narrowband frequency permutation {narrow_err:.1e} (< 1e-9)"),
    )
}

fn c6_parameters() -> Outcome {
    const REPORTED: f64 = 1.40e6;
    let n = DseNet::parameter_count(&ModelConfig::full()).unwrap() as f64;
    let dev = n / REPORTED - 1.0;
    outcome(
        dev.abs() <= 0.15,
        format!("{n} parameters, {:+.1}% from 1.40M (+-15%)", 100.0 * dev),
    )
}

fn files_under(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files_under(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

fn c7_scene() -> Outcome {
    // Superposition of a reverberant two-source render.
    let both = render_scene(&SceneSpec {
        mix_rms_db: None,
        ..two_talker_scene(8000, None)
    })
    .unwrap();
    let mut a = SceneSpec {
        mix_rms_db: None,
        ..two_talker_scene(8000, None)
    };
    let mut b = a.clone();
    a.sources.truncate(1);
    b.sources.remove(0);
    let sum =
        render_scene(&a).unwrap().mixture.samples() + render_scene(&b).unwrap().mixture.samples();
    let sup = (&sum - both.mixture.samples())
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));

    // Direct path from a source 1 m from the reference mic.
    let spec = SceneSpec {
        sources: vec![],
        ..two_talker_scene(16000, Some(0))
    };
    let mic = spec.geometry().mic_positions()[0];
    let rir = simulate_rir_at(&spec, [mic[0] + 1.0, mic[1], mic[2]]).unwrap();
    let h = &rir.per_mic[0];
    let peak = h
        .iter()
        .enumerate()
        .max_by(|x, y| x.1.abs().total_cmp(&y.1.abs()))
        .unwrap()
        .0;
    let expected = 16000.0 / 343.0;
    let delay_ok = (peak as f64 - expected).abs() <= 1.0;

    // Schroeder decay of a reverberant response.
    let rt60 = 0.4;
    let spec = SceneSpec {
        rt60,
        sources: vec![],
        n_samples: 16000,
        ..two_talker_scene(16000, None)
    };
    let rir = simulate_rir_at(&spec, [5.2, 4.4, 1.6]).unwrap();
    let measured = decay_time(&rir.per_mic[0], 16000).unwrap();
    let rt_dev = measured / rt60 - 1.0;

    let cfg = DatasetConfig {
        n_train: 2,
        n_val: 1,
        n_test: 1,
        duration_s: 0.5,
        ..DatasetConfig::default()
    };
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    generate_dataset(&cfg, d1.path()).unwrap();
    generate_dataset(&cfg, d2.path()).unwrap();
    let f1 = files_under(d1.path());
    let f2 = files_under(d2.path());
    let same = f1.len() == f2.len()
        && f1.iter().zip(&f2).all(|(p, q)| {
            p.strip_prefix(d1.path()).unwrap() == q.strip_prefix(d2.path()).unwrap()
                && fs::read(p).unwrap() == fs::read(q).unwrap()
        });
    outcome(
        sup < 1e-9 && delay_ok && rt_dev.abs() <= 0.2 && same,
        format!(
            "superposition {sup:.1e} (< 1e-9), direct path at {peak} samples (geometry {expected:.2} +- 1), \
             RT60 {measured:.3} s vs {rt60} s ({:+.1}%, +-20%), {} dataset files byte-identical {same}",
            100.0 * rt_dev,
            f1.len()
        ),
    )
}

fn c8_mvdr() -> Outcome {
    let geom = ArrayGeometry {
        center: [0.0; 3],
        radius: 0.03,
        n_mics: 3,
    };
    let d = steering(200.0, &geom, 129, 16000);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut cov = Array3::<Complex64>::zeros((129, 3, 3));
    for f in 0..129 {
        let a: Vec<Complex64> = (0..15)
            .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        for i in 0..3 {
            for j in 0..3 {
                cov[[f, i, j]] = (0..5).map(|k| a[i * 5 + k] * a[j * 5 + k].conj()).sum();
            }
        }
    }
    let w = mvdr_weights(&cov, &d, DEFAULT_LOADING).unwrap();
    let distortion = (0..129)
        .map(|f| {
            ((0..3)
                .map(|m| w.w[[f, m]].conj() * d[[f, m]])
                .sum::<Complex64>()
                - 1.0)
                .norm()
        })
        .fold(0.0, f64::max);
    let mut eye = Array3::<Complex64>::zeros((129, 3, 3));
    for f in 0..129 {
        for m in 0..3 {
            eye[[f, m, m]] = Complex64::new(1.0, 0.0);
        }
    }
    let wi = mvdr_weights(&eye, &d, DEFAULT_LOADING).unwrap();
    let identity =
        wi.w.iter()
            .zip(d.iter())
            .map(|(a, b)| (a - b / 3.0).norm())
            .fold(0.0, f64::max);

    // Free-field target and interferer; the weights come from the interferer alone.
    let scene = render_scene(&SceneSpec {
        mix_rms_db: None,
        ..two_talker_scene(32000, Some(0))
    })
    .unwrap();
    let interferer = &scene.per_source_images[1];
    let cfg = StftConfig::default();
    let source = CovarianceSource::Oracle(interferer.clone());
    let (out_i, _) =
        mvdr_extract(interferer, scene.doas[0], &scene.geometry, cfg, &source).unwrap();
    let suppression = db(energy(&interferer.channel_vec(0)) / energy(&out_i));
    outcome(
        distortion < 1e-10 && identity < 1e-12 && suppression >= 20.0,
        format!(
            "distortionless {distortion:.1e} (< 1e-10), identity weights vs d/M {identity:.1e} (< 1e-12), \
             interferer suppression {suppression:.1} dB (>= 20)"
        ),
    )
}

fn c9_harness() -> Outcome {
    let spec = GainSweepSpec {
        step_deg: 10.0,
        duration_s: 0.25,
        anechoic: true,
        ..GainSweepSpec::default()
    };
    let g = gain_pattern(&OracleBackend::InBeam, &spec).unwrap();
    let exact = g.rows.iter().all(|r| {
        if r.in_beam {
            r.gain_db.abs() < 1e-9
        } else {
            r.gain_db == spec.floor_db
        }
    });
    let scene = render_scene(&two_talker_scene(4000, Some(0))).unwrap();
    let mut ranked = true;
    let mut checked = 0;
    for k in 0..2 {
        let sweep = speaker_sweep(&OracleBackend::SpeakerImage(k), &scene, 30.0, 5.0).unwrap();
        for (doa, best) in sweep.best_speaker() {
            if dsenet::embed::in_beam(scene.doas[k], &ClueInput::new(doa, 30.0).unwrap()) {
                checked += 1;
                ranked &= best == k;
            }
        }
    }
    outcome(
        exact && ranked && checked > 0,
        format!(
            "in-beam oracle gain exact over {} directions {exact}, speaker-image oracle ranked first at {checked} in-beam clues {ranked}",
            g.rows.len()
        ),
    )
}

fn c10a_overfit() -> Outcome {
    const TARGET_DB: f64 = 10.0;
    const STEPS: usize = 300;
    let scene = render_scene(&two_talker_scene(16000, Some(0))).unwrap();
    let model = ModelConfig {
        n_blocks: 2,
        channels: 16,
        ffn_hidden: 16,
        ..ModelConfig::desk()
    };
    let mut trainer = Trainer::new(
        TrainConfig {
            model,
            ..TrainConfig::default()
        },
        None,
    )
    .unwrap();
    let clue = ClueInput::new(scene.doas[0], 30.0).unwrap();
    let ex = Example {
        mixture: scene.mixture.clone(),
        target: scene.reference_target(&[0], 0),
        choice: ClueChoice {
            clue,
            active: true,
            speaker: Some(0),
        },
    };
    let start = Instant::now();
    for _ in 0..STEPS {
        trainer.step(std::slice::from_ref(&ex)).unwrap();
    }
    let secs = start.elapsed().as_secs_f64();
    let est = trainer.extract(&scene.mixture, &clue).unwrap();
    let m = evaluate(&est, &scene.mixture.channel_vec(0), &ex.target).unwrap();
    outcome(
        m.si_sdri >= TARGET_DB,
        format!(
            "SI-SDRi {:.2} dB after {STEPS} steps (>= {TARGET_DB}), {secs:.0} s",
            m.si_sdri
        ),
    )
}

fn c10b_desk_training() -> Outcome {
    const SCENES: usize = 200;
    const EPOCHS: usize = 6;
    let data = DatasetConfig {
        n_speakers: 2,
        with_noise: false,
        anechoic: true,
        duration_s: 1.0,
        min_separation_deg: 30.0,
        seed: 10,
        ..DatasetConfig::default()
    };
    let scenes = |split: Split, n: usize| -> Vec<TrainScene> {
        (0..n)
            .map(|i| {
                let spec = sample_scene(&data, scene_seed(data.seed, split, i)).unwrap();
                TrainScene::from_render(&render_scene(&spec).unwrap())
            })
            .collect()
    };
    let train_set = scenes(Split::Train, SCENES);
    let test_set = scenes(Split::Test, 20);
    let cfg = TrainConfig {
        crop_s: Some(0.5),
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(cfg.clone(), None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let start = Instant::now();
    let mut order: Vec<usize> = (0..SCENES).collect();
    for epoch in 0..EPOCHS {
        trainer.set_lr(cfg.lr_at(epoch));
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Example> = chunk
                .iter()
                .map(|&i| make_example(&mut rng, &train_set[i], &cfg).unwrap())
                .collect();
            trainer.step(&batch).unwrap();
        }
    }
    let train_secs = start.elapsed().as_secs_f64();
    let sisdri = evaluate_scenes(&trainer, &test_set, 30.0).unwrap();
    let backend = NetBackend::from_checkpoint(&trainer.checkpoint(EPOCHS - 1)).unwrap();
    let spec = GainSweepSpec {
        step_deg: 15.0,
        duration_s: 1.0,
        anechoic: true,
        ..GainSweepSpec::default()
    };
    let contrast = gain_pattern(&backend, &spec).unwrap().summary[0].contrast_db;
    outcome(
        sisdri >= 5.0 && contrast >= 10.0,
        format!(
            "{SCENES} scenes, {} steps in {train_secs:.0} s: test SI-SDRi {sisdri:.2} dB (>= 5), \
             in-beam minus out-of-beam gain {contrast:.2} dB (>= 10)",
            trainer.steps()
        ),
    )
}

fn c11_stage2_contract() -> Outcome {
    let tone = inactive_target(32000, 16000);
    let level = db(energy(&tone) / tone.len() as f64);
    let n = 32768;
    let mut buf: Vec<Complex64> = (0..n)
        .map(|i| Complex64::new(if i < tone.len() { tone[i] } else { 0.0 }, 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let peak = (1..n / 2)
        .max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm()))
        .unwrap();
    let peak_hz = peak as f64 * 16000.0 / n as f64;
    let cfg = TrainConfig {
        stage: 2,
        ..TrainConfig::default()
    };
    let doas = vec![vec![30.0, 150.0], vec![80.0, 260.0, 300.0], vec![10.0]];
    let audit = audit_clues(&cfg, &doas, 1000, 12).unwrap();
    let inactive = audit.inactive_fraction();
    outcome(
        (level + 60.0).abs() <= 0.05 && (peak_hz - 20.0).abs() < 1.0 && (inactive - 0.1).abs() <= 0.02,
        format!(
            "tone {level:.3} dB RMS (-60 +- 0.05), peak {peak_hz:.2} Hz, inactive share {:.1}% of 1000 (10 +- 2)",
            100.0 * inactive
        ),
    )
}

#[test]
fn acceptance() {
    type Check = fn() -> Outcome;
    let criteria: [(&str, &str, Check, bool); 12] = [
        ("1", "STFT round trip", c1_stft_round_trip, true),
        ("2", "embeddings", c2_embeddings, true),
        ("3", "losses and metrics", c3_losses, true),
        ("4", "gradient check", c4_gradients, true),
        ("5", "structural equivariance", c5_equivariance, true),
        ("6", "parameter count", c6_parameters, true),
        ("7", "scene simulator", c7_scene, true),
        ("8", "MVDR", c8_mvdr, true),
        ("9", "harness oracles", c9_harness, true),
        ("10a", "tiny overfit", c10a_overfit, false),
        ("10b", "desk-scale training", c10b_desk_training, false),
        ("11", "stage-2 contract", c11_stage2_contract, true),
    ];
    let mut failed = Vec::new();
    // Written to the process stderr directly so the lines show without --nocapture.
    let mut err = std::io::stderr();
    for (id, name, check, enforced) in criteria {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let tag = if result.pass { "PASS" } else { "FAIL" };
        let note = if enforced || result.pass {
            ""
        } else {
            " [reported, not enforced]"
        };
        writeln!(err, "{tag} {id:>3} {name}: {}{note}", result.detail).unwrap();
        if enforced && !result.pass {
            failed.push(id);
        }
    }
    assert!(failed.is_empty(), "criteria failed: {failed:?}");
}
