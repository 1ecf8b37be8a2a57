//! Two-stage training loop.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{MultichannelWaveform, StftPlan};
use crate::embed::{in_beam, wrap_degrees, ClueInput, SUPPORTED_WIDTHS};
use crate::error::{Error, Result};
use crate::nn::{Adam, Checkpoint, ClueCodes, DseNet, Grads, ModelConfig, ParamStore};
use crate::objectives::{LossConfig, LossValue};
use crate::scene::{load_scene, read_manifest, LoadedScene, SceneRender, Split};

/// Frequency and level of the target used when the beam holds no speaker.
pub const INACTIVE_TONE_HZ: f64 = 20.0;
pub const INACTIVE_TONE_DB: f64 = -60.0;

/// 20 Hz sine at -60 dB RMS with zero phase.
pub fn inactive_target(len: usize, sample_rate: u32) -> Vec<f64> {
    let amp = 10f64.powf(INACTIVE_TONE_DB / 20.0) * std::f64::consts::SQRT_2;
    let w = 2.0 * std::f64::consts::PI * INACTIVE_TONE_HZ / sample_rate as f64;
    (0..len).map(|n| amp * (w * n as f64).sin()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub stage: u8,
    /// Defaults to 20 for stage 1 and 10 for stage 2 when absent.
    pub epochs: Option<usize>,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    /// Defaults to the stage's weighting when absent.
    pub lambda: Option<f64>,
    pub widths: Vec<f64>,
    /// Beamwidth used to define stage-1 targets.
    pub stage1_width: f64,
    pub active_beam_fraction: f64,
    pub seed: u64,
    pub model: ModelConfig,
    /// Random crop length in seconds; whole scenes when absent.
    pub crop_s: Option<f64>,
    /// Global gradient-norm clip.
    pub grad_clip: Option<f64>,
    /// Stops after this many optimizer steps.
    pub max_steps: Option<usize>,
    /// Validation scenes scored after each epoch (0 disables).
    pub val_scenes: usize,
    pub out_dir: PathBuf,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage: 1,
            epochs: None,
            batch_size: 4,
            lr: 1e-3,
            lr_decay: 0.99,
            lambda: None,
            widths: SUPPORTED_WIDTHS.to_vec(),
            stage1_width: 30.0,
            active_beam_fraction: 0.9,
            seed: 0,
            model: ModelConfig::desk(),
            crop_s: None,
            grad_clip: None,
            max_steps: None,
            val_scenes: 0,
            out_dir: PathBuf::from("runs"),
        }
    }
}

impl TrainConfig {
    pub fn epochs(&self) -> usize {
        self.epochs.unwrap_or(if self.stage == 1 { 20 } else { 10 })
    }

    pub fn loss(&self) -> LossConfig {
        let base = if self.stage == 1 {
            LossConfig::stage1()
        } else {
            LossConfig::stage2()
        };
        LossConfig {
            lambda: self.lambda.unwrap_or(base.lambda),
            ..base
        }
    }

    /// Learning rate during epoch `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi(epoch as i32)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss().validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.stage != 1 && self.stage != 2 {
            return bad(format!("stage must be 1 or 2, got {}", self.stage));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.lr > 0.0) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr must be positive and lr_decay in (0, 1]".into());
        }
        if !(self.active_beam_fraction > 0.0 && self.active_beam_fraction < 1.0) {
            return bad(format!(
                "active_beam_fraction {} not in (0, 1)",
                self.active_beam_fraction
            ));
        }
        if self.widths.is_empty() {
            return bad("width set is empty".into());
        }
        for w in self
            .widths
            .iter()
            .chain(std::iter::once(&self.stage1_width))
        {
            crate::embed::beamwidth_code(*w)?;
        }
        if let Some(c) = self.crop_s {
            if !(c > 0.0) {
                return bad("crop_s must be positive".into());
            }
        }
        Ok(())
    }
}

/// In-memory training scene: mixture, per-speaker reference images, DOAs.
#[derive(Debug, Clone)]
pub struct TrainScene {
    pub mixture: MultichannelWaveform,
    pub images: Vec<Vec<f64>>,
    pub doas: Vec<f64>,
}

impl From<LoadedScene> for TrainScene {
    fn from(s: LoadedScene) -> Self {
        Self {
            mixture: s.mixture,
            images: s.images,
            doas: s.entry.doas,
        }
    }
}

impl TrainScene {
    pub fn from_render(r: &SceneRender) -> Self {
        Self {
            mixture: r.mixture.clone(),
            images: r
                .per_source_images
                .iter()
                .map(|i| i.channel_vec(0))
                .collect(),
            doas: r.doas.clone(),
        }
    }
}

/// A sampled clue and whether its beam holds any speaker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClueChoice {
    pub clue: ClueInput,
    pub active: bool,
    /// Speaker the clue was drawn around, for active clues.
    pub speaker: Option<usize>,
}

/// Draws a training clue for a scene with the given speaker DOAs.
///
/// Stage 1 points at a random speaker with the nominal width. Stage 2 draws a
/// width from the set, then with probability `active_beam_fraction` a
/// direction within that width of a random speaker, otherwise a direction
/// whose beam holds no speaker.
pub fn sample_clue(rng: &mut ChaCha8Rng, doas: &[f64], cfg: &TrainConfig) -> Result<ClueChoice> {
    if doas.is_empty() {
        return Err(Error::Input("scene has no speakers".into()));
    }
    let k = rng.random_range(0..doas.len());
    if cfg.stage == 1 {
        return Ok(ClueChoice {
            clue: ClueInput::new(doas[k], cfg.stage1_width)?,
            active: true,
            speaker: Some(k),
        });
    }
    let width = cfg.widths[rng.random_range(0..cfg.widths.len())];
    if rng.random::<f64>() >= cfg.active_beam_fraction {
        for _ in 0..1000 {
            let clue = ClueInput::new(rng.random_range(0.0..360.0), width)?;
            if !doas.iter().any(|&d| in_beam(d, &clue)) {
                return Ok(ClueChoice {
                    clue,
                    active: false,
                    speaker: None,
                });
            }
        }
        log::debug!("no empty beam of width {width} exists; drawing an active clue");
    }
    let offset = rng.random_range(-width..=width);
    Ok(ClueChoice {
        clue: ClueInput::new(wrap_degrees(doas[k] + offset), width)?,
        active: true,
        speaker: Some(k),
    })
}

/// Active and inactive counts over `n` sampled clues.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClueAudit {
    pub active: usize,
    pub inactive: usize,
}

impl ClueAudit {
    pub fn inactive_fraction(&self) -> f64 {
        self.inactive as f64 / (self.active + self.inactive).max(1) as f64
    }
}

pub fn audit_clues(
    cfg: &TrainConfig,
    scenes: &[Vec<f64>],
    n: usize,
    seed: u64,
) -> Result<ClueAudit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut audit = ClueAudit {
        active: 0,
        inactive: 0,
    };
    for i in 0..n {
        let c = sample_clue(&mut rng, &scenes[i % scenes.len()], cfg)?;
        if c.active {
            audit.active += 1;
        } else {
            audit.inactive += 1;
        }
    }
    Ok(audit)
}

/// One training example: mixture segment, target and clue.
#[derive(Debug, Clone)]
pub struct Example {
    pub mixture: MultichannelWaveform,
    pub target: Vec<f64>,
    pub choice: ClueChoice,
}

/// Builds an example from a scene: clue, optional crop, and the target as the
/// sum of in-beam reference images (or the inactive tone).
pub fn make_example(
    rng: &mut ChaCha8Rng,
    scene: &TrainScene,
    cfg: &TrainConfig,
) -> Result<Example> {
    let choice = sample_clue(rng, &scene.doas, cfg)?;
    let len = scene.mixture.len();
    let fs = scene.mixture.sample_rate();
    let (start, n) = match cfg.crop_s {
        Some(c) => {
            let n = ((c * fs as f64).round() as usize).min(len);
            (rng.random_range(0..=len - n), n)
        }
        None => (0, len),
    };
    let mixture = MultichannelWaveform::new(
        scene
            .mixture
            .samples()
            .slice(ndarray::s![.., start..start + n])
            .to_owned(),
        fs,
    )?;
    let target = if choice.active {
        let mut t = vec![0.0; n];
        for (img, &doa) in scene.images.iter().zip(&scene.doas) {
            if in_beam(doa, &choice.clue) {
                for (o, v) in t.iter_mut().zip(&img[start..start + n]) {
                    *o += v;
                }
            }
        }
        t
    } else {
        inactive_target(n, fs)
    };
    Ok(Example {
        mixture,
        target,
        choice,
    })
}

/// One row of the loss curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub mag: f64,
    pub si_sdr: f64,
}

/// Optimizer state around the network.
pub struct Trainer {
    pub net: DseNet,
    pub params: ParamStore<f32>,
    pub cfg: TrainConfig,
    plan: StftPlan,
    opt: Adam<f32>,
    loss: LossConfig,
    steps: usize,
}

impl Trainer {
    /// Fresh parameters, or those of `init` when resuming or starting stage 2.
    pub fn new(cfg: TrainConfig, init: Option<&Checkpoint>) -> Result<Self> {
        cfg.validate()?;
        let (net, params) = match init {
            Some(ck) => {
                if ck.config != cfg.model {
                    log::info!("using the model configuration stored in the checkpoint");
                }
                ck.restore::<f32>()?
            }
            None => {
                let (net, ps) = DseNet::new(cfg.model.clone(), cfg.seed)?;
                (net, ps.cast())
            }
        };
        let plan = StftPlan::new(net.config.stft)?;
        let opt = Adam::new(&params, cfg.lr);
        let loss = cfg.loss();
        Ok(Self {
            net,
            params,
            cfg,
            plan,
            opt,
            loss,
            steps: 0,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn bw_enabled(&self) -> bool {
        self.cfg.stage == 2
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.opt.lr = lr;
    }

    /// Batch-averaged loss and gradient followed by one optimizer update.
    /// Parameters are left untouched when the loss or update is not finite.
    pub fn step(&mut self, batch: &[Example]) -> Result<LossValue> {
        let mut grads: Grads<f32> = self.params.zeros_like();
        let mut acc = LossValue {
            total: 0.0,
            mag: 0.0,
            si_sdr: 0.0,
            degenerate_reference: false,
        };
        for ex in batch {
            let codes = ClueCodes::new(&self.net.config.embed, &ex.choice.clue)?;
            let v = self.net.loss_and_grad(
                &self.params,
                &self.plan,
                &ex.mixture,
                &ex.target,
                &codes,
                self.bw_enabled(),
                &self.loss,
                &mut grads,
            )?;
            acc.total += v.total;
            acc.mag += v.mag;
            acc.si_sdr += v.si_sdr;
            acc.degenerate_reference |= v.degenerate_reference;
        }
        let n = batch.len() as f64;
        acc.total /= n;
        acc.mag /= n;
        acc.si_sdr /= n;
        grads.scale(1.0 / n as f32);
        if !grads.all_finite() {
            return Err(Error::Numeric("non-finite gradient".into()));
        }
        if let Some(clip) = self.cfg.grad_clip {
            let norm = grads.global_norm();
            if norm > clip {
                grads.scale((clip / norm) as f32);
            }
        }
        let backup = self.params.clone();
        self.opt.update(&mut self.params, &grads);
        if !self.params.all_finite() {
            self.params = backup;
            return Err(Error::Numeric("parameters became non-finite".into()));
        }
        self.steps += 1;
        Ok(acc)
    }

    pub fn extract(&self, x: &MultichannelWaveform, clue: &ClueInput) -> Result<Vec<f64>> {
        let codes = ClueCodes::new(&self.net.config.embed, clue)?;
        self.net
            .extract(&self.params, &self.plan, x, &codes, self.bw_enabled())
    }

    pub fn checkpoint(&self, epoch: usize) -> Checkpoint {
        Checkpoint::from_params(&self.net.config, self.cfg.stage, epoch, &self.params)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub epochs: usize,
    pub steps: usize,
    pub checkpoint: PathBuf,
    pub curve: Vec<StepRecord>,
    pub val_si_sdri: Vec<f64>,
}

fn write_curve(path: &Path, curve: &[StepRecord]) -> Result<()> {
    let mut text = String::from("epoch,step,lr,loss,mag,si_sdr\n");
    for r in curve {
        text.push_str(&format!(
            "{},{},{:.6e},{:.6},{:.6},{:.4}\n",
            r.epoch, r.step, r.lr, r.loss, r.mag, r.si_sdr
        ));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Mean SI-SDRi over scenes, with each speaker as the target whose beam
/// holds no other speaker.
pub fn evaluate_scenes(trainer: &Trainer, scenes: &[TrainScene], width: f64) -> Result<f64> {
    let mut scores = Vec::new();
    for s in scenes {
        let mix0 = s.mixture.channel_vec(0);
        for (k, &doa) in s.doas.iter().enumerate() {
            let clue = ClueInput::new(doa, width)?;
            if s.doas
                .iter()
                .enumerate()
                .any(|(j, &d)| j != k && in_beam(d, &clue))
            {
                continue;
            }
            let est = trainer.extract(&s.mixture, &clue)?;
            scores.push(crate::objectives::evaluate(&est, &mix0, &s.images[k])?.si_sdri);
        }
    }
    if scores.is_empty() {
        return Err(Error::Input(
            "no scene has an isolated speaker to score".into(),
        ));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Loads every scene of `split` listed in the manifest.
pub fn load_split(manifest: &Path, split: Split) -> Result<Vec<TrainScene>> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    read_manifest(manifest)?
        .iter()
        .filter(|e| e.split == split)
        .map(|e| load_scene(e, base).map(TrainScene::from))
        .collect()
}

/// Runs a full training stage from a dataset manifest and writes per-epoch
/// checkpoints and the loss curve to `cfg.out_dir`.
pub fn train(cfg: &TrainConfig, manifest: &Path, resume: Option<&Path>) -> Result<TrainReport> {
    cfg.validate()?;
    let init = match resume {
        Some(p) => Some(Checkpoint::load(p)?),
        None => None,
    };
    if cfg.stage == 2 && init.is_none() {
        return Err(Error::Config(
            "stage 2 needs a stage-1 checkpoint (--resume)".into(),
        ));
    }
    let train_set = load_split(manifest, Split::Train)?;
    if train_set.is_empty() {
        return Err(Error::Input(format!(
            "{} lists no training scenes",
            manifest.display()
        )));
    }
    let val_set: Vec<TrainScene> = if cfg.val_scenes > 0 {
        load_split(manifest, Split::Val)?
            .into_iter()
            .take(cfg.val_scenes)
            .collect()
    } else {
        Vec::new()
    };
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let start_epoch = match &init {
        Some(ck) if ck.stage == cfg.stage => ck.epoch + 1,
        _ => 0,
    };
    let mut trainer = Trainer::new(cfg.clone(), init.as_ref())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7a11);
    let mut curve = Vec::new();
    let mut val_scores = Vec::new();
    let last = cfg.out_dir.join(format!("stage{}_last.json", cfg.stage));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs_run = 0;
    'outer: for epoch in start_epoch..cfg.epochs() {
        let lr = cfg.lr_at(epoch);
        trainer.set_lr(lr);
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = chunk
                .iter()
                .map(|&i| make_example(&mut rng, &train_set[i], cfg))
                .collect::<Result<Vec<_>>>()?;
            for ex in &batch {
                if let Some(k) = ex.choice.speaker {
                    log::trace!(
                        "clue {:.1} deg around speaker {k}",
                        ex.choice.clue.theta_target
                    );
                }
            }
            let v = match trainer.step(&batch) {
                Ok(v) => v,
                Err(e @ Error::Numeric(_)) => {
                    let good = cfg
                        .out_dir
                        .join(format!("stage{}_last_good.json", cfg.stage));
                    trainer.checkpoint(epoch).save(&good)?;
                    write_curve(&cfg.out_dir.join("loss_curve.csv"), &curve)?;
                    log::error!("aborting: {e}; last good parameters in {}", good.display());
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            curve.push(StepRecord {
                epoch,
                step: trainer.steps(),
                lr,
                loss: v.total,
                mag: v.mag,
                si_sdr: v.si_sdr,
            });
            log::debug!(
                "epoch {epoch} step {} loss {:.4} si-sdr {:.2}",
                trainer.steps(),
                v.total,
                v.si_sdr
            );
            if cfg.max_steps.is_some_and(|m| trainer.steps() >= m) {
                epochs_run += 1;
                trainer.checkpoint(epoch).save(&last)?;
                break 'outer;
            }
        }
        epochs_run += 1;
        let ck = trainer.checkpoint(epoch);
        ck.save(
            &cfg.out_dir
                .join(format!("stage{}_epoch{epoch:03}.json", cfg.stage)),
        )?;
        ck.save(&last)?;
        if !val_set.is_empty() {
            let score = evaluate_scenes(&trainer, &val_set, cfg.stage1_width)?;
            log::info!("epoch {epoch}: validation SI-SDRi {score:.2} dB");
            val_scores.push(score);
        }
        let recent = &curve[curve
            .len()
            .saturating_sub(order.len().div_ceil(cfg.batch_size))..];
        let mean = recent.iter().map(|r| r.loss).sum::<f64>() / recent.len().max(1) as f64;
        log::info!("epoch {epoch}: mean loss {mean:.4}, lr {lr:.3e}");
    }
    write_curve(&cfg.out_dir.join("loss_curve.csv"), &curve)?;
    Ok(TrainReport {
        epochs: epochs_run,
        steps: trainer.steps(),
        checkpoint: last,
        curve,
        val_si_sdri: val_scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inactive_tone_level_and_frequency() {
        let x = inactive_target(64000, 16000);
        let db = crate::dsp::rms_db_mono(&x);
        assert!((db + 60.0).abs() < 0.05, "{db}");
        assert_eq!(x, inactive_target(64000, 16000));
        assert_eq!(x[0], 0.0);
    }

    #[test]
    fn learning_rate_schedule() {
        let cfg = TrainConfig::default();
        for e in 0..30 {
            assert!((cfg.lr_at(e) - 1e-3 * 0.99f64.powi(e as i32)).abs() < 1e-12);
        }
    }

    #[test]
    fn stage2_clues_follow_the_contract() {
        let cfg = TrainConfig {
            stage: 2,
            ..TrainConfig::default()
        };
        let doas = vec![10.0, 100.0, 230.0];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let c = sample_clue(&mut rng, &doas, &cfg).unwrap();
            assert!(SUPPORTED_WIDTHS.contains(&c.clue.theta_width));
            let any = doas.iter().any(|&d| in_beam(d, &c.clue));
            assert_eq!(any, c.active);
        }
    }

    #[test]
    fn stage1_clue_targets_a_speaker() {
        let cfg = TrainConfig::default();
        let doas = vec![10.0, 100.0];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let c = sample_clue(&mut rng, &doas, &cfg).unwrap();
            assert_eq!(c.clue.theta_target, doas[c.speaker.unwrap()]);
            assert_eq!(c.clue.theta_width, 30.0);
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for cfg in [
            TrainConfig {
                stage: 3,
                ..TrainConfig::default()
            },
            TrainConfig {
                active_beam_fraction: 1.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                widths: vec![60.0],
                ..TrainConfig::default()
            },
            TrainConfig {
                batch_size: 0,
                ..TrainConfig::default()
            },
        ] {
            assert!(matches!(
                cfg.validate(),
                Err(Error::Config(_)) | Err(Error::UnsupportedWidth { .. })
            ));
        }
    }
}
