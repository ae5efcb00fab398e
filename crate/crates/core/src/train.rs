//! Single optimization steps and the two-phase training loop.
//!
//! Phase 1 ("pretrain") fits the generator with the content-only GEN
//! objective. Phase 2 ("adversarial") reloads the phase-1 generator from disk,
//! builds a fresh discriminator and fresh optimizer states, and for every
//! batch performs discriminator updates followed by one generator update.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{error, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::haze::{images_to_network, mix_seed, SceneImage};
use crate::io::{load_image, Manifest, RunConfig};
use crate::loss::{
    adversarial_d_loss, adversarial_g_loss, combined_loss, feature_loss, l2_loss, smooth_l1_loss,
    LossComponents, LossReport, LossWeights, Variant,
};
use crate::metrics::{evaluate_pairs, Evaluation};
use crate::nn::checkpoint::FEATURES;
use crate::nn::{Checkpoint, Discriminator, FeatureNet, Generator, Module, NormMode, Normalized};
use crate::optim::{Adam, AdamConfig};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Side of the random square crop taken from every training image;
    /// 0 trains on full images, which must then share one size.
    pub crop: usize,
    pub pretrain_epochs: usize,
    pub adversarial_epochs: usize,
    /// Checkpoint cadence in epochs; the last epoch of a phase is always saved.
    pub checkpoint_every: usize,
    /// Validation cadence in epochs; 0 disables validation.
    pub validate_every: usize,
    /// Discriminator updates per generator update.
    pub d_steps: usize,
    /// Normalization mode of the generator when it produces fakes for a
    /// discriminator update.
    pub fake_norm: NormMode,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 4,
            crop: 256,
            pretrain_epochs: 500,
            adversarial_epochs: 500,
            checkpoint_every: 50,
            validate_every: 50,
            d_steps: 1,
            fake_norm: NormMode::Train,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Config("checkpoint_every must be at least 1".into()));
        }
        if self.d_steps == 0 {
            return Err(Error::Config("d_steps must be at least 1".into()));
        }
        if self.crop != 0 && self.crop < 4 {
            return Err(Error::Config(format!(
                "crop {} is below the 4x4 minimum",
                self.crop
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    pub clean: SceneImage,
    pub hazy: SceneImage,
}

/// Reads every pair of a manifest; training needs all of them.
pub fn load_pairs(manifest: &Manifest) -> Result<Vec<TrainingPair>> {
    manifest
        .records
        .iter()
        .map(|r| {
            let hazy = r.hazy_path.as_ref().ok_or_else(|| {
                Error::Param(format!(
                    "record {} has no hazy_path",
                    r.clean_path.display()
                ))
            })?;
            let clean = load_image(manifest.resolve(&r.clean_path))?;
            let hazy = load_image(manifest.resolve(hazy))?;
            if (clean.width(), clean.height()) != (hazy.width(), hazy.height()) {
                return Err(Error::shape(
                    "training pair",
                    format!(
                        "{} and its hazy image differ in size",
                        r.clean_path.display()
                    ),
                ));
            }
            Ok(TrainingPair { clean, hazy })
        })
        .collect()
}

/// A batch in network space, (N,3,H,W) each.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    pub hazy: Tensor<T>,
    pub clean: Tensor<T>,
}

impl<T: Scalar> Batch<T> {
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = &'a TrainingPair>) -> Result<Self> {
        let (clean, hazy): (Vec<_>, Vec<_>) = pairs
            .into_iter()
            .map(|p| (p.clean.clone(), p.hazy.clone()))
            .unzip();
        Ok(Batch {
            hazy: images_to_network(&hazy)?,
            clean: images_to_network(&clean)?,
        })
    }

    /// Same-position random `crop × crop` windows of each pair.
    pub fn cropped<R: Rng + ?Sized>(
        pairs: &[&TrainingPair],
        crop: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if crop == 0 {
            return Self::from_pairs(pairs.iter().copied());
        }
        let mut out = Vec::with_capacity(pairs.len());
        for p in pairs {
            let (w, h) = (p.clean.width(), p.clean.height());
            if w < crop || h < crop {
                return Err(Error::shape(
                    "batch",
                    format!("image {w}x{h} smaller than crop {crop}"),
                ));
            }
            let x0 = rng.random_range(0..=w - crop);
            let y0 = rng.random_range(0..=h - crop);
            out.push(TrainingPair {
                clean: p.clean.crop(x0, y0, crop, crop)?,
                hazy: p.hazy.crop(x0, y0, crop, crop)?,
            });
        }
        Self::from_pairs(&out)
    }

    pub fn len(&self) -> usize {
        self.hazy.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn adam_for<T: Scalar, M: Module<T>>(module: &M, config: AdamConfig) -> Result<Adam<T>> {
    Adam::new(config, module.parameter_names(), &module.parameters())
}

fn apply_grads<T: Scalar, M: Module<T>>(
    tape: &Tape<T>,
    vars: &[Var],
    module: &mut M,
    opt: &mut Adam<T>,
) -> Result<()> {
    let grads: Vec<Option<&Tensor<T>>> = vars.iter().map(|v| tape.grad(v)).collect();
    opt.step(&mut module.parameters_mut(), &grads)
}

fn check_finite(value: f64, phase: &str, opt_steps: u64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteLoss {
            step: opt_steps,
            phase: phase.into(),
            last_checkpoint: None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorStep {
    pub loss: f64,
    /// Mean probability assigned to real and to generated pairs.
    pub real_mean: f64,
    pub fake_mean: f64,
    /// Extremes over both probability maps.
    pub min: f64,
    pub max: f64,
}

/// One discriminator update on real `(hazy, clean)` and fake `(hazy, G(hazy))`
/// pairs. The generator runs without a tape and is not modified.
pub fn train_step_discriminator<T: Scalar>(
    generator: &Generator<T>,
    disc: &mut Discriminator<T>,
    opt: &mut Adam<T>,
    batch: &Batch<T>,
    fake_norm: NormMode,
) -> Result<DiscriminatorStep> {
    let fake = generator.infer(&batch.hazy, fake_norm)?;
    let mut tape = Tape::new();
    let params = disc.bind(&mut tape, true);
    let hazy = tape.constant(batch.hazy.clone());
    let clean = tape.constant(batch.clean.clone());
    let fake = tape.constant(fake);
    let real_pair = tape.concat_channels(&hazy, &clean)?;
    let fake_pair = tape.concat_channels(&hazy, &fake)?;
    let (d_real, real_stats) = disc.forward(&mut tape, &params, &real_pair, NormMode::Train)?;
    let (d_fake, fake_stats) = disc.forward(&mut tape, &params, &fake_pair, NormMode::Train)?;
    let loss = adversarial_d_loss(&mut tape, &d_real, &d_fake)?;

    let (vr, vf) = (tape.value(&d_real), tape.value(&d_fake));
    let all = vr.data().iter().chain(vf.data()).map(|v| v.as_f64());
    let (min, max) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    let report = DiscriminatorStep {
        loss: tape.scalar_value(&loss).as_f64(),
        real_mean: vr.mean().as_f64(),
        fake_mean: vf.mean().as_f64(),
        min,
        max,
    };
    check_finite(report.loss, "discriminator", opt.steps())?;
    tape.backward(loss)?;
    apply_grads(&tape, &params, disc, opt)?;
    disc.update_running_stats(&real_stats)?;
    disc.update_running_stats(&fake_stats)?;
    Ok(report)
}

/// Graph of the generator objective for one batch. The feature net and the
/// discriminator are bound as constants; the discriminator is evaluated only
/// when the adversarial weight is positive.
#[allow(clippy::too_many_arguments)]
pub fn generator_objective<T: Scalar, G: Graph<T>>(
    g: &mut G,
    gen: &Generator<T>,
    gen_params: &[G::Node],
    disc: Option<&Discriminator<T>>,
    features: &FeatureNet<T>,
    weights: &LossWeights,
    batch: &Batch<T>,
) -> Result<(G::Node, LossReport, Vec<crate::kernels::BatchStats<T>>)> {
    let hazy = g.constant(batch.hazy.clone());
    let clean = g.constant(batch.clean.clone());
    let (out, stats) = gen.forward(g, gen_params, &hazy, NormMode::Train)?;
    let mut parts = LossComponents {
        l2: Some(l2_loss(g, &clean, &out)?),
        s1: Some(smooth_l1_loss(g, &clean, &out)?),
        feat: None,
        adv: None,
    };
    if weights.feat > 0.0 {
        let fp = features.bind(g, false);
        parts.feat = Some(feature_loss(g, features, &fp, &clean, &out, weights.tap)?);
    }
    if weights.adv > 0.0 {
        let disc = disc.ok_or_else(|| {
            Error::Param("adversarial weight is positive but no discriminator was given".into())
        })?;
        let dp = disc.bind(g, false);
        let pair = g.concat_channels(&hazy, &out)?;
        let (p, _) = disc.forward(g, &dp, &pair, NormMode::Train)?;
        parts.adv = Some(adversarial_g_loss(g, &p)?);
    }
    let (total, report) = combined_loss(g, weights, &parts)?;
    Ok((total, report, stats))
}

/// One generator update on the weighted objective; the discriminator is not modified.
pub fn train_step_generator<T: Scalar>(
    gen: &mut Generator<T>,
    opt: &mut Adam<T>,
    disc: Option<&Discriminator<T>>,
    features: &FeatureNet<T>,
    weights: &LossWeights,
    batch: &Batch<T>,
) -> Result<LossReport> {
    let mut tape = Tape::new();
    let params = gen.bind(&mut tape, true);
    let (total, report, stats) =
        generator_objective(&mut tape, gen, &params, disc, features, weights, batch)?;
    check_finite(report.total, "generator", opt.steps())?;
    tape.backward(total)?;
    apply_grads(&tape, &params, gen, opt)?;
    gen.update_running_stats(&stats)?;
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pretrain,
    Adversarial,
}

impl Phase {
    fn name(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Adversarial => "adversarial",
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub phase: Phase,
    pub epoch: usize,
    pub d_loss: Option<f64>,
    pub g_adv: Option<f64>,
    pub l2: Option<f64>,
    pub s1: Option<f64>,
    pub feat: Option<f64>,
    pub total: f64,
    pub wall_ms: f64,
    /// Extremes of the discriminator outputs in this step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_max: Option<f64>,
}

impl LogRecord {
    /// Weighted content terms (everything except the adversarial term).
    pub fn content(&self, w: &LossWeights) -> f64 {
        self.l2.unwrap_or(0.0) * w.l2
            + self.s1.unwrap_or(0.0) * w.s1
            + self.feat.unwrap_or(0.0) * w.feat
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub phase: Phase,
    pub epoch: usize,
    pub step: u64,
    pub psnr: f64,
    pub ssim: f64,
    pub baseline_psnr: f64,
    pub baseline_ssim: f64,
    pub count: usize,
    pub skipped: usize,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub log: Vec<LogRecord>,
    pub validation: Vec<ValidationRecord>,
    /// In save order.
    pub checkpoints: Vec<PathBuf>,
    pub generator: Generator<f32>,
    pub discriminator: Option<Discriminator<f32>>,
}

impl TrainOutcome {
    pub fn last_checkpoint(&self) -> Option<&Path> {
        self.checkpoints.last().map(PathBuf::as_path)
    }
}

/// Runs the configured generator in eval mode over whole images.
pub fn dehaze_image(gen: &Generator<f32>, hazy: &SceneImage) -> Result<SceneImage> {
    let out = gen.infer(&hazy.to_network::<f32>(), NormMode::Eval)?;
    SceneImage::from_network(&out, 0)
}

pub fn validate(gen: &Generator<f32>, pairs: &[TrainingPair]) -> Evaluation {
    let items: Vec<(SceneImage, SceneImage)> = pairs
        .iter()
        .map(|p| (p.clean.clone(), p.hazy.clone()))
        .collect();
    evaluate_pairs(&items, |_, hazy| dehaze_image(gen, hazy))
}

struct JsonlWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl JsonlWriter {
    fn create(path: PathBuf) -> Result<Self> {
        let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(JsonlWriter {
            out: BufWriter::new(f),
            path,
        })
    }

    fn write<S: Serialize>(&mut self, rec: &S) -> Result<()> {
        let line = serde_json::to_string(rec).expect("serializable record");
        writeln!(self.out, "{line}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

/// Loads both manifests named in `cfg` and trains.
pub fn train_loop(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train = load_pairs(&Manifest::load(&cfg.train_manifest)?)?;
    let val = match &cfg.val_manifest {
        Some(p) => load_pairs(&Manifest::load(p)?)?,
        None => Vec::new(),
    };
    train_on(cfg, &train, &val)
}

struct Run<'a> {
    cfg: &'a RunConfig,
    train: &'a [TrainingPair],
    val: &'a [TrainingPair],
    features: FeatureNet<f32>,
    log: JsonlWriter,
    val_log: JsonlWriter,
    outcome_log: Vec<LogRecord>,
    validation: Vec<ValidationRecord>,
    checkpoints: Vec<PathBuf>,
    /// Newest weights known to be finite: this run's last save or the warm start.
    last_good: Option<PathBuf>,
    step: u64,
}

impl Run<'_> {
    fn batches(&self, rng: &mut ChaCha8Rng) -> Result<Vec<Batch<f32>>> {
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        if self.cfg.train.shuffle {
            order.shuffle(rng);
        }
        order
            .chunks(self.cfg.train.batch_size)
            .map(|idx| {
                let pairs: Vec<&TrainingPair> = idx.iter().map(|&i| &self.train[i]).collect();
                Batch::cropped(&pairs, self.cfg.train.crop, rng)
            })
            .collect()
    }

    fn record(&mut self, rec: LogRecord) -> Result<()> {
        self.log.write(&rec)?;
        self.outcome_log.push(rec);
        Ok(())
    }

    fn maybe_validate(
        &mut self,
        gen: &Generator<f32>,
        phase: Phase,
        epoch: usize,
        last: bool,
    ) -> Result<()> {
        let every = self.cfg.train.validate_every;
        if self.val.is_empty() || every == 0 || !(epoch.is_multiple_of(every) || last) {
            return Ok(());
        }
        let ev = validate(gen, self.val);
        let rec = ValidationRecord {
            phase,
            epoch,
            step: self.step,
            psnr: ev.model.mean_psnr,
            ssim: ev.model.mean_ssim,
            baseline_psnr: ev.baseline.mean_psnr,
            baseline_ssim: ev.baseline.mean_ssim,
            count: ev.model.count,
            skipped: ev.model.skipped,
        };
        info!(
            "{} epoch {epoch}: validation psnr {:.3} ssim {:.4}",
            phase.name(),
            rec.psnr,
            rec.ssim
        );
        self.val_log.write(&rec)?;
        self.validation.push(rec);
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn save(
        &mut self,
        name: &str,
        epoch: usize,
        phase: Phase,
        weights: &LossWeights,
        gen: &Generator<f32>,
        opt_g: &Adam<f32>,
        disc: Option<(&Discriminator<f32>, &Adam<f32>)>,
    ) -> Result<()> {
        let mut ck = Checkpoint::new();
        ck.set_meta("variant", name);
        ck.set_meta("phase", phase.name());
        ck.set_meta("epoch", epoch);
        ck.set_meta("step", self.step);
        ck.set_meta("seed", self.cfg.seed);
        ck.set_meta(
            "loss_weights",
            serde_json::to_string(weights).expect("serializable"),
        );
        ck.insert_generator(gen);
        ck.insert_state("adam.generator", opt_g.state_dict());
        ck.set_meta("adam.generator.steps", opt_g.steps());
        if let Some((d, opt_d)) = disc {
            ck.insert_discriminator(d);
            ck.insert_state("adam.discriminator", opt_d.state_dict());
            ck.set_meta("adam.discriminator.steps", opt_d.steps());
        }
        let path = self.cfg.out_dir.join(format!("{name}-{epoch}.ckpt"));
        ck.save(&path)?;
        info!("saved {}", path.display());
        self.last_good = Some(path.clone());
        self.checkpoints.push(path);
        Ok(())
    }

    fn halt(&self, e: Error, phase: Phase) -> Error {
        let last = self.last_good.clone();
        match e {
            Error::NonFiniteLoss { .. } => {
                error!(
                    "non-finite loss at step {}; last good checkpoint {last:?}",
                    self.step
                );
                Error::NonFiniteLoss {
                    step: self.step,
                    phase: phase.name().into(),
                    last_checkpoint: last,
                }
            }
            Error::NonFiniteGradient { .. } => {
                error!("{e} at step {}; last good checkpoint {last:?}", self.step);
                e
            }
            other => other,
        }
    }

    fn pretrain(&mut self) -> Result<Option<Generator<f32>>> {
        let epochs = self.cfg.train.pretrain_epochs;
        if epochs == 0 {
            return Ok(None);
        }
        let weights = Variant::Gen.weights();
        let mut gen =
            Generator::<f32>::new(self.cfg.generator.clone(), mix_seed(self.cfg.seed, 1))?;
        let mut opt = adam_for(&gen, self.cfg.adam)?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.cfg.seed, 3));
        for epoch in 1..=epochs {
            for batch in self.batches(&mut rng)? {
                let t0 = Instant::now();
                let r = train_step_generator(
                    &mut gen,
                    &mut opt,
                    None,
                    &self.features,
                    &weights,
                    &batch,
                )
                .map_err(|e| self.halt(e, Phase::Pretrain))?;
                self.step += 1;
                self.record(LogRecord {
                    step: self.step,
                    phase: Phase::Pretrain,
                    epoch,
                    d_loss: None,
                    g_adv: r.adv,
                    l2: r.l2,
                    s1: r.s1,
                    feat: r.feat,
                    total: r.total,
                    wall_ms: t0.elapsed().as_secs_f64() * 1e3,
                    d_min: None,
                    d_max: None,
                })?;
            }
            let last = epoch == epochs;
            if epoch.is_multiple_of(self.cfg.train.checkpoint_every) || last {
                self.save(
                    Variant::Gen.name(),
                    epoch,
                    Phase::Pretrain,
                    &weights,
                    &gen,
                    &opt,
                    None,
                )?;
            }
            self.maybe_validate(&gen, Phase::Pretrain, epoch, last)?;
        }
        Ok(Some(gen))
    }

    fn adversarial(&mut self, warm: PathBuf) -> Result<(Generator<f32>, Discriminator<f32>)> {
        let cfg = self.cfg;
        let weights = cfg.phase2_weights();
        let mut gen = Checkpoint::load(&warm)?.generator::<f32>()?;
        self.last_good.get_or_insert(warm.clone());
        info!("adversarial phase warm-started from {}", warm.display());
        let mut disc = Discriminator::<f32>::new(cfg.discriminator.clone(), mix_seed(cfg.seed, 2))?;
        let mut opt_g = adam_for(&gen, cfg.adam)?;
        let mut opt_d = adam_for(&disc, cfg.adam)?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 4));
        let name = cfg.variant.name();
        for epoch in 1..=cfg.train.adversarial_epochs {
            for batch in self.batches(&mut rng)? {
                let t0 = Instant::now();
                let mut d = None;
                for _ in 0..cfg.train.d_steps {
                    let r = train_step_discriminator(
                        &gen,
                        &mut disc,
                        &mut opt_d,
                        &batch,
                        cfg.train.fake_norm,
                    )
                    .map_err(|e| self.halt(e, Phase::Adversarial))?;
                    d = Some(r);
                }
                let d = d.expect("at least one discriminator step");
                let r = train_step_generator(
                    &mut gen,
                    &mut opt_g,
                    Some(&disc),
                    &self.features,
                    &weights,
                    &batch,
                )
                .map_err(|e| self.halt(e, Phase::Adversarial))?;
                self.step += 1;
                self.record(LogRecord {
                    step: self.step,
                    phase: Phase::Adversarial,
                    epoch,
                    d_loss: Some(d.loss),
                    g_adv: r.adv,
                    l2: r.l2,
                    s1: r.s1,
                    feat: r.feat,
                    total: r.total,
                    wall_ms: t0.elapsed().as_secs_f64() * 1e3,
                    d_min: Some(d.min),
                    d_max: Some(d.max),
                })?;
            }
            let last = epoch == cfg.train.adversarial_epochs;
            if epoch % cfg.train.checkpoint_every == 0 || last {
                self.save(
                    name,
                    epoch,
                    Phase::Adversarial,
                    &weights,
                    &gen,
                    &opt_g,
                    Some((&disc, &opt_d)),
                )?;
            }
            self.maybe_validate(&gen, Phase::Adversarial, epoch, last)?;
        }
        Ok((gen, disc))
    }
}

fn feature_net(cfg: &RunConfig) -> Result<FeatureNet<f32>> {
    let mut net = FeatureNet::new(&cfg.features)?;
    if let Some(p) = &cfg.feature_weights {
        Checkpoint::load(p)?.load_module(FEATURES, &mut net)?;
    }
    Ok(net)
}

/// Trains on in-memory pairs, writing logs and checkpoints under `cfg.out_dir`.
pub fn train_on(
    cfg: &RunConfig,
    train: &[TrainingPair],
    val: &[TrainingPair],
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Param("training set is empty".into()));
    }
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let mut run = Run {
        cfg,
        train,
        val,
        features: feature_net(cfg)?,
        log: JsonlWriter::create(cfg.out_dir.join("train.jsonl"))?,
        val_log: JsonlWriter::create(cfg.out_dir.join("validation.jsonl"))?,
        outcome_log: Vec::new(),
        validation: Vec::new(),
        checkpoints: Vec::new(),
        last_good: None,
        step: 0,
    };
    let pretrained = run.pretrain()?;
    let run_phase2 = cfg.train.adversarial_epochs > 0 && cfg.phase2_weights().adv > 0.0;
    let (generator, discriminator) = if run_phase2 {
        let warm = match (&pretrained, &cfg.warm_start) {
            (Some(_), _) => run
                .checkpoints
                .last()
                .cloned()
                .expect("pretraining saves a checkpoint"),
            (None, Some(p)) => p.clone(),
            (None, None) => {
                return Err(Error::Config(
                    "adversarial phase needs pretrain_epochs > 0 or a warm_start checkpoint".into(),
                ))
            }
        };
        let (g, d) = run.adversarial(warm)?;
        (g, Some(d))
    } else {
        let g = match pretrained {
            Some(g) => g,
            None => {
                return Err(Error::Config(
                    "nothing to train: no pretraining and no adversarial phase".into(),
                ))
            }
        };
        (g, None)
    };
    Ok(TrainOutcome {
        log: run.outcome_log,
        validation: run.validation,
        checkpoints: run.checkpoints,
        generator,
        discriminator,
    })
}
