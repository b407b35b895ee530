use std::time::Instant;

use ndarray::{concatenate, Axis};
use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;

use super::config::ExperimentConfig;
use super::record::{GanPhaseRecord, RetentionProbe};
use super::{sample_noise, uniform_labels, TaskContext};
use crate::augmentation::{ada_apply, ada_update, AdaConfig, AdaOp, ADA_P_CAP};
use crate::autograd::{ops, Array, Bound, Optimizer, Tensor, Variant};
use crate::error::{Error, Result};
use crate::losses::{discriminator_loss, gd_scale, generator_distillation_loss, generator_gan_loss, generator_loss, r1_penalty};
use crate::models::{Classifier, GanState, MatchingMode};
use crate::task_stream::{from_tanh_range, task_loader, to_tanh_range, Normalizer, TaskLoader};

/// Generator steps averaged into one loss-trace entry.
const LOSS_WINDOW: usize = 25;

/// The discriminator's "real" distribution for one step: real images of
/// current classes and previous-generator samples of earlier classes.
#[derive(Clone, Debug)]
pub struct SurrogateBatch {
    /// Real images in `[0, 1]`.
    pub real: Array,
    pub real_labels: Vec<usize>,
    /// Raw previous-generator output (images in `[−1, 1]` or features).
    pub synthetic: Option<Array>,
    pub synthetic_labels: Vec<usize>,
}

impl SurrogateBatch {
    pub fn labels(&self) -> Vec<usize> {
        self.real_labels.iter().chain(&self.synthetic_labels).copied().collect()
    }

    pub fn len(&self) -> usize {
        self.real_labels.len() + self.synthetic_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn synthetic_fraction(&self) -> f64 {
        self.synthetic_labels.len() as f64 / self.len().max(1) as f64
    }
}

/// Draws labels uniformly over `current ∪ previous`; current classes get a
/// random real sample, previous ones a fresh sample of the frozen previous
/// averaged generator.
pub fn build_surrogate_batch<R: Rng + ?Sized>(
    loader: &mut TaskLoader<'_>,
    gan: Option<&GanState>,
    current: &[usize],
    previous: &[usize],
    batch_size: usize,
    rng: &mut R,
) -> Result<SurrogateBatch> {
    let all: Vec<usize> = current.iter().chain(previous).copied().collect();
    let labels = uniform_labels(rng, &all, batch_size);
    let (mut real_labels, mut synthetic_labels) = (Vec::new(), Vec::new());
    for y in labels {
        if current.contains(&y) {
            real_labels.push(y);
        } else {
            synthetic_labels.push(y);
        }
    }
    let picks: Vec<usize> = real_labels
        .iter()
        .map(|&y| {
            loader
                .sample_of_class(y)
                .ok_or_else(|| Error::State(format!("no training sample of class {y}")))
        })
        .collect::<Result<_>>()?;
    let real = loader.index().gather(&picks).images;
    let synthetic = if synthetic_labels.is_empty() {
        None
    } else {
        let g = gan.ok_or_else(|| Error::State("previous classes requested before any generator exists".into()))?;
        let z = sample_noise(rng, synthetic_labels.len(), g.z_dim());
        Some(g.generate_previous(&z, &synthetic_labels, true)?)
    };
    Ok(SurrogateBatch {
        real,
        real_labels,
        synthetic,
        synthetic_labels,
    })
}

/// Settings one side of a discriminator step was augmented with.
#[derive(Clone, Debug, PartialEq)]
struct AdaSide {
    p: f64,
    ops: Vec<AdaOp>,
}

struct Pipeline<'a> {
    mode: MatchingMode,
    classifier: &'a Classifier,
    cp: Bound,
    normalizer: &'a Normalizer,
    ada: &'a AdaConfig,
}

impl Pipeline<'_> {
    fn ada_active(&self) -> bool {
        self.ada.enabled && self.mode != MatchingMode::Dfm
    }

    /// Augments `[0, 1]` images and maps them to the discriminator domain.
    fn from_unit(&self, unit: &Tensor, p: f64, rng: &mut ChaCha8Rng, log: &mut Vec<AdaSide>) -> Result<Tensor> {
        let p = if self.ada_active() { p } else { 0.0 };
        log.push(AdaSide {
            p,
            ops: self.ada.ops.clone(),
        });
        let aug = ada_apply(unit, p, self.ada, rng)?;
        match self.mode {
            MatchingMode::Ifm => self.classifier.extract_features(&self.cp, &self.normalizer.normalize_tensor(&aug)?),
            MatchingMode::Im => Ok(to_tanh_range(&aug)),
            MatchingMode::Dfm => unreachable!("feature-space samples are never augmented"),
        }
    }

    /// Generator output (tanh images or features) in the discriminator domain.
    fn from_generated(&self, x: &Tensor, p: f64, rng: &mut ChaCha8Rng, log: &mut Vec<AdaSide>) -> Result<Tensor> {
        match self.mode {
            MatchingMode::Dfm => {
                log.push(AdaSide { p: 0.0, ops: self.ada.ops.clone() });
                Ok(x.clone())
            }
            _ => self.from_unit(&from_tanh_range(x), p, rng, log),
        }
    }

    fn from_surrogate(&self, sb: &SurrogateBatch, p: f64, rng: &mut ChaCha8Rng, log: &mut Vec<AdaSide>) -> Result<Tensor> {
        match self.mode {
            MatchingMode::Dfm => {
                log.push(AdaSide { p: 0.0, ops: self.ada.ops.clone() });
                let mut parts = Vec::new();
                if !sb.real_labels.is_empty() {
                    let norm = self.normalizer.normalize(&sb.real)?;
                    parts.push(self.classifier.extract_features(&self.cp, &Tensor::constant(norm))?);
                }
                if let Some(s) = &sb.synthetic {
                    parts.push(Tensor::constant(s.clone()));
                }
                Ok(ops::concat(&parts, 0))
            }
            _ => {
                let mut unit = sb.real.clone();
                if let Some(s) = &sb.synthetic {
                    let s = s.mapv(|v| 0.5 * v + 0.5);
                    unit = concatenate(Axis(0), &[unit.view(), s.view()]).map_err(|e| Error::Shape(e.to_string()))?;
                }
                self.from_unit(&Tensor::constant(unit), p, rng, log)
            }
        }
    }
}

fn check_matching_space(gan: &GanState, classifier: &Classifier) -> Result<()> {
    let want = match gan.mode() {
        MatchingMode::Ifm | MatchingMode::Dfm => classifier.feature_shape(),
        MatchingMode::Im => classifier.input_shape(),
    };
    let got = gan.discriminator().arch().input;
    if want != got {
        return Err(Error::Shape(format!(
            "discriminator expects {got:?} inputs but the {} matching space is {want:?}",
            gan.mode().name()
        )));
    }
    if gan.mode() == MatchingMode::Dfm && gan.generator().sample_shape() != want {
        return Err(Error::Shape("feature generator does not emit the tapped feature shape".into()));
    }
    Ok(())
}

/// Mean absolute difference between the current and frozen previous
/// generator on previous classes with shared noise.
pub fn retention_probe(gan: &GanState, classes: &[usize], per_class: usize, seed: u64) -> Result<Option<RetentionProbe>> {
    if gan.previous().is_none() || classes.is_empty() || per_class == 0 {
        return Ok(None);
    }
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    let labels: Vec<usize> = classes.iter().flat_map(|&c| std::iter::repeat_n(c, per_class)).collect();
    let z = sample_noise(&mut rng, labels.len(), gan.z_dim());
    let mad = |a: &Array, b: &Array| a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64;
    let raw = mad(&gan.generate(&z, &labels, false)?, &gan.generate_previous(&z, &labels, false)?);
    let ema = mad(&gan.generate(&z, &labels, true)?, &gan.generate_previous(&z, &labels, true)?);
    Ok(Some(RetentionProbe {
        raw,
        ema,
        samples: labels.len(),
    }))
}

/// Trains the GAN for task `ctx.task` against the frozen classifier's
/// features until the image budget is consumed.
pub fn train_gan_task(
    gan: &mut GanState,
    classifier: &Classifier,
    ctx: &TaskContext<'_>,
    cfg: &ExperimentConfig,
    rng: &mut ChaCha8Rng,
) -> Result<GanPhaseRecord> {
    let start = Instant::now();
    check_matching_space(gan, classifier)?;
    let n = ctx.task;
    let current = ctx.current()?.to_vec();
    let previous = ctx.previous()?;
    if n >= 2 {
        gan.snapshot_previous();
    }
    gan.extend_classes(&current);
    let all: Vec<usize> = previous.iter().chain(&current).copied().collect();
    let g_cfg = &cfg.gan;
    let kappa = gd_scale(previous.len(), current.len())?;
    let budget = g_cfg.images_per_class * current.len();
    let b = g_cfg.batch_size;
    let mut loader = task_loader(ctx.train, ctx.seq, n, 1, rng.next_u64())?;
    let mut opt_g = Optimizer::new(Variant::Adam, g_cfg.lr_g, g_cfg.betas, 0.0);
    let mut opt_d = Optimizer::new(Variant::Adam, g_cfg.lr_d, g_cfg.betas, 0.0);
    let fp_prev = |g: &GanState| g.previous().map(|p| p.params.fingerprint() ^ p.ema.fingerprint().rotate_left(1));
    let mut rec = GanPhaseRecord {
        budget,
        kappa,
        ada_symmetric: true,
        classifier_fingerprint_before: classifier.params().fingerprint(),
        previous_generator_fingerprint_start: fp_prev(gan),
        ..GanPhaseRecord::default()
    };
    let pipe = Pipeline {
        mode: gan.mode(),
        classifier,
        cp: classifier.params().bind_constant(),
        normalizer: ctx.normalizer,
        ada: &cfg.augment.ada,
    };
    let mut p = gan.ada_probability().min(cfg.augment.ada.p_cap);
    let mut signs: Vec<f64> = Vec::new();
    let (mut win_d, mut win_g, mut win_gd, mut win_n) = (0.0, 0.0, 0.0, 0usize);
    let mut syn_count = 0usize;
    let mut d_loss_acc = 0.0;

    while rec.images_seen < budget {
        for _ in 0..g_cfg.d_steps_per_g_step {
            let sb = build_surrogate_batch(&mut loader, Some(gan), &current, &previous, b, rng)?;
            syn_count += sb.synthetic_labels.len();
            let mut log = Vec::with_capacity(2);
            let real_in = pipe.from_surrogate(&sb, p, rng, &mut log)?.detach();
            let real_labels = sb.labels();
            let y_f = uniform_labels(rng, &all, b);
            let z = sample_noise(rng, b, gan.z_dim());
            let fake = Tensor::constant(gan.generate(&z, &y_f, false)?);
            let fake_in = pipe.from_generated(&fake, p, rng, &mut log)?.detach();
            rec.ada_symmetric &= log.len() == 2 && log[0] == log[1];

            let disc = gan.discriminator();
            let dp = disc.params().bind();
            let s_real = disc.discriminate(&dp, &real_in, &real_labels)?;
            let s_fake = disc.discriminate(&dp, &fake_in, &y_f)?;
            rec.d_steps += 1;
            let r1 = if rec.d_steps % g_cfg.lazy_r1_interval == 0 {
                rec.r1_evaluations += 1;
                let pen = r1_penalty(|x| disc.discriminate(&dp, x, &real_labels), real_in.value(), g_cfg.gamma)?;
                ops::scale(&pen, g_cfg.lazy_r1_interval as f64)
            } else {
                Tensor::scalar(0.0)
            };
            let loss = discriminator_loss(&s_fake, &s_real, &r1)?;
            if !loss.item().is_finite() {
                return Err(Error::Numeric(format!("discriminator loss diverged at task {n}")));
            }
            d_loss_acc += loss.item();
            let grads = dp.grads(&loss)?;
            opt_d.step(gan.discriminator_mut().params_mut(), &grads);
            rec.images_seen += b;

            if pipe.ada_active() {
                signs.extend(s_real.to_vec());
                if rec.d_steps % cfg.augment.ada.interval == 0 {
                    p = ada_update(p, &signs, &cfg.augment.ada);
                    signs.clear();
                    if p > ADA_P_CAP {
                        return Err(Error::Contract(format!("ADA probability {p} exceeds the cap")));
                    }
                    rec.ada_p_trace.push(p);
                    rec.ada_p_max = rec.ada_p_max.max(p);
                }
            }
        }

        let y = uniform_labels(rng, &all, b);
        let z = sample_noise(rng, b, gan.z_dim());
        let gen = gan.generator();
        let gp = gen.params().bind();
        let fake = gen.forward(&gp, &z, &y)?;
        let mut log = Vec::with_capacity(1);
        let fake_in = pipe.from_generated(&fake, p, rng, &mut log)?;
        let disc = gan.discriminator();
        let s = disc.discriminate(&disc.params().bind_constant(), &fake_in, &y)?;
        let gan_term = generator_gan_loss(&s)?;
        let prev_rows: Vec<usize> = (0..b).filter(|&i| previous.contains(&y[i])).collect();
        let gd = match gan.previous() {
            Some(prev) if !prev_rows.is_empty() && g_cfg.lambda_gd > 0.0 => {
                let z_sub = z.select(Axis(0), &prev_rows);
                let y_sub: Vec<usize> = prev_rows.iter().map(|&i| y[i]).collect();
                let old = gen.forward_with(&prev.params, &z_sub, &y_sub)?;
                generator_distillation_loss(&ops::index_rows(&fake, &prev_rows), &Tensor::constant(old))?
            }
            _ => Tensor::scalar(0.0),
        };
        let loss = generator_loss(&gan_term, &gd, g_cfg.lambda_gd, kappa)?;
        if !loss.item().is_finite() {
            return Err(Error::Numeric(format!("generator loss diverged at task {n}")));
        }
        let grads = gp.grads(&loss)?;
        opt_g.step(gan.generator_mut().params_mut(), &grads);
        gan.ema_update(g_cfg.ema_decay)?;
        rec.g_steps += 1;

        win_d += d_loss_acc / g_cfg.d_steps_per_g_step as f64;
        d_loss_acc = 0.0;
        win_g += gan_term.item();
        win_gd += gd.item();
        win_n += 1;
        if win_n == LOSS_WINDOW {
            rec.d_loss.push(win_d / win_n as f64);
            rec.g_loss.push(win_g / win_n as f64);
            rec.gd_loss.push(win_gd / win_n as f64);
            (win_d, win_g, win_gd, win_n) = (0.0, 0.0, 0.0, 0);
        }
    }
    if win_n > 0 {
        rec.d_loss.push(win_d / win_n as f64);
        rec.g_loss.push(win_g / win_n as f64);
        rec.gd_loss.push(win_gd / win_n as f64);
    }
    gan.set_ada_probability(p);
    rec.ada_p_final = p;
    rec.surrogate_synthetic_fraction = syn_count as f64 / (rec.d_steps * b).max(1) as f64;
    rec.classifier_fingerprint_after = classifier.params().fingerprint();
    rec.previous_generator_fingerprint_end = fp_prev(gan);
    rec.retention = retention_probe(gan, &previous, g_cfg.retention_probe, cfg.seed ^ ((n as u64) << 32))?;
    rec.wall_seconds = start.elapsed().as_secs_f64();
    Ok(rec)
}
