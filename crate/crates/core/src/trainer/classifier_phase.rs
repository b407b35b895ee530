use std::collections::BTreeSet;
use std::time::Instant;

use ndarray::{concatenate, Axis};
use rand::RngCore;
use rand_chacha::ChaCha8Rng;

use super::config::ExperimentConfig;
use super::record::ClassifierPhaseRecord;
use super::{sample_noise, tanh_to_unit, uniform_labels, TaskContext};
use crate::adaptive_coeff::AdaptiveCoefState;
use crate::augmentation::apply_classifier_augs;
use crate::autograd::{no_grad, ops, Optimizer, Tensor};
use crate::error::{Error, Result};
use crate::losses::{classifier_loss, current_task_loss, output_distillation_loss};
use crate::models::{Classifier, GanState, MatchingMode};
use crate::task_stream::task_loader;

/// Learning rate after `epoch` completed epochs.
pub fn scheduled_lr(cfg: &ExperimentConfig, epoch: usize) -> f64 {
    let c = &cfg.classifier;
    let drops = c.milestones.iter().filter(|&&m| m <= epoch).count();
    c.lr / c.lr_factor.powi(drops as i32)
}

/// Trains the classifier on task `ctx.task`. From the second task on, the
/// head is expanded first and, when replay is enabled, every batch mixes
/// real current-task images with samples of the previous generator whose
/// targets come from a frozen copy of the previous classifier.
pub fn train_classifier_task(
    classifier: &mut Classifier,
    gan_prev: Option<&GanState>,
    ctx: &TaskContext<'_>,
    cfg: &ExperimentConfig,
    coef: &mut AdaptiveCoefState,
    rng: &mut ChaCha8Rng,
) -> Result<ClassifierPhaseRecord> {
    let start = Instant::now();
    let n = ctx.task;
    let current = ctx.current()?.to_vec();
    let previous = ctx.previous()?;
    let replay = n >= 2 && cfg.uses_replay();
    let gan = match (replay, gan_prev) {
        (true, None) => {
            return Err(Error::State(format!("task {n} needs a generator trained on earlier tasks")))
        }
        (true, Some(g)) => Some(g),
        (false, _) => None,
    };
    if let Some(g) = gan {
        if let Some(c) = previous.iter().find(|c| !g.trained_classes().contains(c)) {
            return Err(Error::State(format!("generator was never trained on class {c}")));
        }
    }
    let teacher = gan.map(|_| classifier.clone());
    classifier.expand_head(&current, rng)?;

    let (real_b, syn_b) = if replay { cfg.replay_split() } else { (cfg.classifier.batch_size, 0) };
    let mut loader = task_loader(ctx.train, ctx.seq, n, real_b, rng.next_u64())?;
    let c = &cfg.classifier;
    let mut opt = Optimizer::new(c.optimizer, c.lr, c.betas, c.weight_decay);
    let teacher_fp = teacher.as_ref().map(|t| t.params().fingerprint());
    let mut rec = ClassifierPhaseRecord {
        epochs: c.epochs,
        real_per_batch: real_b,
        synthetic_per_batch: syn_b,
        teacher_fingerprint_start: teacher_fp,
        extractor_fingerprint_start: classifier.extractor_fingerprint(),
        synthetic_augmented: cfg.augment.classifier.augment_synthetic,
        ..ClassifierPhaseRecord::default()
    };
    let mut coverage: Option<bool> = None;
    let mut window = BTreeSet::new();
    let mut window_draws = 0usize;
    let dfm = gan.map(|g| g.mode() == MatchingMode::Dfm).unwrap_or(false);

    for epoch in 0..c.epochs {
        opt.set_lr(scheduled_lr(cfg, epoch));
        let (mut sum_curr, mut sum_od, mut count) = (0.0, 0.0, 0usize);
        for batch in loader.epoch() {
            let real = apply_classifier_augs(&batch.images, &cfg.augment.classifier, rng)?;
            let real_in = Tensor::constant(ctx.normalizer.normalize(&real)?);
            let idx: Vec<usize> = batch
                .labels
                .iter()
                .map(|&y| classifier.logit_index(y).expect("current classes are in the head"))
                .collect();
            let b_r = idx.len();
            let p = classifier.params().bind();
            let loss = match (gan, &teacher) {
                (Some(g), Some(teacher)) => {
                    let y = uniform_labels(rng, &previous, syn_b);
                    window.extend(y.iter().copied());
                    window_draws += y.len();
                    let z = sample_noise(rng, syn_b, g.z_dim());
                    let raw = g.generate(&z, &y, true)?;
                    let (logits, target) = if dfm {
                        let target = {
                            let _ng = no_grad();
                            let tp = teacher.params().bind_constant();
                            teacher.head_forward(&tp, &Tensor::constant(raw.clone()))?.into_value()
                        };
                        let feats = classifier.extract_features(&p, &real_in)?;
                        let both = ops::concat(&[feats, Tensor::constant(raw)], 0);
                        (classifier.head_forward(&p, &both)?, target)
                    } else {
                        let mut unit = tanh_to_unit(&raw);
                        if cfg.augment.classifier.augment_synthetic {
                            unit = apply_classifier_augs(&unit, &cfg.augment.classifier, rng)?;
                        }
                        let syn_in = ctx.normalizer.normalize(&unit)?;
                        let target = teacher.logits(&syn_in)?;
                        let both = concatenate(Axis(0), &[real_in.value().view(), syn_in.view()])
                            .map_err(|e| Error::Shape(e.to_string()))?;
                        (classifier.classify(&p, &Tensor::constant(both))?, target)
                    };
                    let curr = current_task_loss(&ops::narrow(&logits, 0, 0, b_r), &idx)?;
                    let od = output_distillation_loss(&Tensor::constant(target), &ops::narrow(&logits, 0, b_r, syn_b))?;
                    let lambda = coef.lambda();
                    coef.record_batch(curr.item(), od.item());
                    if let Some(u) = coef.maybe_update() {
                        rec.lambda_updates.push(u);
                    }
                    sum_od += od.item();
                    sum_curr += curr.item();
                    classifier_loss(&curr, &od, lambda)?
                }
                _ => {
                    let logits = classifier.classify(&p, &real_in)?;
                    let curr = current_task_loss(&logits, &idx)?;
                    sum_curr += curr.item();
                    curr
                }
            };
            if !loss.item().is_finite() {
                return Err(Error::Numeric(format!("classifier loss diverged at task {n}, epoch {epoch}")));
            }
            let grads = p.grads(&loss)?;
            opt.step(classifier.params_mut(), &grads);
            count += 1;
        }
        rec.batches += count;
        rec.loss_curr.push(sum_curr / count.max(1) as f64);
        if replay {
            rec.loss_od.push(sum_od / count.max(1) as f64);
            if window_draws >= previous.len() * syn_b {
                let ok = previous.iter().all(|c| window.contains(c));
                coverage = Some(coverage.unwrap_or(true) && ok);
                window.clear();
                window_draws = 0;
            }
        }
    }
    rec.replay_coverage_ok = coverage;
    rec.teacher_fingerprint_end = teacher.as_ref().map(|t| t.params().fingerprint());
    rec.extractor_fingerprint_end = classifier.extractor_fingerprint();
    rec.lambda_final = coef.lambda();
    rec.wall_seconds = start.elapsed().as_secs_f64();
    Ok(rec)
}
