//! The continual loop: for every task a classifier phase followed by a GAN
//! phase, with evaluation after each classifier phase and a checkpoint
//! after each phase.

mod checkpointing;
mod classifier_phase;
pub mod config;
mod gan_phase;
mod record;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::IxDyn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::adaptive_coeff::AdaptiveCoefState;
use crate::autograd::Array;
use crate::error::{Error, Result};
use crate::metrics::{self, emit_report};
use crate::models::{build_dfm_variant, build_discriminator, build_gan, Classifier, GanState, MatchingMode};
use crate::task_stream::{self, build_task_sequence, toy, DatasetIndex, Normalizer, Split, TaskSequence};

pub use checkpointing::{find_latest_checkpoint, load_run_checkpoint, save_run_checkpoint, Phase, RunCheckpoint};
pub use classifier_phase::{scheduled_lr, train_classifier_task};
pub use config::{
    AblationConfig, ClassifierTrainConfig, DataConfig, DataSource, ExperimentConfig, GanTrainConfig, ReplayConfig,
    ARMS,
};
pub use gan_phase::{build_surrogate_batch, retention_probe, train_gan_task, SurrogateBatch};
pub use record::{
    ClassifierPhaseRecord, GanPhaseRecord, ModelAudit, RetentionProbe, RunRecord, TaskRecord, RUN_RECORD_VERSION,
};

/// Everything a phase needs to know about the task being learned.
#[derive(Clone, Copy, Debug)]
pub struct TaskContext<'a> {
    /// 1-based task index.
    pub task: usize,
    pub seq: &'a TaskSequence,
    pub train: &'a DatasetIndex,
    pub normalizer: &'a Normalizer,
}

impl TaskContext<'_> {
    pub fn current(&self) -> Result<&[usize]> {
        self.seq.classes(self.task)
    }

    /// Classes of tasks `1..task`.
    pub fn previous(&self) -> Result<Vec<usize>> {
        self.seq.check_task(self.task)?;
        if self.task == 1 {
            Ok(Vec::new())
        } else {
            self.seq.classes_through(self.task - 1)
        }
    }
}

pub(crate) fn sample_noise<R: Rng + ?Sized>(rng: &mut R, batch: usize, z_dim: usize) -> Array {
    let data: Vec<f64> = (0..batch * z_dim).map(|_| rng.sample(StandardNormal)).collect();
    Array::from_shape_vec(IxDyn(&[batch, z_dim]), data).expect("noise shape")
}

pub(crate) fn uniform_labels<R: Rng + ?Sized>(rng: &mut R, classes: &[usize], n: usize) -> Vec<usize> {
    (0..n).map(|_| classes[rng.random_range(0..classes.len())]).collect()
}

pub(crate) fn tanh_to_unit(x: &Array) -> Array {
    x.mapv(|v| (0.5 * v + 0.5).clamp(0.0, 1.0))
}

/// EMA-generator samples in [0, 1], `per_class` consecutive images for each
/// trained class.
pub fn sample_grid<R: Rng + ?Sized>(gan: &GanState, per_class: usize, rng: &mut R) -> Result<Array> {
    if gan.mode() == MatchingMode::Dfm {
        return Err(Error::Contract("a feature-space generator has no image samples".into()));
    }
    let labels: Vec<usize> = gan.trained_classes().iter().flat_map(|&c| std::iter::repeat_n(c, per_class)).collect();
    if labels.is_empty() {
        return Err(Error::State("generator has no trained classes".into()));
    }
    let z = sample_noise(rng, labels.len(), gan.z_dim());
    Ok(tanh_to_unit(&gan.generate(&z, &labels, true)?))
}

/// Independent random stream for one phase of one task, so a resumed run
/// draws exactly what an uninterrupted one would.
pub fn phase_rng(seed: u64, task: usize, phase: Phase) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((task as u64) << 8) | phase.stream());
    rng
}

/// Train and test data with the task partition and normalization.
#[derive(Clone, Debug)]
pub struct Datasets {
    pub train: DatasetIndex,
    pub test: DatasetIndex,
    pub seq: TaskSequence,
    pub normalizer: Normalizer,
    pub class_names: Vec<String>,
}

impl Datasets {
    pub fn context(&self, task: usize) -> TaskContext<'_> {
        TaskContext {
            task,
            seq: &self.seq,
            train: &self.train,
            normalizer: &self.normalizer,
        }
    }

    /// Joint-softmax accuracy on the test classes of tasks `1..=t`, and on
    /// each of those tasks separately.
    pub fn evaluate(&self, classifier: &Classifier, t: usize) -> Result<(f64, Vec<f64>)> {
        let seen = self.seq.classes_through(t)?;
        let idx = self.test.indices_for(&seen);
        let batch = self.test.gather(&idx);
        let pred = metrics::predict(classifier, &batch.images, &self.normalizer)?;
        if batch.labels.is_empty() {
            return Err(Error::Contract("empty test set".into()));
        }
        let alpha = metrics::accuracy_of(&pred, &batch.labels);
        let mut per_task = Vec::with_capacity(t);
        for i in 1..=t {
            let cls = self.seq.classes(i)?;
            let (p, y): (Vec<usize>, Vec<usize>) = pred
                .iter()
                .zip(&batch.labels)
                .filter(|(_, y)| cls.contains(y))
                .map(|(p, y)| (*p, *y))
                .unzip();
            per_task.push(if y.is_empty() { f64::NAN } else { metrics::accuracy_of(&p, &y) });
        }
        Ok((alpha, per_task))
    }
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<Datasets> {
    let d = &cfg.data;
    let (train, test, class_names) = match d.source {
        DataSource::Toy => (
            toy::generate(d.toy_train_per_class, Split::Train, d.toy_seed)?,
            toy::generate(d.toy_test_per_class, Split::Test, d.toy_seed)?,
            toy::TOY_CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        ),
        DataSource::Dir => {
            let root = d.path.as_ref().ok_or_else(|| Error::Config("data.path missing".into()))?;
            let (m, train) = task_stream::load_dataset_dir(root, Split::Train)?;
            let (_, test) = task_stream::load_dataset_dir(root, Split::Test)?;
            (train, test, m.classes)
        }
    };
    train.check_pair(&test)?;
    let seq = build_task_sequence(train.class_count(), d.first_task_size, d.classes_per_task, d.split_seed)?;
    let normalizer = Normalizer::new(d.mean.clone(), d.std.clone())?;
    if normalizer.channels() != train.image_shape().2 {
        return Err(Error::Shape(format!(
            "normalization constants cover {} channels, images have {}",
            normalizer.channels(),
            train.image_shape().2
        )));
    }
    Ok(Datasets {
        train,
        test,
        seq,
        normalizer,
        class_names,
    })
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Records, report and checkpoints are written here when set.
    pub out_dir: Option<PathBuf>,
    /// Continue from the latest checkpoint in `out_dir`.
    pub resume: bool,
    /// Label stored as the record's mode (defaults to the matching mode).
    pub label: Option<String>,
    /// Stop after this many phases (for interruption tests).
    pub max_phases: Option<usize>,
}

/// Final models and the record of one run.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub record: RunRecord,
    pub classifier: Classifier,
    pub gan: Option<GanState>,
}

fn audit(classifiers: usize, gan: Option<&GanState>) -> ModelAudit {
    let g = gan.map(|g| 1 + usize::from(g.previous().is_some())).unwrap_or(0);
    ModelAudit {
        classifiers,
        generators: g,
        ema_generators: g,
        discriminators: usize::from(gan.is_some()),
    }
}

fn init_gan(cfg: &ExperimentConfig, data: &Datasets, classifier: &mut Classifier) -> Result<GanState> {
    let mut rng = phase_rng(cfg.seed, 0, Phase::GanInit);
    let class_count = data.train.class_count();
    if cfg.replay.mode == MatchingMode::Dfm {
        let (frozen, generator) = build_dfm_variant(classifier, &cfg.model, class_count, &mut rng)?;
        *classifier = frozen;
        let disc = build_discriminator(MatchingMode::Dfm, &cfg.model, class_count, classifier, &mut rng)?;
        return Ok(GanState::new(MatchingMode::Dfm, generator, disc));
    }
    build_gan(cfg.replay.mode, &cfg.model, class_count, classifier, &mut rng)
}

/// Runs every task of the configured sequence.
pub fn run_sequence(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutcome> {
    cfg.validate()?;
    let data = load_data(cfg)?;
    cfg.augment.validate(data.train.image_shape())?;
    run_sequence_on(cfg, &data, opts)
}

/// `run_sequence` with preloaded data.
pub fn run_sequence_on(cfg: &ExperimentConfig, data: &Datasets, opts: &RunOptions) -> Result<RunOutcome> {
    let start = Instant::now();
    let hash = cfg.hash();
    let t_max = data.seq.num_tasks();
    let label = opts.label.clone().unwrap_or_else(|| {
        if cfg.uses_replay() {
            cfg.replay.mode.name().to_string()
        } else {
            "finetune".into()
        }
    });
    let ckpt_dir = opts.out_dir.as_ref().map(|d| d.join("checkpoints"));
    if let Some(d) = &ckpt_dir {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }

    let mut classifier = Classifier::new(&cfg.model, data.train.image_shape(), &mut phase_rng(cfg.seed, 0, Phase::ClassifierInit))?;
    let mut gan: Option<GanState> = None;
    let mut coef = AdaptiveCoefState::new(cfg.adaptive.clone())?;
    let mut record = RunRecord {
        schema_version: RUN_RECORD_VERSION,
        run_id: format!("{}-s{}-{}", cfg.name, cfg.seed, &hash[..8]),
        name: cfg.name.clone(),
        mode: label,
        seed: cfg.seed,
        config_hash: hash.clone(),
        tasks_classes: data.seq.tasks().to_vec(),
        ..RunRecord::default()
    };
    let mut next = (1usize, Phase::Classifier);
    let mut elapsed_before = 0.0;

    if opts.resume {
        let dir = ckpt_dir
            .as_ref()
            .ok_or_else(|| Error::Config("resume needs an output directory".into()))?;
        if let Some(path) = find_latest_checkpoint(dir)? {
            let ck = load_run_checkpoint(&path)?;
            if ck.config_hash != hash {
                return Err(Error::Config(format!(
                    "checkpoint {} was written by config {} but this config hashes to {}",
                    path.display(),
                    &ck.config_hash[..12.min(ck.config_hash.len())],
                    &hash[..12]
                )));
            }
            log::info!("resuming from {}", path.display());
            classifier = ck.classifier;
            gan = ck.gan;
            coef = AdaptiveCoefState::with_lambda(cfg.adaptive.clone(), ck.lambda_od)?;
            elapsed_before = ck.record.wall_seconds;
            record = ck.record;
            next = match ck.phase {
                Phase::Classifier => (ck.task, Phase::Gan),
                _ => (ck.task + 1, Phase::Classifier),
            };
        }
    }

    let mut phases_run = 0usize;
    let mut last_rng: Option<ChaCha8Rng>;
    let mut t = next.0;
    let mut phase = next.1;
    while t <= t_max {
        if opts.max_phases.is_some_and(|m| phases_run >= m) {
            break;
        }
        let ctx = data.context(t);
        match phase {
            Phase::Classifier => {
                let task_start = Instant::now();
                coef.start_task();
                let mut rng = phase_rng(cfg.seed, t, Phase::Classifier);
                let crec = train_classifier_task(&mut classifier, gan.as_ref(), &ctx, cfg, &mut coef, &mut rng)?;
                last_rng = Some(rng);
                let (alpha, per_task) = data.evaluate(&classifier, t)?;
                log::info!("task {t}: alpha_all_t = {alpha:.4}, per task {per_task:.3?}");
                let classifiers = 1 + usize::from(crec.teacher_fingerprint_start.is_some());
                let a = audit(classifiers, gan.as_ref());
                record.tasks.push(TaskRecord {
                    task: t,
                    classes: ctx.current()?.to_vec(),
                    alpha_all_t: alpha,
                    accuracy_per_task: per_task,
                    lambda_od_final: coef.lambda(),
                    ada_p_final: gan.as_ref().map(|g| g.ada_probability()).unwrap_or(0.0),
                    classifier: crec,
                    gan: None,
                    audit: a,
                    wall_seconds: task_start.elapsed().as_secs_f64(),
                });
                record.max_models = record.max_models.max(a);
                phase = Phase::Gan;
            }
            Phase::Gan => {
                last_rng = None;
                let wants_gan = cfg.uses_replay() && (t < t_max || cfg.gan.train_final_task);
                if wants_gan {
                    if gan.is_none() {
                        gan = Some(init_gan(cfg, data, &mut classifier)?);
                    }
                    let g = gan.as_mut().expect("initialized above");
                    let mut rng = phase_rng(cfg.seed, t, Phase::Gan);
                    let grec = train_gan_task(g, &classifier, &ctx, cfg, &mut rng)?;
                    last_rng = Some(rng);
                    log::info!(
                        "task {t}: GAN saw {} images, {} D steps, {} R1, p = {:.3}",
                        grec.images_seen,
                        grec.d_steps,
                        grec.r1_evaluations,
                        grec.ada_p_final
                    );
                    let a = audit(1, gan.as_ref());
                    let task = record.tasks.last_mut().expect("classifier phase ran first");
                    task.ada_p_final = grec.ada_p_final;
                    task.wall_seconds += grec.wall_seconds;
                    task.audit = task.audit.max(a);
                    task.gan = Some(grec);
                    record.max_models = record.max_models.max(a);
                }
                t += 1;
                phase = Phase::Classifier;
            }
            _ => unreachable!("only training phases are scheduled"),
        }
        phases_run += 1;
        record.wall_seconds = elapsed_before + start.elapsed().as_secs_f64();
        if let Some(dir) = &ckpt_dir {
            let done = if phase == Phase::Gan { (t, Phase::Classifier) } else { (t - 1, Phase::Gan) };
            let ck = RunCheckpoint {
                config_hash: hash.clone(),
                task: done.0,
                phase: done.1,
                classifier: classifier.clone(),
                gan: gan.clone(),
                lambda_od: coef.lambda(),
                rng_state: last_rng.as_ref().map(serde_json::to_value).transpose().map_err(|e| Error::Format(e.to_string()))?,
                record: record.clone(),
            };
            save_run_checkpoint(dir, &ck)?;
        }
    }

    let finished = record.tasks.len() == t_max && t > t_max;
    if finished && t_max >= 2 {
        record.alpha_all = Some(metrics::average_incremental_accuracy(&record.alpha_trace())?);
    }
    record.wall_seconds = elapsed_before + start.elapsed().as_secs_f64();
    if let Some(dir) = &opts.out_dir {
        let json = serde_json::to_string_pretty(&record).map_err(|e| Error::Format(e.to_string()))?;
        let path = dir.join("run.json");
        fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
        if finished {
            emit_report(std::slice::from_ref(&record), dir)?;
        }
    }
    Ok(RunOutcome {
        record,
        classifier,
        gan,
    })
}

/// One run per (arm, seed) on shared task streams. Every arm sees the same
/// data, class split and seeds.
pub fn run_ablation(cfg: &ExperimentConfig, arms: &[String], seeds: &[u64], out_dir: Option<&Path>) -> Result<Vec<RunRecord>> {
    let arm_cfgs: Vec<(String, ExperimentConfig)> = arms
        .iter()
        .map(|a| Ok((a.clone(), cfg.with_arm(a)?)))
        .collect::<Result<_>>()?;
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    cfg.validate()?;
    let data = load_data(cfg)?;
    cfg.augment.validate(data.train.image_shape())?;
    let mut records = Vec::new();
    for (arm, c) in &arm_cfgs {
        for &seed in seeds {
            let mut c = c.clone();
            c.seed = seed;
            let opts = RunOptions {
                out_dir: out_dir.map(|d| d.join(format!("{arm}-seed{seed}"))),
                label: Some(arm.clone()),
                ..RunOptions::default()
            };
            log::info!("ablation arm {arm}, seed {seed}");
            records.push(run_sequence_on(&c, &data, &opts)?.record);
        }
    }
    if let Some(d) = out_dir {
        emit_report(&records, d)?;
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    #[test]
    fn uniform_labels_cover_every_class_within_k_times_b_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let classes: Vec<usize> = (10..60).collect();
        let mut misses = 0;
        for _ in 0..200 {
            let seen: BTreeSet<usize> = uniform_labels(&mut rng, &classes, classes.len() * 16).into_iter().collect();
            misses += classes.len() - seen.len();
        }
        assert!(misses <= 2, "{misses} classes missed");
        assert!(uniform_labels(&mut rng, &classes, 500).iter().all(|c| classes.contains(c)));
    }
}
