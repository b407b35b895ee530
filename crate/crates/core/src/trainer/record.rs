use serde::{Deserialize, Serialize};

use crate::adaptive_coeff::CoefUpdate;

pub const RUN_RECORD_VERSION: u32 = 1;

/// Live model copies of each kind at one point of a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelAudit {
    pub classifiers: usize,
    pub generators: usize,
    pub ema_generators: usize,
    pub discriminators: usize,
}

impl ModelAudit {
    pub fn max(self, o: ModelAudit) -> ModelAudit {
        ModelAudit {
            classifiers: self.classifiers.max(o.classifiers),
            generators: self.generators.max(o.generators),
            ema_generators: self.ema_generators.max(o.ema_generators),
            discriminators: self.discriminators.max(o.discriminators),
        }
    }

    /// At most one previous copy of each model kind.
    pub fn within_retention_limit(&self) -> bool {
        self.classifiers <= 2 && self.generators <= 2 && self.ema_generators <= 2 && self.discriminators <= 1
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassifierPhaseRecord {
    pub epochs: usize,
    pub batches: usize,
    pub real_per_batch: usize,
    pub synthetic_per_batch: usize,
    /// Per-epoch mean of the current-task cross-entropy.
    pub loss_curr: Vec<f64>,
    /// Per-epoch mean of the distillation loss (empty without replay).
    pub loss_od: Vec<f64>,
    pub lambda_updates: Vec<CoefUpdate>,
    pub lambda_final: f64,
    pub teacher_fingerprint_start: Option<u64>,
    pub teacher_fingerprint_end: Option<u64>,
    pub extractor_fingerprint_start: u64,
    pub extractor_fingerprint_end: u64,
    /// Every previous class appeared among the synthetic labels of each window
    /// of consecutive epochs holding at least `previous classes × synthetic
    /// batch` draws; `None` when no window filled.
    pub replay_coverage_ok: Option<bool>,
    pub synthetic_augmented: bool,
    pub wall_seconds: f64,
}

/// Mean absolute pixel difference between the current and the frozen
/// previous generator on previous classes, with shared `(z, y)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetentionProbe {
    pub raw: f64,
    pub ema: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GanPhaseRecord {
    pub images_seen: usize,
    pub budget: usize,
    pub d_steps: usize,
    pub g_steps: usize,
    pub r1_evaluations: usize,
    pub kappa: f64,
    /// Losses averaged over consecutive windows of generator steps.
    pub d_loss: Vec<f64>,
    pub g_loss: Vec<f64>,
    pub gd_loss: Vec<f64>,
    pub ada_p_trace: Vec<f64>,
    pub ada_p_final: f64,
    pub ada_p_max: f64,
    /// Real and fake sides always received the same augmentation settings.
    pub ada_symmetric: bool,
    pub surrogate_synthetic_fraction: f64,
    pub classifier_fingerprint_before: u64,
    pub classifier_fingerprint_after: u64,
    pub previous_generator_fingerprint_start: Option<u64>,
    pub previous_generator_fingerprint_end: Option<u64>,
    pub retention: Option<RetentionProbe>,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task: usize,
    pub classes: Vec<usize>,
    pub alpha_all_t: f64,
    /// Test accuracy on each task's classes so far, evaluated jointly.
    pub accuracy_per_task: Vec<f64>,
    pub lambda_od_final: f64,
    pub ada_p_final: f64,
    pub classifier: ClassifierPhaseRecord,
    pub gan: Option<GanPhaseRecord>,
    pub audit: ModelAudit,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub run_id: String,
    pub name: String,
    /// Ablation arm or matching mode label.
    pub mode: String,
    pub seed: u64,
    pub config_hash: String,
    pub tasks_classes: Vec<Vec<usize>>,
    pub tasks: Vec<TaskRecord>,
    pub alpha_all: Option<f64>,
    pub max_models: ModelAudit,
    pub wall_seconds: f64,
}

impl RunRecord {
    /// The record with every wall-clock field zeroed, for determinism checks.
    pub fn without_timing(&self) -> RunRecord {
        let mut r = self.clone();
        r.wall_seconds = 0.0;
        for t in &mut r.tasks {
            t.wall_seconds = 0.0;
            t.classifier.wall_seconds = 0.0;
            if let Some(g) = &mut t.gan {
                g.wall_seconds = 0.0;
            }
        }
        r
    }

    pub fn alpha_trace(&self) -> Vec<f64> {
        self.tasks.iter().map(|t| t.alpha_all_t).collect()
    }

    /// Test accuracy on the first task's classes after the final task.
    pub fn first_task_final_accuracy(&self) -> Option<f64> {
        self.tasks.last().and_then(|t| t.accuracy_per_task.first().copied())
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.tasks.last().map(|t| t.alpha_all_t)
    }
}
