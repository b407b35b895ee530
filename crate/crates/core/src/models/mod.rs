//! Classifier, conditional generator and feature-domain discriminator.

pub mod checkpoint;
pub mod classifier;
pub mod discriminator;
pub mod gan;
pub mod generator;
pub mod layers;

use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use classifier::{Classifier, ClassifierMeta};
pub use discriminator::{Discriminator, DiscriminatorArch};
pub use gan::{build_dfm_variant, build_discriminator, build_gan, FrozenGenerator, GanState};
pub use generator::{Generator, GeneratorArch, GeneratorOutput};

/// Which representation the discriminator judges.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchingMode {
    /// Generator emits images; discriminator sees classifier features.
    Ifm,
    /// Generator emits features directly; extractor frozen after task 1.
    Dfm,
    /// Conventional image-space GAN.
    Im,
}

impl MatchingMode {
    pub fn name(self) -> &'static str {
        match self {
            MatchingMode::Ifm => "ifm",
            MatchingMode::Dfm => "dfm",
            MatchingMode::Im => "im",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Output channels of the four classifier blocks.
    pub classifier_widths: Vec<usize>,
    /// Block after which features are tapped (1-based).
    pub tap_point: usize,
    /// Standard deviation of newly added head weights.
    pub head_init_std: f64,
    pub z_dim: usize,
    pub w_dim: usize,
    pub mapping_layers: usize,
    /// Generator stage widths from the base resolution upward.
    pub generator_widths: Vec<usize>,
    /// Number of equal-width stages in the feature generator.
    pub dfm_depth: usize,
    pub disc_width: usize,
    pub disc_hidden: usize,
    /// Downsampling stages of the image-space discriminator.
    pub disc_image_widths: Vec<usize>,
    pub minibatch_std: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            classifier_widths: vec![16, 32, 32, 32],
            tap_point: 4,
            head_init_std: 0.01,
            z_dim: 32,
            w_dim: 32,
            mapping_layers: 2,
            generator_widths: vec![32, 32, 16, 8],
            dfm_depth: 4,
            disc_width: 32,
            disc_hidden: 64,
            disc_image_widths: vec![16, 32, 32],
            minibatch_std: true,
        }
    }
}
