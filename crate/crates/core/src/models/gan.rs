use rand::Rng;

use super::classifier::Classifier;
use super::discriminator::{Discriminator, DiscriminatorArch};
use super::generator::{matched_feature_arch, Generator, GeneratorArch, GeneratorOutput};
use super::{MatchingMode, ModelConfig};
use crate::autograd::{Array, ParamSet};
use crate::error::{Error, Result};

/// Generator copy frozen at the end of the previous task.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenGenerator {
    pub params: ParamSet,
    pub ema: ParamSet,
    pub classes: Vec<usize>,
}

/// Conditional generator, its parameter average, the discriminator and the
/// frozen previous-task generator.
#[derive(Clone, Debug, PartialEq)]
pub struct GanState {
    mode: MatchingMode,
    generator: Generator,
    ema: ParamSet,
    discriminator: Discriminator,
    previous: Option<FrozenGenerator>,
    trained_classes: Vec<usize>,
    ada_p: f64,
}

impl GanState {
    pub fn new(mode: MatchingMode, generator: Generator, discriminator: Discriminator) -> Self {
        let ema = generator.params().clone();
        Self {
            mode,
            generator,
            ema,
            discriminator,
            previous: None,
            trained_classes: Vec::new(),
            ada_p: 0.0,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        mode: MatchingMode,
        generator: Generator,
        ema: ParamSet,
        discriminator: Discriminator,
        previous: Option<FrozenGenerator>,
        trained_classes: Vec<usize>,
        ada_p: f64,
    ) -> Result<Self> {
        if !generator.params().same_shapes(&ema) {
            return Err(Error::Shape("EMA generator shapes differ from generator".into()));
        }
        if let Some(prev) = &previous {
            if !generator.params().same_shapes(&prev.params) || !generator.params().same_shapes(&prev.ema) {
                return Err(Error::Shape("frozen generator shapes differ from generator".into()));
            }
        }
        Ok(Self {
            mode,
            generator,
            ema,
            discriminator,
            previous,
            trained_classes,
            ada_p,
        })
    }

    pub fn mode(&self) -> MatchingMode {
        self.mode
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn generator_mut(&mut self) -> &mut Generator {
        &mut self.generator
    }

    pub fn ema(&self) -> &ParamSet {
        &self.ema
    }

    pub fn discriminator(&self) -> &Discriminator {
        &self.discriminator
    }

    pub fn discriminator_mut(&mut self) -> &mut Discriminator {
        &mut self.discriminator
    }

    pub fn previous(&self) -> Option<&FrozenGenerator> {
        self.previous.as_ref()
    }

    pub fn trained_classes(&self) -> &[usize] {
        &self.trained_classes
    }

    pub fn ada_probability(&self) -> f64 {
        self.ada_p
    }

    pub fn set_ada_probability(&mut self, p: f64) {
        self.ada_p = p;
    }

    pub fn z_dim(&self) -> usize {
        self.generator.arch().z_dim
    }

    /// Adds classes to the set the generator is trained to produce.
    pub fn extend_classes(&mut self, classes: &[usize]) {
        for &c in classes {
            if !self.trained_classes.contains(&c) {
                self.trained_classes.push(c);
            }
        }
    }

    fn check_classes(known: &[usize], labels: &[usize]) -> Result<()> {
        match labels.iter().find(|y| !known.contains(y)) {
            Some(y) => Err(Error::Range(format!("class {y} was never trained into this generator"))),
            None => Ok(()),
        }
    }

    /// Samples from the current generator (or its parameter average).
    /// Images are in `[−1, 1]`; feature generators return feature maps.
    pub fn generate(&self, z: &Array, labels: &[usize], use_ema: bool) -> Result<Array> {
        Self::check_classes(&self.trained_classes, labels)?;
        let params = if use_ema { &self.ema } else { self.generator.params() };
        self.generator.forward_with(params, z, labels)
    }

    /// Samples from the frozen previous-task generator.
    pub fn generate_previous(&self, z: &Array, labels: &[usize], use_ema: bool) -> Result<Array> {
        let prev = self
            .previous
            .as_ref()
            .ok_or_else(|| Error::State("no previous generator exists yet".into()))?;
        Self::check_classes(&prev.classes, labels)?;
        let params = if use_ema { &prev.ema } else { &prev.params };
        self.generator.forward_with(params, z, labels)
    }

    /// `ema ← decay·ema + (1 − decay)·G`.
    pub fn ema_update(&mut self, decay: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&decay) {
            return Err(Error::Contract(format!("EMA decay {decay} outside [0, 1]")));
        }
        self.ema.blend_from(self.generator.params(), decay)
    }

    /// Freezes copies of the current generator and its average as the
    /// previous-task generator, replacing any older copy.
    pub fn snapshot_previous(&mut self) {
        self.previous = Some(FrozenGenerator {
            params: self.generator.params().clone(),
            ema: self.ema.clone(),
            classes: self.trained_classes.clone(),
        });
    }
}

fn image_arch(cfg: &ModelConfig, class_count: usize, image: (usize, usize, usize)) -> Result<GeneratorArch> {
    GeneratorArch::image(
        cfg.z_dim,
        cfg.w_dim,
        class_count,
        cfg.mapping_layers,
        &cfg.generator_widths,
        image,
    )
}

/// Feature generator with roughly the parameter budget of the image
/// generator the same config would build.
fn feature_arch(cfg: &ModelConfig, class_count: usize, classifier: &Classifier) -> Result<GeneratorArch> {
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let ifm = Generator::new(image_arch(cfg, class_count, classifier.input_shape())?, &mut rng)?;
    matched_feature_arch(
        ifm.params().num_scalars(),
        cfg.z_dim,
        cfg.w_dim,
        class_count,
        cfg.mapping_layers,
        cfg.dfm_depth,
        classifier.feature_shape(),
    )
}

/// Discriminator for the matching space of `mode`: tapped classifier
/// features for IFM and DFM, images for IM.
pub fn build_discriminator<R: Rng + ?Sized>(
    mode: MatchingMode,
    cfg: &ModelConfig,
    class_count: usize,
    classifier: &Classifier,
    rng: &mut R,
) -> Result<Discriminator> {
    let (input, down) = match mode {
        MatchingMode::Ifm | MatchingMode::Dfm => (classifier.feature_shape(), vec![]),
        MatchingMode::Im => (classifier.input_shape(), cfg.disc_image_widths.clone()),
    };
    Discriminator::new(
        DiscriminatorArch {
            input,
            down,
            width: cfg.disc_width,
            hidden: cfg.disc_hidden,
            class_count,
            minibatch_std: cfg.minibatch_std,
        },
        rng,
    )
}

pub fn build_gan<R: Rng + ?Sized>(
    mode: MatchingMode,
    cfg: &ModelConfig,
    class_count: usize,
    classifier: &Classifier,
    rng: &mut R,
) -> Result<GanState> {
    let image = classifier.input_shape();
    let gen_arch = match mode {
        MatchingMode::Dfm => feature_arch(cfg, class_count, classifier)?,
        MatchingMode::Ifm | MatchingMode::Im => image_arch(cfg, class_count, image)?,
    };
    if mode != MatchingMode::Dfm && gen_arch.out_res() != (image.0, image.1) {
        return Err(Error::Config(format!(
            "generator resolution {:?} does not match images {:?}",
            gen_arch.out_res(),
            (image.0, image.1)
        )));
    }
    let generator = Generator::new(gen_arch, rng)?;
    let discriminator = build_discriminator(mode, cfg, class_count, classifier, rng)?;
    Ok(GanState::new(mode, generator, discriminator))
}

/// The direct-feature-matching pair: a copy of the classifier with blocks
/// up to the tap point frozen, and a generator that emits tapped features.
pub fn build_dfm_variant<R: Rng + ?Sized>(
    classifier: &Classifier,
    cfg: &ModelConfig,
    class_count: usize,
    rng: &mut R,
) -> Result<(Classifier, Generator)> {
    let mut frozen = classifier.clone();
    frozen.freeze_extractor();
    let generator = Generator::new(feature_arch(cfg, class_count, classifier)?, rng)?;
    debug_assert_eq!(generator.arch().output, GeneratorOutput::Features);
    Ok((frozen, generator))
}
