//! Class-conditional style-modulated generator.
//!
//! A mapping network turns `(z, y)` into a style vector `w`; a learned
//! constant at the base resolution is refined by modulated convolutions,
//! each followed by per-pixel noise injection, bias and leaky ReLU, with
//! nearest-neighbour upsampling between stages. The final 1×1 modulated
//! projection emits either an image (tanh, `[−1, 1]`) or a feature map
//! (softplus, non-negative) for direct feature matching.
//!
//! Injected noise is a deterministic function of each sample's latent
//! vector, so the generator is a pure function of `(parameters, z, y)`.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use ndarray::{Axis, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::layers::{lrelu, normalize_2nd_moment, one_hot, Linear, ModulatedConv};
use crate::autograd::{ops, Array, Bound, ParamSet, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorOutput {
    Image,
    Features,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    pub channels: usize,
    pub upsample: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorArch {
    pub z_dim: usize,
    pub w_dim: usize,
    pub class_count: usize,
    pub mapping_layers: usize,
    pub base_res: (usize, usize),
    pub stages: Vec<Stage>,
    pub out_channels: usize,
    pub output: GeneratorOutput,
}

impl GeneratorArch {
    /// Output spatial size.
    pub fn out_res(&self) -> (usize, usize) {
        let ups = self.stages.iter().filter(|s| s.upsample).count();
        (self.base_res.0 << ups, self.base_res.1 << ups)
    }

    /// Image generator whose stage widths are listed from the base
    /// resolution upward; every stage after the first doubles resolution.
    pub fn image(
        z_dim: usize,
        w_dim: usize,
        class_count: usize,
        mapping_layers: usize,
        widths: &[usize],
        image: (usize, usize, usize),
    ) -> Result<Self> {
        if widths.is_empty() {
            return Err(Error::Config("generator_widths must not be empty".into()));
        }
        let ups = widths.len() - 1;
        let (h, w, c) = image;
        if h % (1 << ups) != 0 || w % (1 << ups) != 0 {
            return Err(Error::Config(format!(
                "image {h}x{w} is not divisible by 2^{ups} for {} generator stages",
                widths.len()
            )));
        }
        Ok(Self {
            z_dim,
            w_dim,
            class_count,
            mapping_layers,
            base_res: (h >> ups, w >> ups),
            stages: widths
                .iter()
                .enumerate()
                .map(|(i, &channels)| Stage {
                    channels,
                    upsample: i > 0,
                })
                .collect(),
            out_channels: c,
            output: GeneratorOutput::Image,
        })
    }

    /// Feature-emitting generator at a fixed resolution with `depth`
    /// stages of equal `width`.
    pub fn features(
        z_dim: usize,
        w_dim: usize,
        class_count: usize,
        mapping_layers: usize,
        depth: usize,
        width: usize,
        feature: (usize, usize, usize),
    ) -> Self {
        Self {
            z_dim,
            w_dim,
            class_count,
            mapping_layers,
            base_res: (feature.0, feature.1),
            stages: (0..depth)
                .map(|_| Stage {
                    channels: width,
                    upsample: false,
                })
                .collect(),
            out_channels: feature.2,
            output: GeneratorOutput::Features,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    arch: GeneratorArch,
    params: ParamSet,
    embed: usize,
    mapping: Vec<Linear>,
    constant: usize,
    convs: Vec<ModulatedConv>,
    noise_strength: Vec<usize>,
    to_out: ModulatedConv,
}

impl Generator {
    pub fn new<R: Rng + ?Sized>(arch: GeneratorArch, rng: &mut R) -> Result<Self> {
        if arch.stages.is_empty() || arch.z_dim == 0 || arch.w_dim == 0 || arch.class_count == 0 {
            return Err(Error::Config("generator dimensions must be positive".into()));
        }
        let mut params = ParamSet::new();
        let embed = params.add_normal("embed", &[arch.class_count, arch.z_dim], 1.0, rng);
        let mut mapping = Vec::with_capacity(arch.mapping_layers);
        let mut din = 2 * arch.z_dim;
        for i in 0..arch.mapping_layers.max(1) {
            mapping.push(Linear::new(&mut params, &format!("map{i}"), din, arch.w_dim, rng));
            din = arch.w_dim;
        }
        let c0 = arch.stages[0].channels;
        let constant = params.add_normal("const", &[1, arch.base_res.0, arch.base_res.1, c0], 1.0, rng);
        let mut convs = Vec::new();
        let mut noise_strength = Vec::new();
        let mut cin = c0;
        for (i, st) in arch.stages.iter().enumerate() {
            convs.push(ModulatedConv::new(
                &mut params,
                &format!("conv{i}"),
                3,
                cin,
                st.channels,
                arch.w_dim,
                true,
                rng,
            ));
            noise_strength.push(params.add_const(format!("noise{i}"), &[st.channels], 0.0));
            cin = st.channels;
        }
        let to_out = ModulatedConv::new(&mut params, "to_out", 1, cin, arch.out_channels, arch.w_dim, false, rng);
        Ok(Self {
            arch,
            params,
            embed,
            mapping,
            constant,
            convs,
            noise_strength,
            to_out,
        })
    }

    pub fn from_parts(arch: GeneratorArch, params: ParamSet) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut g = Generator::new(arch, &mut rng)?;
        if !g.params.same_shapes(&params) || g.params.iter().zip(params.iter()).any(|(a, b)| a.name != b.name) {
            return Err(Error::Format("generator parameter layout mismatch".into()));
        }
        g.params = params;
        Ok(g)
    }

    pub fn arch(&self) -> &GeneratorArch {
        &self.arch
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Shape of one generated sample, `(height, width, channels)`.
    pub fn sample_shape(&self) -> (usize, usize, usize) {
        let (h, w) = self.arch.out_res();
        (h, w, self.arch.out_channels)
    }

    /// Per-sample noise maps for every stage, seeded from the bits of the
    /// sample's latent vector.
    fn noise_maps(&self, z: &Array) -> Vec<Tensor> {
        let b = z.shape()[0];
        let mut res: Vec<(usize, usize)> = Vec::new();
        let (mut h, mut w) = self.arch.base_res;
        for st in &self.arch.stages {
            if st.upsample {
                h *= 2;
                w *= 2;
            }
            res.push((h, w));
        }
        let mut maps: Vec<Vec<f64>> = res.iter().map(|&(h, w)| Vec::with_capacity(b * h * w)).collect();
        for row in z.axis_iter(Axis(0)) {
            let mut hasher = DefaultHasher::new();
            for v in row.iter() {
                v.to_bits().hash(&mut hasher);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(hasher.finish());
            for (m, &(h, w)) in maps.iter_mut().zip(&res) {
                m.extend((0..h * w).map(|_| rng.sample::<f64, _>(StandardNormal)));
            }
        }
        maps.into_iter()
            .zip(&res)
            .map(|(m, &(h, w))| {
                Tensor::constant(Array::from_shape_vec(IxDyn(&[b, h, w, 1]), m).expect("noise shape"))
            })
            .collect()
    }

    /// Style vectors `w` for a batch.
    pub fn map(&self, p: &Bound, z: &Array, labels: &[usize]) -> Result<Tensor> {
        let s = z.shape();
        if s.len() != 2 || s[1] != self.arch.z_dim || s[0] != labels.len() {
            return Err(Error::Shape(format!(
                "latents {:?} do not match z_dim {} and {} labels",
                s,
                self.arch.z_dim,
                labels.len()
            )));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= self.arch.class_count) {
            return Err(Error::Range(format!("class {y} outside generator vocabulary")));
        }
        let zt = normalize_2nd_moment(&Tensor::constant(z.clone()));
        let e = normalize_2nd_moment(&ops::matmul(&one_hot(labels, self.arch.class_count), &p[self.embed]));
        let mut w = ops::concat(&[zt, e], 1);
        for layer in &self.mapping {
            w = lrelu(&layer.forward(p, &w));
        }
        Ok(w)
    }

    pub fn forward(&self, p: &Bound, z: &Array, labels: &[usize]) -> Result<Tensor> {
        let w = self.map(p, z, labels)?;
        let b = labels.len();
        let noise = self.noise_maps(z);
        let (h0, w0) = self.arch.base_res;
        let c0 = self.arch.stages[0].channels;
        let mut x = ops::broadcast_to(&p[self.constant], &[b, h0, w0, c0]);
        for (i, st) in self.arch.stages.iter().enumerate() {
            if st.upsample {
                x = ops::upsample2(&x);
            }
            x = self.convs[i].forward(p, &x, &w);
            x = ops::add(&x, &ops::mul(&noise[i], &p[self.noise_strength[i]]));
            x = lrelu(&x);
        }
        let y = self.to_out.forward(p, &x, &w);
        Ok(match self.arch.output {
            GeneratorOutput::Image => ops::tanh(&y),
            GeneratorOutput::Features => ops::softplus(&y),
        })
    }

    /// Runs the generator with an arbitrary parameter set of this
    /// architecture (EMA or frozen copies), without gradients.
    pub fn forward_with(&self, params: &ParamSet, z: &Array, labels: &[usize]) -> Result<Array> {
        if !self.params.same_shapes(params) {
            return Err(Error::Shape("parameter set does not fit this generator".into()));
        }
        let _g = crate::autograd::no_grad();
        Ok(self.forward(&params.bind_constant(), z, labels)?.into_value())
    }
}

/// Picks the equal-width feature generator whose parameter count is closest
/// to `target`.
pub fn matched_feature_arch(
    target: usize,
    z_dim: usize,
    w_dim: usize,
    class_count: usize,
    mapping_layers: usize,
    depth: usize,
    feature: (usize, usize, usize),
) -> Result<GeneratorArch> {
    let mut best: Option<(usize, GeneratorArch)> = None;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for width in 1..=512 {
        let arch = GeneratorArch::features(z_dim, w_dim, class_count, mapping_layers, depth, width, feature);
        let n = Generator::new(arch.clone(), &mut rng)?.params().num_scalars();
        let diff = n.abs_diff(target);
        if best.as_ref().map(|(d, _)| diff < *d).unwrap_or(true) {
            best = Some((diff, arch));
        }
        if n > target {
            break;
        }
    }
    Ok(best.expect("at least one candidate").1)
}
