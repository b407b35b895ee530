//! Projection discriminator over classifier features (or raw images when
//! running the image-matching ablation).
//!
//! `score(x, y) = ψ(φ(x)) + ⟨embed(y), φ(x)⟩`, where `φ` is a small
//! convolutional trunk with optional mini-batch standard-deviation feature
//! and `ψ` a linear unconditional output.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{lrelu, one_hot, Conv, Linear};
use crate::autograd::{ops, Bound, ParamSet, Tensor};
use crate::error::{Error, Result};

/// Added to the batch variance before the square root.
pub const MBSTD_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorArch {
    /// `(height, width, channels)` of one input sample.
    pub input: (usize, usize, usize),
    /// Channels of conv + pool stages applied before the head.
    pub down: Vec<usize>,
    pub width: usize,
    pub hidden: usize,
    pub class_count: usize,
    pub minibatch_std: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    arch: DiscriminatorArch,
    params: ParamSet,
    down: Vec<Conv>,
    conv: Conv,
    fc: Linear,
    out: Linear,
    embed: usize,
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(arch: DiscriminatorArch, rng: &mut R) -> Result<Self> {
        let (h, w, c) = arch.input;
        let f = 1usize << arch.down.len();
        if h % f != 0 || w % f != 0 || h < f || w < f {
            return Err(Error::Config(format!(
                "discriminator input {h}x{w} cannot be pooled {} times",
                arch.down.len()
            )));
        }
        let mut params = ParamSet::new();
        let mut down = Vec::new();
        let mut cin = c;
        for (i, &cout) in arch.down.iter().enumerate() {
            down.push(Conv::new(&mut params, &format!("down{i}"), 3, cin, cout, rng));
            cin = cout;
        }
        let extra = usize::from(arch.minibatch_std);
        let conv = Conv::new(&mut params, "conv", 3, cin + extra, arch.width, rng);
        let (hh, ww) = (h / f, w / f);
        let fc = Linear::new(&mut params, "fc", hh * ww * arch.width, arch.hidden, rng);
        let out = Linear::with_init(&mut params, "out", arch.hidden, 1, (1.0 / arch.hidden as f64).sqrt(), 0.0, rng);
        let embed = params.add_normal("embed", &[arch.class_count, arch.hidden], (1.0 / arch.hidden as f64).sqrt(), rng);
        Ok(Self {
            arch,
            params,
            down,
            conv,
            fc,
            out,
            embed,
        })
    }

    pub fn from_parts(arch: DiscriminatorArch, params: ParamSet) -> Result<Self> {
        let mut d = Discriminator::new(arch, &mut ChaCha8Rng::seed_from_u64(0))?;
        if !d.params.same_shapes(&params) || d.params.iter().zip(params.iter()).any(|(a, b)| a.name != b.name) {
            return Err(Error::Format("discriminator parameter layout mismatch".into()));
        }
        d.params = params;
        Ok(d)
    }

    pub fn arch(&self) -> &DiscriminatorArch {
        &self.arch
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Index of the class-embedding table, for tests that zero it.
    pub fn embed_index(&self) -> usize {
        self.embed
    }

    fn trunk(&self, p: &Bound, x: &Tensor) -> Tensor {
        let mut h = x.clone();
        for conv in &self.down {
            h = ops::avg_pool2(&lrelu(&conv.forward(p, &h)));
        }
        if self.arch.minibatch_std {
            let s = h.shape().to_vec();
            let mu = ops::mean_axis(&h, 0);
            let var = ops::mean_axis(&ops::square(&ops::sub(&h, &mu)), 0);
            let sd = ops::mean_all(&ops::sqrt(&ops::add_scalar(&var, MBSTD_EPS)));
            let sd = ops::broadcast_to(&ops::reshape(&sd, &[1, 1, 1, 1]), &[s[0], s[1], s[2], 1]);
            h = ops::concat(&[h, sd], 3);
        }
        let h = lrelu(&self.conv.forward(p, &h));
        let s = h.shape().to_vec();
        let flat = ops::reshape(&h, &[s[0], s[1] * s[2] * s[3]]);
        lrelu(&self.fc.forward(p, &flat))
    }

    /// One real-valued score per sample.
    pub fn discriminate(&self, p: &Bound, input: &Tensor, labels: &[usize]) -> Result<Tensor> {
        let s = input.shape();
        if s.len() != 4 || (s[1], s[2], s[3]) != self.arch.input {
            return Err(Error::Shape(format!(
                "discriminator expects [B, {}, {}, {}], got {:?}",
                self.arch.input.0, self.arch.input.1, self.arch.input.2, s
            )));
        }
        if s[0] != labels.len() {
            return Err(Error::Shape(format!("{} inputs but {} labels", s[0], labels.len())));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= self.arch.class_count) {
            return Err(Error::Range(format!("class {y} outside discriminator vocabulary")));
        }
        let phi = self.trunk(p, input);
        let b = labels.len();
        let uncond = ops::reshape(&self.out.forward(p, &phi), &[b]);
        let e = ops::matmul(&one_hot(labels, self.arch.class_count), &p[self.embed]);
        let proj = ops::reshape(&ops::sum_axis(&ops::mul(&e, &phi), 1), &[b]);
        Ok(ops::add(&uncond, &proj))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::{grad, Array};
    use ndarray::IxDyn;

    fn arch(mbstd: bool) -> DiscriminatorArch {
        DiscriminatorArch {
            input: (2, 2, 3),
            down: vec![],
            width: 4,
            hidden: 5,
            class_count: 3,
            minibatch_std: mbstd,
        }
    }

    fn feats(b: usize) -> Array {
        Array::from_shape_fn(IxDyn(&[b, 2, 2, 3]), |d| ((d[0] * 11 + d[1] * 5 + d[2] * 3 + d[3]) % 7) as f64 * 0.2)
    }

    #[test]
    fn zero_embedding_leaves_unconditional_branch() {
        let mut d = Discriminator::new(arch(false), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let e = d.embed_index();
        d.params_mut().get_mut(e).value.fill(0.0);
        let p = d.params().bind_constant();
        let x = Tensor::constant(feats(3));
        let a = d.discriminate(&p, &x, &[0, 1, 2]).unwrap().to_vec();
        let b = d.discriminate(&p, &x, &[2, 2, 2]).unwrap().to_vec();
        assert_eq!(a, b);
    }

    #[test]
    fn duplicated_samples_score_alike_without_mbstd() {
        let d = Discriminator::new(arch(false), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let one = feats(1);
        let two = ndarray::concatenate(ndarray::Axis(0), &[one.view(), one.view()]).unwrap();
        let s = d.discriminate(&d.params().bind_constant(), &Tensor::constant(two), &[1, 1]).unwrap();
        assert_eq!(s.to_vec()[0], s.to_vec()[1]);
    }

    #[test]
    fn feature_gradient_matches_finite_differences() {
        for mbstd in [false, true] {
            let d = Discriminator::new(arch(mbstd), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
            let p = d.params().bind_constant();
            let x0 = feats(2);
            let labels = [0, 2];
            let x = Tensor::leaf(x0.clone());
            let s = ops::sum_all(&d.discriminate(&p, &x, &labels).unwrap());
            let g = grad(&s, &[&x], false).unwrap()[0].clone().unwrap().to_vec();
            let h = 1e-6;
            for i in 0..x0.len() {
                let mut xp = x0.clone();
                xp.as_slice_mut().unwrap()[i] += h;
                let mut xm = x0.clone();
                xm.as_slice_mut().unwrap()[i] -= h;
                let fp = ops::sum_all(&d.discriminate(&p, &Tensor::constant(xp), &labels).unwrap()).item();
                let fm = ops::sum_all(&d.discriminate(&p, &Tensor::constant(xm), &labels).unwrap()).item();
                let fd = (fp - fm) / (2.0 * h);
                let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-8);
                assert!(rel < 1e-4 || (fd - g[i]).abs() < 1e-9, "mbstd={mbstd} i={i} fd={fd} an={}", g[i]);
            }
        }
    }

    #[test]
    fn rejects_wrong_feature_shape() {
        let d = Discriminator::new(arch(true), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let bad = Tensor::constant(Array::zeros(IxDyn(&[1, 4, 4, 3])));
        assert!(matches!(d.discriminate(&d.params().bind_constant(), &bad, &[0]), Err(Error::Shape(_))));
    }
}
