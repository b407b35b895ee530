use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::ops::Index;

use ndarray::IxDyn;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::tensor::{grad, Array, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Array,
    pub trainable: bool,
}

/// An ordered collection of named parameter arrays. Layers refer to their
/// parameters by index into the set.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array) -> usize {
        self.params.push(Param {
            name: name.into(),
            value,
            trainable: true,
        });
        self.params.len() - 1
    }

    pub fn add_normal<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        std: f64,
        rng: &mut R,
    ) -> usize {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n)
            .map(|_| {
                let v: f64 = StandardNormal.sample(rng);
                v * std
            })
            .collect();
        self.add(name, Array::from_shape_vec(IxDyn(shape), data).expect("shape"))
    }

    pub fn add_const(&mut self, name: impl Into<String>, shape: &[usize], v: f64) -> usize {
        self.add(name, Array::from_elem(IxDyn(shape), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn get(&self, i: usize) -> &Param {
        &self.params[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Param {
        &mut self.params[i]
    }

    pub fn find(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn set_trainable_where(&mut self, pred: impl Fn(&str) -> bool, trainable: bool) {
        for p in &mut self.params {
            if pred(&p.name) {
                p.trainable = trainable;
            }
        }
    }

    /// Graph leaves for trainable parameters, constants for frozen ones.
    pub fn bind(&self) -> Bound {
        Bound {
            tensors: self
                .params
                .iter()
                .map(|p| {
                    if p.trainable {
                        Tensor::leaf(p.value.clone())
                    } else {
                        Tensor::constant(p.value.clone())
                    }
                })
                .collect(),
        }
    }

    /// All parameters as constants; for frozen or evaluation-only use.
    pub fn bind_constant(&self) -> Bound {
        Bound {
            tensors: self
                .params
                .iter()
                .map(|p| Tensor::constant(p.value.clone()))
                .collect(),
        }
    }

    /// Order-sensitive hash of the exact bit patterns of every parameter.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for p in &self.params {
            p.name.hash(&mut h);
            p.value.shape().hash(&mut h);
            for v in p.value.iter() {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    /// Fingerprint restricted to parameters whose name satisfies `pred`.
    pub fn fingerprint_where(&self, pred: impl Fn(&str) -> bool) -> u64 {
        let mut h = DefaultHasher::new();
        for p in self.params.iter().filter(|p| pred(&p.name)) {
            p.name.hash(&mut h);
            for v in p.value.iter() {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    pub fn same_shapes(&self, other: &ParamSet) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.value.shape() == b.value.shape())
    }

    /// `self ← decay·self + (1 − decay)·source`, parameter-wise.
    pub fn blend_from(&mut self, source: &ParamSet, decay: f64) -> Result<()> {
        if !self.same_shapes(source) {
            return Err(Error::Shape("parameter sets differ in shape".into()));
        }
        for (dst, src) in self.params.iter_mut().zip(&source.params) {
            dst.value.zip_mut_with(&src.value, |d, &s| *d = decay * *d + (1.0 - decay) * s);
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Bound {
    tensors: Vec<Tensor>,
}

impl Bound {
    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    /// Gradients of `loss` for every trainable parameter, aligned with the
    /// parameter set. Frozen or unused parameters get `None`.
    pub fn grads(&self, loss: &Tensor) -> Result<Vec<Option<Array>>> {
        let refs: Vec<&Tensor> = self.tensors.iter().collect();
        let g = grad(loss, &refs, false)?;
        Ok(g.into_iter().map(|t| t.map(Tensor::into_value)).collect())
    }
}

impl Index<usize> for Bound {
    type Output = Tensor;
    fn index(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }
}
