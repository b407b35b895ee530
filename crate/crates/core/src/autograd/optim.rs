//! Adam-family optimizers with decoupled weight decay.

use super::params::ParamSet;
use super::tensor::Array;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Adam,
    /// Rectified Adam: plain momentum SGD until the second-moment estimate
    /// has enough samples, then a variance-rectified Adam step.
    RAdam,
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    variant: Variant,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    step: u64,
    m: Vec<Option<Array>>,
    v: Vec<Option<Array>>,
}

impl Optimizer {
    pub fn new(variant: Variant, lr: f64, betas: (f64, f64), weight_decay: f64) -> Self {
        Self {
            variant,
            lr,
            beta1: betas.0,
            beta2: betas.1,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. `grads` is aligned with `params`; `None` entries
    /// and frozen parameters are left untouched.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Option<Array>]) {
        assert_eq!(grads.len(), params.len(), "gradient/parameter count mismatch");
        if self.m.len() != params.len() {
            self.m.resize(params.len(), None);
            self.v.resize(params.len(), None);
        }
        self.step += 1;
        let t = self.step as f64;
        let (b1, b2) = (self.beta1, self.beta2);
        let bias1 = 1.0 - b1.powf(t);
        let bias2 = 1.0 - b2.powf(t);

        // Rectification term; None means "not enough variance samples yet".
        let rect = match self.variant {
            Variant::Adam => Some(1.0),
            Variant::RAdam => {
                let rho_inf = 2.0 / (1.0 - b2) - 1.0;
                let rho_t = rho_inf - 2.0 * t * b2.powf(t) / bias2;
                if rho_t > 5.0 {
                    Some(
                        ((rho_t - 4.0) * (rho_t - 2.0) * rho_inf
                            / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t))
                            .sqrt(),
                    )
                } else {
                    None
                }
            }
        };

        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let p = params.get_mut(i);
            if !p.trainable {
                continue;
            }
            if self.m[i].as_ref().map(|m| m.shape() != g.shape()).unwrap_or(true) {
                self.m[i] = Some(Array::zeros(g.raw_dim()));
                self.v[i] = Some(Array::zeros(g.raw_dim()));
            }
            let m = self.m[i].as_mut().expect("m");
            let v = self.v[i].as_mut().expect("v");
            m.zip_mut_with(g, |m, &g| *m = b1 * *m + (1.0 - b1) * g);
            v.zip_mut_with(g, |v, &g| *v = b2 * *v + (1.0 - b2) * g * g);

            if self.weight_decay > 0.0 {
                let k = 1.0 - self.lr * self.weight_decay;
                p.value.mapv_inplace(|w| w * k);
            }
            let lr = self.lr;
            let eps = self.eps;
            match rect {
                Some(r) => {
                    ndarray::Zip::from(&mut p.value).and(&*m).and(&*v).for_each(|w, &m, &v| {
                        let mhat = m / bias1;
                        let denom = (v / bias2).sqrt() + eps;
                        *w -= lr * r * mhat / denom;
                    });
                }
                None => {
                    p.value.zip_mut_with(&*m, |w, &m| *w -= lr * m / bias1);
                }
            }
        }
    }
}
