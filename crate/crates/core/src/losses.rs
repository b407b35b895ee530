//! Classifier and GAN objectives as differentiable scalar tensors.
//!
//! Every batch reduction is an arithmetic mean.

use crate::autograd::{grad, grad_enabled, ops, Array, Tensor};
use crate::error::{Error, Result};

fn check_finite(name: &str, t: &Tensor) -> Result<()> {
    if t.value().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite value in {name}")));
    }
    Ok(())
}

fn check_matrix(name: &str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [b, k] => Ok((*b, *k)),
        s => Err(Error::Shape(format!("{name} must be [batch, classes], got {s:?}"))),
    }
}

fn check_scores(name: &str, t: &Tensor) -> Result<()> {
    if t.ndim() != 1 {
        return Err(Error::Shape(format!("{name} must be a vector of scores, got {:?}", t.shape())));
    }
    if t.is_empty() {
        return Err(Error::Contract(format!("{name} is an empty batch")));
    }
    check_finite(name, t)
}

/// Row-wise softmax with max subtraction.
pub fn softmax_probs(logits: &Array) -> Result<Array> {
    if logits.iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric("NaN logit".into()));
    }
    let t = Tensor::constant(logits.clone());
    check_matrix("logits", &t)?;
    Ok(ops::softmax(&t).into_value())
}

/// Numerically stable `log(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    ops::softplus_f64(x)
}

/// `−Σ_{k<K} softmax_K(old)_k · log softmax_{K+L}(new)_k`, averaged over
/// the batch. The new model's log-probabilities come from its joint
/// softmax over all `K + L` classes.
pub fn output_distillation_loss(old_logits: &Tensor, new_logits: &Tensor) -> Result<Tensor> {
    let (b, k) = check_matrix("old logits", old_logits)?;
    let (b2, kl) = check_matrix("new logits", new_logits)?;
    if k == 0 {
        return Err(Error::Contract("distillation needs at least one previous class".into()));
    }
    if b != b2 {
        return Err(Error::Shape(format!("{b} old rows vs {b2} new rows")));
    }
    if kl < k {
        return Err(Error::Shape(format!("new model has {kl} logits, fewer than {k} old ones")));
    }
    if b == 0 {
        return Err(Error::Contract("empty distillation batch".into()));
    }
    check_finite("old logits", old_logits)?;
    check_finite("new logits", new_logits)?;
    let target = ops::softmax(old_logits);
    let log_q = ops::narrow(&ops::log_softmax(new_logits), 1, 0, k);
    Ok(ops::neg(&ops::mean_all(&ops::sum_axis(&ops::mul(&target, &log_q), 1))))
}

/// Mean cross-entropy; `labels` are logit indices.
pub fn current_task_loss(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (b, k) = check_matrix("logits", logits)?;
    if b != labels.len() {
        return Err(Error::Shape(format!("{b} logit rows vs {} labels", labels.len())));
    }
    if b == 0 {
        return Err(Error::Contract("empty classification batch".into()));
    }
    if let Some(y) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::Range(format!("label index {y} outside {k} logits")));
    }
    check_finite("logits", logits)?;
    let mut mask = Array::zeros(ndarray::IxDyn(&[b, k]));
    for (i, &y) in labels.iter().enumerate() {
        mask[[i, y]] = 1.0;
    }
    let picked = ops::sum_all(&ops::mul(&ops::log_softmax(logits), &Tensor::constant(mask)));
    Ok(ops::scale(&picked, -1.0 / b as f64))
}

/// `curr + λ·od`.
pub fn classifier_loss(curr: &Tensor, od: &Tensor, lambda_od: f64) -> Result<Tensor> {
    if lambda_od.is_nan() || lambda_od < 0.0 {
        return Err(Error::Contract(format!("λ_OD must be non-negative, got {lambda_od}")));
    }
    Ok(ops::add(curr, &ops::scale(od, lambda_od)))
}

/// `mean f(fake) + mean f(−real) + r1`.
pub fn discriminator_loss(fake_scores: &Tensor, real_scores: &Tensor, r1_term: &Tensor) -> Result<Tensor> {
    check_scores("fake scores", fake_scores)?;
    check_scores("real scores", real_scores)?;
    let fake = ops::mean_all(&ops::softplus(fake_scores));
    let real = ops::mean_all(&ops::softplus(&ops::neg(real_scores)));
    Ok(ops::add(&ops::add(&fake, &real), r1_term))
}

/// `(γ/2)·mean_b ‖∇_x D(x_b, y_b)‖²`, differentiated with respect to the
/// discriminator input. The result stays differentiable in the
/// discriminator's parameters.
pub fn r1_penalty<F>(discriminator: F, real_inputs: &Array, gamma: f64) -> Result<Tensor>
where
    F: FnOnce(&Tensor) -> Result<Tensor>,
{
    if !grad_enabled() {
        return Err(Error::Contract("R1 needs gradients but autograd is disabled".into()));
    }
    if gamma.is_nan() || gamma < 0.0 {
        return Err(Error::Contract(format!("γ must be non-negative, got {gamma}")));
    }
    let b = real_inputs.shape().first().copied().unwrap_or(0);
    if b == 0 {
        return Err(Error::Contract("R1 on an empty batch".into()));
    }
    let x = Tensor::leaf(real_inputs.clone());
    let scores = discriminator(&x)?;
    if scores.shape() != [b] {
        return Err(Error::Shape(format!("discriminator returned {:?} for batch {b}", scores.shape())));
    }
    let g = grad(&ops::sum_all(&scores), &[&x], true)?;
    Ok(match &g[0] {
        Some(g) => ops::scale(&ops::sum_all(&ops::square(g)), gamma / 2.0 / b as f64),
        None => Tensor::scalar(0.0),
    })
}

/// `mean f(−fake)`.
pub fn generator_gan_loss(fake_scores: &Tensor) -> Result<Tensor> {
    check_scores("fake scores", fake_scores)?;
    Ok(ops::mean_all(&ops::softplus(&ops::neg(fake_scores))))
}

/// Mean absolute difference over every element.
pub fn generator_distillation_loss(new_images: &Tensor, old_images: &Tensor) -> Result<Tensor> {
    if new_images.shape() != old_images.shape() {
        return Err(Error::Shape(format!(
            "generator distillation compares {:?} with {:?}",
            new_images.shape(),
            old_images.shape()
        )));
    }
    if new_images.is_empty() {
        return Err(Error::Contract("generator distillation on an empty batch".into()));
    }
    check_finite("new images", new_images)?;
    check_finite("old images", old_images)?;
    Ok(ops::mean_all(&ops::abs(&ops::sub(new_images, old_images))))
}

/// `gan + λ_GD·κ·gd`.
pub fn generator_loss(gan_term: &Tensor, gd_term: &Tensor, lambda_gd: f64, kappa: f64) -> Result<Tensor> {
    if lambda_gd.is_nan() || lambda_gd < 0.0 {
        return Err(Error::Contract(format!("λ_GD must be non-negative, got {lambda_gd}")));
    }
    if kappa.is_nan() || kappa < 0.0 {
        return Err(Error::Contract(format!("κ must be non-negative, got {kappa}")));
    }
    Ok(ops::add(gan_term, &ops::scale(gd_term, lambda_gd * kappa)))
}

/// `κ = n_prev / n_curr`; zero during the first task.
pub fn gd_scale(n_prev: usize, n_curr: usize) -> Result<f64> {
    if n_curr == 0 {
        return Err(Error::Contract("current task has no classes".into()));
    }
    Ok(n_prev as f64 / n_curr as f64)
}
