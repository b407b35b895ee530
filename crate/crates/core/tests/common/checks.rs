//! Randomized sweeps comparing the crate against the plain-loop oracles.

#![allow(dead_code)]

use genifer::autograd::{grad, ops, Array, Tensor};
use genifer::losses::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

/// Largest relative discrepancy seen for one operation.
#[derive(Clone, Debug)]
pub struct SweepResult {
    pub op: &'static str,
    pub instances: usize,
    pub max_error: f64,
}

fn mat(rows: &[Vec<f64>]) -> Array {
    let cols = rows.first().map_or(0, Vec::len);
    Array::from_shape_vec(vec![rows.len(), cols], flatten(rows)).unwrap()
}

fn vector(v: &[f64]) -> Array {
    Array::from_shape_vec(vec![v.len()], v.to_vec()).unwrap()
}

fn track(results: &mut Vec<SweepResult>, op: &'static str, err: f64) {
    match results.iter_mut().find(|r| r.op == op) {
        Some(r) => {
            r.instances += 1;
            r.max_error = r.max_error.max(err);
        }
        None => results.push(SweepResult {
            op,
            instances: 1,
            max_error: err,
        }),
    }
}

/// Forward values of every loss on `n` random small instances
/// (K ≤ 5, L ≤ 3, batch ≤ 4).
pub fn loss_value_sweep(n: usize, seed: u64) -> Vec<SweepResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for _ in 0..n {
        let k = rng.random_range(1..=5);
        let l = rng.random_range(0..=3);
        let b = rng.random_range(1..=4);
        let scale = rng.random_range(0.1..6.0);
        let old = rand_matrix(&mut rng, b, k, scale);
        let new = rand_matrix(&mut rng, b, k + l, scale);

        let p = softmax_probs(&mat(&new)).unwrap();
        let mut e: f64 = 0.0;
        for (i, row) in new.iter().enumerate() {
            for (j, v) in ref_softmax(row).iter().enumerate() {
                e = e.max(rel_err(p[[i, j]], *v));
            }
        }
        track(&mut out, "softmax_probs", e);

        let od = output_distillation_loss(&Tensor::constant(mat(&old)), &Tensor::constant(mat(&new))).unwrap();
        track(&mut out, "output_distillation_loss", rel_err(od.item(), ref_od(&old, &new)));

        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..k + l)).collect();
        let ce = current_task_loss(&Tensor::constant(mat(&new)), &labels).unwrap();
        track(&mut out, "current_task_loss", rel_err(ce.item(), ref_ce(&new, &labels)));

        let lambda = rng.random_range(0.0..100.0);
        let total = classifier_loss(&ce, &od, lambda).unwrap();
        track(
            &mut out,
            "classifier_loss",
            rel_err(total.item(), ref_ce(&new, &labels) + lambda * ref_od(&old, &new)),
        );

        let fake: Vec<f64> = (0..b).map(|_| rng.random_range(-8.0..8.0)).collect();
        let real: Vec<f64> = (0..b).map(|_| rng.random_range(-8.0..8.0)).collect();
        let r1v = rng.random_range(0.0..2.0);
        let d = discriminator_loss(
            &Tensor::constant(vector(&fake)),
            &Tensor::constant(vector(&real)),
            &Tensor::scalar(r1v),
        )
        .unwrap();
        track(&mut out, "discriminator_loss", rel_err(d.item(), ref_d_loss(&fake, &real, r1v)));

        let dim = k + l;
        let xs = rand_matrix(&mut rng, b, dim, 1.0);
        let w: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect();
        let c = rng.random_range(-0.5..0.5);
        let gamma = rng.random_range(0.01..10.0);
        let wt = Tensor::constant(Array::from_shape_vec(vec![dim, 1], w.clone()).unwrap());
        let ct = Tensor::scalar(c);
        let r1 = r1_penalty(
            |x| Ok(ops::reshape(&ops::tanh(&ops::add(&ops::matmul(x, &wt), &ct)), &[b])),
            &mat(&xs),
            gamma,
        )
        .unwrap();
        track(&mut out, "r1_penalty", rel_err(r1.item(), ref_r1_tanh(&xs, &w, c, gamma)));

        let g = generator_gan_loss(&Tensor::constant(vector(&fake))).unwrap();
        track(&mut out, "generator_gan_loss", rel_err(g.item(), ref_g_gan(&fake)));

        let a = rand_matrix(&mut rng, b, dim, 1.0);
        let o = rand_matrix(&mut rng, b, dim, 1.0);
        let gd = generator_distillation_loss(&Tensor::constant(mat(&a)), &Tensor::constant(mat(&o))).unwrap();
        let gd_ref = ref_gd(&flatten(&a), &flatten(&o));
        track(&mut out, "generator_distillation_loss", rel_err(gd.item(), gd_ref));

        let n_prev = rng.random_range(0..50usize);
        let n_curr = rng.random_range(1..50usize);
        let kappa = gd_scale(n_prev, n_curr).unwrap();
        track(&mut out, "gd_scale", rel_err(kappa, n_prev as f64 / n_curr as f64));
        let lgd = rng.random_range(0.0..20.0);
        let gl = generator_loss(&g, &gd, lgd, kappa).unwrap();
        track(
            &mut out,
            "generator_loss",
            rel_err(gl.item(), ref_g_gan(&fake) + lgd * kappa * gd_ref),
        );

        let sp = rng.random_range(-50.0..50.0);
        track(&mut out, "softplus", rel_err(softplus(sp), ref_softplus(sp)));
    }
    out
}

fn leaf(rows: usize, cols: usize, data: &[f64]) -> Tensor {
    Tensor::leaf(Array::from_shape_vec(vec![rows, cols], data.to_vec()).unwrap())
}

fn analytic(loss: &Tensor, x: &Tensor) -> Vec<f64> {
    grad(loss, &[x], false).unwrap()[0].as_ref().map(|g| g.to_vec()).unwrap_or_default()
}

const H: f64 = 1e-5;

/// Two-layer tanh discriminator `s = tanh(x·W₁ + b₁)·w₂`, parameters packed
/// as `[W₁ (d×h), b₁ (h), w₂ (h)]`.
struct TinyD {
    d: usize,
    h: usize,
}

impl TinyD {
    fn len(&self) -> usize {
        self.d * self.h + 2 * self.h
    }

    fn forward(&self, theta: &Tensor, x: &Tensor) -> Tensor {
        let (d, h) = (self.d, self.h);
        let w1 = ops::reshape(&ops::narrow(theta, 0, 0, d * h), &[d, h]);
        let b1 = ops::narrow(theta, 0, d * h, h);
        let w2 = ops::reshape(&ops::narrow(theta, 0, d * h + h, h), &[h, 1]);
        let hid = ops::tanh(&ops::add(&ops::matmul(x, &w1), &b1));
        let b = x.shape()[0];
        ops::reshape(&ops::matmul(&hid, &w2), &[b])
    }
}

/// Gradient checks against central differences, `n` instances per loss.
pub fn gradient_sweep(n: usize, seed: u64) -> Vec<SweepResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for _ in 0..n {
        let k = rng.random_range(1..=5);
        let l = rng.random_range(0..=3);
        let b = rng.random_range(1..=4);

        // Cross-entropy with respect to the logits.
        let x = flatten(&rand_matrix(&mut rng, b, k + l, 3.0));
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..k + l)).collect();
        let xt = leaf(b, k + l, &x);
        let a = analytic(&current_task_loss(&xt, &labels).unwrap(), &xt);
        let num = numeric_grad(
            &mut |v| current_task_loss(&Tensor::constant(Array::from_shape_vec(vec![b, k + l], v.to_vec()).unwrap()), &labels).unwrap().item(),
            &x,
            H,
        );
        track(&mut out, "current_task_loss", grad_discrepancy(&a, &num));

        // Distillation with respect to both logit sets.
        let old = flatten(&rand_matrix(&mut rng, b, k, 3.0));
        let new = flatten(&rand_matrix(&mut rng, b, k + l, 3.0));
        let joint: Vec<f64> = old.iter().chain(&new).copied().collect();
        let f = |v: &[f64]| {
            let o = Tensor::constant(Array::from_shape_vec(vec![b, k], v[..b * k].to_vec()).unwrap());
            let nw = Tensor::constant(Array::from_shape_vec(vec![b, k + l], v[b * k..].to_vec()).unwrap());
            output_distillation_loss(&o, &nw).unwrap().item()
        };
        let (ot, nt) = (leaf(b, k, &old), leaf(b, k + l, &new));
        let loss = output_distillation_loss(&ot, &nt).unwrap();
        let g = grad(&loss, &[&ot, &nt], false).unwrap();
        let mut a: Vec<f64> = g[0].as_ref().unwrap().to_vec();
        a.extend(g[1].as_ref().unwrap().to_vec());
        let num = numeric_grad(&mut |v| f(v), &joint, H);
        track(&mut out, "output_distillation_loss", grad_discrepancy(&a, &num));

        // Discriminator loss with R1, with respect to the discriminator's
        // parameters (the R1 path is a second-order derivative).
        let dim = rng.random_range(2..=4);
        let net = TinyD {
            d: dim,
            h: rng.random_range(2..=4),
        };
        let theta: Vec<f64> = (0..net.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let real = Array::from_shape_vec(vec![b, dim], flatten(&rand_matrix(&mut rng, b, dim, 1.0))).unwrap();
        let fake = Array::from_shape_vec(vec![b, dim], flatten(&rand_matrix(&mut rng, b, dim, 1.0))).unwrap();
        let gamma = rng.random_range(0.1..5.0);
        let d_loss = |th: &Tensor| {
            let fs = net.forward(th, &Tensor::constant(fake.clone()));
            let rs = net.forward(th, &Tensor::constant(real.clone()));
            let r1 = r1_penalty(|x| Ok(net.forward(th, x)), &real, gamma).unwrap();
            discriminator_loss(&fs, &rs, &r1).unwrap()
        };
        let tt = Tensor::leaf(Array::from_shape_vec(vec![theta.len()], theta.clone()).unwrap());
        let a = analytic(&d_loss(&tt), &tt);
        let num = numeric_grad(
            &mut |v| d_loss(&Tensor::constant(Array::from_shape_vec(vec![v.len()], v.to_vec()).unwrap())).item(),
            &theta,
            H,
        );
        track(&mut out, "discriminator_loss_with_r1", grad_discrepancy(&a, &num));

        // Generator loss through a fixed discriminator, with respect to the
        // generator weights `G(z) = tanh(z·A)`; distillation on the first rows.
        let zd = rng.random_range(2..=4);
        let z = Tensor::constant(Array::from_shape_vec(vec![b, zd], flatten(&rand_matrix(&mut rng, b, zd, 1.0))).unwrap());
        let a_w: Vec<f64> = (0..zd * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let prev_rows: Vec<usize> = (0..b).filter(|_| rng.random_bool(0.6)).collect();
        let prev_rows = if prev_rows.is_empty() { vec![0] } else { prev_rows };
        let old_img = Array::from_shape_vec(
            vec![prev_rows.len(), dim],
            (0..prev_rows.len() * dim).map(|_| rng.random_range(-1.5..1.5)).collect(),
        )
        .unwrap();
        let (lgd, kappa) = (rng.random_range(0.0..10.0), rng.random_range(0.0..2.0));
        let dth = Tensor::constant(Array::from_shape_vec(vec![theta.len()], theta.clone()).unwrap());
        let g_loss = |aw: &Tensor| {
            let img = ops::tanh(&ops::matmul(&z, &ops::reshape(aw, &[zd, dim])));
            let gan = generator_gan_loss(&net.forward(&dth, &img)).unwrap();
            let gd = generator_distillation_loss(&ops::index_rows(&img, &prev_rows), &Tensor::constant(old_img.clone())).unwrap();
            generator_loss(&gan, &gd, lgd, kappa).unwrap()
        };
        let at = Tensor::leaf(Array::from_shape_vec(vec![a_w.len()], a_w.clone()).unwrap());
        let a = analytic(&g_loss(&at), &at);
        let num = numeric_grad(
            &mut |v| g_loss(&Tensor::constant(Array::from_shape_vec(vec![v.len()], v.to_vec()).unwrap())).item(),
            &a_w,
            H,
        );
        track(&mut out, "generator_loss", grad_discrepancy(&a, &num));

        // Generator distillation with respect to the new images, away from
        // the kink of |·|.
        let old_v: Vec<f64> = (0..b * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let new_v: Vec<f64> = old_v
            .iter()
            .map(|o| {
                let d: f64 = rng.random_range(0.01..0.5);
                if rng.random_bool(0.5) {
                    o + d
                } else {
                    o - d
                }
            })
            .collect();
        let oldt = Tensor::constant(Array::from_shape_vec(vec![b, dim], old_v.clone()).unwrap());
        let nt = leaf(b, dim, &new_v);
        let a = analytic(&generator_distillation_loss(&nt, &oldt).unwrap(), &nt);
        let num = numeric_grad(
            &mut |v| {
                generator_distillation_loss(&Tensor::constant(Array::from_shape_vec(vec![b, dim], v.to_vec()).unwrap()), &oldt)
                    .unwrap()
                    .item()
            },
            &new_v,
            H,
        );
        track(&mut out, "generator_distillation_loss", grad_discrepancy(&a, &num));
    }
    out
}

/// A hand-traced controller scenario with its expected λ after each batch.
pub struct CoefCase {
    pub name: &'static str,
    pub config: genifer::adaptive_coeff::AdaptiveConfig,
    pub trace: Vec<(f64, f64)>,
    pub expected: Vec<f64>,
}

/// Scenarios with I = 4, S = 10 (steps of 0.4) and ρ* = 0.45.
pub fn coefficient_cases() -> Vec<CoefCase> {
    use genifer::adaptive_coeff::AdaptiveConfig;
    let cfg = |lambda_init: f64| AdaptiveConfig {
        enabled: true,
        rho_target: 0.45,
        interval: 4,
        scale: 10.0,
        lambda_init,
        lambda_max: 100.0,
    };
    let rep = |v: (f64, f64), n: usize| vec![v; n];
    vec![
        CoefCase {
            name: "ratios above target raise lambda twice",
            config: cfg(1.0),
            trace: rep((1.0, 1.0), 8),
            expected: vec![1.0, 1.0, 1.0, 1.4, 1.4, 1.4, 1.4, 1.8],
        },
        CoefCase {
            name: "ratios below target clamp at zero",
            config: cfg(0.4),
            trace: rep((0.1, 1.0), 8),
            expected: vec![0.4, 0.4, 0.4, 0.0, 0.0, 0.0, 0.0, 0.0],
        },
        CoefCase {
            name: "alternating windows oscillate by one step",
            config: cfg(1.0),
            trace: [rep((1.0, 1.0), 4), rep((0.1, 1.0), 4), rep((1.0, 1.0), 4), rep((0.1, 1.0), 4)].concat(),
            expected: vec![
                1.0, 1.0, 1.0, 1.4, 1.4, 1.4, 1.4, 1.0, 1.0, 1.0, 1.0, 1.4, 1.4, 1.4, 1.4, 1.0,
            ],
        },
        CoefCase {
            name: "upper clamp at the maximum",
            config: cfg(99.8),
            trace: rep((100.0, 1.0), 8),
            expected: vec![99.8, 99.8, 99.8, 100.0, 100.0, 100.0, 100.0, 100.0],
        },
        CoefCase {
            name: "ratio equal to target leaves lambda unchanged",
            config: cfg(1.0),
            trace: rep((0.45, 1.0), 8),
            expected: vec![1.0; 8],
        },
        CoefCase {
            name: "vanishing distillation loss is neutral",
            config: cfg(2.0),
            trace: [rep((3.0, 0.0), 4), rep((5.0, 1e-13), 4)].concat(),
            expected: vec![2.0; 8],
        },
        CoefCase {
            name: "partial window does not update",
            config: cfg(1.0),
            trace: rep((1.0, 1.0), 3),
            expected: vec![1.0; 3],
        },
        CoefCase {
            name: "disabled controller keeps lambda constant",
            config: AdaptiveConfig {
                enabled: false,
                ..cfg(3.0)
            },
            trace: rep((1.0, 0.01), 12),
            expected: vec![3.0; 12],
        },
    ]
}

/// Runs every scenario through `simulate`; returns the names of failures.
pub fn coefficient_failures() -> Vec<String> {
    let mut bad = Vec::new();
    for case in coefficient_cases() {
        let got = genifer::adaptive_coeff::simulate(&case.trace, &case.config).unwrap();
        let ok = got.len() == case.expected.len()
            && got.iter().zip(&case.expected).all(|(a, b)| (a - b).abs() < 1e-12);
        if !ok {
            bad.push(format!("{}: got {got:?}, expected {:?}", case.name, case.expected));
        }
    }
    bad
}

/// Task counts for a 100-class index with a first task of 50 classes.
pub fn hundred_class_task_counts() -> Vec<(usize, usize)> {
    [25, 10, 5, 2]
        .into_iter()
        .map(|step| (step, genifer::task_stream::build_task_sequence(100, 50, step, 0).unwrap().num_tasks()))
        .collect()
}

/// Checks partition invariants over `n` random valid configurations;
/// returns a description of the first violation.
pub fn task_split_fuzz(n: usize, seed: u64) -> Result<(), String> {
    use genifer::task_stream::build_task_sequence;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n {
        let first = rng.random_range(1..=60usize);
        let step = rng.random_range(1..=15usize);
        let rest_tasks = rng.random_range(0..=12usize);
        let classes = first + step * rest_tasks;
        let s = rng.random::<u64>();
        let seq = build_task_sequence(classes, first, step, s).map_err(|e| e.to_string())?;
        let ctx = format!("classes {classes}, first {first}, step {step}, seed {s}");
        if seq.num_tasks() != 1 + rest_tasks {
            return Err(format!("{ctx}: {} tasks", seq.num_tasks()));
        }
        let mut seen = vec![false; classes];
        for (i, task) in seq.tasks().iter().enumerate() {
            let want = if i == 0 { first } else { step };
            if task.len() != want {
                return Err(format!("{ctx}: task {} has {} classes", i + 1, task.len()));
            }
            for &c in task {
                if c >= classes || std::mem::replace(&mut seen[c], true) {
                    return Err(format!("{ctx}: class {c} repeated or out of range"));
                }
            }
        }
        if !seen.iter().all(|&v| v) {
            return Err(format!("{ctx}: union is not the full class set"));
        }
        let again = build_task_sequence(classes, first, step, s).unwrap();
        if again.tasks() != seq.tasks() {
            return Err(format!("{ctx}: not deterministic"));
        }
        if rest_tasks > 0 && step > 1 {
            let bad = build_task_sequence(classes + 1, first, step, s);
            if !matches!(bad, Err(genifer::Error::Config(_))) {
                return Err(format!("{ctx}: indivisible remainder accepted"));
            }
        }
    }
    Ok(())
}

/// Micro-scale protocol: 2 classes per task, 8 training images per class,
/// 2 classifier epochs, a GAN on every task.
pub const MICRO_TOML: &str = r#"
name = "micro"
seed = 3

[data]
toy_train_per_class = 8
toy_test_per_class = 8
first_task_size = 2
classes_per_task = 2

[model]
classifier_widths = [8, 8, 16, 16]
generator_widths = [16, 16, 8, 8]
z_dim = 16
w_dim = 16
disc_width = 16
disc_hidden = 32
disc_image_widths = [8, 16, 16]

[classifier]
lr = 0.002
batch_size = 8
epochs = 2
milestones = [1]

[gan]
batch_size = 8
images_per_class = 136
ema_decay = 0.9
retention_probe = 4

[augment.ada]
interval = 1
adjust_step = 0.2
target = 0.0
"#;

pub fn micro_config() -> genifer::trainer::ExperimentConfig {
    genifer::trainer::ExperimentConfig::from_toml_str(MICRO_TOML).unwrap()
}

/// Protocol invariants of a finished run; returns every violation.
pub fn protocol_violations(r: &genifer::trainer::RunRecord, lazy_r1_interval: usize) -> Vec<String> {
    let mut bad = Vec::new();
    for t in &r.tasks {
        let c = &t.classifier;
        if c.teacher_fingerprint_start != c.teacher_fingerprint_end {
            bad.push(format!("task {}: frozen teacher changed", t.task));
        }
        if t.task >= 2 && c.teacher_fingerprint_start.is_none() {
            bad.push(format!("task {}: no frozen teacher", t.task));
        }
        if c.replay_coverage_ok == Some(false) {
            bad.push(format!("task {}: a previous class was not replayed", t.task));
        }
        if !t.audit.within_retention_limit() {
            bad.push(format!("task {}: audit {:?}", t.task, t.audit));
        }
        if let Some(g) = &t.gan {
            if g.classifier_fingerprint_before != g.classifier_fingerprint_after {
                bad.push(format!("task {}: classifier changed during the GAN phase", t.task));
            }
            if g.previous_generator_fingerprint_start != g.previous_generator_fingerprint_end {
                bad.push(format!("task {}: frozen generator changed", t.task));
            }
            if g.r1_evaluations != g.d_steps / lazy_r1_interval {
                bad.push(format!("task {}: {} R1 evaluations over {} D steps", t.task, g.r1_evaluations, g.d_steps));
            }
            if g.ada_p_max > 0.5 || g.ada_p_trace.iter().any(|&p| !(0.0..=0.5).contains(&p)) {
                bad.push(format!("task {}: ADA probability above the cap", t.task));
            }
            if !g.ada_symmetric {
                bad.push(format!("task {}: real and fake augmented differently", t.task));
            }
        }
    }
    if !r.max_models.within_retention_limit() {
        bad.push(format!("run audit {:?}", r.max_models));
    }
    bad
}
