//! Plain-loop reference implementations used as test oracles. They share no
//! code with the crate; `checks` runs the comparisons.

#![allow(dead_code)]

pub mod checks;

use rand::Rng;

pub fn ref_softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn ref_log_softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

pub fn ref_softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else if x < -5.0 {
        let e = x.exp();
        e - e * e / 2.0 + e * e * e / 3.0 - e * e * e * e / 4.0
    } else {
        (1.0 + x.exp()).ln()
    }
}

/// Batch mean of `−Σ_{k<K} p_old,k · log q_new,k`.
pub fn ref_od(old: &[Vec<f64>], new: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for (o, n) in old.iter().zip(new) {
        let p = ref_softmax(o);
        let lq = ref_log_softmax(n);
        let mut s = 0.0;
        for k in 0..o.len() {
            s -= p[k] * lq[k];
        }
        total += s;
    }
    total / old.len() as f64
}

pub fn ref_ce(logits: &[Vec<f64>], labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (row, &y) in logits.iter().zip(labels) {
        total -= ref_log_softmax(row)[y];
    }
    total / logits.len() as f64
}

pub fn ref_d_loss(fake: &[f64], real: &[f64], r1: f64) -> f64 {
    let f: f64 = fake.iter().map(|&s| ref_softplus(s)).sum::<f64>() / fake.len() as f64;
    let r: f64 = real.iter().map(|&s| ref_softplus(-s)).sum::<f64>() / real.len() as f64;
    f + r + r1
}

pub fn ref_g_gan(fake: &[f64]) -> f64 {
    fake.iter().map(|&s| ref_softplus(-s)).sum::<f64>() / fake.len() as f64
}

pub fn ref_gd(new: &[f64], old: &[f64]) -> f64 {
    new.iter().zip(old).map(|(a, b)| (a - b).abs()).sum::<f64>() / new.len() as f64
}

/// R1 of `D(x) = tanh(w·x + c)` per sample: `∇ₓD = (1 − D²)·w`.
pub fn ref_r1_tanh(xs: &[Vec<f64>], w: &[f64], c: f64, gamma: f64) -> f64 {
    let wn: f64 = w.iter().map(|v| v * v).sum();
    let mut total = 0.0;
    for x in xs {
        let d = (x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + c).tanh();
        total += (1.0 - d * d).powi(2) * wn;
    }
    gamma / 2.0 * total / xs.len() as f64
}

pub fn rand_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..rows).map(|_| (0..cols).map(|_| rng.random_range(-scale..scale)).collect()).collect()
}

pub fn flatten(m: &[Vec<f64>]) -> Vec<f64> {
    m.iter().flatten().copied().collect()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

/// Central finite difference of `f` at `x`, one coordinate at a time.
pub fn numeric_grad(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let orig = xp[i];
        xp[i] = orig + h;
        let up = f(&xp);
        xp[i] = orig - h;
        let down = f(&xp);
        xp[i] = orig;
        g[i] = (up - down) / (2.0 * h);
    }
    g
}

/// Largest gradient discrepancy, relative to the larger gradient norm.
pub fn grad_discrepancy(a: &[f64], n: &[f64]) -> f64 {
    let scale = a
        .iter()
        .chain(n)
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-8);
    a.iter().zip(n).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}
