//! Procedurally generated 10-class image dataset used by the tests and the
//! desk-scale experiments. Each class is a coloured shape drawn with random
//! position, size, colour jitter and background noise.

use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DatasetIndex, Split};
use crate::error::Result;

pub const TOY_CLASSES: usize = 10;
pub const TOY_SIZE: usize = 32;

pub const TOY_CLASS_NAMES: [&str; TOY_CLASSES] = [
    "red_disc",
    "green_square",
    "blue_triangle",
    "yellow_plus",
    "magenta_ring",
    "cyan_bars",
    "orange_diamond",
    "white_cross",
    "purple_stripes",
    "teal_frame",
];

const BASE_COLOURS: [[f64; 3]; TOY_CLASSES] = [
    [0.90, 0.15, 0.15],
    [0.15, 0.80, 0.20],
    [0.20, 0.30, 0.95],
    [0.95, 0.90, 0.15],
    [0.90, 0.20, 0.85],
    [0.15, 0.85, 0.90],
    [0.95, 0.55, 0.10],
    [0.92, 0.92, 0.92],
    [0.55, 0.20, 0.80],
    [0.10, 0.55, 0.50],
];

/// Channel statistics used to normalize the toy data.
pub const TOY_MEAN: [f64; 3] = [0.1541, 0.1460, 0.1436];
pub const TOY_STD: [f64; 3] = [0.2576, 0.2276, 0.2351];

fn inside(class: usize, dx: f64, dy: f64, r: f64) -> bool {
    let (ax, ay) = (dx.abs(), dy.abs());
    match class {
        0 => dx * dx + dy * dy <= r * r,
        1 => ax <= 0.8 * r && ay <= 0.8 * r,
        2 => dy <= 0.7 * r && dy >= -r + 1.6 * ax,
        3 => (ax <= 0.3 * r && ay <= r) || (ay <= 0.3 * r && ax <= r),
        4 => {
            let d = (dx * dx + dy * dy).sqrt();
            d <= r && d >= 0.6 * r
        }
        5 => ax <= r && ay <= r && ((dy / r * 2.5).floor() as i64).rem_euclid(2) == 0,
        6 => ax + ay <= r,
        7 => ax <= r && ay <= r && (ax - ay).abs() <= 0.35 * r,
        8 => ax <= r && ay <= r && ((dx / r * 2.5).floor() as i64).rem_euclid(2) == 0,
        9 => ax <= r && ay <= r && (ax >= 0.65 * r || ay >= 0.65 * r),
        _ => unreachable!("toy class out of range"),
    }
}

/// Renders one sample of `class` into a `TOY_SIZE × TOY_SIZE × 3` buffer.
pub fn render<R: Rng>(class: usize, rng: &mut R) -> Vec<f64> {
    let n = TOY_SIZE as f64;
    let r = rng.random_range(7.0..11.0);
    let cx = rng.random_range(r + 1.0..n - r - 1.0);
    let cy = rng.random_range(r + 1.0..n - r - 1.0);
    let colour: Vec<f64> = BASE_COLOURS[class]
        .iter()
        .map(|&c| (c + rng.random_range(-0.08..0.08)).clamp(0.0, 1.0))
        .collect();
    let bg: f64 = rng.random_range(0.0..0.12);
    let mut out = vec![0.0; TOY_SIZE * TOY_SIZE * 3];
    for y in 0..TOY_SIZE {
        for x in 0..TOY_SIZE {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            let hit = inside(class, dx, dy, r);
            for c in 0..3 {
                let noise = rng.random_range(-0.04..0.04);
                let v = if hit { colour[c] } else { bg } + noise;
                out[(y * TOY_SIZE + x) * 3 + c] = v.clamp(0.0, 1.0);
            }
        }
    }
    out
}

/// Generates `per_class` samples of every toy class, interleaved by class.
pub fn generate(per_class: usize, split: Split, seed: u64) -> Result<DatasetIndex> {
    // Distinct streams per split so train and test never share samples.
    let stream = match split {
        Split::Train => 0,
        Split::Test => 1,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let n = per_class * TOY_CLASSES;
    let mut data = Vec::with_capacity(n * TOY_SIZE * TOY_SIZE * 3);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..per_class {
        for class in 0..TOY_CLASSES {
            data.extend(render(class, &mut rng));
            labels.push(class);
        }
    }
    let images = Array4::from_shape_vec((n, TOY_SIZE, TOY_SIZE, 3), data)
        .expect("toy buffer has the declared shape");
    DatasetIndex::new(images, labels, TOY_CLASSES, split)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let a = generate(2, Split::Train, 11).unwrap();
        let b = generate(2, Split::Train, 11).unwrap();
        assert_eq!(a.images(), b.images());
        let t = generate(2, Split::Test, 11).unwrap();
        assert_ne!(a.images(), t.images());
    }

    #[test]
    fn every_class_has_foreground() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for class in 0..TOY_CLASSES {
            let img = render(class, &mut rng);
            let bright = img.iter().filter(|&&v| v > 0.3).count();
            assert!(bright > 40, "class {class} has only {bright} bright values");
        }
    }
}
