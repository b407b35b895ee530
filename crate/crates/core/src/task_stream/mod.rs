//! Labeled image datasets and their class-incremental task partition.

mod layout;
pub mod toy;

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array4, Axis, IxDyn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{ops, Array, Tensor};
use crate::error::{Error, Result};

pub use layout::{load_dataset_dir, write_dataset_dir, DatasetManifest, MANIFEST_FILE, MANIFEST_VERSION};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Images (channel-last, values in `[0, 1]`) with global class labels.
#[derive(Clone, Debug)]
pub struct DatasetIndex {
    images: Array4<f64>,
    labels: Vec<usize>,
    class_count: usize,
    split: Split,
}

impl DatasetIndex {
    pub fn new(images: Array4<f64>, labels: Vec<usize>, class_count: usize, split: Split) -> Result<Self> {
        if class_count == 0 {
            return Err(Error::Config("class_count must be positive".into()));
        }
        if images.shape()[0] != labels.len() {
            return Err(Error::Shape(format!(
                "{} images but {} labels",
                images.shape()[0],
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Range(format!("label {bad} outside [0, {class_count})")));
        }
        if images.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Range("pixel values must lie in [0, 1]".into()));
        }
        Ok(Self {
            images,
            labels,
            class_count,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn images(&self) -> &Array4<f64> {
        &self.images
    }

    /// `(height, width, channels)`.
    pub fn image_shape(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    pub fn classes_present(&self) -> BTreeSet<usize> {
        self.labels.iter().copied().collect()
    }

    /// Indices of samples whose label is in `classes`, in storage order.
    pub fn indices_for(&self, classes: &[usize]) -> Vec<usize> {
        let set: BTreeSet<usize> = classes.iter().copied().collect();
        (0..self.len()).filter(|&i| set.contains(&self.labels[i])).collect()
    }

    /// Stacks the selected samples into a `[B, H, W, C]` batch.
    pub fn gather(&self, indices: &[usize]) -> Batch {
        Batch {
            images: self.images.select(Axis(0), indices).into_dyn(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// All samples belonging to `classes`.
    pub fn subset(&self, classes: &[usize]) -> Batch {
        self.gather(&self.indices_for(classes))
    }

    /// Checks that `other` covers the same classes, for train/test pairs.
    pub fn check_pair(&self, other: &DatasetIndex) -> Result<()> {
        if self.class_count != other.class_count || self.classes_present() != other.classes_present() {
            return Err(Error::Config(
                "train and test splits must cover the same class set".into(),
            ));
        }
        if self.image_shape() != other.image_shape() {
            return Err(Error::Shape("train and test image shapes differ".into()));
        }
        Ok(())
    }
}

/// A batch of images in `[0, 1]` with their global labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub images: Array,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Ordered, pairwise-disjoint class sets; task `t` is 1-based.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSequence {
    tasks: Vec<Vec<usize>>,
    first_task_size: usize,
    classes_per_task: usize,
}

impl TaskSequence {
    pub fn from_tasks(tasks: Vec<Vec<usize>>) -> Result<Self> {
        if tasks.is_empty() || tasks.iter().any(Vec::is_empty) {
            return Err(Error::Config("a task sequence needs at least one task and no empty tasks".into()));
        }
        let first = tasks[0].len();
        let per = tasks.get(1).map(Vec::len).unwrap_or(0);
        let mut seen = BTreeSet::new();
        for (i, t) in tasks.iter().enumerate() {
            if i >= 1 && t.len() != per {
                return Err(Error::Config("tasks after the first must be equally sized".into()));
            }
            for &c in t {
                if !seen.insert(c) {
                    return Err(Error::Config(format!("class {c} assigned to two tasks")));
                }
            }
        }
        Ok(Self {
            tasks,
            first_task_size: first,
            classes_per_task: per,
        })
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn first_task_size(&self) -> usize {
        self.first_task_size
    }

    pub fn classes_per_task(&self) -> usize {
        self.classes_per_task
    }

    pub fn tasks(&self) -> &[Vec<usize>] {
        &self.tasks
    }

    pub fn classes(&self, t: usize) -> Result<&[usize]> {
        self.check_task(t)?;
        Ok(&self.tasks[t - 1])
    }

    /// Union of the class sets of tasks `1..=t`, in task order.
    pub fn classes_through(&self, t: usize) -> Result<Vec<usize>> {
        self.check_task(t)?;
        Ok(self.tasks[..t].iter().flatten().copied().collect())
    }

    pub fn check_task(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.tasks.len() {
            return Err(Error::Range(format!(
                "task {t} outside 1..={}",
                self.tasks.len()
            )));
        }
        Ok(())
    }
}

/// Splits `class_count` classes into a first task of `first_task_size`
/// classes followed by tasks of `classes_per_task` classes each. The class
/// order is a shuffle determined by `seed`.
pub fn build_task_sequence(
    class_count: usize,
    first_task_size: usize,
    classes_per_task: usize,
    seed: u64,
) -> Result<TaskSequence> {
    if first_task_size == 0 || first_task_size > class_count {
        return Err(Error::Config(format!(
            "first_task_size {first_task_size} must be in 1..={class_count}"
        )));
    }
    let rest = class_count - first_task_size;
    if rest > 0 && (classes_per_task == 0 || rest % classes_per_task != 0) {
        return Err(Error::Config(format!(
            "remaining {rest} classes (class_count {class_count} - first_task_size {first_task_size}) \
             are not divisible by classes_per_task {classes_per_task}"
        )));
    }
    let mut order: Vec<usize> = (0..class_count).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut tasks = vec![order[..first_task_size].to_vec()];
    if rest > 0 {
        tasks.extend(order[first_task_size..].chunks(classes_per_task).map(<[usize]>::to_vec));
    }
    Ok(TaskSequence {
        tasks,
        first_task_size,
        classes_per_task,
    })
}

/// Seeded, reshuffling mini-batch iterator over one task's samples.
#[derive(Clone, Debug)]
pub struct TaskLoader<'a> {
    index: &'a DatasetIndex,
    indices: Vec<usize>,
    pools: BTreeMap<usize, Vec<usize>>,
    batch_size: usize,
    rng: ChaCha8Rng,
}

pub fn task_loader<'a>(
    index: &'a DatasetIndex,
    seq: &TaskSequence,
    t: usize,
    batch_size: usize,
    seed: u64,
) -> Result<TaskLoader<'a>> {
    let classes = seq.classes(t)?;
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let indices = index.indices_for(classes);
    let mut pools: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &i in &indices {
        pools.entry(index.labels()[i]).or_default().push(i);
    }
    Ok(TaskLoader {
        index,
        indices,
        pools,
        batch_size,
        rng: ChaCha8Rng::seed_from_u64(seed),
    })
}

impl<'a> TaskLoader<'a> {
    pub fn index(&self) -> &'a DatasetIndex {
        self.index
    }

    pub fn num_samples(&self) -> usize {
        self.indices.len()
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.indices.len().div_ceil(self.batch_size)
    }

    /// Reshuffles and returns the batches of the next epoch. The final batch
    /// is truncated rather than padded.
    pub fn epoch(&mut self) -> Vec<Batch> {
        let mut order = self.indices.clone();
        order.shuffle(&mut self.rng);
        order
            .chunks(self.batch_size)
            .map(|chunk| self.index.gather(chunk))
            .collect()
    }

    /// Uniformly random sample of the given class, for surrogate batches.
    pub fn sample_of_class(&mut self, class: usize) -> Option<usize> {
        use rand::Rng;
        let pool = self.pools.get(&class)?;
        Some(pool[self.rng.random_range(0..pool.len())])
    }
}

/// Per-channel `(x − mean) / std` with fixed constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() || mean.is_empty() {
            return Err(Error::Config("mean and std need the same, nonzero length".into()));
        }
        if std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Config("std entries must be positive".into()));
        }
        Ok(Self { mean, std })
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, shape: &[usize]) -> Result<()> {
        match shape.last() {
            Some(&c) if c == self.mean.len() => Ok(()),
            other => Err(Error::Shape(format!(
                "images have {:?} channels, normalizer expects {}",
                other,
                self.mean.len()
            ))),
        }
    }

    pub fn normalize(&self, images: &Array) -> Result<Array> {
        self.check(images.shape())?;
        let c = self.mean.len();
        let mut out = images.clone();
        for (i, v) in out.iter_mut().enumerate() {
            let k = i % c;
            *v = (*v - self.mean[k]) / self.std[k];
        }
        Ok(out)
    }

    pub fn denormalize(&self, images: &Array) -> Result<Array> {
        self.check(images.shape())?;
        let c = self.mean.len();
        let mut out = images.clone();
        for (i, v) in out.iter_mut().enumerate() {
            let k = i % c;
            *v = *v * self.std[k] + self.mean[k];
        }
        Ok(out)
    }

    /// Differentiable variant for images produced inside the graph.
    pub fn normalize_tensor(&self, images: &Tensor) -> Result<Tensor> {
        self.check(images.shape())?;
        let c = self.mean.len();
        let mean = Tensor::constant(Array::from_shape_vec(IxDyn(&[c]), self.mean.clone()).expect("c"));
        let inv: Vec<f64> = self.std.iter().map(|s| 1.0 / s).collect();
        let inv = Tensor::constant(Array::from_shape_vec(IxDyn(&[c]), inv).expect("c"));
        Ok(ops::mul(&ops::sub(images, &mean), &inv))
    }
}

/// Maps generator output in `[−1, 1]` onto the `[0, 1]` image range.
pub fn from_tanh_range(x: &Tensor) -> Tensor {
    ops::add_scalar(&ops::scale(x, 0.5), 0.5)
}

/// Maps `[0, 1]` images onto the generator's `[−1, 1]` range.
pub fn to_tanh_range(x: &Tensor) -> Tensor {
    ops::add_scalar(&ops::scale(x, 2.0), -1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_index(classes: usize, per_class: usize) -> DatasetIndex {
        let n = classes * per_class;
        let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
        let images = Array4::from_shape_fn((n, 2, 2, 1), |(i, _, _, _)| (i % 7) as f64 / 7.0);
        DatasetIndex::new(images, labels, classes, Split::Train).unwrap()
    }

    #[test]
    fn split_sizes_follow_protocol() {
        let s = build_task_sequence(100, 50, 25, 0).unwrap();
        assert_eq!(s.num_tasks(), 3);
        assert_eq!(s.tasks().iter().map(Vec::len).collect::<Vec<_>>(), vec![50, 25, 25]);
        assert_eq!(build_task_sequence(100, 50, 2, 0).unwrap().num_tasks(), 26);
        let s = build_task_sequence(10, 5, 5, 3).unwrap();
        assert_eq!(s.tasks().iter().map(Vec::len).collect::<Vec<_>>(), vec![5, 5]);
    }

    #[test]
    fn indivisible_split_names_both_counts() {
        let err = build_task_sequence(100, 50, 3, 0).unwrap_err().to_string();
        assert!(err.contains("50") && err.contains('3'), "{err}");
    }

    #[test]
    fn split_is_seeded() {
        let a = build_task_sequence(20, 10, 5, 7).unwrap();
        let b = build_task_sequence(20, 10, 5, 7).unwrap();
        let c = build_task_sequence(20, 10, 5, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn loader_stays_inside_task() {
        let idx = toy_index(4, 6);
        let seq = build_task_sequence(4, 2, 2, 1).unwrap();
        let mut ld = task_loader(&idx, &seq, 1, 5, 9).unwrap();
        let c1 = seq.classes(1).unwrap().to_vec();
        for _ in 0..3 {
            for b in ld.epoch() {
                assert!(b.labels.iter().all(|l| c1.contains(l)));
            }
        }
    }

    #[test]
    fn loader_is_deterministic_and_truncates() {
        let idx = toy_index(2, 3);
        let seq = build_task_sequence(2, 1, 1, 0).unwrap();
        let mut a = task_loader(&idx, &seq, 1, 100, 5).unwrap();
        let mut b = task_loader(&idx, &seq, 1, 100, 5).unwrap();
        let ea = a.epoch();
        assert_eq!(ea, b.epoch());
        assert_eq!(ea.len(), 1);
        assert_eq!(ea[0].len(), 3);
    }

    #[test]
    fn loader_rejects_bad_task() {
        let idx = toy_index(2, 3);
        let seq = build_task_sequence(2, 1, 1, 0).unwrap();
        assert!(matches!(task_loader(&idx, &seq, 3, 4, 0), Err(Error::Range(_))));
        assert!(matches!(task_loader(&idx, &seq, 0, 4, 0), Err(Error::Range(_))));
    }

    #[test]
    fn normalize_cases() {
        let n = Normalizer::new(vec![0.2, 0.4, 0.6], vec![0.5, 0.5, 0.5]).unwrap();
        let img = Array::from_shape_fn(IxDyn(&[1, 2, 2, 3]), |d| [0.2, 0.4, 0.6][d[3]]);
        assert!(n.normalize(&img).unwrap().iter().all(|&v| v == 0.0));

        let id = Normalizer::new(vec![0.0], vec![1.0]).unwrap();
        let x = Array::from_shape_fn(IxDyn(&[1, 2, 2, 1]), |d| d[1] as f64 * 0.3);
        assert_eq!(id.normalize(&x).unwrap(), x);

        let half = Normalizer::new(vec![0.5], vec![0.5]).unwrap();
        let one = Array::from_elem(IxDyn(&[1, 1, 1, 1]), 1.0);
        assert_eq!(half.normalize(&one).unwrap()[[0, 0, 0, 0]], 1.0);

        assert!(matches!(n.normalize(&one), Err(Error::Shape(_))));
    }

    #[test]
    fn dataset_rejects_out_of_range_label() {
        let images = Array4::zeros((2, 1, 1, 1));
        assert!(matches!(
            DatasetIndex::new(images, vec![0, 3], 3, Split::Train),
            Err(Error::Range(_))
        ));
    }
}
