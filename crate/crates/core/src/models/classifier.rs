use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Conv, Linear};
use super::ModelConfig;
use crate::autograd::{no_grad, ops, Array, Bound, ParamSet, Tensor};
use crate::error::{Error, Result};

/// Four-block convolutional classifier `g ∘ h`. Blocks 1–3 end with 2×2
/// average pooling, block 4 keeps its resolution; features are exposed
/// after block `tap_point`. The head applies the remaining blocks, global
/// average pooling and a linear layer with one logit per seen class.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    params: ParamSet,
    blocks: Vec<Conv>,
    head: Linear,
    tap_point: usize,
    seen_classes: Vec<usize>,
    input_shape: (usize, usize, usize),
    head_init_std: f64,
}

pub const NUM_BLOCKS: usize = 4;
const POOLED_BLOCKS: usize = 3;

/// Serializable description of a classifier's architecture and head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierMeta {
    pub widths: Vec<usize>,
    pub tap_point: usize,
    pub seen_classes: Vec<usize>,
    pub input_shape: (usize, usize, usize),
    pub head_init_std: f64,
}

impl Classifier {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, input_shape: (usize, usize, usize), rng: &mut R) -> Result<Self> {
        if cfg.classifier_widths.len() != NUM_BLOCKS {
            return Err(Error::Config(format!(
                "classifier_widths needs {NUM_BLOCKS} entries, got {}",
                cfg.classifier_widths.len()
            )));
        }
        if !(1..=NUM_BLOCKS).contains(&cfg.tap_point) {
            return Err(Error::Config(format!("tap_point {} outside 1..={NUM_BLOCKS}", cfg.tap_point)));
        }
        let (h, w, _) = input_shape;
        let min = 1 << POOLED_BLOCKS;
        if h < min || w < min || h % min != 0 || w % min != 0 {
            return Err(Error::Shape(format!(
                "input {h}x{w} must be a positive multiple of {min} for {POOLED_BLOCKS} pooling stages"
            )));
        }
        let mut params = ParamSet::new();
        let mut blocks = Vec::with_capacity(NUM_BLOCKS);
        let mut cin = input_shape.2;
        for (i, &cout) in cfg.classifier_widths.iter().enumerate() {
            blocks.push(Conv::new(&mut params, &format!("block{}", i + 1), 3, cin, cout, rng));
            cin = cout;
        }
        let head = Linear::with_init(&mut params, "head", cin, 0, cfg.head_init_std, 0.0, rng);
        Ok(Self {
            params,
            blocks,
            head,
            tap_point: cfg.tap_point,
            seen_classes: Vec::new(),
            input_shape,
            head_init_std: cfg.head_init_std,
        })
    }

    pub fn meta(&self) -> ClassifierMeta {
        ClassifierMeta {
            widths: self.blocks.iter().map(|b| b.outputs).collect(),
            tap_point: self.tap_point,
            seen_classes: self.seen_classes.clone(),
            input_shape: self.input_shape,
            head_init_std: self.head_init_std,
        }
    }

    /// Rebuilds a classifier from checkpointed parts.
    pub fn from_parts(meta: ClassifierMeta, params: ParamSet) -> Result<Self> {
        let cfg = ModelConfig {
            classifier_widths: meta.widths.clone(),
            tap_point: meta.tap_point,
            head_init_std: meta.head_init_std,
            ..ModelConfig::default()
        };
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut c = Classifier::new(&cfg, meta.input_shape, &mut rng)?;
        c.head.outputs = meta.seen_classes.len();
        c.seen_classes = meta.seen_classes;
        if params.len() != c.params.len()
            || params.iter().zip(c.params.iter()).any(|(a, b)| a.name != b.name)
        {
            return Err(Error::Format("classifier parameter layout mismatch".into()));
        }
        let k = c.seen_classes.len();
        let hw = params.get(c.head.weight).value.shape().to_vec();
        if hw.len() != 2 || hw[1] != k || params.get(c.head.bias).value.len() != k {
            return Err(Error::Format("classifier head does not match seen classes".into()));
        }
        c.params = params;
        Ok(c)
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn tap_point(&self) -> usize {
        self.tap_point
    }

    pub fn seen_classes(&self) -> &[usize] {
        &self.seen_classes
    }

    pub fn num_logits(&self) -> usize {
        self.seen_classes.len()
    }

    /// Logit index of a global class id.
    pub fn logit_index(&self, class: usize) -> Option<usize> {
        self.seen_classes.iter().position(|&c| c == class)
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.input_shape
    }

    /// `(height, width, channels)` of the tapped feature map.
    pub fn feature_shape(&self) -> (usize, usize, usize) {
        let pools = self.tap_point.min(POOLED_BLOCKS);
        let (h, w, _) = self.input_shape;
        (h >> pools, w >> pools, self.blocks[self.tap_point - 1].outputs)
    }

    /// Whether a parameter name belongs to blocks `1..=tap_point`.
    pub fn is_extractor_param(&self, name: &str) -> bool {
        (1..=self.tap_point).any(|i| name.starts_with(&format!("block{i}.")))
    }

    pub fn freeze_extractor(&mut self) {
        let tap = self.tap_point;
        self.params
            .set_trainable_where(|n| (1..=tap).any(|i| n.starts_with(&format!("block{i}."))), false);
    }

    pub fn extractor_frozen(&self) -> bool {
        self.params
            .iter()
            .filter(|p| self.is_extractor_param(&p.name))
            .all(|p| !p.trainable)
    }

    /// Fingerprint of the parameters in blocks `1..=tap_point`.
    pub fn extractor_fingerprint(&self) -> u64 {
        let tap = self.tap_point;
        self.params
            .fingerprint_where(|n| (1..=tap).any(|i| n.starts_with(&format!("block{i}."))))
    }

    fn block(&self, p: &Bound, i: usize, x: &Tensor) -> Tensor {
        let y = ops::relu(&self.blocks[i].forward(p, x));
        if i < POOLED_BLOCKS {
            ops::avg_pool2(&y)
        } else {
            y
        }
    }

    /// Runs blocks `1..=tap_point` on normalized images.
    pub fn extract_features(&self, p: &Bound, images: &Tensor) -> Result<Tensor> {
        let s = images.shape();
        if s.len() != 4 || (s[1], s[2], s[3]) != self.input_shape {
            return Err(Error::Shape(format!(
                "classifier expects [B, {}, {}, {}] images, got {:?}",
                self.input_shape.0, self.input_shape.1, self.input_shape.2, s
            )));
        }
        let mut h = images.clone();
        for i in 0..self.tap_point {
            h = self.block(p, i, &h);
        }
        Ok(h)
    }

    /// Applies the head `g` to tapped features.
    pub fn head_forward(&self, p: &Bound, features: &Tensor) -> Result<Tensor> {
        if self.seen_classes.is_empty() {
            return Err(Error::State("classifier has no classes yet".into()));
        }
        let (fh, fw, fc) = self.feature_shape();
        let s = features.shape();
        if s.len() != 4 || (s[1], s[2], s[3]) != (fh, fw, fc) {
            return Err(Error::Shape(format!(
                "head expects [B, {fh}, {fw}, {fc}] features, got {s:?}"
            )));
        }
        let mut h = features.clone();
        for i in self.tap_point..NUM_BLOCKS {
            h = self.block(p, i, &h);
        }
        Ok(self.head.forward(p, &ops::global_avg_pool(&h)))
    }

    pub fn classify(&self, p: &Bound, images: &Tensor) -> Result<Tensor> {
        if self.seen_classes.is_empty() {
            return Err(Error::State("classifier has no classes yet".into()));
        }
        let f = self.extract_features(p, images)?;
        self.head_forward(p, &f)
    }

    /// Logits for a batch of normalized images, without building a graph.
    pub fn logits(&self, images: &Array) -> Result<Array> {
        let _g = no_grad();
        let p = self.params.bind_constant();
        Ok(self.classify(&p, &Tensor::constant(images.clone()))?.into_value())
    }

    /// Appends logits for `new_classes`. Existing head parameters are kept
    /// bit-for-bit; new weight columns are drawn from N(0, head_init_std²)
    /// and new biases start at zero.
    pub fn expand_head<R: Rng + ?Sized>(&mut self, new_classes: &[usize], rng: &mut R) -> Result<()> {
        if let Some(c) = new_classes.iter().find(|c| self.seen_classes.contains(c)) {
            return Err(Error::Config(format!("class {c} is already in the head")));
        }
        let mut uniq = new_classes.to_vec();
        uniq.sort_unstable();
        uniq.dedup();
        if uniq.len() != new_classes.len() {
            return Err(Error::Config("duplicate class in head expansion".into()));
        }
        if new_classes.is_empty() {
            return Ok(());
        }
        let l = new_classes.len();
        let features = self.head.inputs;
        let mut fresh = ParamSet::new();
        let wi = fresh.add_normal("w", &[features, l], self.head_init_std, rng);
        let w_new = fresh.get(wi).value.clone();

        let w = &mut self.params.get_mut(self.head.weight).value;
        let joined = ndarray::concatenate(ndarray::Axis(1), &[w.view(), w_new.view()])
            .map_err(|e| Error::Shape(e.to_string()))?;
        *w = joined;
        let b = &mut self.params.get_mut(self.head.bias).value;
        let joined = ndarray::concatenate(
            ndarray::Axis(0),
            &[b.view(), Array::zeros(ndarray::IxDyn(&[l])).view()],
        )
        .map_err(|e| Error::Shape(e.to_string()))?;
        *b = joined;

        self.head.outputs += l;
        self.seen_classes.extend_from_slice(new_classes);
        Ok(())
    }

    /// Sets every head parameter to zero.
    pub fn zero_head(&mut self) {
        self.params.get_mut(self.head.weight).value.fill(0.0);
        self.params.get_mut(self.head.bias).value.fill(0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::ParamSet;
    use ndarray::IxDyn;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> Classifier {
        let cfg = ModelConfig {
            classifier_widths: vec![4, 4, 6, 6],
            ..ModelConfig::default()
        };
        Classifier::new(&cfg, (8, 8, 3), &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    }

    fn batch(b: usize) -> Array {
        Array::from_shape_fn(IxDyn(&[b, 8, 8, 3]), |d| ((d[0] * 7 + d[1] * 3 + d[2] + d[3]) % 5) as f64 * 0.3 - 0.5)
    }

    #[test]
    fn feature_shape_contract() {
        let c = small();
        assert_eq!(c.feature_shape(), (1, 1, 6));
        let f = c
            .extract_features(&c.params().bind_constant(), &Tensor::constant(batch(2)))
            .unwrap();
        assert_eq!(f.shape(), &[2, 1, 1, 6]);
    }

    #[test]
    fn zero_head_gives_zero_logits() {
        let mut c = small();
        c.expand_head(&[3, 1, 4], &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        c.zero_head();
        let l = c.logits(&batch(5)).unwrap();
        assert_eq!(l.shape(), &[5, 3]);
        assert!(l.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn expansion_preserves_old_logits() {
        let mut c = small();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        c.expand_head(&[0, 1, 2, 3, 4], &mut rng).unwrap();
        let before = c.logits(&batch(3)).unwrap();
        c.expand_head(&[5, 6, 7], &mut rng).unwrap();
        let after = c.logits(&batch(3)).unwrap();
        assert_eq!(after.shape(), &[3, 8]);
        for i in 0..3 {
            for k in 0..5 {
                assert_eq!(before[[i, k]].to_bits(), after[[i, k]].to_bits());
            }
        }
        c.expand_head(&[], &mut rng).unwrap();
        assert_eq!(c.num_logits(), 8);
        assert!(matches!(c.expand_head(&[2], &mut rng), Err(Error::Config(_))));
    }

    #[test]
    fn empty_head_is_state_error() {
        let c = small();
        assert!(matches!(c.logits(&batch(1)), Err(Error::State(_))));
    }

    #[test]
    fn rejects_unsupported_input() {
        let cfg = ModelConfig::default();
        let err = Classifier::new(&cfg, (4, 4, 3), &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(err, Err(Error::Shape(_))));
        let c = small();
        let bad = Tensor::constant(Array::zeros(IxDyn(&[1, 16, 16, 3])));
        assert!(matches!(c.extract_features(&c.params().bind_constant(), &bad), Err(Error::Shape(_))));
    }

    #[test]
    fn parts_round_trip() {
        let mut c = small();
        c.expand_head(&[2, 0], &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let again = Classifier::from_parts(c.meta(), c.params().clone()).unwrap();
        assert_eq!(again, c);
        assert!(Classifier::from_parts(c.meta(), ParamSet::new()).is_err());
    }
}
