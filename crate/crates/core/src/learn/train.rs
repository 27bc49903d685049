//! Training loops for fixed encoders (precomputed embeddings) and for the
//! learned mask, where mask weights and classifier are updated jointly.

use ndarray::{Array2, Array3, Axis};

use super::encoder::LearnedEncoder;
use super::model::{loss_and_grad, predictions, relu, relu_backward, Architecture, BatchNorm, Classifier};
use super::normalize::Standardizer;
use super::optim::{Optimizer, OptimizerKind};
use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::optics::MaskWeights;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderMode {
    Fixed,
    Learned,
}

impl EncoderMode {
    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag.to_ascii_lowercase().as_str() {
            "fixed" => Ok(Self::Fixed),
            "learned" => Ok(Self::Learned),
            other => Err(Error::InvalidArgument(format!("unknown encoder mode `{other}`"))),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Self::Fixed => "fixed",
            Self::Learned => "learned",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    /// Multiply the learning rate by 0.1 every this many epochs.
    pub lr_decay_every: Option<usize>,
    pub seed: u64,
    pub architecture: Architecture,
    pub mode: EncoderMode,
}

impl TrainConfig {
    pub fn new(architecture: Architecture, mode: EncoderMode, epochs: usize, batch_size: usize) -> Self {
        Self {
            epochs,
            batch_size,
            optimizer: OptimizerKind::Adam,
            lr: 1e-3,
            lr_decay_every: None,
            seed: 0,
            architecture,
            mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {} is invalid", self.lr)));
        }
        if self.lr_decay_every == Some(0) {
            return Err(Error::InvalidArgument("lr decay period must be positive".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_decay_every {
            Some(p) => self.lr * 0.1f64.powi((epoch / p) as i32),
            None => self.lr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Running accuracy over the epoch's training batches.
    pub train_acc: f64,
    pub test_acc: f64,
    /// Mean training loss over the epoch.
    pub loss: f64,
}

/// Flattened feature rows with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
}

impl FeatureSet {
    pub fn new(features: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::CountMismatch {
                images: features.nrows(),
                labels: labels.len(),
            });
        }
        Ok(Self { features, labels })
    }

    /// Flattens `C×H×W` embeddings into rows.
    pub fn from_embeddings(embeddings: &[Array3<f64>], labels: Vec<usize>) -> Result<Self> {
        let dim = embeddings.first().map_or(0, |e| e.len());
        let mut features = Array2::zeros((embeddings.len(), dim));
        for (mut row, e) in features.rows_mut().into_iter().zip(embeddings) {
            if e.len() != dim {
                return Err(Error::ShapeMismatch {
                    expected: vec![dim],
                    actual: vec![e.len()],
                });
            }
            row.assign(&ndarray::ArrayView1::from(e.as_standard_layout().as_slice().expect("contiguous")));
        }
        Self::new(features, labels)
    }

    /// Raw pixels of every image, flattened.
    pub fn from_pixels(data: &LabeledDataset) -> Result<Self> {
        let (c, h, w) = data.image_dims();
        let flat = data
            .images()
            .mapv(f64::from)
            .into_shape_with_order((data.len(), c * h * w))
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Self::new(flat, data.labels().iter().map(|&l| l as usize).collect())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn rows(&self, idx: &[usize]) -> (Array2<f64>, Vec<usize>) {
        (
            self.features.select(Axis(0), idx),
            idx.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

#[derive(Debug, Clone)]
pub struct FixedOutcome {
    pub classifier: Classifier,
    pub standardizer: Standardizer,
    pub history: Vec<EpochMetrics>,
}

#[derive(Debug, Clone)]
pub struct LearnedOutcome {
    pub weights: MaskWeights,
    pub initial_weights: MaskWeights,
    pub classifier: Classifier,
    /// Batch norm applied to the embedding before the ReLU and classifier.
    pub embedding_norm: BatchNorm,
    pub history: Vec<EpochMetrics>,
}

fn accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    pred.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64
}

fn output_count(num_classes: usize) -> usize {
    if num_classes == 2 {
        1
    } else {
        num_classes
    }
}

fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    Rng::for_stage(seed, "shuffle").derive(epoch as u64).shuffle(&mut idx);
    idx
}

fn check_finite(loss: f64, epoch: usize, batch: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("training loss at epoch {} batch {batch}", epoch + 1)))
    }
}

/// Accuracy of `clf` on standardized features.
pub fn evaluate(clf: &Classifier, features: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    let mut correct = Vec::with_capacity(labels.len());
    for start in (0..labels.len()).step_by(1024) {
        let end = (start + 1024).min(labels.len());
        let probs = clf.predict(&features.slice(ndarray::s![start..end, ..]).to_owned())?;
        correct.extend(predictions(&probs));
    }
    Ok(accuracy(&correct, labels))
}

/// Trains a classifier on precomputed embeddings, standardized with train statistics.
pub fn train_fixed(cfg: &TrainConfig, train: &FeatureSet, test: &FeatureSet, num_classes: usize) -> Result<FixedOutcome> {
    cfg.validate()?;
    if train.len() < cfg.batch_size {
        return Err(Error::NotEnoughData(format!(
            "{} training rows for batch size {}",
            train.len(),
            cfg.batch_size
        )));
    }
    let standardizer = Standardizer::fit(&train.features)?;
    let x_train = standardizer.apply(&train.features)?;
    let x_test = standardizer.apply(&test.features)?;
    let mut clf = Classifier::new(
        cfg.architecture,
        x_train.ncols(),
        output_count(num_classes),
        &mut Rng::for_stage(cfg.seed, "classifier-init"),
    );
    let mut opt = Optimizer::new(cfg.optimizer);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let order = epoch_order(cfg.seed, epoch, train.len());
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let x = x_train.select(Axis(0), idx);
            let labels: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();
            let (logits, cache) = clf.logits_train(&x)?;
            let probs = clf.probabilities(&logits);
            let (loss, dlogits) = loss_and_grad(&probs, &labels);
            check_finite(loss, epoch, b)?;
            let (grads, _) = clf.backward(&cache, &dlogits);
            opt.step(&mut clf.params_mut(), &grads.slices(), lr)?;
            loss_sum += loss * labels.len() as f64;
            correct += predictions(&probs).iter().zip(&labels).filter(|(p, l)| p == l).count();
            seen += labels.len();
        }
        history.push(EpochMetrics {
            epoch: epoch + 1,
            train_acc: correct as f64 / seen as f64,
            test_acc: evaluate(&clf, &x_test, &test.labels)?,
            loss: loss_sum / seen as f64,
        });
    }
    Ok(FixedOutcome {
        classifier: clf,
        standardizer,
        history,
    })
}

/// Embeddings of prepared scenes as feature rows, in chunks to bound memory.
fn encode_rows(encoder: &LearnedEncoder, weights: &MaskWeights, data: &LabeledDataset, noise: &Rng) -> Result<Array2<f64>> {
    let (h, w) = encoder.output_dims();
    let mut rows = Array2::zeros((data.len(), h * w));
    for start in (0..data.len()).step_by(256) {
        let end = (start + 256).min(data.len());
        let scenes = (start..end)
            .map(|i| encoder.prep(&data.image_f64(i)))
            .collect::<Result<Vec<_>>>()?;
        let tape = encoder.forward(weights, scenes, Some((noise, start as u64)))?;
        for (k, e) in tape.embeddings.iter().enumerate() {
            rows.row_mut(start + k)
                .assign(&ndarray::ArrayView1::from(e.as_slice().expect("contiguous")));
        }
    }
    Ok(rows)
}

/// Test accuracy of the learned encoder and classifier.
pub fn evaluate_learned(
    encoder: &LearnedEncoder,
    weights: &MaskWeights,
    embedding_norm: &BatchNorm,
    clf: &Classifier,
    test: &LabeledDataset,
    noise: &Rng,
) -> Result<f64> {
    let rows = encode_rows(encoder, weights, test, noise)?;
    let features = relu(&embedding_norm.forward_eval(&rows));
    let labels: Vec<usize> = test.labels().iter().map(|&l| l as usize).collect();
    evaluate(clf, &features, &labels)
}

/// Jointly optimizes mask weights and classifier; weights are clamped to
/// `[0, 1]` after every step.
pub fn train_learned(cfg: &TrainConfig, encoder: &LearnedEncoder, train: &LabeledDataset, test: &LabeledDataset) -> Result<LearnedOutcome> {
    cfg.validate()?;
    if train.len() < cfg.batch_size {
        return Err(Error::NotEnoughData(format!(
            "{} training images for batch size {}",
            train.len(),
            cfg.batch_size
        )));
    }
    let (h, w) = encoder.output_dims();
    let dim = h * w;
    let initial = MaskWeights::uniform(&mut Rng::for_stage(cfg.seed, "mask-init"), encoder.num_weights());
    let mut weights = initial.clone();
    let mut embedding_norm = BatchNorm::new(dim);
    let mut clf = Classifier::new(
        cfg.architecture,
        dim,
        output_count(train.num_classes()),
        &mut Rng::for_stage(cfg.seed, "classifier-init"),
    );
    let train_noise = Rng::for_stage(cfg.seed, "train-noise");
    let test_noise = Rng::for_stage(cfg.seed, "test-noise");
    let mut opt = Optimizer::new(cfg.optimizer);
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let order = epoch_order(cfg.seed, epoch, train.len());
        let epoch_noise = train_noise.derive(epoch as u64);
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let scenes = idx
                .iter()
                .map(|&i| encoder.prep(&train.image_f64(i)))
                .collect::<Result<Vec<_>>>()?;
            let labels: Vec<usize> = idx.iter().map(|&i| train.labels()[i] as usize).collect();
            let tape = encoder.forward(&weights, scenes, Some((&epoch_noise, (b * cfg.batch_size) as u64)))?;

            let mut x = Array2::zeros((idx.len(), dim));
            for (mut row, e) in x.rows_mut().into_iter().zip(&tape.embeddings) {
                row.assign(&ndarray::ArrayView1::from(e.as_slice().expect("contiguous")));
            }
            let (normed, bn_cache) = embedding_norm.forward_train(&x);
            let act = relu(&normed);
            let (logits, cache) = clf.logits_train(&act)?;
            let probs = clf.probabilities(&logits);
            let (loss, dlogits) = loss_and_grad(&probs, &labels);
            check_finite(loss, epoch, b)?;

            let (clf_grads, dact) = clf.backward(&cache, &dlogits);
            let dnormed = relu_backward(&normed, &dact);
            let (bn_grads, dx) = embedding_norm.backward(&bn_cache, &dnormed);
            let upstream: Vec<Array2<f64>> = dx
                .rows()
                .into_iter()
                .map(|r| r.to_owned().into_shape_with_order((h, w)).expect("embedding dims"))
                .collect();
            let mask_grad = encoder.grad_wrt_mask(&tape, &upstream)?;
            if mask_grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("mask gradient at epoch {} batch {b}", epoch + 1)));
            }

            {
                let mut params = clf.params_mut();
                params.push(embedding_norm.gamma.as_slice_mut().expect("contiguous"));
                params.push(embedding_norm.beta.as_slice_mut().expect("contiguous"));
                params.push(weights.as_mut_slice());
                let mut grads = clf_grads.slices();
                grads.push(bn_grads.gamma.as_slice().expect("contiguous"));
                grads.push(bn_grads.beta.as_slice().expect("contiguous"));
                grads.push(&mask_grad);
                opt.step(&mut params, &grads, lr)?;
            }
            weights.project();

            loss_sum += loss * labels.len() as f64;
            correct += predictions(&probs).iter().zip(&labels).filter(|(p, l)| p == l).count();
            seen += labels.len();
        }
        let test_acc = evaluate_learned(encoder, &weights, &embedding_norm, &clf, test, &test_noise)?;
        history.push(EpochMetrics {
            epoch: epoch + 1,
            train_acc: correct as f64 / seen as f64,
            test_acc,
            loss: loss_sum / seen as f64,
        });
    }
    Ok(LearnedOutcome {
        weights,
        initial_weights: initial,
        classifier: clf,
        embedding_norm,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Split;
    use crate::optics::{rgb_channels, ColorAxis, MaskGeometry, OpticalSetup, SimGrid};
    use crate::simcam::SceneConfig;
    use ndarray::Array4;

    /// Two well-separated Gaussian blobs per class in 6 dimensions.
    fn blobs(n: usize, seed: u64) -> FeatureSet {
        let mut rng = Rng::new(seed, 0);
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let features = Array2::from_shape_fn((n, 6), |(i, j)| {
            let center = if j % 3 == labels[i] { 3.0 } else { 0.0 };
            center + rng.uniform_in(-1.0, 1.0)
        });
        FeatureSet::new(features, labels).unwrap()
    }

    #[test]
    fn fixed_training_learns_separable_data() {
        let cfg = TrainConfig {
            lr: 0.05,
            ..TrainConfig::new(Architecture::Lr, EncoderMode::Fixed, 5, 16)
        };
        let out = train_fixed(&cfg, &blobs(300, 1), &blobs(90, 2), 3).unwrap();
        assert_eq!(out.history.len(), 5);
        assert!(out.history.last().unwrap().test_acc > 0.95);
        let fc = TrainConfig {
            architecture: Architecture::Fc800,
            ..cfg
        };
        let out = train_fixed(&fc, &blobs(300, 1), &blobs(90, 2), 3).unwrap();
        assert!(out.history.last().unwrap().test_acc > 0.95);
    }

    #[test]
    fn fixed_training_is_deterministic() {
        let cfg = TrainConfig::new(Architecture::Lr, EncoderMode::Fixed, 2, 8);
        let a = train_fixed(&cfg, &blobs(64, 3), &blobs(32, 4), 3).unwrap();
        let b = train_fixed(&cfg, &blobs(64, 3), &blobs(32, 4), 3).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.classifier, b.classifier);
    }

    #[test]
    fn divergence_is_reported() {
        let cfg = TrainConfig {
            optimizer: OptimizerKind::Sgd,
            ..TrainConfig::new(Architecture::Lr, EncoderMode::Fixed, 3, 8)
        };
        let mut train = blobs(64, 3);
        train.features[[5, 2]] = f64::NAN;
        let err = train_fixed(&cfg, &train, &blobs(32, 4), 3).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)), "{err}");
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainConfig::new(Architecture::Lr, EncoderMode::Fixed, 0, 8);
        assert!(cfg.validate().is_err());
        cfg.epochs = 1;
        cfg.batch_size = 0;
        assert!(cfg.validate().is_err());
        cfg.batch_size = 4;
        cfg.lr = -1.0;
        assert!(cfg.validate().is_err());
        cfg.lr = 1e-3;
        cfg.lr_decay_every = Some(2);
        assert_eq!(cfg.lr_at(0), 1e-3);
        assert!((cfg.lr_at(2) - 1e-4).abs() < 1e-18);
        assert!(train_fixed(&cfg, &blobs(3, 0), &blobs(3, 0), 3).is_err());
    }

    fn tiny_learned_setup() -> (LearnedEncoder, LabeledDataset, LabeledDataset) {
        let geometry = MaskGeometry {
            subpixel_pitch: (36e-6, 36e-6),
            subpixel_size: (27e-6, 27e-6),
            full_grid: (8, 8),
            crop_fraction: 1.0,
            color_axis: ColorAxis::Rows,
        };
        let setup = OpticalSetup {
            d1: 0.4,
            d2: 0.5e-3,
            grid: SimGrid::new(32, 32, 9e-6, 9e-6).unwrap(),
            channels: rgb_channels(),
        };
        let scene = SceneConfig {
            object_height: 0.4 * 16.0 * 9e-6 / 0.5e-3,
            d1: 0.4,
            d2: 0.5e-3,
            downsample: 8,
            target_snr_db: 40.0,
            shift: (0.0, 0.0),
        };
        let enc = LearnedEncoder::new(&geometry, &setup, &scene).unwrap();
        let make = |n: usize, seed: u64, split| {
            let mut rng = Rng::new(seed, 0);
            let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
            let images = Array4::from_shape_fn((n, 1, 8, 8), |(i, _, r, c)| {
                let on = if labels[i] == 0 { r < 4 } else { c < 4 };
                (if on { 0.8 } else { 0.1 }) + 0.1 * rng.next_f64() as f32 as f64
            })
            .mapv(|v| v as f32);
            LabeledDataset::new(images, labels, 2, split).unwrap()
        };
        (enc, make(24, 1, Split::Train), make(8, 2, Split::Test))
    }

    #[test]
    fn zero_learning_rate_keeps_mask() {
        let (enc, train, test) = tiny_learned_setup();
        let cfg = TrainConfig {
            lr: 0.0,
            ..TrainConfig::new(Architecture::Lr, EncoderMode::Learned, 1, 8)
        };
        let out = train_learned(&cfg, &enc, &train, &test).unwrap();
        assert_eq!(out.weights, out.initial_weights);
    }

    #[test]
    fn learned_training_projects_and_replays() {
        let (enc, train, test) = tiny_learned_setup();
        let cfg = TrainConfig {
            lr: 0.05,
            ..TrainConfig::new(Architecture::Lr, EncoderMode::Learned, 2, 8)
        };
        let a = train_learned(&cfg, &enc, &train, &test).unwrap();
        assert!(a.weights.as_slice().iter().all(|&w| (0.0..=1.0).contains(&w)));
        assert_ne!(a.weights, a.initial_weights);
        assert!(a.classifier.is_binary());
        let b = train_learned(&cfg, &enc, &train, &test).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.weights, b.weights);
    }
}
