//! Plaintext attack: a fully connected decoder regressed from embeddings
//! back to the images that produced them.

use ndarray::{Array1, Array2, Array3, Axis};

use super::metrics::{psnr, ssim};
use crate::error::{Error, Result};
use crate::learn::{relu, relu_backward, Adam, Linear, Standardizer};
use crate::optics::{MaskWeights, PsfSimulator};
use crate::rng::Rng;
use crate::simcam::{SceneConfig, SensorSimulator};

/// Hidden width of the desk-scale decoder.
pub const DECODER_HIDDEN: usize = 1024;
/// Fraction of pairs used for training; the rest are held out.
pub const DECODER_TRAIN_FRACTION: f64 = 0.85;

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            hidden: DECODER_HIDDEN,
            epochs: 10,
            batch_size: 64,
            lr: 1e-3,
            seed: 0,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("decoder hidden width, epochs and batch size must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::InvalidArgument(format!("invalid learning rate {}", self.lr)));
        }
        Ok(())
    }
}

/// Embedding/image pairs, one flattened pair per row.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSet {
    pub embeddings: Array2<f64>,
    pub images: Array2<f64>,
    pub image_dims: (usize, usize),
}

fn flatten_rows(items: &[Array2<f64>]) -> Result<Array2<f64>> {
    let dims = items.first().map(|a| a.dim()).unwrap_or((0, 0));
    let mut out = Array2::zeros((items.len(), dims.0 * dims.1));
    for (mut row, item) in out.outer_iter_mut().zip(items) {
        if item.dim() != dims {
            return Err(Error::ShapeMismatch {
                expected: vec![dims.0, dims.1],
                actual: item.shape().to_vec(),
            });
        }
        row.assign(&Array1::from_iter(item.iter().copied()));
    }
    Ok(out)
}

impl PairSet {
    pub fn new(embeddings: &[Array2<f64>], images: &[Array2<f64>]) -> Result<Self> {
        if embeddings.len() != images.len() {
            return Err(Error::CountMismatch {
                images: images.len(),
                labels: embeddings.len(),
            });
        }
        Ok(Self {
            embeddings: flatten_rows(embeddings)?,
            images: flatten_rows(images)?,
            image_dims: images.first().map(|a| a.dim()).unwrap_or((0, 0)),
        })
    }

    pub fn len(&self) -> usize {
        self.images.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            embeddings: self.embeddings.select(Axis(0), indices),
            images: self.images.select(Axis(0), indices),
            image_dims: self.image_dims,
        }
    }

    /// First 85% of the pairs for training, the remainder held out.
    pub fn split(&self) -> (Self, Self) {
        let n_train = ((self.len() as f64) * DECODER_TRAIN_FRACTION).round() as usize;
        let idx: Vec<usize> = (0..self.len()).collect();
        (self.select(&idx[..n_train]), self.select(&idx[n_train..]))
    }
}

/// Flatten → FC(hidden, ReLU) → FC(pixels), on standardized embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    pub input_norm: Standardizer,
    pub hidden: Linear,
    pub output: Linear,
    pub image_dims: (usize, usize),
}

impl DecoderParams {
    pub fn new(input_norm: Standardizer, hidden: usize, image_dims: (usize, usize), rng: &mut Rng) -> Self {
        let inputs = input_norm.features();
        Self {
            hidden: Linear::init(inputs, hidden, rng),
            output: Linear::init(hidden, image_dims.0 * image_dims.1, rng),
            input_norm,
            image_dims,
        }
    }

    /// Unclamped pixel predictions, one row per embedding row.
    pub fn forward(&self, embeddings: &Array2<f64>) -> Result<Array2<f64>> {
        let x = self.input_norm.apply(embeddings)?;
        Ok(self.output.forward(&relu(&self.hidden.forward(&x))))
    }

    /// Decodes one embedding into an image clamped to `[0, 1]`.
    pub fn reconstruct(&self, embedding: &Array2<f64>) -> Result<Array2<f64>> {
        let row = Array2::from_shape_vec((1, embedding.len()), embedding.iter().copied().collect())
            .expect("row shape");
        let out = self.forward(&row)?;
        Ok(Array2::from_shape_vec(self.image_dims, out.iter().map(|v| v.clamp(0.0, 1.0)).collect())
            .expect("image shape"))
    }

    pub fn named_arrays(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        let mut out = vec![
            ("input_mean".to_string(), vec![self.input_norm.features()], self.input_norm.mean.to_vec()),
            ("input_std".to_string(), vec![self.input_norm.features()], self.input_norm.std.to_vec()),
        ];
        for (name, layer) in [("hidden", &self.hidden), ("output", &self.output)] {
            out.push((format!("{name}.weight"), layer.weight.shape().to_vec(), layer.weight.iter().copied().collect()));
            out.push((format!("{name}.bias"), vec![layer.outputs()], layer.bias.to_vec()));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityScore {
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone)]
pub struct DecoderOutcome {
    pub params: DecoderParams,
    pub train: QualityScore,
    pub heldout: QualityScore,
    /// Mean training loss per epoch.
    pub losses: Vec<f64>,
}

/// Mean PSNR and SSIM of clamped decoder outputs against the true images.
pub fn evaluate_decoder(params: &DecoderParams, pairs: &PairSet) -> Result<QualityScore> {
    if pairs.is_empty() {
        return Err(Error::NotEnoughData("no pairs to evaluate".into()));
    }
    let pred = params.forward(&pairs.embeddings)?;
    let dims = pairs.image_dims;
    let (mut p, mut s) = (0.0, 0.0);
    for (row, truth) in pred.outer_iter().zip(pairs.images.outer_iter()) {
        let a = Array2::from_shape_vec(dims, row.iter().map(|v| v.clamp(0.0, 1.0)).collect()).expect("shape");
        let b = Array2::from_shape_vec(dims, truth.to_vec()).expect("shape");
        p += psnr(&a, &b, 1.0)?;
        s += ssim(&a, &b)?;
    }
    let n = pairs.len() as f64;
    Ok(QualityScore { psnr: p / n, ssim: s / n })
}

/// Trains the decoder with an MSE loss and Adam, then scores both splits.
pub fn train_decoder(train: &PairSet, heldout: &PairSet, cfg: &DecoderConfig) -> Result<DecoderOutcome> {
    cfg.validate()?;
    if train.len() < cfg.batch_size {
        return Err(Error::NotEnoughData(format!(
            "{} training pairs for batch size {}",
            train.len(),
            cfg.batch_size
        )));
    }
    if heldout.embeddings.ncols() != train.embeddings.ncols() || heldout.image_dims != train.image_dims {
        return Err(Error::ShapeMismatch {
            expected: vec![train.embeddings.ncols(), train.images.ncols()],
            actual: vec![heldout.embeddings.ncols(), heldout.images.ncols()],
        });
    }
    let norm = Standardizer::fit(&train.embeddings)?;
    let x_all = norm.apply(&train.embeddings)?;
    let mut params = DecoderParams::new(norm, cfg.hidden, train.image_dims, &mut Rng::for_stage(cfg.seed, "decoder-init"));
    let shuffle = Rng::for_stage(cfg.seed, "decoder-shuffle");
    let mut adam = Adam::default();
    let pixels = train.images.ncols() as f64;
    let mut losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        shuffle.derive(epoch as u64).shuffle(&mut order);
        let (mut total, mut count) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let x = x_all.select(Axis(0), batch);
            let t = train.images.select(Axis(0), batch);
            let pre = params.hidden.forward(&x);
            let h = relu(&pre);
            let out = params.output.forward(&h);
            let diff = &out - &t;
            let scale = 2.0 / (batch.len() as f64 * pixels);
            total += diff.iter().map(|d| d * d).sum::<f64>() / pixels;
            count += batch.len();
            let dout = diff.mapv(|d| d * scale);
            let (g_out, dh) = params.output.backward(&h, &dout);
            let (g_hidden, _) = params.hidden.backward(&x, &relu_backward(&pre, &dh));
            let grads = [
                g_hidden.weight.as_slice().expect("contiguous"),
                g_hidden.bias.as_slice().expect("contiguous"),
                g_out.weight.as_slice().expect("contiguous"),
                g_out.bias.as_slice().expect("contiguous"),
            ];
            let mut slots = [
                params.hidden.weight.as_slice_mut().expect("contiguous"),
                params.hidden.bias.as_slice_mut().expect("contiguous"),
                params.output.weight.as_slice_mut().expect("contiguous"),
                params.output.bias.as_slice_mut().expect("contiguous"),
            ];
            adam.step(&mut slots, &grads, cfg.lr)?;
        }
        let loss = total / count as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("decoder loss at epoch {}", epoch + 1)));
        }
        losses.push(loss);
    }
    Ok(DecoderOutcome {
        train: evaluate_decoder(&params, train)?,
        heldout: evaluate_decoder(&params, heldout)?,
        params,
        losses,
    })
}

/// Mask weights for realization `m` of the varying-mask defense.
pub fn defense_mask(simulator: &PsfSimulator, seed: u64, m: usize) -> MaskWeights {
    MaskWeights::uniform(&mut Rng::for_stage(seed, "decoder-masks").derive(m as u64), simulator.num_weights())
}

/// Simulates `(embedding, image)` pairs where pair `i` is captured through
/// mask realization `i mod masks_used`.
pub fn plaintext_pairs(
    images: &[Array2<f64>],
    simulator: &PsfSimulator,
    scene: &SceneConfig,
    masks_used: usize,
    seed: u64,
) -> Result<PairSet> {
    if masks_used == 0 {
        return Err(Error::InvalidArgument("at least one mask realization is required".into()));
    }
    let sensors = (0..masks_used)
        .map(|m| {
            let psf = simulator.simulate(&defense_mask(simulator, seed, m))?;
            SensorSimulator::new(&psf, scene, true)
        })
        .collect::<Result<Vec<_>>>()?;
    let noise = Rng::for_stage(seed, "decoder-noise");
    let embeddings = images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let img3: Array3<f64> = img.clone().insert_axis(Axis(0));
            let emb = sensors[i % masks_used].simulate(&img3, &mut noise.derive(i as u64))?;
            Ok(emb.values.index_axis_move(Axis(0), 0))
        })
        .collect::<Result<Vec<_>>>()?;
    PairSet::new(&embeddings, images)
}

/// Plaintext attack against `masks_used` mask realizations: simulate the
/// pairs, split 85/15, train and report held-out quality.
pub fn plaintext_attack(
    images: &[Array2<f64>],
    simulator: &PsfSimulator,
    scene: &SceneConfig,
    masks_used: usize,
    cfg: &DecoderConfig,
) -> Result<DecoderOutcome> {
    let pairs = plaintext_pairs(images, simulator, scene, masks_used, cfg.seed)?;
    let (train, heldout) = pairs.split();
    train_decoder(&train, &heldout, cfg)
}
