use candle_core::{Tensor, D};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FeatureEmbedder;
use crate::data::{DomainDataset, ImageTensor};
use crate::losses::classification_loss_indices;
use crate::networks::layers::{Conv2d, ConvSpec};
use crate::networks::{init_weights, Grad, Param, ParamKind, Parameterized};
use crate::trainer::Adam;
use crate::{ops, Error, Precision, Result};

/// Length of the pooled feature vector, which doubles as the FID embedding.
pub const FEATURE_DIM: usize = 64;
pub const MIN_IMAGES_PER_CLASS: usize = 10;
const WIDTHS: [usize; 4] = [16, 32, 64, FEATURE_DIM];
const SLOPE: f64 = 0.2;
const INFERENCE_BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Share of every domain held out for the accuracy check.
    pub holdout_fraction: f64,
    /// Training fails below this holdout accuracy.
    pub min_holdout_accuracy: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            epochs: 8,
            batch_size: 16,
            lr: 1e-3,
            seed: 0,
            holdout_fraction: 0.2,
            min_holdout_accuracy: 0.9,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("classifier epochs and batch size must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("classifier lr must be positive, got {}", self.lr)));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::Config(format!(
                "holdout_fraction must lie in (0, 1), got {}",
                self.holdout_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub epochs: usize,
    pub train_images: usize,
    pub holdout_images: usize,
    pub holdout_accuracy: f64,
}

/// Fraction of images whose intended domain is the top prediction, and
/// whether it is among the top five when there are more than five domains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationAccuracy {
    pub top1: f64,
    pub top5: Option<f64>,
}

/// Domain classifier trained on real images only: four stride-2
/// convolutions with leaky ReLU, global average pooling, a linear head.
///
/// There is no normalization layer on purpose. Channel statistics carry
/// most of the domain signal on hue-shifted data and instance norm would
/// erase them.
#[derive(Debug, Clone)]
pub struct EvalClassifier {
    blocks: Vec<Conv2d>,
    head_weight: Param,
    head_bias: Param,
    m: usize,
    resolution: usize,
    record: Option<TrainingRecord>,
}

impl Parameterized for EvalClassifier {
    fn parameters(&self) -> Vec<Param> {
        let mut out = Vec::new();
        for b in &self.blocks {
            b.params(&mut out);
        }
        out.push(self.head_weight.clone());
        out.push(self.head_bias.clone());
        out
    }
}

impl EvalClassifier {
    /// Untrained classifier with zeroed parameters.
    pub fn new(m: usize, resolution: usize, precision: Precision) -> Result<Self> {
        if m < 2 {
            return Err(Error::Config(format!("need at least 2 domains, got {m}")));
        }
        let factor = 1 << WIDTHS.len();
        if resolution < factor || resolution % factor != 0 {
            return Err(Error::Config(format!(
                "classifier input {resolution} must be a positive multiple of {factor}"
            )));
        }
        let dtype = precision.dtype();
        let mut blocks = Vec::new();
        let mut c_in = 3;
        for (i, &c_out) in WIDTHS.iter().enumerate() {
            let spec = ConvSpec {
                c_in,
                c_out,
                kernel: 4,
                stride: 2,
                padding: 1,
                bias: true,
            };
            blocks.push(Conv2d::new(&format!("clf.block{i}"), spec, dtype)?);
            c_in = c_out;
        }
        Ok(EvalClassifier {
            blocks,
            head_weight: Param::zeros("clf.head.weight".into(), ParamKind::ConvWeight, &[m, FEATURE_DIM], dtype)?,
            head_bias: Param::zeros("clf.head.bias".into(), ParamKind::Bias, &[m], dtype)?,
            m,
            resolution,
            record: None,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// Present once the classifier came out of [`train_eval_classifier`].
    pub fn record(&self) -> Option<&TrainingRecord> {
        self.record.as_ref()
    }

    fn features(&self, x: &Tensor, grad: Grad) -> Result<Tensor> {
        let mut h = x.clone();
        for b in &self.blocks {
            h = ops::leaky_relu(&b.forward(&h, grad)?, SLOPE)?;
        }
        Ok(h.mean(D::Minus1)?.mean(D::Minus1)?)
    }

    fn logits_from_features(&self, f: &Tensor, grad: Grad) -> Result<Tensor> {
        Ok(f
            .matmul(&self.head_weight.value(grad).t()?)?
            .broadcast_add(&self.head_bias.value(grad))?)
    }

    fn batch(&self, images: &[&[f32]]) -> Result<ImageTensor> {
        let dtype = self.head_weight.var.dtype();
        ImageTensor::from_records(images, self.resolution, self.resolution, dtype)
    }

    /// Raw class scores, one row per image.
    pub fn logits(&self, images: &[&[f32]]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(INFERENCE_BATCH) {
            let x = self.batch(chunk)?;
            let f = self.features(&x, Grad::Frozen)?;
            let l = self.logits_from_features(&f, Grad::Frozen)?;
            out.extend(l.to_dtype(candle_core::DType::F64)?.to_vec2::<f64>()?);
        }
        Ok(out)
    }

    /// Accuracy on real images labelled with their own domain.
    pub fn accuracy_on(&self, dataset: &DomainDataset) -> Result<ClassificationAccuracy> {
        if dataset.m() != self.m {
            return Err(Error::Config(format!(
                "classifier has {} classes, dataset has {} domains",
                self.m,
                dataset.m()
            )));
        }
        if dataset.height() != self.resolution || dataset.width() != self.resolution {
            return Err(Error::Config(format!(
                "classifier expects {r}x{r} images, dataset has {}x{}",
                dataset.height(),
                dataset.width(),
                r = self.resolution
            )));
        }
        let index = dataset.flat_index();
        let images: Vec<&[f32]> = index.iter().map(|&(d, i)| dataset.image(d, i)).collect();
        let labels: Vec<usize> = index.iter().map(|&(d, _)| d).collect();
        classification_accuracy(self, &images, &labels)
    }
}

impl FeatureEmbedder for EvalClassifier {
    fn dim(&self) -> usize {
        FEATURE_DIM
    }

    fn embed(&self, images: &[&[f32]]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(INFERENCE_BATCH) {
            let x = self.batch(chunk)?;
            let f = self.features(&x, Grad::Frozen)?;
            out.extend(f.to_dtype(candle_core::DType::F64)?.to_vec2::<f64>()?);
        }
        Ok(out)
    }
}

/// Trains on all but a held-out tail of every domain and checks the
/// holdout accuracy. A classifier that cannot tell real domains apart
/// makes classification accuracy of translations meaningless, so falling
/// short of `cfg.min_holdout_accuracy` is an error.
pub fn train_eval_classifier(dataset: &DomainDataset, cfg: &ClassifierConfig) -> Result<EvalClassifier> {
    cfg.validate()?;
    if let Some(d) = dataset.domains().iter().find(|d| d.images.len() < MIN_IMAGES_PER_CLASS) {
        return Err(Error::Dataset(format!(
            "domain `{}` has {} images; the classifier needs at least {MIN_IMAGES_PER_CLASS} per domain",
            d.name,
            d.images.len()
        )));
    }
    if dataset.height() != dataset.width() {
        return Err(Error::Dataset("the classifier needs square images".into()));
    }
    let smallest = dataset.domains().iter().map(|d| d.images.len()).min().unwrap_or(0);
    let holdout = ((smallest as f64 * cfg.holdout_fraction).round() as usize).max(1);
    let (train, hold) = dataset.split_holdout(holdout)?;

    let mut clf = EvalClassifier::new(dataset.m(), dataset.height(), Precision::F32)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    init_weights(&clf, &mut rng)?;
    let mut opt = Adam::new(clf.parameters(), cfg.lr, 0.9, 0.999)?;
    let mut order = train.flat_index();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let images: Vec<&[f32]> = chunk.iter().map(|&(d, i)| train.image(d, i)).collect();
            let labels: Vec<usize> = chunk.iter().map(|&(d, _)| d).collect();
            let x = clf.batch(&images)?;
            let f = clf.features(&x, Grad::Track)?;
            let loss = classification_loss_indices(&clf.logits_from_features(&f, Grad::Track)?, &labels)?;
            opt.step(&loss.backward()?)?;
        }
    }
    let accuracy = clf.accuracy_on(&hold)?.top1;
    log::info!("eval classifier holdout accuracy {accuracy:.4}");
    if accuracy < cfg.min_holdout_accuracy {
        return Err(Error::Eval(format!(
            "classifier reached only {accuracy:.3} holdout accuracy (need {}); classification accuracy would not be meaningful",
            cfg.min_holdout_accuracy
        )));
    }
    clf.record = Some(TrainingRecord {
        epochs: cfg.epochs,
        train_images: train.len(),
        holdout_images: hold.len(),
        holdout_accuracy: accuracy,
    });
    Ok(clf)
}

/// Top-1 accuracy of `clf` on `images` against their intended domains,
/// plus top-5 when the classifier has more than five classes. Ties go to
/// the lower domain index, as with argmax.
pub fn classification_accuracy(
    clf: &EvalClassifier,
    images: &[&[f32]],
    targets: &[usize],
) -> Result<ClassificationAccuracy> {
    if images.is_empty() {
        return Err(Error::Eval("classification accuracy of an empty image set".into()));
    }
    if images.len() != targets.len() {
        return Err(Error::Eval(format!("{} images but {} labels", images.len(), targets.len())));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= clf.m) {
        return Err(Error::Label { index: bad, m: clf.m });
    }
    let logits = clf.logits(images)?;
    let mut hits1 = 0usize;
    let mut hits5 = 0usize;
    for (row, &t) in logits.iter().zip(targets) {
        let rank = row
            .iter()
            .enumerate()
            .filter(|&(k, &v)| v > row[t] || (v == row[t] && k < t))
            .count();
        hits1 += usize::from(rank < 1);
        hits5 += usize::from(rank < 5);
    }
    let n = images.len() as f64;
    Ok(ClassificationAccuracy {
        top1: hits1 as f64 / n,
        top5: (clf.m > 5).then_some(hits5 as f64 / n),
    })
}
