//! The five-class stone classifier: architectures, training, prediction,
//! Grad-CAM feature access and checkpoints.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{self, AugmentConfig, SampledTransform};
use crate::dataset::{ClassLabel, NormalizedImage, NUM_CLASSES};
use crate::nn::{resnet_v2, Conv2d, Dense, Layer, MaxPool2d, Network, Param, Relu, ResNetStage, Tensor};
use crate::seed;

const CHECKPOINT_MAGIC: &[u8; 8] = b"ESRCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("input shape {found:?} does not match the expected {expected:?}")]
    Shape { expected: (usize, usize, usize), found: (usize, usize, usize) },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("class index {0} out of range")]
    InvalidClass(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backbone {
    /// ResNet-152 v2.
    ResNet152V2,
    /// Four conv3×3 + ReLU + 2×2 max-pool blocks (16/32/64/128 channels).
    Desk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub backbone: Backbone,
    pub num_classes: usize,
    pub input_size: usize,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { backbone: Backbone::Desk, num_classes: NUM_CLASSES, input_size: NormalizedImage::SIZE, init_seed: 1 }
    }
}

impl ModelConfig {
    pub fn desk(init_seed: u64) -> Self {
        ModelConfig { init_seed, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), ClassifierError> {
        if self.num_classes != NUM_CLASSES {
            return Err(ClassifierError::InvalidConfig(format!("num_classes must be {NUM_CLASSES}, got {}", self.num_classes)));
        }
        if self.input_size != NormalizedImage::SIZE {
            return Err(ClassifierError::InvalidConfig(format!(
                "input_size must be {}, got {}",
                NormalizedImage::SIZE,
                self.input_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub batch_size: usize,
    pub epochs: usize,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { learning_rate: 0.001, batch_size: 8, epochs: 100, augment: AugmentConfig::default() }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ClassifierError::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(ClassifierError::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !self.augment.is_valid() {
            return Err(ClassifierError::InvalidConfig("augmentation ranges must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean categorical cross-entropy over the epoch's training samples.
    pub loss: f64,
    /// Fraction of training samples whose argmax was correct during the epoch.
    pub accuracy: f64,
}

/// Weights, architecture and training history.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub config: ModelConfig,
    pub network: Network,
    pub history: Vec<EpochStats>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Indexed in canonical class order.
    pub probabilities: [f64; NUM_CLASSES],
    pub argmax_class: ClassLabel,
}

impl Prediction {
    pub fn from_logits(logits: &[f32]) -> Self {
        let probabilities = softmax(logits);
        let argmax_class = argmax(&probabilities);
        Prediction { probabilities, argmax_class }
    }

    pub fn probability(&self, class: ClassLabel) -> f64 {
        self.probabilities[class.index()]
    }
}

/// First maximum in canonical order.
fn argmax(p: &[f64; NUM_CLASSES]) -> ClassLabel {
    let mut best = 0;
    for i in 1..NUM_CLASSES {
        if p[i] > p[best] {
            best = i;
        }
    }
    ClassLabel::ALL[best]
}

fn softmax(logits: &[f32]) -> [f64; NUM_CLASSES] {
    assert_eq!(logits.len(), NUM_CLASSES);
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let mut out = [0f64; NUM_CLASSES];
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l as f64 - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
    out
}

/// Last-stage feature maps and class-score gradients, channel-major `[k][h][w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGradients {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub features: Vec<f64>,
    pub gradients: Vec<f64>,
}

impl FeatureGradients {
    /// Shape as `(height, width, channels)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }
}

fn desk_features() -> Vec<Layer> {
    let mut layers = Vec::new();
    let mut channels = 3;
    for (i, &out) in [16usize, 32, 64, 128].iter().enumerate() {
        let mut conv = Conv2d::new(channels, out, 3, 1, 1, true);
        conv.input_grad = i > 0;
        layers.push(Layer::Conv(conv));
        layers.push(Layer::Relu(Relu::default()));
        layers.push(Layer::MaxPool(MaxPool2d::new(2, 2, 0)));
        channels = out;
    }
    layers
}

fn resnet_features() -> Vec<Layer> {
    resnet_v2(
        3,
        64,
        &[
            ResNetStage { blocks: 3, width: 64, stride: 2 },
            ResNetStage { blocks: 8, width: 128, stride: 2 },
            ResNetStage { blocks: 36, width: 256, stride: 2 },
            ResNetStage { blocks: 3, width: 512, stride: 1 },
        ],
    )
}

/// Builds an untrained model with weights drawn from `config.init_seed`.
pub fn build_model(config: &ModelConfig) -> Result<TrainedModel, ClassifierError> {
    config.validate()?;
    let features = match config.backbone {
        Backbone::Desk => desk_features(),
        Backbone::ResNet152V2 => resnet_features(),
    };
    let width = features.iter().fold((3, config.input_size, config.input_size), |s, l| l.output_shape(s)).0;
    let mut network = Network::new(3, features, Dense::new(width, config.num_classes));
    initialize(&mut network, config.init_seed);
    Ok(TrainedModel { config: *config, network, history: Vec::new() })
}

/// Deterministic initialisation in layer order.
pub fn initialize(network: &mut Network, init_seed: u64) {
    let mut rng = seed::rng(init_seed);
    for layer in &mut network.features {
        layer.init(&mut rng);
    }
    network.head.init(&mut rng);
}

fn image_tensor(images: &[&NormalizedImage]) -> Tensor {
    let n = NormalizedImage::SIZE;
    let mut data = Vec::with_capacity(images.len() * NormalizedImage::LEN);
    for img in images {
        data.extend_from_slice(img.as_slice());
    }
    Tensor::from_vec(images.len(), 3, n, n, data)
}

/// Mean cross-entropy and its gradient with respect to the logits.
fn cross_entropy(logits: &[f32], labels: &[usize]) -> (f64, Vec<f32>, usize) {
    let n = labels.len();
    let mut grad = vec![0f32; logits.len()];
    let mut loss = 0.0;
    let mut correct = 0;
    for (i, &y) in labels.iter().enumerate() {
        let row = &logits[i * NUM_CLASSES..(i + 1) * NUM_CLASSES];
        let p = softmax(row);
        loss -= p[y].max(1e-300).ln();
        if argmax(&p).index() == y {
            correct += 1;
        }
        for k in 0..NUM_CLASSES {
            let target = if k == y { 1.0 } else { 0.0 };
            grad[i * NUM_CLASSES + k] = ((p[k] - target) / n as f64) as f32;
        }
    }
    (loss / n as f64, grad, correct)
}

/// Adam with bias correction folded into the step size.
struct Adam {
    lr: f32,
    beta1: f32,
    beta2: f32,
    eps: f32,
    step: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    fn new(lr: f32, sizes: &[usize]) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
            step: 0,
            m: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: sizes.iter().map(|&s| vec![0.0; s]).collect(),
        }
    }

    fn update(&mut self, params: Vec<&mut Param>) {
        self.step += 1;
        let lr_t = self.lr * (1.0 - self.beta2.powi(self.step)).sqrt() / (1.0 - self.beta1.powi(self.step));
        for ((p, m), v) in params.into_iter().zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                p.value[i] -= lr_t * m[i] / (v[i].sqrt() + self.eps);
            }
        }
    }
}

/// Trains with Adam on mini-batches reshuffled every epoch.
///
/// Each sample gets a fresh augmentation every epoch. All randomness comes
/// from `train_seed`; the last partial batch is kept.
pub fn train(
    mut model: TrainedModel,
    train_set: &[(&NormalizedImage, ClassLabel)],
    cfg: &TrainConfig,
    train_seed: u64,
) -> Result<TrainedModel, ClassifierError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(ClassifierError::EmptyTrainingSet);
    }
    let sizes: Vec<usize> = model.network.params_mut().iter().map(|p| p.len()).collect();
    let mut adam = Adam::new(cfg.learning_rate, &sizes);
    let mut rng = seed::rng(train_seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let first_epoch = model.history.len();
    let augmenting = cfg.augment != AugmentConfig::disabled();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let augmented: Vec<NormalizedImage>;
            let images: Vec<&NormalizedImage> = if augmenting {
                augmented = batch
                    .iter()
                    .map(|&i| {
                        let t = augment::sample_transform(&mut rng, &cfg.augment);
                        augment_sample(&t, train_set[i].0)
                    })
                    .collect();
                augmented.iter().collect()
            } else {
                batch.iter().map(|&i| train_set[i].0).collect()
            };
            let labels: Vec<usize> = batch.iter().map(|&i| train_set[i].1.index()).collect();
            let logits = model.network.forward_train(image_tensor(&images));
            let (loss, dlogits, ok) = cross_entropy(&logits, &labels);
            loss_sum += loss * batch.len() as f64;
            correct += ok;
            model.network.zero_grad();
            model.network.backward(&dlogits);
            adam.update(model.network.params_mut());
        }
        let stats = EpochStats {
            epoch: first_epoch + epoch + 1,
            loss: loss_sum / train_set.len() as f64,
            accuracy: correct as f64 / train_set.len() as f64,
        };
        log::info!("epoch {:>3}: loss {:.4}, accuracy {:.3}", stats.epoch, stats.loss, stats.accuracy);
        model.history.push(stats);
    }
    Ok(model)
}

fn augment_sample(t: &SampledTransform, img: &NormalizedImage) -> NormalizedImage {
    augment::apply(t, img)
}

impl TrainedModel {
    pub fn predict(&self, img: &NormalizedImage) -> Prediction {
        let logits = self.network.infer(image_tensor(&[img]));
        Prediction::from_logits(&logits)
    }

    pub fn predict_batch(&self, images: &[&NormalizedImage]) -> Vec<Prediction> {
        images.chunks(8).flat_map(|chunk| {
            let logits = self.network.infer(image_tensor(chunk));
            logits.chunks(NUM_CLASSES).map(Prediction::from_logits).collect::<Vec<_>>()
        }).collect()
    }

    pub fn feature_maps_and_grads(&self, img: &NormalizedImage, target: ClassLabel) -> FeatureGradients {
        feature_maps_and_grads(&self.network, image_tensor(&[img]), target.index())
            .expect("five-class model accepts every class label")
    }

    /// `(height, width, channels)` of the Grad-CAM stage.
    pub fn feature_dims(&self) -> (usize, usize, usize) {
        let (c, h, w) = self.network.feature_shape(self.config.input_size, self.config.input_size);
        (h, w, c)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, ClassifierError> {
        let mut network = self.network.clone();
        let state = network.state_mut();
        let header = CheckpointHeader {
            format_version: CHECKPOINT_VERSION,
            model_config: self.config,
            history: self.history.clone(),
            tensors: state.iter().map(|t| TensorEntry { name: t.name.clone(), len: t.values.len() }).collect(),
        };
        let header = serde_json::to_vec(&header)?;
        let total: usize = state.iter().map(|t| t.values.len()).sum();
        let mut out = Vec::with_capacity(20 + header.len() + 4 * total);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in &state {
            for v in t.values.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self, ClassifierError> {
        let bad = |m: &str| ClassifierError::Checkpoint(m.to_string());
        let mut magic = [0u8; 8];
        bytes.read_exact(&mut magic).map_err(|_| bad("truncated magic"))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let mut word = [0u8; 4];
        bytes.read_exact(&mut word).map_err(|_| bad("truncated version"))?;
        let version = u32::from_le_bytes(word);
        if version != CHECKPOINT_VERSION {
            return Err(ClassifierError::Checkpoint(format!("unsupported format version {version}")));
        }
        let mut len = [0u8; 8];
        bytes.read_exact(&mut len).map_err(|_| bad("truncated header length"))?;
        let len = u64::from_le_bytes(len) as usize;
        if bytes.len() < len {
            return Err(bad("truncated header"));
        }
        let header: CheckpointHeader = serde_json::from_slice(&bytes[..len])?;
        bytes = &bytes[len..];
        let mut model = build_model(&header.model_config)?;
        model.history = header.history;
        {
            let state = model.network.state_mut();
            if state.len() != header.tensors.len() {
                return Err(bad("tensor count does not match the architecture"));
            }
            let total: usize = header.tensors.iter().map(|t| t.len).sum();
            if bytes.len() != 4 * total {
                return Err(bad("weight payload has the wrong size"));
            }
            for (t, entry) in state.into_iter().zip(&header.tensors) {
                if t.name != entry.name || t.values.len() != entry.len {
                    return Err(ClassifierError::Checkpoint(format!("unexpected tensor {}", entry.name)));
                }
                for v in t.values.iter_mut() {
                    *v = f32::from_le_bytes(bytes[..4].try_into().unwrap());
                    bytes = &bytes[4..];
                }
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), ClassifierError> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        std::fs::File::create(&tmp)?.write_all(&bytes)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ClassifierError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    format_version: u32,
    model_config: ModelConfig,
    history: Vec<EpochStats>,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    len: usize,
}

/// Feature maps of the last stage for a single input and the gradient of the
/// pre-softmax score of `class` with respect to them.
pub fn feature_maps_and_grads(network: &Network, x: Tensor, class: usize) -> Result<FeatureGradients, ClassifierError> {
    if class >= network.num_classes() {
        return Err(ClassifierError::InvalidClass(class));
    }
    if x.c != network.input_channels || x.n != 1 {
        return Err(ClassifierError::Shape { expected: (network.input_channels, x.h, x.w), found: (x.c, x.h, x.w) });
    }
    let f = network.infer_features(x);
    let hw = f.h * f.w;
    Ok(FeatureGradients {
        channels: f.c,
        height: f.h,
        width: f.w,
        features: f.data.iter().map(|&v| v as f64).collect(),
        gradients: network.class_score_gradient(hw, class),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noisy_image(s: u64) -> NormalizedImage {
        let mut rng = seed::rng(s);
        use rand::Rng;
        NormalizedImage::from_chw((0..NormalizedImage::LEN).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn defaults() {
        let t = TrainConfig::default();
        assert_eq!((t.learning_rate, t.batch_size, t.epochs), (0.001, 8, 100));
        assert_eq!(ModelConfig::default().num_classes, 5);
    }

    #[test]
    fn invalid_configs_rejected() {
        let cfg = ModelConfig { num_classes: 4, ..Default::default() };
        assert!(matches!(build_model(&cfg), Err(ClassifierError::InvalidConfig(_))));
        let err = serde_json::from_str::<ModelConfig>(r#"{"backbone":"vgg"}"#);
        assert!(err.is_err());
        let cfg = TrainConfig { batch_size: 0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn desk_geometry_and_determinism() {
        let a = build_model(&ModelConfig::desk(3)).unwrap();
        let b = build_model(&ModelConfig::desk(3)).unwrap();
        assert_eq!(a.feature_dims(), (16, 16, 128));
        let img = noisy_image(1);
        let pa = a.predict(&img);
        assert_eq!(pa, b.predict(&img));
        assert_eq!(pa, a.predict(&img));
        assert!((pa.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        let c = build_model(&ModelConfig::desk(4)).unwrap();
        assert_ne!(pa, c.predict(&img));
        let fg = a.feature_maps_and_grads(&img, ClassLabel::IIb);
        assert_eq!(fg.dims(), (16, 16, 128));
        assert_eq!(fg.features.len(), fg.gradients.len());
    }

    #[test]
    fn argmax_ties_follow_class_order() {
        let p = Prediction::from_logits(&[0.0; 5]);
        assert_eq!(p.argmax_class, ClassLabel::Ia);
        let p = Prediction::from_logits(&[0.0, 1.0, 0.0, 1.0, 1.0]);
        assert_eq!(p.argmax_class, ClassLabel::IaIIb);
        let p = Prediction::from_logits(&[0.0, 0.0, 0.0, 0.0, 3.0]);
        assert_eq!(p.argmax_class, ClassLabel::IIIb);
    }

    #[test]
    fn zero_head_row_gives_zero_gradients() {
        let mut m = build_model(&ModelConfig::desk(1)).unwrap();
        let k = m.network.head.inputs;
        let c = ClassLabel::IaIIIb.index();
        m.network.head.weight.value[c * k..(c + 1) * k].fill(0.0);
        let fg = m.feature_maps_and_grads(&noisy_image(2), ClassLabel::IaIIIb);
        assert!(fg.gradients.iter().all(|&g| g == 0.0));
        assert!(fg.features.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn invalid_class_index() {
        let m = build_model(&ModelConfig::desk(1)).unwrap();
        let x = image_tensor(&[&noisy_image(0)]);
        assert!(matches!(feature_maps_and_grads(&m.network, x, 5), Err(ClassifierError::InvalidClass(5))));
    }

    #[test]
    fn zero_epochs_keep_initial_weights() {
        let m = build_model(&ModelConfig::desk(9)).unwrap();
        let img = noisy_image(4);
        let cfg = TrainConfig { epochs: 0, ..Default::default() };
        let trained = train(m.clone(), &[(&img, ClassLabel::Ia)], &cfg, 1).unwrap();
        assert_eq!(trained.to_bytes().unwrap(), m.to_bytes().unwrap());
        assert!(trained.history.is_empty());
    }

    #[test]
    fn empty_training_set_rejected() {
        let m = build_model(&ModelConfig::desk(9)).unwrap();
        assert!(matches!(train(m, &[], &TrainConfig::default(), 1), Err(ClassifierError::EmptyTrainingSet)));
    }

    #[test]
    fn single_sample_loss_settles() {
        let m = build_model(&ModelConfig::desk(5)).unwrap();
        let img = noisy_image(5);
        let cfg = TrainConfig { epochs: 30, augment: AugmentConfig::disabled(), ..Default::default() };
        let trained = train(m, &[(&img, ClassLabel::IIb)], &cfg, 2).unwrap();
        let losses: Vec<f64> = trained.history.iter().map(|h| h.loss).collect();
        for w in losses[5..].windows(2) {
            assert!(w[1] <= w[0], "loss increased: {losses:?}");
        }
        assert_eq!(trained.predict(&img).argmax_class, ClassLabel::IIb);
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = build_model(&ModelConfig::desk(11)).unwrap();
        let img = noisy_image(6);
        let cfg = TrainConfig { epochs: 2, ..Default::default() };
        let trained = train(m, &[(&img, ClassLabel::IaIIb), (&img, ClassLabel::IaIIb)], &cfg, 3).unwrap();
        let bytes = trained.to_bytes().unwrap();
        let back = TrainedModel::from_bytes(&bytes).unwrap();
        assert_eq!(back.history, trained.history);
        assert_eq!(back.config, trained.config);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back.predict(&img), trained.predict(&img));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        trained.save(&path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), bytes);

        let mut broken = bytes.clone();
        broken[0] = b'X';
        assert!(matches!(TrainedModel::from_bytes(&broken), Err(ClassifierError::Checkpoint(_))));
        assert!(TrainedModel::from_bytes(&bytes[..bytes.len() - 4]).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let img_a = noisy_image(7);
        let img_b = noisy_image(8);
        let set = [(&img_a, ClassLabel::Ia), (&img_b, ClassLabel::IIIb), (&img_a, ClassLabel::Ia)];
        let cfg = TrainConfig { epochs: 2, batch_size: 2, ..Default::default() };
        let run = || train(build_model(&ModelConfig::desk(2)).unwrap(), &set, &cfg, 99).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(a.history, b.history);
        assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
    }
}
